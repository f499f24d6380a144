"""Command-line front end.

Subcommands compose the forward and inverse pipelines through files only:

    generate      config -> one multipath-set CSV per receiver
    scan          multipath CSVs -> binary scan containers
    estimate      scan containers -> estimated multipath CSVs
    cluster       estimated CSVs -> cluster membership CSVs
    characterize  estimated (+cluster) CSVs -> stats, fits, reference table
    roundtrip     full-chain validation against the configured parameters
    route-pdp     distance x delay omni-PDP matrix for the configured route
    foliage-stats foliage excess-loss samples, Gaussian fit, CDF

Exit codes: 0 success, 2 validation failure, 3 schema/IO error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import pipeline
from .characterization import (
    compare_reference,
    fit_gaussian,
    format_comparison_table,
    write_cdf_csv,
    write_comparison_csv,
)
from .clustering import read_cluster_csv, write_cluster_csv
from .params import ConfigParseError, ConfigValidationError, ParamBundle, load_config
from .sounder import read_scan, write_scan
from .synth import read_mpcset_csv, write_mpcset_csv

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SCHEMA = 3


def data_file(name: str) -> Path:
    """Path of a packaged data file (reference values, bundled scenes)."""
    import importlib.resources as resources

    return Path(str(resources.files("thzumi").joinpath("data", name)))


def _load_bundle(args) -> ParamBundle:
    if args.config is None:
        return ParamBundle()
    return load_config(args.config)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(out_dir, command, bundle, seed, outputs, started) -> None:
    manifest = pipeline.make_manifest(command, bundle, seed, outputs, started, time.time())
    pipeline.write_manifest(out_dir, manifest)


def cmd_generate(args) -> int:
    started = time.time()
    bundle = _load_bundle(args)
    if bundle.scene is None:
        print("error: config has no scene section", file=sys.stderr)
        return EXIT_VALIDATION
    out = _out_dir(args)
    sets = pipeline.generate_route(bundle, args.seed, jobs=args.jobs)
    outputs = []
    for i, mpcset in enumerate(sets):
        name = f"mpcs_{i:03d}.csv"
        write_mpcset_csv(out / name, mpcset)
        outputs.append(name)
    _finish(out, "generate", bundle, args.seed, outputs, started)
    return EXIT_OK


def _collect(in_dir, pattern):
    paths = sorted(Path(in_dir).glob(pattern))
    if not paths:
        raise FileNotFoundError(f"no {pattern} files under {in_dir}")
    return paths


def cmd_scan(args) -> int:
    started = time.time()
    bundle = _load_bundle(args)
    out = _out_dir(args)
    sets = [read_mpcset_csv(p) for p in _collect(args.inputs, "mpcs_*.csv")]
    scans = pipeline.scan_route(sets, bundle, args.seed, jobs=args.jobs)
    outputs = []
    for i, scan in enumerate(scans):
        name = f"scan_{i:03d}.dss"
        write_scan(out / name, scan)
        outputs.append(name)
    _finish(out, "scan", bundle, args.seed, outputs, started)
    return EXIT_OK


def cmd_estimate(args) -> int:
    started = time.time()
    bundle = _load_bundle(args)
    out = _out_dir(args)
    scans = [read_scan(p) for p in _collect(args.inputs, "scan_*.dss")]
    estimates = pipeline.estimate_scans(scans, bundle, jobs=args.jobs)
    outputs = []
    for i, est in enumerate(estimates):
        name = f"est_{i:03d}.csv"
        write_mpcset_csv(out / name, est)
        outputs.append(name)
    _finish(out, "estimate", bundle, args.seed, outputs, started)
    return EXIT_OK


def cmd_cluster(args) -> int:
    started = time.time()
    bundle = _load_bundle(args)
    out = _out_dir(args)
    outputs = []
    for i, path in enumerate(_collect(args.inputs, "est_*.csv")):
        est = read_mpcset_csv(path)
        result = pipeline.cluster_link(est, bundle)
        name = f"clusters_{i:03d}.csv"
        write_cluster_csv(out / name, result, len(est.mpcs))
        outputs.append(name)
    _finish(out, "cluster", bundle, args.seed, outputs, started)
    return EXIT_OK


def cmd_characterize(args) -> int:
    started = time.time()
    bundle = _load_bundle(args)
    out = _out_dir(args)
    est_paths = _collect(args.inputs, "est_*.csv")
    pairs = []
    for i, path in enumerate(est_paths):
        est = read_mpcset_csv(path)
        cluster_path = Path(args.clusters) / f"clusters_{i:03d}.csv" if args.clusters else None
        if cluster_path is not None and cluster_path.exists():
            clusters = read_cluster_csv(cluster_path)
        else:
            clusters = pipeline.cluster_link(est, bundle)
        pairs.append((est, clusters))
    stats = pipeline.characterize_links(pairs, bundle)

    outputs = ["stats.csv"]
    with open(out / "stats.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            "link_index,distance_m,case,path_loss_db,k_factor_db,ds_s,"
            "asa_deg,esa_deg,n_clusters,mean_cds_s,mean_casa_deg,mean_cesa_deg\n"
        )
        for i, s in enumerate(stats):
            k = "inf" if s.k_factor_db == float("inf") else repr(s.k_factor_db)
            fh.write(
                f"{i},{s.distance_m!r},{s.case},{s.path_loss_db!r},{k},{s.ds_s!r},"
                f"{s.asa_deg!r},{s.esa_deg!r},{s.n_clusters},{s.mean_cds_s!r},"
                f"{s.mean_casa_deg!r},{s.mean_cesa_deg!r}\n"
            )

    for case in ("los", "olos"):
        summary = pipeline.case_summary(stats, bundle, case)
        if summary["n_links"] == 0:
            continue
        name = f"fits_{case}.json"
        payload = {
            "case": case,
            "n_links": summary["n_links"],
            "measured": summary["measured"],
            "fits": {k: f.to_dict() for k, f in summary["fits"].items()},
            "non_paper_defaults": "cluster-level spread targets use local defaults",
        }
        (out / name).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        outputs.append(name)
        if case == "los" and summary["measured"]:
            reference = Path(args.reference) if args.reference else data_file("threegpp_umi_reference.json")
            if reference.exists():
                rows = compare_reference(summary["measured"], reference, case="los")
                write_comparison_csv(out / "comparison_los.csv", rows)
                (out / "comparison_los.txt").write_text(
                    format_comparison_table(rows) + "\n", encoding="utf-8"
                )
                outputs.extend(["comparison_los.csv", "comparison_los.txt"])
    _finish(out, "characterize", bundle, args.seed, outputs, started)
    return EXIT_OK


def cmd_roundtrip(args) -> int:
    started = time.time()
    bundle = _load_bundle(args)
    out = _out_dir(args)
    report, ok = pipeline.run_roundtrip(bundle, args.n_realizations, args.seed, jobs=args.jobs)
    (out / "roundtrip_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    text = pipeline.format_roundtrip_report(report)
    (out / "roundtrip_report.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    _finish(out, "roundtrip", bundle, args.seed, ["roundtrip_report.json", "roundtrip_report.txt"], started)
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_route_pdp(args) -> int:
    started = time.time()
    bundle = _load_bundle(args)
    if bundle.scene is None:
        print("error: config has no scene section", file=sys.stderr)
        return EXIT_VALIDATION
    out = _out_dir(args)
    distances, delays, matrix = pipeline.route_pdp_matrix(bundle, args.seed)
    pipeline.write_route_pdp_csv(out / "route_pdp.csv", distances, delays, matrix)
    _finish(out, "route-pdp", bundle, args.seed, ["route_pdp.csv"], started)
    return EXIT_OK


def cmd_foliage_stats(args) -> int:
    started = time.time()
    bundle = _load_bundle(args)
    if bundle.scene is None:
        print("error: config has no scene section", file=sys.stderr)
        return EXIT_VALIDATION
    out = _out_dir(args)
    samples = pipeline.foliage_loss_samples(bundle, args.seed, through_sounder=not args.draws_only)
    if len(samples) < 3:
        print("error: route yields fewer than 3 OLoS links", file=sys.stderr)
        return EXIT_VALIDATION
    with open(out / "foliage_samples.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("foliage_loss_db\n")
        for s in samples:
            fh.write(f"{s!r}\n")
    fit = fit_gaussian(samples)
    (out / "foliage_fit.json").write_text(
        json.dumps(fit.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    write_cdf_csv(out / "foliage_cdf.csv", samples)
    _finish(
        out, "foliage-stats", bundle, args.seed,
        ["foliage_samples.csv", "foliage_fit.json", "foliage_cdf.csv"], started,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thzumi",
        description="220 GHz UMi channel synthesis, sounding simulation, and characterization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, default=1, help="base RNG seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers across links")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("generate", help="synthesize multipath sets for the configured route")
    common(p)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("scan", help="simulate direction-scan acquisitions")
    common(p)
    p.add_argument("--inputs", required=True, help="directory with mpcs_*.csv")
    p.set_defaults(fn=cmd_scan)

    p = sub.add_parser("estimate", help="extract multipath estimates from scans")
    common(p)
    p.add_argument("--inputs", required=True, help="directory with scan_*.dss")
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("cluster", help="group estimated paths into clusters")
    common(p)
    p.add_argument("--inputs", required=True, help="directory with est_*.csv")
    p.set_defaults(fn=cmd_cluster)

    p = sub.add_parser("characterize", help="statistics, fits, and reference comparison")
    common(p)
    p.add_argument("--inputs", required=True, help="directory with est_*.csv")
    p.add_argument("--clusters", help="directory with clusters_*.csv (recomputed when absent)")
    p.add_argument("--reference", help="reference parameter JSON (packaged table by default)")
    p.set_defaults(fn=cmd_characterize)

    p = sub.add_parser("roundtrip", help="full-chain recovery validation")
    common(p)
    p.add_argument("-n", "--n-realizations", type=int, default=100)
    p.set_defaults(fn=cmd_roundtrip)

    p = sub.add_parser("route-pdp", help="distance x delay omni-PDP matrix")
    common(p)
    p.set_defaults(fn=cmd_route_pdp)

    p = sub.add_parser("foliage-stats", help="foliage excess-loss statistics")
    common(p)
    p.add_argument("--draws-only", action="store_true", help="report the drawn losses without the sounder chain")
    p.set_defaults(fn=cmd_foliage_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigValidationError as exc:
        print(f"config validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConfigParseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
