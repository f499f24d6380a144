"""Channel characteristics and statistical model fitting.

Computes the per-link quantities (path loss, cluster K-factor, RMS delay
spread, circular azimuth/elevation spreads, cluster spreads) from true or
estimated multipath sets, fits their distributions (close-in path loss,
Gaussian, log-normal), and renders the side-by-side comparison against an
external reference parameter file.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .mathutil import weighted_circular_spread_deg, weighted_rms_spread
from .propagation import fspl

ASA_CAP_DEG = 104.0
ESA_CAP_DEG = 52.0


@dataclass
class ChannelStats:
    """Characteristics of one link. ``k_factor_db`` is math.inf for a
    single-cluster link and is excluded from ensemble fits."""

    distance_m: float
    case: str
    path_loss_db: float
    k_factor_db: float
    ds_s: float
    asa_deg: float
    esa_deg: float
    n_clusters: int
    cluster_spreads: list = field(default_factory=list)

    @property
    def mean_cds_s(self) -> float:
        return float(np.mean([c["cds_s"] for c in self.cluster_spreads])) if self.cluster_spreads else 0.0

    @property
    def mean_casa_deg(self) -> float:
        return float(np.mean([c["casa_deg"] for c in self.cluster_spreads])) if self.cluster_spreads else 0.0

    @property
    def mean_cesa_deg(self) -> float:
        return float(np.mean([c["cesa_deg"] for c in self.cluster_spreads])) if self.cluster_spreads else 0.0


@dataclass
class FitReport:
    """Fitted model parameters with simple goodness measures."""

    model: str  # "ci" | "gaussian" | "lognormal"
    params: dict
    goodness: dict
    n_samples: int
    notes: str = ""

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": self.params,
            "goodness": self.goodness,
            "n_samples": self.n_samples,
            "notes": self.notes,
        }


def rms_delay_spread(mpcs) -> float:
    """Power-weighted RMS delay spread of a multipath set."""
    mpcs = _aslist(mpcs)
    if not mpcs:
        raise ValueError("empty multipath set")
    delays = np.array([p.delay_s for p in mpcs])
    powers = np.array([p.gain**2 for p in mpcs])
    return weighted_rms_spread(delays, powers)


def circular_angle_spread(mpcs, plane: str) -> float:
    """Circular angular spread in degrees over 'azimuth' or 'elevation'.

    Saturates at the 104 deg (azimuth) / 52 deg (elevation) caps when the
    power-weighted resultant collapses.
    """
    mpcs = _aslist(mpcs)
    if not mpcs:
        raise ValueError("empty multipath set")
    powers = np.array([p.gain**2 for p in mpcs])
    if plane == "azimuth":
        angles = np.array([p.aoa_az_deg for p in mpcs])
        return weighted_circular_spread_deg(angles, powers, cap_deg=ASA_CAP_DEG)
    if plane == "elevation":
        angles = np.array([p.aoa_el_deg for p in mpcs])
        return weighted_circular_spread_deg(angles, powers, cap_deg=ESA_CAP_DEG)
    raise ValueError(f"unknown plane {plane!r}")


def k_factor(cluster_powers) -> float:
    """Cluster-level dominance ratio 10*log10(P_strongest / sum(P_others));
    +inf sentinel for a single cluster."""
    p = np.asarray(cluster_powers, dtype=float)
    if p.size == 0:
        raise ValueError("need at least one cluster")
    if p.size == 1:
        return math.inf
    strongest = p.max()
    rest = p.sum() - strongest
    if rest <= 0:
        return math.inf
    return float(10.0 * math.log10(strongest / rest))


def cluster_spreads(members) -> dict:
    """Intra-cluster delay and angle spreads of one cluster's components."""
    members = _aslist(members)
    if not members:
        raise ValueError("empty cluster")
    return {
        "cds_s": rms_delay_spread(members),
        "casa_deg": circular_angle_spread(members, "azimuth"),
        "cesa_deg": circular_angle_spread(members, "elevation"),
    }


def characterize_link(mpcset, cluster_result, cluster_level: bool = False) -> ChannelStats:
    """Per-link statistics from a multipath set and its cluster partition.

    ``cluster_level`` switches DS/ASA/ESA from per-component to per-cluster
    (power-weighted cluster centroids) evaluation.
    """
    mpcs = mpcset.mpcs
    if not mpcs:
        raise ValueError("cannot characterize an empty multipath set")
    total_power = float(sum(p.gain**2 for p in mpcs))
    powers = cluster_result.cluster_powers(mpcs)
    spreads = [
        cluster_spreads([mpcs[i] for i in members]) for members in cluster_result.clusters
    ]
    if cluster_level and cluster_result.n_clusters > 0:
        cen_delay, cen_az, cen_el, cen_p = [], [], [], []
        for members in cluster_result.clusters:
            w = np.array([mpcs[i].gain ** 2 for i in members])
            cen_p.append(w.sum())
            cen_delay.append(np.average([mpcs[i].delay_s for i in members], weights=w))
            cen_az.append(np.average([mpcs[i].aoa_az_deg for i in members], weights=w))
            cen_el.append(np.average([mpcs[i].aoa_el_deg for i in members], weights=w))
        ds = weighted_rms_spread(cen_delay, cen_p)
        asa = weighted_circular_spread_deg(cen_az, cen_p, cap_deg=ASA_CAP_DEG)
        esa = weighted_circular_spread_deg(cen_el, cen_p, cap_deg=ESA_CAP_DEG)
    else:
        ds = rms_delay_spread(mpcs)
        asa = circular_angle_spread(mpcs, "azimuth")
        esa = circular_angle_spread(mpcs, "elevation")
    return ChannelStats(
        distance_m=mpcset.distance_m,
        case=mpcset.state.case,
        path_loss_db=-10.0 * math.log10(total_power),
        k_factor_db=k_factor(powers) if cluster_result.n_clusters else math.inf,
        ds_s=ds,
        asa_deg=asa,
        esa_deg=esa,
        n_clusters=max(cluster_result.n_clusters, 1),
        cluster_spreads=spreads,
    )


def fit_ci(points, freq_hz: float) -> FitReport:
    """Least-squares path-loss exponent of the close-in model.

    ``points`` are (distance_m, path_loss_db) pairs with distances >= 1 m;
    the 1 m free-space anchor is fixed, only the slope is fitted. The shadow
    sigma is the residual standard deviation.
    """
    pts = [(float(d), float(pl)) for d, pl in points]
    if any(d < 1.0 for d, _ in pts):
        raise ValueError("close-in fit requires distances >= 1 m")
    distances = np.array([d for d, _ in pts])
    if np.unique(distances).size < 2:
        raise ValueError("close-in fit requires at least 2 distinct distances")
    pl = np.array([p for _, p in pts])
    anchor = fspl(freq_hz, 1.0)
    x = 10.0 * np.log10(distances)
    y = pl - anchor
    ple = float(np.dot(x, y) / np.dot(x, x))
    residuals = y - ple * x
    sf_sigma = float(np.std(residuals))
    rmse = float(np.sqrt(np.mean(residuals**2)))
    stderr = sf_sigma / math.sqrt(float(np.dot(x, x))) if len(pts) > 1 else 0.0
    return FitReport(
        model="ci",
        params={
            "ple": ple,
            "ple_stderr": stderr,
            "sf_sigma_db": sf_sigma,
            "fspl_1m_db": anchor,
        },
        goodness={"rmse_db": rmse},
        n_samples=len(pts),
    )


def _normal_cdf(x, mean, std):
    if std == 0:
        return np.where(np.asarray(x) >= mean, 1.0, 0.0)
    return 0.5 * (1.0 + np.vectorize(math.erf)((np.asarray(x) - mean) / (std * math.sqrt(2.0))))


def _ks_statistic(samples, mean, std):
    s = np.sort(np.asarray(samples, dtype=float))
    n = s.size
    cdf = _normal_cdf(s, mean, std)
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def fit_gaussian(samples) -> FitReport:
    """Maximum-likelihood Gaussian fit with a KS goodness statistic."""
    s = np.asarray(list(samples), dtype=float)
    if s.size < 3:
        raise ValueError("need at least 3 samples")
    mean = float(s.mean())
    std = float(s.std())
    return FitReport(
        model="gaussian",
        params={"mean": mean, "std": std},
        goodness={"ks_statistic": _ks_statistic(s, mean, std)},
        n_samples=int(s.size),
    )


def fit_lognormal(samples) -> FitReport:
    """Log-normal fit in the log10 domain; ``linear_ref`` is 10**mu."""
    s = np.asarray(list(samples), dtype=float)
    if s.size < 3:
        raise ValueError("need at least 3 samples")
    if np.any(s <= 0):
        raise ValueError("log-normal fit requires positive samples")
    logs = np.log10(s)
    mu = float(logs.mean())
    sigma = float(logs.std())
    return FitReport(
        model="lognormal",
        params={"mu_log10": mu, "sigma_log10": sigma, "linear_ref": 10.0**mu},
        goodness={"ks_statistic": _ks_statistic(logs, mu, sigma)},
        n_samples=int(s.size),
    )


def empirical_cdf(samples):
    """Sorted step CDF as (value, probability k/N) pairs."""
    s = sorted(float(x) for x in samples)
    if not s:
        raise ValueError("need at least 1 sample")
    n = len(s)
    return [(v, (i + 1) / n) for i, v in enumerate(s)]


def write_cdf_csv(path, samples) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "probability"])
        for v, p in empirical_cdf(samples):
            writer.writerow([repr(v), repr(p)])


# ---------------------------------------------------------------------------
# reference comparison

#: ratio outside [0.55, 1.8] versus the reference gets called out, matching
#: the kinds of disparities worth flagging (2x K-factor, 1/5 cluster count)
FLAG_RATIO_HIGH = 1.8
FLAG_RATIO_LOW = 0.55

METRIC_ORDER = (
    "ple",
    "sf_sigma_db",
    "k_mean_db",
    "ds_mean_s",
    "asa_mean_deg",
    "esa_mean_deg",
    "n_clusters_mean",
    "cds_mean_s",
    "casa_mean_deg",
    "cesa_mean_deg",
)


def compare_reference(measured: dict, reference_path, case: str = "los") -> list:
    """Side-by-side rows of measured values versus an external reference file.

    Missing reference entries are reported as unavailable rather than raised.
    Each row: metric, measured, reference, difference, ratio, flag.
    """
    with open(reference_path, "r", encoding="utf-8") as fh:
        reference = json.load(fh)
    ref_case = reference.get(case, {})
    rows = []
    for metric in METRIC_ORDER:
        if metric not in measured:
            continue
        meas = measured[metric]
        ref = ref_case.get(metric)
        if ref is None:
            rows.append(
                {"metric": metric, "measured": meas, "reference": None,
                 "difference": None, "ratio": None, "flag": "reference unavailable"}
            )
            continue
        diff = meas - ref
        ratio = meas / ref if ref != 0 else math.inf
        flag = ""
        if ratio >= FLAG_RATIO_HIGH:
            flag = f"measured {ratio:.2f}x reference"
        elif ratio <= FLAG_RATIO_LOW:
            flag = f"measured {ratio:.2f}x reference"
        rows.append(
            {"metric": metric, "measured": meas, "reference": ref,
             "difference": diff, "ratio": ratio, "flag": flag}
        )
    return rows


def write_comparison_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "measured", "reference", "difference", "ratio", "flag"])
        for r in rows:
            writer.writerow(
                [r["metric"]]
                + ["" if r[k] is None else repr(r[k]) for k in ("measured", "reference", "difference", "ratio")]
                + [r["flag"]]
            )


def format_comparison_table(rows) -> str:
    header = f"{'metric':<18}{'measured':>14}{'reference':>14}{'diff':>12}{'ratio':>8}  flag"
    lines = [header, "-" * len(header)]
    for r in rows:
        meas = f"{r['measured']:.4g}"
        ref = "n/a" if r["reference"] is None else f"{r['reference']:.4g}"
        diff = "n/a" if r["difference"] is None else f"{r['difference']:+.4g}"
        ratio = "n/a" if r["ratio"] is None else f"{r['ratio']:.2f}"
        lines.append(f"{r['metric']:<18}{meas:>14}{ref:>14}{diff:>12}{ratio:>8}  {r['flag']}")
    return "\n".join(lines)


def _aslist(mpcs):
    if hasattr(mpcs, "mpcs"):
        return mpcs.mpcs
    return list(mpcs)
