"""Per-link multipath generation.

Two emitters share the scene geometry:

* ``synthesize_link`` draws a stochastic cluster/ray set matching the
  configured per-case statistics (K, DS, ASA, ESA), scales it so total
  received power follows the close-in path-loss model, and merges
  deterministic scene echoes.
* ``deterministic_link`` emits only the direct path (free-space loss plus any
  foliage excess loss) and the scene echoes; this is the route-level view in
  which foliage fluctuations and scatterer trajectories are studied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .mathutil import (
    SPEED_OF_LIGHT,
    weighted_circular_spread_deg,
    weighted_rms_spread,
    wrap_azimuth_deg,
)
from .params import ParamBundle, UmiCaseParams
from .propagation import LinkState, classify_link, fspl, ci_path_loss
from .scene import Scene

ASA_CAP_DEG = 104.0
ESA_CAP_DEG = 52.0

#: origin tags for direct paths, stochastic rays, and scatterer echoes
DIRECT_ORIGINS = ("los", "olos-direct")


@dataclass(frozen=True)
class Mpc:
    """One multipath component: delay, linear amplitude gain, arrival angles."""

    delay_s: float
    gain: float
    aoa_az_deg: float
    aoa_el_deg: float
    cluster_id: int | None = None
    origin: str = "stochastic"

    @property
    def gain_db(self) -> float:
        return 20.0 * math.log10(self.gain)

    @property
    def is_direct(self) -> bool:
        return self.origin in DIRECT_ORIGINS


@dataclass
class MpcSet:
    """Multipath components of one link, sorted by delay, direct path first
    among equal delays."""

    tx_position_m: tuple
    rx_position_m: tuple
    state: LinkState
    mpcs: list = field(default_factory=list)

    @property
    def distance_m(self) -> float:
        return math.dist(self.tx_position_m, self.rx_position_m)

    @property
    def direct_delay_s(self) -> float:
        return self.distance_m / SPEED_OF_LIGHT

    def delays(self) -> np.ndarray:
        return np.array([m.delay_s for m in self.mpcs])

    def gains(self) -> np.ndarray:
        return np.array([m.gain for m in self.mpcs])

    def powers(self) -> np.ndarray:
        return self.gains() ** 2

    def azimuths(self) -> np.ndarray:
        return np.array([m.aoa_az_deg for m in self.mpcs])

    def elevations(self) -> np.ndarray:
        return np.array([m.aoa_el_deg for m in self.mpcs])

    def direct_index(self) -> int:
        for i, m in enumerate(self.mpcs):
            if m.is_direct:
                return i
        raise ValueError("set contains no direct path")

    def validate(self, pdp_clip_db: float = -200.0) -> list:
        v = []
        n_direct = sum(1 for m in self.mpcs if m.is_direct)
        if n_direct != 1:
            v.append(f"set must contain exactly one direct path, found {n_direct}")
        delays = self.delays()
        if delays.size and np.any(np.diff(delays) < 0):
            v.append("components must be sorted by delay")
        if n_direct == 1:
            t0 = self.mpcs[self.direct_index()].delay_s
            if delays.size and delays.min() < t0 - 1e-15:
                v.append("no component may arrive before the direct path")
        for m in self.mpcs:
            if m.gain <= 0:
                v.append("gains must be > 0")
                break
        for m in self.mpcs:
            if m.gain_db < pdp_clip_db:
                v.append("component gain below the PDP clip value")
                break
        return v


@dataclass(frozen=True)
class LargeScaleDraws:
    k_db: float
    ds_s: float
    asa_deg: float
    esa_deg: float
    sf_db: float


@dataclass(frozen=True)
class ClusterSkeleton:
    delay_s: float
    power: float
    az_deg: float
    el_deg: float


def draw_large_scale(case_params: UmiCaseParams, rng: np.random.Generator) -> LargeScaleDraws:
    """Draw per-link large-scale quantities.

    K and shadow fading are Gaussian in dB; DS/ASA/ESA are log-normal with
    mu = log10(mean). ASA/ESA draws exceeding the circular-spread caps
    (104 / 52 degrees) are redrawn.
    """
    k_db = rng.normal(case_params.k_mean_db, case_params.k_sigma_db)
    ds = 10.0 ** rng.normal(math.log10(case_params.ds_mean_s), case_params.ds_sigma_log10)
    asa = _draw_capped_lognormal(case_params.asa_mean_deg, case_params.asa_sigma_log10, ASA_CAP_DEG, rng)
    esa = _draw_capped_lognormal(case_params.esa_mean_deg, case_params.esa_sigma_log10, ESA_CAP_DEG, rng)
    sf = rng.normal(0.0, case_params.sf_sigma_db) if case_params.sf_sigma_db > 0 else 0.0
    return LargeScaleDraws(k_db=float(k_db), ds_s=float(ds), asa_deg=float(asa), esa_deg=float(esa), sf_db=float(sf))


def _draw_capped_lognormal(mean, sigma_log10, cap, rng):
    mu = math.log10(mean)
    for _ in range(10000):
        x = 10.0 ** rng.normal(mu, sigma_log10)
        if x <= cap:
            return x
    return cap


def draw_cluster_count(mean: float, rng: np.random.Generator) -> int:
    """1 + Poisson(mean - 1); a degenerate mean of 1 always yields 1."""
    if mean < 1:
        raise ValueError("cluster count mean must be >= 1")
    return 1 + int(rng.poisson(mean - 1.0))


def generate_clusters(
    draws: LargeScaleDraws,
    n_clusters: int,
    direct_delay_s: float,
    direct_az_deg: float,
    direct_el_deg: float,
    rng: np.random.Generator,
    *,
    elevation_range_deg=(-18.0, 18.0),
    max_excess_delay_s: float | None = None,
    power_decay_db: float = 6.0,
    ds_tol: float = 0.01,
    angle_tol: float = 0.02,
) -> list:
    """Cluster skeletons: the direct cluster plus exponentially delayed
    secondary clusters whose powers decay with delay order.

    The direct cluster's power share is set so the cluster-level K-factor
    equals the drawn K exactly. Secondary powers follow a single-slope
    exponential over relative delay spanning ``power_decay_db`` (bounded, so
    every cluster stays above the extraction dynamic range). The delay scale
    and the angular offset scales are solved numerically (bisection) so the
    skeleton's RMS delay spread and circular angle spreads land on the drawn
    values within ``ds_tol`` / ``angle_tol`` (relative). Elevation offsets
    are confined to ``elevation_range_deg``; unreachable targets saturate.
    """
    if n_clusters < 1:
        raise ValueError("need at least one cluster")
    if n_clusters == 1:
        return [ClusterSkeleton(direct_delay_s, 1.0, wrap_azimuth_deg(direct_az_deg), direct_el_deg)]

    k_lin = 10.0 ** (draws.k_db / 10.0)
    p_direct = k_lin / (1.0 + k_lin)
    p_rest = 1.0 - p_direct
    m = n_clusters - 1

    raw_excess = np.sort(rng.exponential(1.0, size=m))
    if max_excess_delay_s is None:
        max_excess_delay_s = direct_delay_s + 100.0 * draws.ds_s
    scale_cap = max_excess_delay_s / raw_excess.max()

    # powers depend on the relative delay ordering only, so the delay-scale
    # solve below moves delays without touching the power split
    weights = 10.0 ** (-power_decay_db * (raw_excess / raw_excess.max()) / 10.0)
    powers = p_rest * weights / weights.sum()
    all_powers = np.concatenate([[p_direct], powers])

    def realized_ds(scale):
        delays = np.concatenate([[direct_delay_s], direct_delay_s + raw_excess * scale])
        return weighted_rms_spread(delays, all_powers)

    scale = _bisect_to_target(realized_ds, draws.ds_s, scale_cap, ds_tol)
    excess = raw_excess * scale

    # angular offsets around the direct direction, scaled to hit the drawn
    # spreads; azimuth is unconstrained, elevation is kept on the visible range
    z_az = rng.standard_normal(m)
    z_el = rng.standard_normal(m)
    z_az[np.abs(z_az) < 1e-3] = 1e-3
    z_el[np.abs(z_el) < 1e-3] = 1e-3

    def realized_asa(t):
        az = np.concatenate([[direct_az_deg], direct_az_deg + np.clip(t * z_az, -180.0, 180.0)])
        return weighted_circular_spread_deg(az, all_powers, cap_deg=ASA_CAP_DEG)

    t_az = _bisect_to_target(realized_asa, draws.asa_deg, 180.0 / np.abs(z_az).max(), angle_tol)

    el_lo, el_hi = elevation_range_deg

    def realized_esa(t):
        el = np.concatenate(
            [[direct_el_deg], np.clip(direct_el_deg + t * z_el, el_lo, el_hi)]
        )
        return weighted_circular_spread_deg(el, all_powers, cap_deg=ESA_CAP_DEG)

    t_el = _bisect_to_target(realized_esa, draws.esa_deg, 2000.0, angle_tol)

    az = wrap_azimuth_deg(direct_az_deg + np.clip(t_az * z_az, -180.0, 180.0))
    el = np.clip(direct_el_deg + t_el * z_el, el_lo, el_hi)

    skeletons = [ClusterSkeleton(direct_delay_s, float(p_direct), wrap_azimuth_deg(direct_az_deg), direct_el_deg)]
    for i in range(m):
        skeletons.append(
            ClusterSkeleton(direct_delay_s + float(excess[i]), float(powers[i]), float(az[i]), float(el[i]))
        )
    return skeletons


def _bisect_to_target(fn, target, hi_cap, rel_tol, max_iter=60):
    """Solve fn(s) = target for s >= 0, fn(0) = 0, by bracket expansion and
    bisection; returns the cap when the target is unreachable below it."""
    if target <= 0:
        return 0.0
    hi = min(hi_cap, max(target, 1e-12))
    while fn(hi) < target and hi < hi_cap:
        hi = min(hi * 2.0, hi_cap)
    if fn(hi) < target:
        return hi
    lo = 0.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        value = fn(mid)
        if abs(value - target) <= rel_tol * target:
            return mid
        if value < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def skeleton_k_factor_db(skeletons) -> float:
    """Cluster-level K recomputed from skeleton powers (inf for one cluster)."""
    if len(skeletons) == 1:
        return math.inf
    p = np.array([s.power for s in skeletons])
    strongest = p.max()
    return 10.0 * math.log10(strongest / (p.sum() - strongest))


# expected sample-RMS factors for the ray spread draws (half-normal offsets
# for the direct cluster, centered normal for the rest)
def _two_sided_rms_factor(m):
    if m < 2:
        return 1.0
    return math.sqrt((m - 1) / m) * (1.0 - 1.0 / (4.0 * (m - 1)))


def _one_sided_rms_factor(m):
    if m < 2:
        return 1.0
    q = (m - 1) / m
    return math.sqrt(max(q - q * q * 2.0 / math.pi, 1e-12)) * (1.0 - 1.0 / (4.0 * (m - 1)))


def generate_rays(
    skeletons,
    case_params: UmiCaseParams,
    rng: np.random.Generator,
    *,
    ray_count: int = 10,
    direct_origin: str = "los",
    direct_delay_s: float | None = None,
) -> list:
    """Expand cluster skeletons into equal-power rays.

    Ray delays and angles spread around each cluster center so the per-cluster
    RMS delay spread and circular angle spreads hit the configured
    CDS/CASA/CESA in expectation. The first ray of the first cluster is the
    direct path and stays exactly on the cluster center. Total power is
    preserved (unit sum for unit skeletons). Returns delay-sorted Mpc list.
    """
    if not skeletons:
        raise ValueError("no cluster skeletons given")
    if direct_delay_s is None:
        direct_delay_s = skeletons[0].delay_s
    m = ray_count
    mpcs = []
    for ci, sk in enumerate(skeletons):
        ray_gain = math.sqrt(sk.power / m)
        if m == 1:
            origin = direct_origin if ci == 0 else "stochastic"
            mpcs.append(Mpc(sk.delay_s, ray_gain, sk.az_deg, sk.el_deg, cluster_id=ci, origin=origin))
            continue
        if ci == 0:
            # one-sided: nothing may arrive before the direct path
            d_off = np.concatenate(
                [[0.0], np.abs(rng.standard_normal(m - 1)) * case_params.cds_mean_s / _one_sided_rms_factor(m)]
            )
        else:
            d_off = np.concatenate(
                [[0.0], rng.standard_normal(m - 1) * case_params.cds_mean_s / _two_sided_rms_factor(m)]
            )
        a_off = np.concatenate(
            [[0.0], rng.standard_normal(m - 1) * case_params.casa_mean_deg / _two_sided_rms_factor(m)]
        )
        e_off = np.concatenate(
            [[0.0], rng.standard_normal(m - 1) * case_params.cesa_mean_deg / _two_sided_rms_factor(m)]
        )
        for ri in range(m):
            delay = max(sk.delay_s + float(d_off[ri]), direct_delay_s)
            origin = direct_origin if (ci == 0 and ri == 0) else "stochastic"
            mpcs.append(
                Mpc(
                    delay_s=delay,
                    gain=ray_gain,
                    aoa_az_deg=float(wrap_azimuth_deg(sk.az_deg + a_off[ri])),
                    aoa_el_deg=float(np.clip(sk.el_deg + e_off[ri], -90.0, 90.0)),
                    cluster_id=ci,
                    origin=origin,
                )
            )
    mpcs.sort(key=lambda p: (p.delay_s, not p.is_direct))
    return mpcs


def arrival_direction(from_position, at_position):
    """(azimuth, elevation) in degrees of the wave arriving at ``at_position``
    from ``from_position``."""
    dx = from_position[0] - at_position[0]
    dy = from_position[1] - at_position[1]
    dz = from_position[2] - at_position[2]
    horiz = math.hypot(dx, dy)
    az = wrap_azimuth_deg(math.degrees(math.atan2(dy, dx)))
    el = math.degrees(math.atan2(dz, horiz))
    return az, el


def scene_echoes(
    scene: Scene,
    rx_index: int,
    freq_hz: float = 220e9,
    default_back_penalty_db: float = 20.0,
    pdp_clip_db: float = -200.0,
) -> list:
    """Deterministic scatterer echoes for one receiver.

    Each scatterer contributes one component at the two-segment mirror delay
    (|Tx-S| + |S-Rx|)/c with loss FSPL(f, |Tx-S| + |S-Rx|) plus its
    reflectivity loss; receivers behind the facing direction pay the
    back-scatter penalty. Echoes below the PDP clip level are dropped.
    """
    tx = scene.tx_position_m
    rx = scene.rx(rx_index)
    echoes = []
    for sc in scene.scatterers:
        s = sc.position_m
        d1 = math.dist(tx, s)
        d2 = math.dist(s, rx)
        total = d1 + d2
        loss = fspl(freq_hz, total) + sc.reflectivity_db
        if sc.facing_az_deg is not None:
            ux, uy = math.cos(math.radians(sc.facing_az_deg)), math.sin(math.radians(sc.facing_az_deg))
            if ux * (rx[0] - s[0]) + uy * (rx[1] - s[1]) < 0.0:
                penalty = sc.back_penalty_db if sc.back_penalty_db is not None else default_back_penalty_db
                loss += penalty
        if -loss < pdp_clip_db:
            continue
        if d2 == 0.0:
            az, el = arrival_direction(tx, rx)
        else:
            az, el = arrival_direction(s, rx)
        echoes.append(
            Mpc(
                delay_s=total / SPEED_OF_LIGHT,
                gain=10.0 ** (-loss / 20.0),
                aoa_az_deg=az,
                aoa_el_deg=el,
                origin=f"scatterer:{sc.label}",
            )
        )
    return echoes


def synthesize_link(
    scene: Scene,
    rx_index: int,
    bundle: ParamBundle,
    rng: np.random.Generator,
) -> MpcSet:
    """Full stochastic link synthesis.

    Classification, large-scale draws, cluster/ray generation, then a uniform
    gain scale placing total received power on the close-in model (the OLoS
    parameter set was fitted on foliage-affected measurements, so no separate
    foliage term enters this scale; the recorded link state keeps the draw).
    Scene echoes merge in with their own absolute gains.
    """
    plan = bundle.frequency_plan
    syn = bundle.synthesis
    state = classify_link(scene, rx_index, bundle.foliage, rng)
    cp = bundle.umi.for_case(state.case)

    d = scene.distance_3d(rx_index)
    direct_delay = d / SPEED_OF_LIGHT
    az0, el0 = arrival_direction(scene.tx_position_m, scene.rx(rx_index))

    ls = draw_large_scale(cp, rng)
    n = draw_cluster_count(cp.n_clusters_mean, rng)
    max_excess = max(0.95 * plan.max_delay_s - direct_delay, 10e-9)
    skeletons = generate_clusters(
        ls,
        n,
        direct_delay,
        az0,
        el0,
        rng,
        elevation_range_deg=syn.elevation_range_deg,
        max_excess_delay_s=max_excess,
        power_decay_db=syn.cluster_power_decay_db,
        ds_tol=syn.ds_fit_tol,
        angle_tol=syn.angle_fit_tol,
    )
    direct_origin = "los" if state.case == "los" else "olos-direct"
    rays = generate_rays(
        skeletons,
        cp,
        rng,
        ray_count=syn.ray_count,
        direct_origin=direct_origin,
        direct_delay_s=direct_delay,
    )
    total_loss_db = ci_path_loss(d, cp, ls.sf_db, plan.center_freq_hz)
    scale = 10.0 ** (-total_loss_db / 20.0)
    rays = [replace(p, gain=p.gain * scale) for p in rays]

    echoes = scene_echoes(
        scene,
        rx_index,
        plan.center_freq_hz,
        syn.back_scatter_penalty_db,
        bundle.sounder.pdp_clip_db,
    )
    mpcs = sorted(rays + echoes, key=lambda p: (p.delay_s, not p.is_direct))
    return MpcSet(scene.tx_position_m, scene.rx(rx_index), state, mpcs)


def deterministic_link(
    scene: Scene,
    rx_index: int,
    bundle: ParamBundle,
    rng: np.random.Generator,
) -> MpcSet:
    """Route-level deterministic link: the direct path at free-space loss plus
    the drawn foliage excess loss, together with the scene echoes."""
    plan = bundle.frequency_plan
    state = classify_link(scene, rx_index, bundle.foliage, rng)
    d = scene.distance_3d(rx_index)
    az0, el0 = arrival_direction(scene.tx_position_m, scene.rx(rx_index))
    loss = fspl(plan.center_freq_hz, d) + state.foliage_loss_db
    direct = Mpc(
        delay_s=d / SPEED_OF_LIGHT,
        gain=10.0 ** (-loss / 20.0),
        aoa_az_deg=az0,
        aoa_el_deg=el0,
        cluster_id=0,
        origin="los" if state.case == "los" else "olos-direct",
    )
    echoes = scene_echoes(
        scene,
        rx_index,
        plan.center_freq_hz,
        bundle.synthesis.back_scatter_penalty_db,
        bundle.sounder.pdp_clip_db,
    )
    mpcs = sorted([direct] + echoes, key=lambda p: (p.delay_s, not p.is_direct))
    return MpcSet(scene.tx_position_m, scene.rx(rx_index), state, mpcs)


# ---------------------------------------------------------------------------
# CSV interchange (shared schema for true and estimated sets)

MPCSET_HEADER = "delay_s,gain_db,az_deg,el_deg,cluster_id,origin"


def mpcset_to_csv_text(mpcset: MpcSet) -> str:
    lines = [
        "# thzumi-mpcset v1",
        "# tx_m=" + ",".join(repr(float(x)) for x in mpcset.tx_position_m),
        "# rx_m=" + ",".join(repr(float(x)) for x in mpcset.rx_position_m),
        f"# case={mpcset.state.case}",
        f"# foliage_loss_db={mpcset.state.foliage_loss_db!r}",
        MPCSET_HEADER,
    ]
    for p in mpcset.mpcs:
        cid = "" if p.cluster_id is None else str(p.cluster_id)
        lines.append(
            f"{p.delay_s!r},{p.gain_db!r},{p.aoa_az_deg!r},{p.aoa_el_deg!r},{cid},{p.origin}"
        )
    return "\n".join(lines) + "\n"


def mpcset_from_csv_text(text: str) -> MpcSet:
    meta = {}
    mpcs = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                meta[key.strip()] = value.strip()
            continue
        if line == MPCSET_HEADER:
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise ValueError(f"malformed mpcset row: {line!r}")
        delay, gain_db, az, el, cid, origin = parts
        mpcs.append(
            Mpc(
                delay_s=float(delay),
                gain=10.0 ** (float(gain_db) / 20.0),
                aoa_az_deg=float(az),
                aoa_el_deg=float(el),
                cluster_id=None if cid == "" else int(cid),
                origin=origin,
            )
        )
    tx = tuple(float(x) for x in meta.get("tx_m", "0,0,0").split(","))
    rx = tuple(float(x) for x in meta.get("rx_m", "0,0,0").split(","))
    state = LinkState(case=meta.get("case", "los"), foliage_loss_db=float(meta.get("foliage_loss_db", "0")))
    return MpcSet(tx, rx, state, mpcs)


def normalize_mpcset(mpcset: MpcSet) -> MpcSet:
    """Round-trip through the CSV text form.

    Stage boundaries are files; running stages fused in-process goes through
    the same serialization so both paths are bit-identical.
    """
    return mpcset_from_csv_text(mpcset_to_csv_text(mpcset))


def write_mpcset_csv(path, mpcset: MpcSet) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(mpcset_to_csv_text(mpcset))


def read_mpcset_csv(path) -> MpcSet:
    with open(path, "r", encoding="utf-8") as fh:
        return mpcset_from_csv_text(fh.read())
