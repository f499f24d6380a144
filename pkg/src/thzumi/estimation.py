"""Inverse pipeline core: PDP synthesis, detection thresholding, and
peak-search multipath extraction with antenna de-embedding.

The extractor is a deterministic iterative peak-pick-and-subtract search per
steering direction, followed by cross-direction merging, pattern-based angle
refinement, and the dynamic-range threshold. It trades the accuracy of an
iterative ML estimator for testability: on isolated paths it is exact up to
noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mathutil import angular_distance_deg, power_db, wrap_azimuth_deg
from .params import AntennaPattern, SounderParams
from .propagation import LinkState
from .sounder import DssScan, antenna_gain, bandlimited_pulse
from .synth import Mpc, MpcSet


@dataclass
class Pdp:
    """Power-delay profile on the sounder delay grid."""

    delays_s: np.ndarray
    power_db: np.ndarray
    kind: str  # "directional" | "omni"


def directional_pdp(scan: DssScan, direction, clip_db: float = -200.0) -> Pdp:
    """|CIR|^2 in dB for one steering direction, floored at the clip value."""
    idx = scan.direction_index(direction)
    return Pdp(
        delays_s=scan.delay_grid_s(),
        power_db=power_db(scan.cirs[idx], floor_db=clip_db),
        kind="directional",
    )


def omni_pdp(scan: DssScan, sounder: SounderParams) -> Pdp:
    """Noise-eliminated omnidirectional PDP.

    Per direction, bins below the noise floor are replaced by the near-zero
    clip value before the linear-power sum across directions, which keeps the
    summed floor from rising above the single-direction floor.
    """
    p_lin = np.abs(scan.cirs.astype(np.complex128)) ** 2
    nf_lin = 10.0 ** (sounder.noise_floor_db / 10.0)
    clip_lin = 10.0 ** (sounder.pdp_clip_db / 10.0)
    p_lin = np.where(p_lin < nf_lin, clip_lin, p_lin)
    total = p_lin.sum(axis=0)
    return Pdp(
        delays_s=scan.delay_grid_s(),
        power_db=10.0 * np.log10(np.maximum(total, 1e-300)),
        kind="omni",
    )


def mpc_threshold(strongest_gain_db: float, sounder: SounderParams) -> float:
    """Linear amplitude extraction threshold:
    10^(max(strongest - R, NF + 5)/20)."""
    cut_db = max(
        strongest_gain_db - sounder.dynamic_range_db,
        sounder.noise_floor_db + 5.0,
    )
    return 10.0 ** (cut_db / 20.0)


@dataclass
class _Candidate:
    az_idx: int
    el_idx: int
    bin: int
    delay_s: float
    amp: complex  # fitted complex amplitude, antenna gains still embedded
    raw_db: float


_FIT_REL = np.arange(-3, 4)
_FIT_FRACS = np.linspace(-0.6, 0.6, 25)
_fit_cache = {}


def _fit_matrices(rolloff):
    """Pulse design matrices for the local fit; independent of the peak bin."""
    if rolloff not in _fit_cache:
        pulses = bandlimited_pulse(_FIT_REL[None, :] - _FIT_FRACS[:, None], rolloff)
        _fit_cache[rolloff] = (pulses, np.sum(pulses**2, axis=1))
    return _fit_cache[rolloff]


def _subtract_pulse(work, mag, amp, tau_bins, half, rolloff, circular):
    n = work.size
    win = np.arange(int(round(tau_bins)) - half, int(round(tau_bins)) + half + 1)
    if circular:
        idx = win % n
    else:
        keep = (win >= 0) & (win < n)
        idx = win[keep]
        win = idx
    work[idx] -= amp * bandlimited_pulse(win - tau_bins, rolloff)
    mag[idx] = np.abs(work[idx])


def _amp_at_tau(work, tau_bins, rolloff, circular):
    """LS amplitude of a pulse at a fixed delay."""
    n = work.size
    around = int(round(tau_bins))
    if circular:
        idx = (around + _FIT_REL) % n
    else:
        idx = np.clip(around + _FIT_REL, 0, n - 1)
    p = bandlimited_pulse((around + _FIT_REL) - tau_bins, rolloff)
    return np.dot(p, work[idx]) / np.dot(p, p)


def _matched_peak_fit(work, k0, rolloff, circular):
    """LS fit of one pulse near bin k0: returns (delay_bins, complex amp)."""
    n = work.size
    if circular:
        idx = (k0 + _FIT_REL) % n
    else:
        idx = np.clip(k0 + _FIT_REL, 0, n - 1)
    x = work[idx]
    pulses, den = _fit_matrices(rolloff)
    num = pulses @ x
    score = np.abs(num) ** 2 / den
    best = int(np.argmax(score))
    if 0 < best < score.size - 1:
        d = score[best - 1] - 2 * score[best] + score[best + 1]
        frac = 0.0 if d >= 0 else float(np.clip(0.5 * (score[best - 1] - score[best + 1]) / d, -1, 1))
    else:
        frac = 0.0
    tau = k0 + _FIT_FRACS[best] + frac * (_FIT_FRACS[1] - _FIT_FRACS[0])
    p = bandlimited_pulse((k0 + _FIT_REL) - tau, rolloff)
    amp = np.dot(p, x) / np.dot(p, p)
    return tau, amp


def _pattern_axis_refine(c_db, n_db, step_deg, curvature_db_per_deg2):
    """Offset of the true direction from the best steering toward the stronger
    neighbor, from the known quadratic (in dB) main-lobe shape."""
    u = step_deg / 2.0 - (c_db - n_db) / (2.0 * curvature_db_per_deg2 * step_deg)
    return float(np.clip(u, 0.0, step_deg))


def extract_mpcs(
    scan: DssScan,
    sounder: SounderParams,
    rx_pattern: AntennaPattern,
    tx_pattern: AntennaPattern,
    *,
    pulse_rolloff: float = 0.1,
    max_peaks_per_direction: int = 256,
) -> MpcSet:
    """Estimate the multipath set from a calibrated, drift-corrected scan.

    Stages: per-direction iterative peak extraction (pick strongest, fit the
    pulse, subtract, repeat down to the detection floor); merge of duplicate
    detections across adjacent steerings (window: one delay bin, one grid
    step, strongest kept); suppression of side-lobe ghosts (same delay bin,
    far direction, at the pattern-floor level below a dominant detection);
    angle refinement by pattern-shape interpolation across the adjacent
    steerings; amplitude de-embedding of the Tx gain and the Rx pattern gain
    at the refined offset; finally the dynamic-range threshold keyed to the
    strongest estimate.
    """
    if scan.cirs.size == 0:
        raise ValueError("empty scan")
    azimuths = scan.grid.azimuths()
    elevations = scan.grid.elevations()
    n_az, n_el = len(azimuths), len(elevations)
    dt = scan.plan.delay_resolution_s
    n = scan.n_samples
    circular = not scan.extended
    cirs = scan.cirs.astype(np.complex128)

    g_tx_db = antenna_gain(tx_pattern, 0.0)
    g_rx_bore = rx_pattern.boresight_gain_dbi
    floor_depth = rx_pattern.side_lobe_floor_db
    raw_db_all = power_db(cirs, floor_db=-400.0)
    gmax_raw = float(raw_db_all.max())
    # any candidate below this raw level cannot clear the final threshold,
    # whatever its steering offset turns out to be
    min_deembed_sub = (g_rx_bore - floor_depth) + g_tx_db
    stop_raw_db = max(
        sounder.noise_floor_db + 5.0,
        gmax_raw - g_rx_bore - g_tx_db - sounder.dynamic_range_db,
    ) + min_deembed_sub

    # side-lobe ghost margin: a detection this far (in dB) below a same-delay
    # detection from another steering is the same path seen off-lobe; the
    # worst-case main-lobe loss of the best steering (path midway between
    # steerings in both axes) shrinks the usable depth
    az_step = azimuths[1] - azimuths[0] if n_az > 1 else 0.0
    el_step = elevations[1] - elevations[0] if n_el > 1 else 0.0
    worst_offset = math.hypot(az_step / 2.0, el_step / 2.0)
    worst_lobe_loss = 12.0 * (worst_offset / rx_pattern.hpbw_deg) ** 2
    dominance_margin = max(floor_depth - worst_lobe_loss - 3.0, 6.0)
    # per-bin envelope ceiling across directions: candidates provably doomed
    # by dominance are subtracted but not recorded (+4.5 dB covers the gap
    # between a sampled envelope and a fitted off-grid amplitude)
    env_ceiling_db = power_db(np.abs(cirs).max(axis=0), floor_db=-400.0)
    padded = np.concatenate([[env_ceiling_db[0]], env_ceiling_db, [env_ceiling_db[-1]]])
    neighborhood_max = np.maximum(np.maximum(padded[:-2], padded[1:-1]), padded[2:])
    record_floor_db = neighborhood_max - dominance_margin - 4.5

    sub_half = 64  # subtraction window; pulse tails beyond are < -60 dB
    candidates = []
    for d in range(n_az * n_el):
        work = cirs[d].copy()
        mag = np.abs(work)
        blocked = np.zeros(n, dtype=bool)
        extracted = []  # (tau_bins, amp) of everything subtracted
        for _ in range(max_peaks_per_direction):
            k = int(np.argmax(np.where(blocked, 0.0, mag)))
            level = mag[k]
            if level <= 0 or 20.0 * math.log10(level) < stop_raw_db:
                break
            tau_bins, amp = _matched_peak_fit(work, k, pulse_rolloff, circular)
            _subtract_pulse(work, mag, amp, tau_bins, sub_half, pulse_rolloff, circular)
            blocked[k] = True
            extracted.append([tau_bins, amp, k])

        # greedy extraction over-absorbs energy where pulses overlap; two
        # rounds of refit-against-residual (coordinate descent on the joint
        # LS) remove that bias and kill subtraction artifacts
        for _ in range(2):
            for item in extracted:
                tau_bins, amp, k = item
                _subtract_pulse(work, mag, -amp, tau_bins, sub_half, pulse_rolloff, circular)
                new_tau, new_amp = _matched_peak_fit(work, int(round(tau_bins)) % n, pulse_rolloff, circular)
                if abs(new_tau - tau_bins) > 1.0:
                    # latched onto a different structure; keep the delay and
                    # refresh the amplitude only
                    new_tau = tau_bins
                    new_amp = _amp_at_tau(work, tau_bins, pulse_rolloff, circular)
                _subtract_pulse(work, mag, new_amp, new_tau, sub_half, pulse_rolloff, circular)
                item[0], item[1] = new_tau, new_amp

        for tau_bins, amp, k in extracted:
            raw_db = 20.0 * math.log10(max(abs(amp), 1e-300))
            if raw_db < min(record_floor_db[k], record_floor_db[int(round(tau_bins)) % n]):
                continue
            if raw_db < stop_raw_db - 6.0:
                continue
            candidates.append(
                _Candidate(
                    az_idx=d // n_el,
                    el_idx=d % n_el,
                    bin=k,
                    delay_s=(tau_bins % n if circular else tau_bins) * dt,
                    amp=complex(amp),
                    raw_db=raw_db,
                )
            )

    # exact dominance suppression on the fitted amplitudes
    bin_max = {}
    for cand in candidates:
        bin_max[cand.bin] = max(bin_max.get(cand.bin, -1e9), cand.raw_db)
    undominated = []
    for cand in candidates:
        near_max = max(
            bin_max.get(cand.bin - 1, -1e9),
            bin_max.get(cand.bin, -1e9),
            bin_max.get(cand.bin + 1, -1e9),
        )
        if near_max - cand.raw_db >= dominance_margin:
            continue
        undominated.append(cand)

    # strongest-first greedy merge of duplicates across adjacent steerings;
    # the delay window is one bin wide (+-0.5) so a real pair a full bin
    # apart stays resolvable while same-path re-detections collapse
    undominated.sort(key=lambda c: (-c.raw_db, c.az_idx, c.el_idx, c.bin))
    merge_delay = 0.5 * dt * (1.0 + 1e-9)
    survivors = []
    for cand in undominated:
        duplicate = False
        for other in survivors:
            daz = abs(cand.az_idx - other.az_idx)
            daz = min(daz, n_az - daz)
            if (
                daz <= 1
                and abs(cand.el_idx - other.el_idx) <= 1
                and abs(cand.delay_s - other.delay_s) <= merge_delay
            ):
                duplicate = True
                break
        if not duplicate:
            survivors.append(cand)

    estimates = []
    k_pattern = 12.0 / rx_pattern.hpbw_deg**2
    nf_gate_db = sounder.noise_floor_db + 3.0
    for cand in survivors:
        az_steer = azimuths[cand.az_idx]
        el_steer = elevations[cand.el_idx]
        c_amp = abs(cirs[cand.az_idx * n_el + cand.el_idx][cand.bin])
        c_db = 20.0 * math.log10(max(c_amp, 1e-300))

        el_hat = el_steer
        if 0 < cand.el_idx < n_el - 1 and n_el >= 3:
            lo = abs(cirs[cand.az_idx * n_el + cand.el_idx - 1][cand.bin])
            hi = abs(cirs[cand.az_idx * n_el + cand.el_idx + 1][cand.bin])
            lo_db = 20.0 * math.log10(max(lo, 1e-300))
            hi_db = 20.0 * math.log10(max(hi, 1e-300))
            n_db, sign = (hi_db, 1.0) if hi_db >= lo_db else (lo_db, -1.0)
            # no curvature across steerings means a side-lobe-floor detection,
            # not a main-lobe one; the steering angle is the honest report
            flat = max(abs(c_db - lo_db), abs(c_db - hi_db)) < 0.75
            if n_db > nf_gate_db and not flat:
                step = elevations[1] - elevations[0]
                u = _pattern_axis_refine(c_db, n_db, step, k_pattern)
                el_hat = el_steer + sign * u

        az_hat = az_steer
        if n_az >= 3:
            left = abs(cirs[((cand.az_idx - 1) % n_az) * n_el + cand.el_idx][cand.bin])
            right = abs(cirs[((cand.az_idx + 1) % n_az) * n_el + cand.el_idx][cand.bin])
            l_db = 20.0 * math.log10(max(left, 1e-300))
            r_db = 20.0 * math.log10(max(right, 1e-300))
            n_db, sign = (r_db, 1.0) if r_db >= l_db else (l_db, -1.0)
            flat = max(abs(c_db - l_db), abs(c_db - r_db)) < 0.75
            if n_db > nf_gate_db and not flat:
                step = azimuths[1] - azimuths[0]
                k_az = k_pattern * math.cos(math.radians(el_hat)) ** 2
                u = _pattern_axis_refine(c_db, n_db, step, k_az)
                az_hat = wrap_azimuth_deg(az_steer + sign * u)

        offset = float(angular_distance_deg(az_steer, el_steer, az_hat, el_hat))
        g_rx_db = antenna_gain(rx_pattern, offset)
        gain_db = cand.raw_db - g_rx_db - g_tx_db
        estimates.append((cand.delay_s, gain_db, az_hat, el_hat))

    if estimates:
        strongest_db = max(e[1] for e in estimates)
        thr_lin = mpc_threshold(strongest_db, sounder)
        estimates = [e for e in estimates if 10.0 ** (e[1] / 20.0) > thr_lin]

    estimates.sort(key=lambda e: e[0])
    case = scan.meta.get("case", "los")
    direct_origin = "los" if case == "los" else "olos-direct"
    mpcs = []
    for i, (delay, gain_db, az, el) in enumerate(estimates):
        mpcs.append(
            Mpc(
                delay_s=float(delay),
                gain=10.0 ** (gain_db / 20.0),
                aoa_az_deg=float(az),
                aoa_el_deg=float(el),
                origin=direct_origin if i == 0 else "stochastic",
            )
        )
    state = LinkState(case=case, foliage_loss_db=float(scan.meta.get("foliage_loss_db", 0.0)))
    return MpcSet(
        tx_position_m=tuple(scan.meta.get("tx_m", (0.0, 0.0, 0.0))),
        rx_position_m=tuple(scan.meta.get("rx_m", (0.0, 0.0, 0.0))),
        state=state,
        mpcs=mpcs,
    )
