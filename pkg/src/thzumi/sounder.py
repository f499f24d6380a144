"""Direction-scan sounder simulation and correction stages.

``simulate_scan`` renders a multipath set into per-direction band-limited
CIRs: horn-pattern weighting, windowed-sinc pulse on the delay grid, circular
delay aliasing, clock-drift offsets, and post-averaging noise at the
configured floor. ``apply_calibration``, ``correct_drift`` and
``dealias_extend`` implement the measurement correction stages.

Scan container byte layout (little endian)::

    bytes 0..3   magic b"DSS1"
    bytes 4..7   uint32 header length N
    bytes 8..8+N UTF-8 JSON header: plan, grid, timestamps, meta,
                 n_directions, n_samples
    remainder    complex64 CIR block, direction-major (n_directions rows)
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .mathutil import angular_distance_deg
from .params import AntennaPattern, FrequencyPlan, ScanGrid, SounderParams
from .synth import MpcSet

SCAN_MAGIC = b"DSS1"


class CalibrationError(ValueError):
    pass


class DriftCorrectionError(ValueError):
    pass


@dataclass(frozen=True)
class DriftModel:
    """Linear 1PPS drift between the Tx and Rx clocks."""

    offset_at_t0_s: float = 0.0
    slope_s_per_s: float = 0.0

    def __post_init__(self):
        if abs(self.slope_s_per_s) >= 1e-6:
            raise ValueError("drift slope beyond 1e-6 s/s is not physical for disciplined clocks")

    def offset_at(self, t_s: float) -> float:
        return self.offset_at_t0_s + self.slope_s_per_s * t_s


@dataclass
class DssScan:
    """One direction-scan acquisition: a CIR per grid direction."""

    plan: FrequencyPlan
    grid: ScanGrid
    cirs: np.ndarray  # (n_directions, n_samples) complex64
    timestamps_s: np.ndarray  # (n_directions,)
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.cirs.shape[1]

    @property
    def extended(self) -> bool:
        return bool(self.meta.get("extended", False))

    @property
    def directions(self):
        return self.grid.directions()

    def delay_grid_s(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.plan.delay_resolution_s

    def direction_index(self, direction) -> int:
        az, el = direction
        key = (round(float(az), 6), round(float(el), 6))
        for i, (a, e) in enumerate(self.directions):
            if (round(a, 6), round(e, 6)) == key:
                return i
        raise KeyError(f"direction {direction!r} not on the scan grid")


def antenna_gain(pattern: AntennaPattern, offset_deg) -> np.ndarray | float:
    """Pattern gain in dBi at an angular offset from boresight.

    Horn: Gaussian main lobe G0 - 12*(offset/hpbw)^2, floored at the side-lobe
    level. Waveguide: flat.
    """
    off = np.abs(np.asarray(offset_deg, dtype=float))
    if pattern.kind == "waveguide":
        g = np.full_like(off, pattern.boresight_gain_dbi)
    else:
        g = pattern.boresight_gain_dbi - 12.0 * (off / pattern.hpbw_deg) ** 2
        g = np.maximum(g, pattern.boresight_gain_dbi - pattern.side_lobe_floor_db)
    return float(g) if np.isscalar(offset_deg) else g


def bandlimited_pulse(x_bins, rolloff: float = 0.1) -> np.ndarray:
    """Raised-cosine-windowed sinc sampled at ``x_bins`` (units of 1/B).

    Unit peak, zero at nonzero integers; the window bounds sidelobe leakage.
    """
    x = np.asarray(x_bins, dtype=float)
    if rolloff == 0.0:
        return np.sinc(x)
    denom = 1.0 - (2.0 * rolloff * x) ** 2
    singular = np.abs(denom) < 1e-9
    safe = np.where(singular, 1.0, denom)
    out = np.sinc(x) * np.cos(np.pi * rolloff * x) / safe
    if np.any(singular):
        out = np.where(singular, (np.pi / 4.0) * np.sinc(x), out)
    return out


def _circular_offset_bins(tau_s, n_samples, dt_s):
    """Signed circular distance (in bins) from each grid bin to delay tau."""
    k = np.arange(n_samples, dtype=float)
    x = k - np.asarray(tau_s, dtype=float)[..., None] / dt_s
    return (x + n_samples / 2.0) % n_samples - n_samples / 2.0


def simulate_scan(
    mpcs: MpcSet,
    plan: FrequencyPlan,
    grid: ScanGrid,
    rx_pattern: AntennaPattern,
    tx_pattern: AntennaPattern,
    sounder: SounderParams,
    rng: np.random.Generator,
    *,
    drift: DriftModel | None = None,
    dwell_s: float = 2.0,
    add_noise: bool = True,
    pulse_rolloff: float = 0.1,
) -> DssScan:
    """Render a multipath set into a direction-scan acquisition.

    Per direction, every component contributes its gain weighted by the Rx
    pattern at the steering offset (plus the flat Tx gain), placed at its
    delay (drift-shifted at that direction's timestamp) modulo the unambiguous
    range, convolved with the band-limited pulse. Complex circular Gaussian
    noise at the post-averaging floor is added on top.
    """
    directions = grid.directions()
    n_dir = len(directions)
    n = plan.n_samples
    dt = plan.delay_resolution_s
    t_max = plan.max_delay_s
    f0 = plan.center_freq_hz
    timestamps = np.arange(n_dir, dtype=float) * dwell_s

    cirs = np.zeros((n_dir, n), dtype=np.complex128)
    if mpcs.mpcs:
        az_m = mpcs.azimuths()
        el_m = mpcs.elevations()
        gains = mpcs.gains()
        delays = mpcs.delays()
        az_d = np.array([d[0] for d in directions])
        el_d = np.array([d[1] for d in directions])
        offsets = angular_distance_deg(
            az_d[:, None], el_d[:, None], az_m[None, :], el_m[None, :]
        )
        g_rx_db = antenna_gain(rx_pattern, offsets)
        g_tx_db = antenna_gain(tx_pattern, 0.0)
        amp = gains[None, :] * 10.0 ** ((g_rx_db + g_tx_db) / 20.0)

        if drift is None or (drift.offset_at_t0_s == 0.0 and drift.slope_s_per_s == 0.0):
            tau_eff = np.mod(delays, t_max)
            phases = np.exp(-2j * np.pi * f0 * tau_eff)
            pulses = bandlimited_pulse(_circular_offset_bins(tau_eff, n, dt), pulse_rolloff)
            cirs = (amp * phases[None, :]) @ pulses
        else:
            for i in range(n_dir):
                tau_eff = np.mod(delays + drift.offset_at(timestamps[i]), t_max)
                phases = np.exp(-2j * np.pi * f0 * tau_eff)
                pulses = bandlimited_pulse(_circular_offset_bins(tau_eff, n, dt), pulse_rolloff)
                cirs[i] = (amp[i] * phases) @ pulses

    if add_noise:
        sigma = math.sqrt(10.0 ** (sounder.noise_floor_db / 10.0) / 2.0)
        noise = rng.standard_normal((n_dir, n)) + 1j * rng.standard_normal((n_dir, n))
        cirs = cirs + sigma * noise

    meta = {
        "tx_m": [float(x) for x in mpcs.tx_position_m],
        "rx_m": [float(x) for x in mpcs.rx_position_m],
        "case": mpcs.state.case,
        "foliage_loss_db": float(mpcs.state.foliage_loss_db),
        "calibrated": True,
        "drift_corrected": drift is None,
        "extended": False,
    }
    return DssScan(plan=plan, grid=grid, cirs=cirs.astype(np.complex64), timestamps_s=timestamps, meta=meta)


def apply_system_response(scan: DssScan, response: np.ndarray) -> DssScan:
    """Imprint a frequency-domain system response (simulation helper)."""
    _check_response(scan, response, allow_zero=True)
    spectra = np.fft.fft(scan.cirs.astype(np.complex128), axis=1) * response[None, :]
    out = np.fft.ifft(spectra, axis=1).astype(np.complex64)
    meta = dict(scan.meta)
    meta["calibrated"] = False
    return DssScan(scan.plan, scan.grid, out, scan.timestamps_s.copy(), meta)


def apply_calibration(scan: DssScan, response: np.ndarray) -> DssScan:
    """Remove the system response by frequency-domain division.

    An identity response is a bit-exact no-op; a near-zero response bin raises
    CalibrationError naming the bin.
    """
    response = np.asarray(response, dtype=np.complex128)
    _check_response(scan, response, allow_zero=False)
    meta = dict(scan.meta)
    meta["calibrated"] = True
    if np.all(response == 1.0):
        return DssScan(scan.plan, scan.grid, scan.cirs.copy(), scan.timestamps_s.copy(), meta)
    spectra = np.fft.fft(scan.cirs.astype(np.complex128), axis=1) / response[None, :]
    out = np.fft.ifft(spectra, axis=1).astype(np.complex64)
    return DssScan(scan.plan, scan.grid, out, scan.timestamps_s.copy(), meta)


def _check_response(scan, response, allow_zero):
    response = np.asarray(response)
    if response.shape != (scan.n_samples,):
        raise CalibrationError(
            f"response length {response.shape} does not match {scan.n_samples} frequency bins"
        )
    if not allow_zero:
        bad = np.nonzero(np.abs(response) < 1e-300)[0]
        if bad.size:
            raise CalibrationError(f"singular system response at bin {int(bad[0])}")


def upsampled_envelope(cir: np.ndarray, upsample: int = 16) -> np.ndarray:
    """Band-limited interpolation of |CIR| via zero-padded FFT."""
    x = np.asarray(cir, dtype=np.complex128)
    n = x.size
    spectrum = np.fft.fft(x)
    padded = np.zeros(n * upsample, dtype=np.complex128)
    half = n // 2
    padded[:half] = spectrum[:half]
    padded[-(n - half):] = spectrum[half:]
    if n % 2 == 0:
        padded[half] = 0.5 * spectrum[half]
        padded[n * upsample - half] = 0.5 * spectrum[half]
    return np.abs(np.fft.ifft(padded)) * upsample


def measure_peak_delay(
    cir: np.ndarray,
    dt_s: float,
    upsample: int = 16,
    near_bin: int | None = None,
    window_bins: int = 4,
) -> float:
    """Sub-bin delay of the strongest envelope peak (optionally near a bin)."""
    env = upsampled_envelope(cir, upsample)
    n_up = env.size
    if near_bin is None:
        idx = int(np.argmax(env))
    else:
        lo = (near_bin - window_bins) * upsample
        hi = (near_bin + window_bins) * upsample + 1
        ids = np.arange(lo, hi) % n_up
        idx = int(ids[np.argmax(env[ids])])
    left = env[(idx - 1) % n_up]
    right = env[(idx + 1) % n_up]
    denom = left - 2.0 * env[idx] + right
    frac = 0.0 if denom >= 0 else float(np.clip(0.5 * (left - right) / denom, -1, 1))
    return (idx + frac) * dt_s / upsample


def correct_drift(scan: DssScan, anchor_delays) -> DssScan:
    """Least-squares linear drift correction from anchor directions.

    ``anchor_delays`` pairs a grid direction with the known true delay of its
    dominant path. The fitted offset(t) = a + b*t is removed from every CIR by
    a frequency-domain phase ramp.
    """
    anchors = list(anchor_delays)
    if len(anchors) < 2:
        raise DriftCorrectionError("drift correction needs at least 2 anchors")
    dt = scan.plan.delay_resolution_s
    times = []
    errors = []
    for direction, true_delay in anchors:
        idx = scan.direction_index(direction)
        measured = measure_peak_delay(scan.cirs[idx], dt)
        times.append(scan.timestamps_s[idx])
        errors.append(measured - true_delay)
    times = np.asarray(times)
    errors = np.asarray(errors)
    if np.ptp(times) == 0.0:
        raise DriftCorrectionError("anchors must have distinct timestamps")
    slope, intercept = np.polyfit(times, errors, 1)

    offsets = intercept + slope * scan.timestamps_s
    freqs = np.fft.fftfreq(scan.n_samples, d=dt)
    spectra = np.fft.fft(scan.cirs.astype(np.complex128), axis=1)
    spectra *= np.exp(2j * np.pi * freqs[None, :] * offsets[:, None])
    out = np.fft.ifft(spectra, axis=1).astype(np.complex64)
    meta = dict(scan.meta)
    meta["drift_corrected"] = True
    meta["drift_fit"] = {"offset_s": float(intercept), "slope_s_per_s": float(slope)}
    return DssScan(scan.plan, scan.grid, out, scan.timestamps_s.copy(), meta)


def dealias_extend(scan: DssScan) -> DssScan:
    """Extend every CIR by a copy of its head samples.

    Resolves delay wrap-around for paths slightly beyond the native
    unambiguous range: the copied head re-exposes wrapped peaks at their true
    delay. Raises on an already-extended scan.
    """
    if scan.extended:
        raise ValueError("scan is already extended")
    add = scan.plan.extended_samples - scan.plan.n_samples
    if add <= 0:
        raise ValueError("extended_samples does not exceed n_samples")
    out = np.concatenate([scan.cirs, scan.cirs[:, :add]], axis=1)
    meta = dict(scan.meta)
    meta["extended"] = True
    return DssScan(scan.plan, scan.grid, out, scan.timestamps_s.copy(), meta)


# ---------------------------------------------------------------------------
# persistence

def write_scan(path, scan: DssScan) -> None:
    import dataclasses as _dc

    header = {
        "plan": _dc.asdict(scan.plan),
        "grid": _dc.asdict(scan.grid),
        "timestamps_s": [float(t) for t in scan.timestamps_s],
        "meta": scan.meta,
        "n_directions": int(scan.cirs.shape[0]),
        "n_samples": int(scan.cirs.shape[1]),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(SCAN_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(scan.cirs.astype("<c8")).tobytes())


def read_scan(path) -> DssScan:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SCAN_MAGIC:
            raise ValueError(f"{path}: not a scan container")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        block = fh.read()
    n_dir = header["n_directions"]
    n_samp = header["n_samples"]
    cirs = np.frombuffer(block, dtype="<c8").reshape(n_dir, n_samp).copy()
    plan = FrequencyPlan(**header["plan"])
    grid = ScanGrid(**header["grid"])
    return DssScan(
        plan=plan,
        grid=grid,
        cirs=cirs,
        timestamps_s=np.asarray(header["timestamps_s"], dtype=float),
        meta=header["meta"],
    )


def export_direction_pdps_csv(path, scan: DssScan, floor_db: float = -250.0) -> None:
    """Per-direction PDPs (dB) as CSV: az_deg, el_deg, then one column per bin."""
    from .mathutil import power_db

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        delays = scan.delay_grid_s()
        fh.write("az_deg,el_deg," + ",".join(f"{d!r}" for d in delays) + "\n")
        for i, (az, el) in enumerate(scan.directions):
            row = power_db(scan.cirs[i], floor_db=floor_db)
            fh.write(f"{az!r},{el!r}," + ",".join(f"{v!r}" for v in row) + "\n")
