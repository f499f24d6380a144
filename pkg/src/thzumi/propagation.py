"""Large-scale propagation laws: free-space loss, close-in path loss,
shadow fading, foliage excess loss, and LoS/OLoS link classification.

Sign convention: every quantity returned here is a positive dB *loss*. The
underlying free-space expression is a gain; it is negated once, here, and
nowhere else.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .mathutil import SPEED_OF_LIGHT
from .params import FoliageParams, UmiCaseParams
from .scene import Scene


@dataclass(frozen=True)
class LinkState:
    """Classification of one Tx-Rx link: 'los' or 'olos' plus the foliage
    excess loss attached to an obstructed direct path (0 when LoS)."""

    case: str
    foliage_loss_db: float = 0.0

    def validate(self, foliage: FoliageParams) -> list:
        v = []
        if self.case not in ("los", "olos"):
            v.append(f"link case must be 'los' or 'olos', got {self.case!r}")
        if self.case == "los" and self.foliage_loss_db != 0.0:
            v.append("LoS link must carry zero foliage loss")
        if self.case == "olos":
            lo, hi = foliage.clamp_range_db
            if not (lo <= self.foliage_loss_db <= hi):
                v.append("OLoS foliage loss outside the clamp range")
        return v


def fspl(freq_hz: float, distance_m: float) -> float:
    """Free-space path loss in dB (positive): 20*log10(4*pi*f*d/c).

    Monotonically increasing in both arguments; raises on non-positive input.
    """
    if freq_hz <= 0 or distance_m <= 0:
        raise ValueError("fspl requires freq > 0 and distance > 0")
    return 20.0 * math.log10(4.0 * math.pi * freq_hz * distance_m / SPEED_OF_LIGHT)


def ci_path_loss(
    distance_m: float,
    case_params: UmiCaseParams,
    shadow_db: float = 0.0,
    freq_hz: float = 220e9,
) -> float:
    """Close-in reference-distance path loss:
    FSPL(f, 1 m) + 10*n*log10(d) + shadow term."""
    if distance_m < 1.0:
        raise ValueError("close-in model requires distance >= 1 m")
    return fspl(freq_hz, 1.0) + 10.0 * case_params.ple * math.log10(distance_m) + shadow_db


def foliage_excess_loss(pl_path_db: float, path_delay_s: float, freq_hz: float) -> float:
    """Excess loss of a direct path over free space at its own delay.

    May come out negative on noisy estimates; clamping is the caller's call.
    """
    if path_delay_s <= 0:
        raise ValueError("path delay must be > 0")
    return pl_path_db - fspl(freq_hz, SPEED_OF_LIGHT * path_delay_s)


def draw_foliage_loss(params: FoliageParams, rng: np.random.Generator) -> float:
    """One Gaussian foliage-loss draw, redrawn until inside the clamp range.

    Rejection (rather than clipping) keeps the in-range distribution shape.
    """
    lo, hi = params.clamp_range_db
    if params.loss_sigma_db == 0.0:
        return float(params.loss_mean_db)
    for _ in range(100000):
        x = rng.normal(params.loss_mean_db, params.loss_sigma_db)
        if lo <= x <= hi:
            return float(x)
    raise RuntimeError("foliage loss rejection sampling did not converge")


def classify_link(
    scene: Scene,
    rx_index: int,
    foliage: FoliageParams,
    rng: np.random.Generator,
) -> LinkState:
    """Classify one receiver position against the scene foliage.

    A link is OLoS when the receiver's route coordinate falls inside any
    foliage segment; the loss draw is scaled by the segment's thickness proxy
    and re-clamped to the configured range. One draw per link.
    """
    coord = scene.route_coordinate(rx_index)
    proxy = 0.0
    obstructed = False
    for seg in scene.foliage_segments:
        if seg.start_m <= coord <= seg.stop_m:
            obstructed = True
            proxy = max(proxy, seg.thickness_proxy)
    if not obstructed:
        return LinkState(case="los", foliage_loss_db=0.0)
    lo, hi = foliage.clamp_range_db
    loss = float(np.clip(draw_foliage_loss(foliage, rng) * proxy, lo, hi))
    return LinkState(case="olos", foliage_loss_db=loss)


def classify_route(scene, foliage, rng):
    """LinkState for every receiver on the route, in route order."""
    return [classify_link(scene, i, foliage, rng) for i in range(scene.n_rx)]


def export_route_csv(path, scene: Scene, states) -> None:
    """Write (distance, case, foliage_loss) rows for a classified route."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["distance_m", "case", "foliage_loss_db"])
        for i, state in enumerate(states):
            writer.writerow(
                [f"{scene.distance_3d(i):.6f}", state.case, f"{state.foliage_loss_db:.6f}"]
            )
