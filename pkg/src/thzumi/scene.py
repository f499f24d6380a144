"""Deployment geometry: Tx/Rx placement, point scatterers, foliage stretches.

The route runs along the +x axis starting at the Tx ground projection; the
"route coordinate" of a position is its x component. Foliage segments are
intervals of route coordinate; a receiver standing inside one has its direct
path obstructed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class Scatterer:
    """A discrete reflecting object (guideboard, sign, pillar).

    ``reflectivity_db`` is the loss added on top of the mirror-path free-space
    loss. ``facing_az_deg`` is the azimuth of the front-face normal; receivers
    on the back side see an extra ``back_penalty_db`` (None uses the global
    synthesis default). Omnidirectional scatterers leave facing at None.
    """

    position_m: tuple
    reflectivity_db: float
    label: str = "scatterer"
    facing_az_deg: float | None = None
    back_penalty_db: float | None = None


@dataclass(frozen=True)
class FoliageSegment:
    start_m: float
    stop_m: float
    thickness_proxy: float = 1.0


@dataclass(frozen=True)
class Scene:
    tx_position_m: tuple = (0.0, 4.0, 16.6)
    rx_positions_m: tuple = ()
    scatterers: tuple = ()
    foliage_segments: tuple = ()
    max_route_m: float = 500.0

    @property
    def n_rx(self) -> int:
        return len(self.rx_positions_m)

    def rx(self, index: int) -> tuple:
        return self.rx_positions_m[index]

    def distance_3d(self, index: int) -> float:
        tx = self.tx_position_m
        rx = self.rx_positions_m[index]
        return math.dist(tx, rx)

    def route_coordinate(self, index: int) -> float:
        return self.rx_positions_m[index][0]

    def validate(self) -> list:
        v = []
        if self.tx_position_m[2] <= 0:
            v.append("scene.tx_position_m height must be > 0")
        for i, rx in enumerate(self.rx_positions_m):
            if rx[2] <= 0:
                v.append(f"scene.rx_positions_m[{i}] height must be > 0")
            if not (0.0 <= rx[0] <= self.max_route_m):
                v.append(f"scene.rx_positions_m[{i}] route coordinate outside [0, {self.max_route_m}] m")
        for s in self.scatterers:
            if s.reflectivity_db < 0:
                v.append(f"scene.scatterers[{s.label}].reflectivity_db must be >= 0")
        for i, seg in enumerate(self.foliage_segments):
            if seg.start_m > seg.stop_m:
                v.append(f"scene.foliage_segments[{i}] interval must be ordered")
            if seg.thickness_proxy <= 0:
                v.append(f"scene.foliage_segments[{i}].thickness_proxy must be > 0")
        return v

    def to_dict(self) -> dict:
        return {
            "tx_position_m": list(self.tx_position_m),
            "rx_positions_m": [list(p) for p in self.rx_positions_m],
            "scatterers": [
                {
                    "position_m": list(s.position_m),
                    "reflectivity_db": s.reflectivity_db,
                    "label": s.label,
                    "facing_az_deg": s.facing_az_deg,
                    "back_penalty_db": s.back_penalty_db,
                }
                for s in self.scatterers
            ],
            "foliage_segments": [
                {"start_m": f.start_m, "stop_m": f.stop_m, "thickness_proxy": f.thickness_proxy}
                for f in self.foliage_segments
            ],
            "max_route_m": self.max_route_m,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scene":
        data = dict(data)
        route = data.pop("rx_route", None)
        known = {"tx_position_m", "rx_positions_m", "scatterers", "foliage_segments", "max_route_m"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scene key {sorted(unknown)[0]!r}")
        tx = tuple(data.get("tx_position_m", (0.0, 4.0, 16.6)))
        rx = tuple(tuple(p) for p in data.get("rx_positions_m", ()))
        if route is not None:
            rx = rx + tuple(
                route_positions(
                    route["distances_m"],
                    tx_position_m=tx,
                    rx_height_m=route.get("rx_height_m", 1.6),
                )
            )
        scatterers = tuple(
            Scatterer(
                position_m=tuple(s["position_m"]),
                reflectivity_db=s["reflectivity_db"],
                label=s.get("label", "scatterer"),
                facing_az_deg=s.get("facing_az_deg"),
                back_penalty_db=s.get("back_penalty_db"),
            )
            for s in data.get("scatterers", ())
        )
        segments = tuple(
            FoliageSegment(f["start_m"], f["stop_m"], f.get("thickness_proxy", 1.0))
            for f in data.get("foliage_segments", ())
        )
        return cls(
            tx_position_m=tx,
            rx_positions_m=rx,
            scatterers=scatterers,
            foliage_segments=segments,
            max_route_m=data.get("max_route_m", 500.0),
        )


def route_positions(distances_m, tx_position_m=(0.0, 4.0, 16.6), rx_height_m=1.6):
    """Receiver positions along the route for given 3-D Tx-Rx distances.

    Receivers sit on the route axis (y = 0) at ``rx_height_m``; the route
    coordinate is solved so the Euclidean Tx-Rx distance matches exactly.
    """
    tx = tuple(tx_position_m)
    dz = tx[2] - rx_height_m
    dy = tx[1]
    positions = []
    for d in distances_m:
        rem = d * d - dz * dz - dy * dy
        if rem <= 0:
            raise ValueError(f"route distance {d} m shorter than the Tx lateral/height offset")
        positions.append((math.sqrt(rem) + tx[0], 0.0, rx_height_m))
    return positions
