"""Geometry and state primitives shared by every other module.

Coordinates are ego-local bird's-eye-view: X is the lateral axis
(left/right), Y is the longitudinal axis (forward), units are meters.
All types are immutable values after construction and every function in
this module is pure, so everything is safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "Waypoint",
    "Trajectory",
    "VisibilityMask",
    "EgoState",
    "ObjectState",
    "BevGridSpec",
    "OccupancyGrid",
    "EgoFootprint",
    "CriticalObjectConfig",
    "displacement_at",
    "subsample_1hz",
    "select_critical_objects",
    "world_to_grid",
    "rasterize_footprint",
]


@dataclass(frozen=True)
class Waypoint:
    """A single BEV position: ``x`` lateral, ``y`` longitudinal (meters)."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"waypoint coordinates must be finite, got ({self.x}, {self.y})")

    def distance_to(self, other: "Waypoint") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_tuple(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Trajectory:
    """An ordered waypoint path sampled at ``rate_hz`` over ``horizon_s`` seconds.

    The standard planning horizon is 3 s at 2 Hz, i.e. exactly 6 waypoints.
    """

    waypoints: tuple[Waypoint, ...]
    rate_hz: int = 2
    horizon_s: int = 3

    def __post_init__(self) -> None:
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        expected = self.rate_hz * self.horizon_s
        if len(self.waypoints) != expected:
            raise ValueError(
                f"trajectory needs {expected} waypoints for {self.horizon_s}s at "
                f"{self.rate_hz}Hz, got {len(self.waypoints)}"
            )

    @property
    def n_steps(self) -> int:
        return len(self.waypoints)

    def waypoint_at(self, t: int) -> Waypoint:
        """Waypoint at 1-based step index ``t`` (t=1 is the first step, 0.5 s)."""
        if not 1 <= t <= self.n_steps:
            raise IndexError(f"step index {t} outside 1..{self.n_steps}")
        return self.waypoints[t - 1]

    @staticmethod
    def from_xy(pairs: Sequence[Sequence[float]], rate_hz: int = 2, horizon_s: int = 3) -> "Trajectory":
        return Trajectory(tuple(Waypoint(float(x), float(y)) for x, y in pairs), rate_hz, horizon_s)


@dataclass(frozen=True)
class VisibilityMask:
    """Per-step 0/1 flags; a zero marks an invalid (down-weighted) step."""

    flags: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "flags", tuple(int(f) for f in self.flags))
        if any(f not in (0, 1) for f in self.flags):
            raise ValueError(f"mask flags must be 0/1, got {self.flags}")

    @staticmethod
    def full(n: int = 6) -> "VisibilityMask":
        return VisibilityMask((1,) * n)

    def __len__(self) -> int:
        return len(self.flags)


_ORIGIN = (0.0, 0.0)


@dataclass(frozen=True)
class EgoState:
    """Ego-vehicle state in its own frame; position is pinned to the origin."""

    velocity: tuple[float, float]
    acceleration: tuple[float, float]
    yaw_deg: float
    history: tuple[Waypoint, ...] = ()
    mission_goal: str = "FORWARD"
    position: Waypoint = field(default=Waypoint(0.0, 0.0))

    def __post_init__(self) -> None:
        object.__setattr__(self, "velocity", (float(self.velocity[0]), float(self.velocity[1])))
        object.__setattr__(self, "acceleration", (float(self.acceleration[0]), float(self.acceleration[1])))
        object.__setattr__(self, "history", tuple(self.history))
        if self.position.as_tuple() != _ORIGIN:
            raise ValueError("ego position must be the origin in the ego-local frame")
        if len(self.history) > 4:
            raise ValueError(f"ego history holds at most 4 waypoints (2s at 2Hz), got {len(self.history)}")

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)


@dataclass(frozen=True)
class ObjectState:
    """A perceived traffic participant in the ego BEV frame."""

    object_id: str
    position: Waypoint
    velocity: tuple[float, float]
    class_label: str
    future: Optional[Trajectory] = None
    history: Optional[tuple[Waypoint, ...]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "velocity", (float(self.velocity[0]), float(self.velocity[1])))
        if self.history is not None:
            object.__setattr__(self, "history", tuple(self.history))
        if not self.class_label:
            raise ValueError("object class_label must be non-empty")


@dataclass(frozen=True)
class BevGridSpec:
    """Uniform BEV grid: cell sizes ``dx``, first-cell-center offsets ``bx``, ``dims`` cells.

    The standard grid is 200x200 cells of 0.5 m covering [-50, 50] m on both
    axes, so bx = -50 + dx/2 = -49.75.
    """

    dx: tuple[float, float] = (0.5, 0.5)
    bx: tuple[float, float] = (-49.75, -49.75)
    dims: tuple[int, int] = (200, 200)

    def __post_init__(self) -> None:
        for k in (0, 1):
            if not math.isclose(self.dims[k] * self.dx[k], 100.0, rel_tol=0.0, abs_tol=1e-9):
                raise ValueError(f"grid axis {k} must span 100 m, got {self.dims[k] * self.dx[k]}")
            if not math.isclose(self.bx[k], -50.0 + self.dx[k] / 2.0, rel_tol=0.0, abs_tol=1e-9):
                raise ValueError(f"grid axis {k} start offset must equal -50 + dx/2, got {self.bx[k]}")

    def cell_center(self, r: int, c: int) -> tuple[float, float]:
        return (self.bx[0] + r * self.dx[0], self.bx[1] + c * self.dx[1])


class OccupancyGrid:
    """A single-timestep binary BEV occupancy map.

    ``cells[r, c]`` covers the world point ``spec.cell_center(r, c)``; the
    array is frozen read-only on construction.
    """

    __slots__ = ("spec", "cells", "timestep")

    def __init__(self, cells: np.ndarray, timestep: int, spec: BevGridSpec = BevGridSpec()):
        arr = np.array(cells, dtype=np.uint8, copy=True)
        if arr.shape != spec.dims:
            raise ValueError(f"occupancy shape {arr.shape} != grid dims {spec.dims}")
        if arr.max(initial=0) > 1:
            raise ValueError("occupancy cells must be 0/1")
        if not 1 <= timestep <= 6:
            raise ValueError(f"timestep must lie in 1..6, got {timestep}")
        arr.setflags(write=False)
        self.spec = spec
        self.cells = arr
        self.timestep = timestep

    @staticmethod
    def empty(timestep: int, spec: BevGridSpec = BevGridSpec()) -> "OccupancyGrid":
        return OccupancyGrid(np.zeros(spec.dims, dtype=np.uint8), timestep, spec)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.timestep == other.timestep
            and np.array_equal(self.cells, other.cells)
        )

    __hash__ = None  # array payload; identity hashing would be misleading


@dataclass(frozen=True)
class EgoFootprint:
    """Axis-aligned ego rectangle used for collision checks (no yaw)."""

    length: float = 4.084  # along the longitudinal (Y) axis
    width: float = 1.85  # along the lateral (X) axis

    def __post_init__(self) -> None:
        if not (self.length > self.width > 0.0):
            raise ValueError(f"footprint needs length > width > 0, got {self.length} x {self.width}")


@dataclass(frozen=True)
class CriticalObjectConfig:
    """Speed-adaptive radius for critical-object selection: L0 + kappa * |v_ego|.

    The defaults are artifact-level choices, not published values; override
    freely.
    """

    L0: float = 20.0
    kappa: float = 2.0

    def __post_init__(self) -> None:
        if self.L0 <= 0.0:
            raise ValueError("L0 must be positive")
        if self.kappa < 0.0:
            raise ValueError("kappa must be non-negative")

    def radius(self, ego_velocity: tuple[float, float]) -> float:
        return self.L0 + self.kappa * math.hypot(*ego_velocity)


def displacement_at(pred: Trajectory, gt: Trajectory, t: int) -> float:
    """Euclidean error between ``pred`` and ``gt`` at 1-based step ``t``."""
    if pred.n_steps != gt.n_steps:
        raise ValueError(f"trajectory lengths differ: {pred.n_steps} vs {gt.n_steps}")
    return pred.waypoint_at(t).distance_to(gt.waypoint_at(t))


def subsample_1hz(traj: Trajectory) -> list[Waypoint]:
    """The 1 Hz waypoints of a 2 Hz / 3 s trajectory: steps 2, 4 and 6."""
    if traj.n_steps != 6:
        raise ValueError(f"1 Hz subsampling expects 6 waypoints, got {traj.n_steps}")
    return [traj.waypoints[i] for i in (1, 3, 5)]


def select_critical_objects(
    objs: Sequence[ObjectState],
    ego_velocity: tuple[float, float],
    cfg: CriticalObjectConfig = CriticalObjectConfig(),
) -> list[ObjectState]:
    """Objects within the speed-adaptive radius, in input order."""
    radius = cfg.radius(ego_velocity)
    return [o for o in objs if math.hypot(o.position.x, o.position.y) <= radius]


def world_to_grid(p: Waypoint, spec: BevGridSpec = BevGridSpec()) -> Optional[tuple[int, int]]:
    """Grid cell containing ``p``, or None when ``p`` falls off the map.

    Cell k covers [edge + k*dx, edge + (k+1)*dx) with edge = bx - dx/2, so
    indexing is a plain floor.
    """
    r = math.floor((p.x - (spec.bx[0] - spec.dx[0] / 2.0)) / spec.dx[0])
    c = math.floor((p.y - (spec.bx[1] - spec.dx[1] / 2.0)) / spec.dx[1])
    if 0 <= r < spec.dims[0] and 0 <= c < spec.dims[1]:
        return (r, c)
    return None


def rasterize_footprint(
    center: Waypoint,
    fp: EgoFootprint,
    spec: BevGridSpec = BevGridSpec(),
    length_along_forward: bool = True,
) -> set[tuple[int, int]]:
    """In-bounds cells whose center lies inside the axis-aligned box at ``center``.

    Membership is cell-center containment, inclusive on the low edge and
    exclusive on the high edge; cells beyond the grid are clipped silently.
    ``length_along_forward`` maps the footprint length onto the Y axis
    (the default); flip it to swap the box orientation.
    """
    half_x = (fp.width if length_along_forward else fp.length) / 2.0
    half_y = (fp.length if length_along_forward else fp.width) / 2.0
    lo_x, hi_x = center.x - half_x, center.x + half_x
    lo_y, hi_y = center.y - half_y, center.y + half_y

    rows = _cells_in_span(lo_x, hi_x, spec.bx[0], spec.dx[0], spec.dims[0])
    cols = _cells_in_span(lo_y, hi_y, spec.bx[1], spec.dx[1], spec.dims[1])
    return {(r, c) for r in rows for c in cols}


def _cells_in_span(lo: float, hi: float, bx: float, dx: float, dim: int) -> list[int]:
    # Scan a one-cell margin around the arithmetic window, then keep exactly
    # the centers satisfying lo <= center < hi so edge cases match a
    # brute-force containment check bit for bit.
    first = max(0, math.floor((lo - bx) / dx) - 1)
    last = min(dim - 1, math.floor((hi - bx) / dx) + 1)
    out = []
    for k in range(first, last + 1):
        center = bx + k * dx
        if lo <= center < hi:
            out.append(k)
    return out
