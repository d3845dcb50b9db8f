"""Open-loop evaluation under the two prevalent protocols.

Per-step displacement d_t and box-collision indicators are shared; the
protocols differ in aggregation and in coordinate handling:

* ``STP3``   l2@ks and CR@ks are means over steps 1..2k. Occupancy maps are
  flipped on both spatial axes at load time and trajectories are flipped
  once on the x axis inside the evaluator.
* ``UNIAD``  l2@ks and CR@ks read the single step t = 2k. Trajectories are
  x-flipped twice (net zero) and occupancy maps are used as-is, so the
  pipeline is flip-free.

Collision at a step counts only when the predicted footprint overlaps
occupancy while the ground-truth footprint does not (annotation noise is
not charged to the planner).

Everything here is pure over immutable inputs; batch evaluation may fan
out across samples because aggregation uses exact pairwise-stable sums.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    EgoFootprint,
    OccupancyGrid,
    Trajectory,
    VisibilityMask,
    Waypoint,
    displacement_at,
    rasterize_footprint,
)

__all__ = [
    "Protocol",
    "MetricReport",
    "EvalSample",
    "MetricsError",
    "l2_horizon",
    "collision_steps",
    "collision_horizon",
    "apply_flip_conventions",
    "evaluate_batch",
]

HORIZONS_S = (1, 2, 3)


class MetricsError(ValueError):
    pass


class Protocol(enum.Enum):
    STP3 = "stp3"
    UNIAD = "uniad"

    @staticmethod
    def parse(text: str) -> "Protocol":
        try:
            return Protocol(text.strip().lower())
        except ValueError:
            raise MetricsError(f"unknown protocol {text!r}; expected stp3 or uniad") from None


@dataclass(frozen=True)
class MetricReport:
    """Per-horizon and averaged l2 / collision numbers for one protocol."""

    protocol: Protocol
    l2_at: tuple[float, float, float]
    l2_avg: float
    collision_at: tuple[float, float, float]
    collision_avg: float
    n_samples: int

    def __post_init__(self) -> None:
        if any(d < 0.0 for d in self.l2_at) or self.l2_avg < 0.0:
            raise MetricsError("l2 values must be non-negative")
        if any(not 0.0 <= r <= 1.0 for r in self.collision_at) or not 0.0 <= self.collision_avg <= 1.0:
            raise MetricsError("collision rates must lie in [0, 1]")

    def to_record(self) -> dict:
        """Flat record with the field names fixed by the CLI schema."""
        return {
            "kind": "metric_report",
            "protocol": self.protocol.value,
            "l2_1s": self.l2_at[0],
            "l2_2s": self.l2_at[1],
            "l2_3s": self.l2_at[2],
            "l2_avg": self.l2_avg,
            "collision_1s": self.collision_at[0],
            "collision_2s": self.collision_at[1],
            "collision_3s": self.collision_at[2],
            "collision_avg": self.collision_avg,
            "n_samples": self.n_samples,
        }

    def to_text(self) -> str:
        lines = [f"protocol: {self.protocol.value}", f"n_samples: {self.n_samples}"]
        for i, k in enumerate(HORIZONS_S):
            lines.append(f"l2@{k}s: {self.l2_at[i]:.6f} m")
        lines.append(f"l2_avg: {self.l2_avg:.6f} m")
        for i, k in enumerate(HORIZONS_S):
            lines.append(f"collision@{k}s: {self.collision_at[i]:.6f}")
        lines.append(f"collision_avg: {self.collision_avg:.6f}")
        return "\n".join(lines)


def l2_horizon(
    pred: Trajectory,
    gt: Trajectory,
    mask: VisibilityMask,
    k: int,
    proto: Protocol,
) -> Optional[float]:
    """l2@ks for a single sample, or None when the horizon is fully masked.

    STP3 averages masked per-step errors over the visible steps up to 2k;
    UNIAD reads the single error at step 2k (None when that step is masked).
    """
    if k not in HORIZONS_S:
        raise MetricsError(f"horizon must be one of {HORIZONS_S}, got {k}")
    if pred.n_steps != 6 or gt.n_steps != 6:
        raise MetricsError("l2_horizon expects 6-step trajectories")
    if len(mask) != 6:
        raise MetricsError(f"mask length {len(mask)} != 6")

    if proto is Protocol.UNIAD:
        t = 2 * k
        if mask.flags[t - 1] == 0:
            return None
        return displacement_at(pred, gt, t)

    num = 0.0
    visible = 0
    for t in range(1, 2 * k + 1):
        if mask.flags[t - 1]:
            num += displacement_at(pred, gt, t)
            visible += 1
    if visible == 0:
        return None
    return num / visible


def collision_steps(
    pred: Trajectory,
    gt: Trajectory,
    occ: Sequence[OccupancyGrid],
    fp: EgoFootprint = EgoFootprint(),
) -> list[int]:
    """Per-step collision indicators with ground-truth-collision exclusion.

    Step t counts iff the predicted box overlaps occupancy and the
    ground-truth box does not.
    """
    if len(occ) != 6:
        raise MetricsError(f"need one occupancy grid per step (6), got {len(occ)}")
    out = []
    for t in range(1, 7):
        grid = occ[t - 1]
        hit_pred = _box_hits(pred.waypoint_at(t), fp, grid)
        hit_gt = _box_hits(gt.waypoint_at(t), fp, grid)
        out.append(int(hit_pred and not hit_gt))
    return out


def _box_hits(center: Waypoint, fp: EgoFootprint, grid: OccupancyGrid) -> bool:
    cells = rasterize_footprint(center, fp, grid.spec)
    return any(grid.cells[r, c] for r, c in cells)


def collision_horizon(steps: Sequence[int], k: int, proto: Protocol) -> float:
    """CR@ks from the six per-step indicators; mean over 2k steps or value at 2k."""
    if k not in HORIZONS_S:
        raise MetricsError(f"horizon must be one of {HORIZONS_S}, got {k}")
    if len(steps) != 6:
        raise MetricsError(f"need 6 indicators, got {len(steps)}")
    if proto is Protocol.UNIAD:
        return float(steps[2 * k - 1])
    return sum(steps[: 2 * k]) / (2.0 * k)


def apply_flip_conventions(
    traj: Trajectory,
    occ: Sequence[OccupancyGrid],
    proto: Protocol,
) -> tuple[Trajectory, list[OccupancyGrid]]:
    """Protocol coordinate handling: STP3 flips, UNIAD passes through.

    STP3 reverses occupancy maps along both spatial axes and negates the
    trajectory x once; UNIAD's two x-flips cancel, so inputs are returned
    unchanged.
    """
    if proto is Protocol.UNIAD:
        return traj, list(occ)
    flipped_traj = Trajectory(
        tuple(Waypoint(-w.x, w.y) for w in traj.waypoints), traj.rate_hz, traj.horizon_s
    )
    flipped_occ = [
        OccupancyGrid(np.flip(g.cells, axis=(0, 1)), g.timestep, g.spec) for g in occ
    ]
    return flipped_traj, flipped_occ


@dataclass(frozen=True)
class EvalSample:
    """One evaluation unit: prediction, ground truth, mask, optional grids."""

    pred: Trajectory
    gt: Trajectory
    mask: VisibilityMask
    grids: Optional[tuple[OccupancyGrid, ...]] = None


def _sample_metrics(
    sample: EvalSample, proto: Protocol, fp: EgoFootprint
) -> tuple[list[Optional[float]], list[float]]:
    grids = sample.grids if sample.grids is not None else tuple(OccupancyGrid.empty(t) for t in range(1, 7))
    pred_f, grids_f = apply_flip_conventions(sample.pred, grids, proto)
    gt_f, _ = apply_flip_conventions(sample.gt, (), proto)
    l2 = [l2_horizon(pred_f, gt_f, sample.mask, k, proto) for k in HORIZONS_S]
    steps = collision_steps(pred_f, gt_f, grids_f, fp)
    coll = [collision_horizon(steps, k, proto) for k in HORIZONS_S]
    return l2, coll


def evaluate_batch(
    samples: Sequence[EvalSample],
    proto: Protocol,
    fp: EgoFootprint = EgoFootprint(),
    jobs: int = 1,
) -> MetricReport:
    """Average per-sample horizon metrics into a MetricReport.

    Samples whose l2 is undefined at a horizon (fully masked window under
    STP3, masked step under UNIAD) are skipped in that horizon's mean only.
    Aggregation is order-independent (exact sums), so ``jobs`` never
    changes the result.
    """
    if not samples:
        raise MetricsError("cannot evaluate an empty batch")

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_sample = list(pool.map(lambda s: _sample_metrics(s, proto, fp), samples))
    else:
        per_sample = [_sample_metrics(s, proto, fp) for s in samples]

    l2_at = []
    for i, k in enumerate(HORIZONS_S):
        values = [l2[i] for l2, _ in per_sample if l2[i] is not None]
        if not values:
            raise MetricsError(f"no sample defines l2@{k}s (all masked at that horizon)")
        l2_at.append(math.fsum(values) / len(values))
    coll_at = [math.fsum(coll[i] for _, coll in per_sample) / len(per_sample) for i in range(3)]

    return MetricReport(
        protocol=proto,
        l2_at=tuple(l2_at),
        l2_avg=math.fsum(l2_at) / 3.0,
        collision_at=tuple(coll_at),
        collision_avg=math.fsum(coll_at) / 3.0,
        n_samples=len(samples),
    )
