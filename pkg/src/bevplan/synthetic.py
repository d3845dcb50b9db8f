"""Deterministic synthetic fixtures: kinematic scenes with self-consistent labels.

Scenes are rolled out from constant-turn-rate, constant-acceleration ego
motion in the ego frame (positive turn rate = leftward). Meta-action
labels are produced by the rule-based labeler on poses derived from the
generated trajectory, so relabeling a generated file is a no-op.
Everything is driven by one seed; identical seeds give identical files.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .core import (
    BevGridSpec,
    EgoFootprint,
    EgoState,
    ObjectState,
    OccupancyGrid,
    Trajectory,
    VisibilityMask,
    Waypoint,
    rasterize_footprint,
)
from .dataset_io import SceneSample
from .meta_actions import label_local_sequence, pose_series_from_trajectory

__all__ = ["rollout_kinematic", "make_scene_samples"]


def rollout_kinematic(
    v0: float,
    accel: float,
    turn_rate_dps: float,
    n_steps: int = 6,
    dt: float = 0.5,
    substeps: int = 50,
) -> list[Waypoint]:
    """Integrate ego motion forward and sample a waypoint every ``dt`` seconds.

    Heading starts along +Y and rotates at ``turn_rate_dps`` (positive =
    left, toward -X); speed ramps at ``accel`` and clamps at zero.
    """
    omega = math.radians(turn_rate_dps)
    h = dt / substeps
    x = y = 0.0
    t = 0.0
    out = []
    for _ in range(n_steps):
        for _ in range(substeps):
            v = max(v0 + accel * t, 0.0)
            psi = omega * t
            x += -v * math.sin(psi) * h
            y += v * math.cos(psi) * h
            t += h
        out.append(Waypoint(x, y))
    return out


def _history_rollout(v0: float, accel: float, turn_rate_dps: float, n_points: int = 4) -> list[Waypoint]:
    # Same dynamics integrated backward; points returned oldest first.
    omega = math.radians(turn_rate_dps)
    h = 0.5 / 50
    x = y = 0.0
    t = 0.0
    pts = []
    for _ in range(n_points):
        for _ in range(50):
            v = max(v0 + accel * t, 0.0)
            psi = omega * t
            x -= -v * math.sin(psi) * h
            y -= v * math.cos(psi) * h
            t -= h
        pts.append(Waypoint(x, y))
    return list(reversed(pts))


_OBJECT_CLASSES = ("car", "truck", "bus", "pedestrian", "bicycle")
_BOX_BY_CLASS = {
    "car": EgoFootprint(4.5, 1.9),
    "truck": EgoFootprint(7.0, 2.5),
    "bus": EgoFootprint(11.0, 2.9),
    "pedestrian": EgoFootprint(0.7, 0.6),
    "bicycle": EgoFootprint(1.8, 0.6),
}
_MISSION_GOALS = ("FORWARD", "TURN LEFT AT THE INTERSECTION", "TURN RIGHT AT THE INTERSECTION", "STOP AHEAD")


def _draw_motion(rng: np.random.Generator) -> tuple[float, float, float]:
    kind = rng.random()
    if kind < 0.2:  # brake to a stop inside the horizon
        v0 = float(rng.uniform(1.2, 2.8))
        accel = -(v0 / 2.2 + 0.3)
        omega = float(rng.uniform(-4.0, 4.0))
    elif kind < 0.4:  # hard turn
        v0 = float(rng.uniform(3.0, 9.0))
        accel = float(rng.uniform(-0.5, 0.5))
        omega = float(rng.choice((-1.0, 1.0)) * rng.uniform(20.0, 40.0))
    elif kind < 0.55:  # veer
        v0 = float(rng.uniform(2.0, 12.0))
        accel = float(rng.uniform(-1.0, 1.0))
        omega = float(rng.choice((-1.0, 1.0)) * rng.uniform(6.0, 15.0))
    else:  # mostly straight cruise / accelerate / decelerate
        v0 = float(rng.uniform(0.5, 14.0))
        accel = float(rng.uniform(-2.0, 2.0))
        omega = float(rng.uniform(-4.0, 4.0))
    return v0, accel, omega


def _make_objects(rng: np.random.Generator, sample_idx: int) -> list[ObjectState]:
    objects = []
    for j in range(int(rng.integers(0, 6))):
        cls = str(rng.choice(_OBJECT_CLASSES))
        pos = Waypoint(float(rng.uniform(-25.0, 25.0)), float(rng.uniform(-10.0, 45.0)))
        vel = (float(rng.uniform(-8.0, 8.0)), float(rng.uniform(-8.0, 8.0)))
        future = Trajectory(
            tuple(Waypoint(pos.x + vel[0] * 0.5 * k, pos.y + vel[1] * 0.5 * k) for k in range(1, 7))
        )
        history = None
        if rng.random() < 0.5:
            history = tuple(
                Waypoint(pos.x - vel[0] * 0.5 * k, pos.y - vel[1] * 0.5 * k) for k in range(3, 0, -1)
            )
        objects.append(
            ObjectState(
                object_id=f"obj-{sample_idx:06d}-{j}",
                position=pos,
                velocity=vel,
                class_label=cls,
                future=future,
                history=history,
            )
        )
    return objects


def _object_occupancy(objects: list[ObjectState], spec: BevGridSpec) -> tuple[OccupancyGrid, ...]:
    grids = []
    for t in range(1, 7):
        cells = np.zeros(spec.dims, dtype=np.uint8)
        for o in objects:
            box = _BOX_BY_CLASS[o.class_label]
            center = Waypoint(o.position.x + o.velocity[0] * 0.5 * t, o.position.y + o.velocity[1] * 0.5 * t)
            for r, c in rasterize_footprint(center, box, spec):
                cells[r, c] = 1
        grids.append(OccupancyGrid(cells, t, spec))
    return tuple(grids)


def make_scene_samples(
    n: int,
    seed: int,
    split: str = "train",
    with_occupancy: bool = True,
    spec: Optional[BevGridSpec] = None,
) -> list[SceneSample]:
    """Generate ``n`` fully valid scenes whose labels match the rule labeler."""
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    spec = spec or BevGridSpec()
    samples = []
    for i in range(n):
        v0, accel, omega = _draw_motion(rng)
        trajectory = Trajectory(tuple(rollout_kinematic(v0, accel, omega)))
        history = _history_rollout(v0, accel, omega)
        sample_id = f"synth-{i:06d}"

        flags = [1] * 6
        if rng.random() < 0.12:
            for t in range(int(rng.integers(4, 6)), 6):
                flags[t] = 0

        objects = _make_objects(rng, i)
        occupancy = _object_occupancy(objects, spec) if with_occupancy else None

        reasoning = None
        if i % 2 == 0:
            reasoning = (
                f"Speed {v0:.1f} m/s with clear lane markings; the planned motion follows "
                f"the current road geometry without conflicts."
            )

        # Labels come from the same pose derivation the labeling command
        # uses, so relabeling the emitted file reproduces them exactly.
        gt_actions = label_local_sequence(pose_series_from_trajectory(trajectory, v0))

        samples.append(
            SceneSample(
                sample_id=sample_id,
                split=split,
                ego=EgoState(
                    velocity=(0.0, v0),
                    acceleration=(0.0, accel),
                    yaw_deg=float(rng.uniform(-180.0, 180.0)),
                    history=tuple(history),
                    mission_goal=str(rng.choice(_MISSION_GOALS)),
                ),
                objects=tuple(objects),
                gt_trajectory=trajectory,
                gt_mask=VisibilityMask(tuple(flags)),
                gt_actions=gt_actions,
                reasoning=reasoning,
                occupancy=occupancy,
                occupancy_path=f"occ/{sample_id}.npz" if with_occupancy else None,
            )
        )
    return samples
