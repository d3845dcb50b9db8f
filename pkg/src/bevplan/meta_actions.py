"""Rule-based meta-action labeling and meta-action accuracy evaluation.

A meta-action is a (lateral, longitudinal) decision pair sampled at 1 Hz
over the 3 s horizon. Labels come from per-second yaw and speed deltas:

* lateral   |dyaw| < 5 deg keeps STRAIGHT, [5, 20) veers, >= 20 turns,
  with the side chosen by sign (positive = left by default);
* longitudinal   dv >= +0.25 m/s accelerates, dv <= -0.25 decelerates,
  anything between maintains; a drop of at least 0.5 m/s that ends below
  the stop threshold (0.1 m/s) upgrades to BRAKE_TO_STOP.

Two sequence formulations exist: LOCAL labels the three consecutive
1-second intervals, CUMULATIVE labels the spans from t=0 to t=1,2,3 s.
CHANGE_LANE_* and REVERSE are accepted everywhere as vocabulary but the
rule table never emits them. All functions are pure and stateless.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

from .core import Trajectory

__all__ = [
    "LateralAction",
    "LongitudinalAction",
    "MetaAction",
    "Formulation",
    "ActionSequence",
    "LabelerThresholds",
    "AccuracyMode",
    "AccuracyReport",
    "label_interval",
    "label_local_sequence",
    "label_cumulative_sequence",
    "eval_action_accuracy",
    "normalize_action_name",
    "pose_series_from_trajectory",
]


class LateralAction(enum.Enum):
    TURN_LEFT = "TURN_LEFT"
    CHANGE_LANE_LEFT = "CHANGE_LANE_LEFT"
    VEER_LEFT = "VEER_LEFT"
    STRAIGHT = "STRAIGHT"
    VEER_RIGHT = "VEER_RIGHT"
    CHANGE_LANE_RIGHT = "CHANGE_LANE_RIGHT"
    TURN_RIGHT = "TURN_RIGHT"


class LongitudinalAction(enum.Enum):
    REVERSE = "REVERSE"
    BRAKE_TO_STOP = "BRAKE_TO_STOP"
    DECELERATE = "DECELERATE"
    MAINTAIN = "MAINTAIN"
    ACCELERATE = "ACCELERATE"


_MIRROR = {
    LateralAction.TURN_LEFT: LateralAction.TURN_RIGHT,
    LateralAction.TURN_RIGHT: LateralAction.TURN_LEFT,
    LateralAction.VEER_LEFT: LateralAction.VEER_RIGHT,
    LateralAction.VEER_RIGHT: LateralAction.VEER_LEFT,
    LateralAction.CHANGE_LANE_LEFT: LateralAction.CHANGE_LANE_RIGHT,
    LateralAction.CHANGE_LANE_RIGHT: LateralAction.CHANGE_LANE_LEFT,
    LateralAction.STRAIGHT: LateralAction.STRAIGHT,
}


def normalize_action_name(token: str) -> str:
    """Canonical upper-snake spelling: spaces/hyphens to underscores, any case."""
    return "_".join(token.strip().replace("-", " ").replace("_", " ").upper().split())


def parse_lateral(token: str) -> LateralAction:
    return LateralAction(normalize_action_name(token))


def parse_longitudinal(token: str) -> LongitudinalAction:
    return LongitudinalAction(normalize_action_name(token))


@dataclass(frozen=True)
class MetaAction:
    lateral: LateralAction
    longitudinal: LongitudinalAction

    def mirrored(self) -> "MetaAction":
        return MetaAction(_MIRROR[self.lateral], self.longitudinal)

    def as_pair(self) -> tuple[str, str]:
        return (self.lateral.value, self.longitudinal.value)


class Formulation(enum.Enum):
    LOCAL = "local"
    CUMULATIVE = "cumulative"


@dataclass(frozen=True)
class ActionSequence:
    """Three 1 Hz meta-actions over 3 s, in one of the two formulations."""

    actions: tuple[MetaAction, MetaAction, MetaAction]
    formulation: Formulation

    def __post_init__(self) -> None:
        object.__setattr__(self, "actions", tuple(self.actions))
        if len(self.actions) != 3:
            raise ValueError(f"an action sequence holds exactly 3 entries, got {len(self.actions)}")


@dataclass(frozen=True)
class LabelerThresholds:
    """Banding thresholds for the rule table (degrees, m/s)."""

    keep_deg: float = 5.0
    turn_deg: float = 20.0
    accel_mps: float = 0.25
    decel_mps: float = -0.25
    brake_mps: float = -0.5
    stop_eps_mps: float = 0.1

    def __post_init__(self) -> None:
        if not self.keep_deg < self.turn_deg:
            raise ValueError("keep_deg must be below turn_deg")
        if not self.decel_mps < 0.0 < self.accel_mps:
            raise ValueError("decel_mps must be negative and accel_mps positive")
        if self.brake_mps > self.decel_mps:
            raise ValueError("brake_mps must not exceed decel_mps")
        if self.stop_eps_mps <= 0.0:
            raise ValueError("stop_eps_mps must be positive")


def _wrap_deg(delta: float) -> float:
    """Wrap a yaw delta into (-180, 180]."""
    w = math.fmod(delta + 180.0, 360.0)
    if w < 0.0:
        w += 360.0
    w -= 180.0
    if w == -180.0:
        w = 180.0
    return w


def label_interval(
    delta_yaw: float,
    delta_v: float,
    v_end: float,
    th: LabelerThresholds = LabelerThresholds(),
    positive_is_left: bool = True,
) -> MetaAction:
    """Meta-action for one 1-second interval from its yaw/speed deltas.

    ``delta_yaw`` is signed degrees (wrapped to (-180, 180] before banding),
    ``delta_v`` the signed speed change and ``v_end`` the speed at the end
    of the interval (used only by the brake-to-stop clause).
    """
    dyaw = _wrap_deg(delta_yaw)
    mag = abs(dyaw)
    leftward = (dyaw > 0.0) == positive_is_left
    if mag < th.keep_deg:
        lateral = LateralAction.STRAIGHT
    elif mag < th.turn_deg:
        lateral = LateralAction.VEER_LEFT if leftward else LateralAction.VEER_RIGHT
    else:
        lateral = LateralAction.TURN_LEFT if leftward else LateralAction.TURN_RIGHT

    if delta_v <= th.brake_mps and v_end < th.stop_eps_mps:
        longitudinal = LongitudinalAction.BRAKE_TO_STOP
    elif delta_v >= th.accel_mps:
        longitudinal = LongitudinalAction.ACCELERATE
    elif delta_v <= th.decel_mps:
        longitudinal = LongitudinalAction.DECELERATE
    else:
        longitudinal = LongitudinalAction.MAINTAIN
    return MetaAction(lateral, longitudinal)


Pose = tuple[float, float]  # (yaw degrees, speed m/s)


def _check_poses(poses: Sequence[Pose]) -> None:
    if len(poses) != 4:
        raise ValueError(f"need 4 pose samples at t=0..3 s, got {len(poses)}")


def label_local_sequence(
    poses: Sequence[Pose],
    th: LabelerThresholds = LabelerThresholds(),
    positive_is_left: bool = True,
    episode_brake: bool = False,
) -> ActionSequence:
    """LOCAL labels from 4 pose samples: one action per consecutive second.

    With ``episode_brake`` the brake clause is evaluated over maximal runs
    of intervals that each drop at least |brake_mps|: every interval of a
    run whose final speed falls below the stop threshold is labeled
    BRAKE_TO_STOP. The default keeps the interval-local test.
    """
    _check_poses(poses)
    actions = [
        label_interval(
            poses[i + 1][0] - poses[i][0],
            poses[i + 1][1] - poses[i][1],
            poses[i + 1][1],
            th,
            positive_is_left,
        )
        for i in range(3)
    ]
    if episode_brake:
        actions = _apply_episode_brake(poses, actions, th)
    return ActionSequence(tuple(actions), Formulation.LOCAL)


def _apply_episode_brake(
    poses: Sequence[Pose], actions: list[MetaAction], th: LabelerThresholds
) -> list[MetaAction]:
    sustained = [poses[i + 1][1] - poses[i][1] <= th.brake_mps for i in range(3)]
    out = list(actions)
    i = 0
    while i < 3:
        if not sustained[i]:
            i += 1
            continue
        j = i
        while j + 1 < 3 and sustained[j + 1]:
            j += 1
        if poses[j + 1][1] < th.stop_eps_mps:
            for k in range(i, j + 1):
                out[k] = MetaAction(out[k].lateral, LongitudinalAction.BRAKE_TO_STOP)
        i = j + 1
    return out


def label_cumulative_sequence(
    poses: Sequence[Pose],
    th: LabelerThresholds = LabelerThresholds(),
    positive_is_left: bool = True,
) -> ActionSequence:
    """CUMULATIVE labels: entry k bands the deltas from t=0 to t=k seconds."""
    _check_poses(poses)
    actions = tuple(
        label_interval(
            poses[k][0] - poses[0][0],
            poses[k][1] - poses[0][1],
            poses[k][1],
            th,
            positive_is_left,
        )
        for k in (1, 2, 3)
    )
    return ActionSequence(actions, Formulation.CUMULATIVE)


class AccuracyMode(enum.Enum):
    PER_INTERVAL = "per_interval"
    CUMULATIVE = "cumulative"


@dataclass(frozen=True)
class AccuracyReport:
    """Per-horizon (1/2/3 s) accuracies, one row per action axis."""

    mode: AccuracyMode
    lateral: tuple[float, float, float]
    longitudinal: tuple[float, float, float]


def eval_action_accuracy(
    pred: Sequence[ActionSequence],
    gt: Sequence[ActionSequence],
    mode: AccuracyMode,
) -> AccuracyReport:
    """Fraction of samples correct at each horizon, per axis.

    PER_INTERVAL scores entry k alone; CUMULATIVE requires every entry up
    to k to be correct, so it can only be tighter (equal at 1 s).
    """
    if len(pred) != len(gt):
        raise ValueError(f"prediction/gt counts differ: {len(pred)} vs {len(gt)}")
    if not pred:
        raise ValueError("cannot score an empty set")
    for p, g in zip(pred, gt):
        if p.formulation is not g.formulation:
            raise ValueError("prediction and gt sequences use different formulations")

    def axis_acc(select) -> tuple[float, float, float]:
        out = []
        for k in range(3):
            if mode is AccuracyMode.PER_INTERVAL:
                hits = sum(select(p.actions[k]) == select(g.actions[k]) for p, g in zip(pred, gt))
            else:
                hits = sum(
                    all(select(p.actions[j]) == select(g.actions[j]) for j in range(k + 1))
                    for p, g in zip(pred, gt)
                )
            out.append(hits / len(pred))
        return tuple(out)

    return AccuracyReport(
        mode=mode,
        lateral=axis_acc(lambda a: a.lateral),
        longitudinal=axis_acc(lambda a: a.longitudinal),
    )


def pose_series_from_trajectory(traj: Trajectory, start_speed: float) -> list[Pose]:
    """Derive (yaw deg, speed) samples at t=0..3 s from a 2 Hz trajectory.

    The t=0 heading is forward (0 deg in the ego frame) at ``start_speed``.
    At each later second the speed comes from the most recent half-second
    segment and the heading from that segment's direction, with positive
    yaw pointing left (-x); a near-zero segment keeps the previous heading.
    """
    if traj.n_steps != 6:
        raise ValueError("pose derivation expects the standard 6-step trajectory")
    points = [(0.0, 0.0)] + [w.as_tuple() for w in traj.waypoints]
    poses: list[Pose] = [(0.0, float(start_speed))]
    prev_yaw = 0.0
    for k in (1, 2, 3):
        ax, ay = points[2 * k - 1]
        bx, by = points[2 * k]
        seg_x, seg_y = bx - ax, by - ay
        dist = math.hypot(seg_x, seg_y)
        if dist < 1e-9:
            yaw = prev_yaw
        else:
            yaw = math.degrees(math.atan2(-seg_x, seg_y))
        poses.append((yaw, dist / 0.5))
        prev_yaw = yaw
    return poses
