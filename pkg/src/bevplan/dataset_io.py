"""Record schema, prompt construction, and strict planner text I/O.

The dataset file is JSON-lines: one self-contained record per line with
fields ``sample_id``, ``split``, ``ego{velocity, acceleration, yaw_deg,
history, mission_goal}``, ``objects[{id, class, position, velocity,
future?, history?}]``, ``gt_trajectory``, ``gt_mask``, ``gt_actions``,
``reasoning?`` and ``occupancy_path?`` (see docs/record_formats.md).

Completions follow a fixed grammar: optional ``<prediction>`` and
``<think>`` blocks, a ``### Correct action:`` list of three quoted action
pairs, and a ``### 3-second trajectory:`` list of six numeric tuples.
``parse_model_output`` and ``serialize_completion`` are exact inverses on
valid outputs; parse errors are structured exceptions carrying byte
offsets, never crashes.

Numeric text uses shortest round-trip decimals so identical inputs always
produce byte-identical prompts, completions, and records.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol as TypingProtocol, Sequence

import numpy as np

from .core import EgoState, ObjectState, OccupancyGrid, Trajectory, VisibilityMask, Waypoint
from .meta_actions import (
    ActionSequence,
    Formulation,
    LabelerThresholds,
    LateralAction,
    LongitudinalAction,
    MetaAction,
    label_cumulative_sequence,
    normalize_action_name,
    pose_series_from_trajectory,
)

__all__ = [
    "SceneSample",
    "PromptBundle",
    "ModelOutput",
    "GeneratorClient",
    "MockGenerator",
    "ExternalServiceStub",
    "GeneratorUnavailable",
    "ParseError",
    "MissingSection",
    "BadArity",
    "UnknownAction",
    "MalformedNumber",
    "DatasetValidationError",
    "RecordError",
    "ReasoningValidation",
    "format_number",
    "load_samples",
    "save_samples",
    "build_prompt",
    "parse_model_output",
    "serialize_completion",
    "parse_action_verdict",
    "validate_reasoning",
    "pose_series_from_sample",
]


def format_number(v: float) -> str:
    """Shortest decimal that round-trips exactly; no trailing '.0'."""
    r = repr(float(v))
    return r[:-2] if r.endswith(".0") else r


def _fmt_pair(x: float, y: float) -> str:
    return f"({format_number(x)},{format_number(y)})"


def _fmt_waypoints(points: Sequence[Waypoint]) -> str:
    return "[" + ", ".join(_fmt_pair(w.x, w.y) for w in points) + "]"


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class SceneSample:
    """One evaluation/training scene in the ego frame."""

    sample_id: str
    split: str
    ego: EgoState
    objects: tuple[ObjectState, ...]
    gt_trajectory: Trajectory
    gt_mask: VisibilityMask
    gt_actions: ActionSequence
    reasoning: Optional[str] = None
    occupancy: Optional[tuple[OccupancyGrid, ...]] = None
    occupancy_path: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.occupancy is not None:
            object.__setattr__(self, "occupancy", tuple(self.occupancy))
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")
        if len(self.gt_mask) != self.gt_trajectory.n_steps:
            raise ValueError("gt_mask length must match the trajectory")
        if self.gt_actions.formulation is not Formulation.LOCAL:
            raise ValueError("stored gt_actions use the LOCAL formulation")


@dataclass(frozen=True)
class RecordError:
    record_index: int
    field: str
    message: str

    def __str__(self) -> str:
        return f"record {self.record_index}: {self.field}: {self.message}"


class DatasetValidationError(ValueError):
    """Raised when any record fails validation; carries the full report."""

    def __init__(self, errors: list[RecordError]):
        self.errors = errors
        head = "; ".join(str(e) for e in errors[:5])
        more = f" (+{len(errors) - 5} more)" if len(errors) > 5 else ""
        super().__init__(f"{len(errors)} invalid record(s): {head}{more}")


def _xy(value, name: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ValueError(f"{name} must be a 2-vector")
    x, y = float(value[0]), float(value[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"{name} must be finite")
    return (x, y)


def _waypoints(value, name: str, n: Optional[int] = None) -> tuple[Waypoint, ...]:
    if not isinstance(value, list):
        raise ValueError(f"{name} must be a list of [x, y] pairs")
    if n is not None and len(value) != n:
        raise ValueError(f"{name} must hold {n} waypoints, got {len(value)}")
    return tuple(Waypoint(*_xy(p, name)) for p in value)


def _parse_actions(value) -> ActionSequence:
    if not isinstance(value, list) or len(value) != 3:
        raise ValueError(f"gt_actions must hold 3 [lateral, longitudinal] pairs, got {value!r}")
    actions = []
    for pair in value:
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ValueError(f"action entry must be a [lateral, longitudinal] pair, got {pair!r}")
        try:
            lat = LateralAction(normalize_action_name(str(pair[0])))
        except ValueError:
            raise ValueError(f"unknown lateral action {pair[0]!r}") from None
        try:
            lon = LongitudinalAction(normalize_action_name(str(pair[1])))
        except ValueError:
            raise ValueError(f"unknown longitudinal action {pair[1]!r}") from None
        actions.append(MetaAction(lat, lon))
    return ActionSequence(tuple(actions), Formulation.LOCAL)


def _record_to_sample(rec: dict, base_dir: Path, load_occupancy: bool) -> SceneSample:
    ego_rec = rec["ego"]
    ego = EgoState(
        velocity=_xy(ego_rec["velocity"], "ego.velocity"),
        acceleration=_xy(ego_rec["acceleration"], "ego.acceleration"),
        yaw_deg=float(ego_rec["yaw_deg"]),
        history=_waypoints(ego_rec.get("history", []), "ego.history"),
        mission_goal=str(ego_rec.get("mission_goal", "FORWARD")),
    )
    objects = []
    for i, obj in enumerate(rec.get("objects", [])):
        future = None
        if obj.get("future") is not None:
            future = Trajectory(_waypoints(obj["future"], f"objects[{i}].future", 6))
        history = None
        if obj.get("history") is not None:
            history = _waypoints(obj["history"], f"objects[{i}].history")
        objects.append(
            ObjectState(
                object_id=str(obj["id"]),
                position=Waypoint(*_xy(obj["position"], f"objects[{i}].position")),
                velocity=_xy(obj["velocity"], f"objects[{i}].velocity"),
                class_label=str(obj["class"]),
                future=future,
                history=history,
            )
        )

    occupancy = None
    occ_path = rec.get("occupancy_path")
    if occ_path is not None and load_occupancy:
        full = base_dir / occ_path
        with np.load(full) as data:
            grids = data["grids"]
        occupancy = tuple(OccupancyGrid(grids[t], t + 1) for t in range(6))

    return SceneSample(
        sample_id=str(rec["sample_id"]),
        split=str(rec["split"]),
        ego=ego,
        objects=tuple(objects),
        gt_trajectory=Trajectory(_waypoints(rec["gt_trajectory"], "gt_trajectory", 6)),
        gt_mask=VisibilityMask(tuple(rec["gt_mask"])),
        gt_actions=_parse_actions(rec["gt_actions"]),
        reasoning=rec.get("reasoning"),
        occupancy=occupancy,
        occupancy_path=occ_path,
    )


def load_samples(path: str | Path, load_occupancy: bool = True) -> list[SceneSample]:
    """Parse and validate a JSONL dataset; raises with a per-record report."""
    path = Path(path)
    base_dir = path.parent
    samples: list[SceneSample] = []
    errors: list[RecordError] = []
    with path.open("r", encoding="utf-8") as fh:
        for idx, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append(RecordError(idx, "<json>", str(exc)))
                continue
            try:
                samples.append(_record_to_sample(rec, base_dir, load_occupancy))
            except KeyError as exc:
                errors.append(RecordError(idx, str(exc.args[0]), "missing field"))
            except (ValueError, TypeError, OSError) as exc:
                errors.append(RecordError(idx, rec.get("sample_id", "?"), str(exc)))
    if errors:
        raise DatasetValidationError(errors)
    return samples


def _sample_to_record(s: SceneSample) -> dict:
    rec: dict = {
        "sample_id": s.sample_id,
        "split": s.split,
        "ego": {
            "velocity": list(s.ego.velocity),
            "acceleration": list(s.ego.acceleration),
            "yaw_deg": s.ego.yaw_deg,
            "history": [[w.x, w.y] for w in s.ego.history],
            "mission_goal": s.ego.mission_goal,
        },
        "objects": [],
        "gt_trajectory": [[w.x, w.y] for w in s.gt_trajectory.waypoints],
        "gt_mask": list(s.gt_mask.flags),
        "gt_actions": [list(a.as_pair()) for a in s.gt_actions.actions],
    }
    for o in s.objects:
        obj = {
            "id": o.object_id,
            "class": o.class_label,
            "position": [o.position.x, o.position.y],
            "velocity": list(o.velocity),
        }
        if o.future is not None:
            obj["future"] = [[w.x, w.y] for w in o.future.waypoints]
        if o.history is not None:
            obj["history"] = [[w.x, w.y] for w in o.history]
        rec["objects"].append(obj)
    if s.reasoning is not None:
        rec["reasoning"] = s.reasoning
    if s.occupancy_path is not None:
        rec["occupancy_path"] = s.occupancy_path
    return rec


def save_samples(samples: Sequence[SceneSample], path: str | Path, write_occupancy: bool = False) -> None:
    """Write a JSONL dataset; optionally materialize occupancy .npz files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for s in samples:
            if write_occupancy and s.occupancy is not None and s.occupancy_path is not None:
                occ_file = path.parent / s.occupancy_path
                occ_file.parent.mkdir(parents=True, exist_ok=True)
                grids = np.stack([g.cells for g in s.occupancy]).astype(np.uint8)
                np.savez_compressed(occ_file, grids=grids)
            fh.write(json.dumps(_sample_to_record(s), separators=(",", ":")) + "\n")


# ---------------------------------------------------------------------------
# prompt construction

PROMPT_TEMPLATE = (
    "You are provided with six synchronized camera images captured from the ego-vehicle "
    "in the following order: rear, rear-left, rear-right, front, front-left, and front-right. "
    "The current state information of the ego-vehicle is: {ego}. "
    "The current perceived notable objects are listed here: {perception}. "
    "<task> First, formulate a concise context that integrates scene perception and short-term motion prediction. "
    "You should provide approximate 2-D Bird-Eye-View coordinates for every notable object's future waypoints in 3 seconds "
    "in your reasoning process. The higher the ego velocity is, the more distant objects you should consider. "
    "Then, based on perception and prediction, provide your chain-of-thought reasoning about the current driving scene, "
    "integrating potential effects of the notable objects, road and contextual factors, semantic grounding, "
    "and the driver's mental picture. "
    "After that, derive an appropriate driving decision sequence for 3 seconds ahead (one decision per second) and return it exactly "
    "as a list of lists in the format [['<LATERAL>', '<LONGITUDINAL>'], ['<LATERAL>', '<LONGITUDINAL>'], ['<LATERAL>', '<LONGITUDINAL>']]. "
    "Finally, based on all context and the derived driving decisions, plan a safe, feasible 3-second trajectory of 6 waypoints and return it exactly "
    "as a list of waypoint tuples in the format [(x1,y1), (x2,y2), (x3,y3), (x4,y4), (x5,y5), (x6,y6)] "
    "(one waypoint per 0.5 s). </task> "
    "<meta action pool> Permissible lateral actions: VEER_LEFT | VEER_RIGHT | CHANGE_LANE_LEFT | CHANGE_LANE_RIGHT | STRAIGHT | TURN_LEFT | TURN_RIGHT. "
    "Permissible longitudinal actions: ACCELERATE | MAINTAIN | DECELERATE | BRAKE_TO_STOP. </meta action pool> "
    "<coordinate instruction> Coordinates: X-axis is lateral (left/right), Y-axis is longitudinal (forward). "
    "You are at (0,0). Units: meters. </coordinate instruction>"
)

NO_OBJECTS_MARKER = "none observed"


@dataclass(frozen=True)
class PromptBundle:
    human_text: str
    expected_completion: Optional[str] = None

    def __post_init__(self) -> None:
        for block in ("<task>", "<meta action pool>", "<coordinate instruction>"):
            if block not in self.human_text:
                raise ValueError(f"prompt is missing its {block} block")


def _ego_text(ego: EgoState) -> str:
    return (
        f"speed {format_number(ego.speed)} m/s; "
        f"2s history waypoints {_fmt_waypoints(ego.history)}; "
        f"yaw {format_number(ego.yaw_deg)} deg; "
        f"mission goal: {ego.mission_goal}"
    )


def _perception_text(objects: Sequence[ObjectState]) -> str:
    if not objects:
        return NO_OBJECTS_MARKER
    lines = [
        f"{o.class_label} at ({format_number(o.position.x)}, {format_number(o.position.y)}), "
        f"velocity ({format_number(o.velocity[0])}, {format_number(o.velocity[1])})"
        for o in objects
    ]
    return "\n".join(lines)


def _prediction_text(objects: Sequence[ObjectState]) -> Optional[str]:
    lines = [
        f"{o.class_label} {o.object_id}: {_fmt_waypoints(o.future.waypoints)}"
        for o in objects
        if o.future is not None
    ]
    return "\n".join(lines) if lines else None


def build_prompt(s: SceneSample) -> PromptBundle:
    """Fill the fixed prompt skeleton; byte-identical for identical input.

    Training samples also get the expected completion (object forecasts,
    stored reasoning if any, actions, trajectory).
    """
    human = PROMPT_TEMPLATE.format(ego=_ego_text(s.ego), perception=_perception_text(s.objects))
    completion = serialize_completion(
        ModelOutput(
            prediction_block=_prediction_text(s.objects),
            think_block=s.reasoning,
            actions=s.gt_actions,
            trajectory=s.gt_trajectory,
        )
    )
    return PromptBundle(human_text=human, expected_completion=completion)


# ---------------------------------------------------------------------------
# completion grammar

ACTION_HEADER = "### Correct action:"
TRAJECTORY_HEADER = "### 3-second trajectory:"

_NUMBER_RE = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")


class ParseError(ValueError):
    """Structured completion-parse failure with exact offsets."""

    def __init__(self, message: str, text: str, pos: int):
        self.char_offset = pos
        self.byte_offset = len(text[:pos].encode("utf-8"))
        super().__init__(f"{message} (byte offset {self.byte_offset})")


class MissingSection(ParseError):
    def __init__(self, section: str, text: str, pos: int):
        self.section = section
        super().__init__(f"missing section {section!r}", text, pos)


class BadArity(ParseError):
    def __init__(self, expected: int, found: int, text: str, pos: int, what: str):
        self.expected = expected
        self.found = found
        super().__init__(f"expected {expected} {what}, found {found}", text, pos)


class UnknownAction(ParseError):
    def __init__(self, token: str, text: str, pos: int):
        self.token = token
        super().__init__(f"unknown action {token!r}", text, pos)


class MalformedNumber(ParseError):
    def __init__(self, span: str, text: str, pos: int):
        self.span = span
        super().__init__(f"malformed number at {span!r}", text, pos)


@dataclass(frozen=True)
class ModelOutput:
    """A parsed completion: optional text blocks plus actions and trajectory."""

    actions: ActionSequence
    trajectory: Trajectory
    prediction_block: Optional[str] = None
    think_block: Optional[str] = None

    def __post_init__(self) -> None:
        for name, text, close in (
            ("prediction_block", self.prediction_block, "</prediction>"),
            ("think_block", self.think_block, "</think>"),
        ):
            if text is None:
                continue
            if text != text.strip():
                raise ValueError(f"{name} must be whitespace-trimmed for exact round-trips")
            if close in text:
                raise ValueError(f"{name} must not contain its closing tag {close!r}")
        if len(self.actions.actions) != 3:
            raise ValueError("completion carries exactly 3 action pairs")
        if self.trajectory.n_steps != 6:
            raise ValueError("completion carries exactly 6 waypoints")


class _Scanner:
    __slots__ = ("text", "pos")

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str, what: str) -> None:
        self.skip_ws()
        if self.peek() != ch:
            raise ParseError(f"expected {ch!r} in {what}", self.text, self.pos)
        self.pos += 1

    def try_consume(self, ch: str) -> bool:
        self.skip_ws()
        if self.peek() == ch:
            self.pos += 1
            return True
        return False


def _extract_block(sc: _Scanner, open_tag: str, close_tag: str) -> Optional[str]:
    sc.skip_ws()
    if not sc.text.startswith(open_tag, sc.pos):
        return None
    start = sc.pos + len(open_tag)
    end = sc.text.find(close_tag, start)
    if end < 0:
        raise MissingSection(close_tag, sc.text, sc.pos)
    sc.pos = end + len(close_tag)
    return sc.text[start:end].strip()


def _parse_quoted_action(sc: _Scanner) -> tuple[str, int]:
    sc.skip_ws()
    quote = sc.peek()
    if quote not in ("'", '"'):
        raise ParseError("expected a quoted action name", sc.text, sc.pos)
    start = sc.pos + 1
    end = sc.text.find(quote, start)
    if end < 0:
        raise ParseError("unterminated action quote", sc.text, sc.pos)
    sc.pos = end + 1
    return sc.text[start:end], start


def _parse_action_list(sc: _Scanner) -> ActionSequence:
    sc.expect("[", "the action list")
    pairs: list[MetaAction] = []
    list_start = sc.pos
    if not sc.try_consume("]"):
        while True:
            sc.expect("[", "an action pair")
            lat_tok, lat_pos = _parse_quoted_action(sc)
            sc.expect(",", "an action pair")
            lon_tok, lon_pos = _parse_quoted_action(sc)
            sc.expect("]", "an action pair")
            try:
                lat = LateralAction(normalize_action_name(lat_tok))
            except ValueError:
                raise UnknownAction(lat_tok, sc.text, lat_pos) from None
            try:
                lon = LongitudinalAction(normalize_action_name(lon_tok))
            except ValueError:
                raise UnknownAction(lon_tok, sc.text, lon_pos) from None
            pairs.append(MetaAction(lat, lon))
            if sc.try_consume("]"):
                break
            sc.expect(",", "the action list")
    if len(pairs) != 3:
        raise BadArity(3, len(pairs), sc.text, list_start, "action pairs")
    return ActionSequence(tuple(pairs), Formulation.LOCAL)


def _parse_number(sc: _Scanner) -> float:
    sc.skip_ws()
    m = _NUMBER_RE.match(sc.text, sc.pos)
    if m is None:
        span = sc.text[sc.pos : sc.pos + 12]
        raise MalformedNumber(span, sc.text, sc.pos)
    value = float(m.group(0))
    if not math.isfinite(value):
        raise MalformedNumber(m.group(0), sc.text, sc.pos)
    sc.pos = m.end()
    return value


def _parse_trajectory_list(sc: _Scanner) -> Trajectory:
    sc.expect("[", "the trajectory list")
    points: list[Waypoint] = []
    list_start = sc.pos
    if not sc.try_consume("]"):
        while True:
            sc.expect("(", "a waypoint tuple")
            x = _parse_number(sc)
            sc.expect(",", "a waypoint tuple")
            y = _parse_number(sc)
            sc.expect(")", "a waypoint tuple")
            points.append(Waypoint(x, y))
            if sc.try_consume("]"):
                break
            sc.expect(",", "the trajectory list")
    if len(points) != 6:
        raise BadArity(6, len(points), sc.text, list_start, "waypoint tuples")
    return Trajectory(tuple(points))


def parse_model_output(text: str) -> ModelOutput:
    """Parse a completion into a ModelOutput or raise a structured ParseError."""
    sc = _Scanner(text)
    prediction = _extract_block(sc, "<prediction>", "</prediction>")
    think = _extract_block(sc, "<think>", "</think>")

    idx = sc.text.find(ACTION_HEADER, sc.pos)
    if idx < 0:
        raise MissingSection("actions", text, sc.pos)
    sc.pos = idx + len(ACTION_HEADER)
    actions = _parse_action_list(sc)

    idx = sc.text.find(TRAJECTORY_HEADER, sc.pos)
    if idx < 0:
        raise MissingSection("trajectory", text, sc.pos)
    sc.pos = idx + len(TRAJECTORY_HEADER)
    trajectory = _parse_trajectory_list(sc)

    return ModelOutput(
        actions=actions, trajectory=trajectory, prediction_block=prediction, think_block=think
    )


def serialize_completion(m: ModelOutput) -> str:
    """Render a ModelOutput in the canonical completion layout (parse inverse)."""
    parts = []
    if m.prediction_block is not None:
        parts.append(f"<prediction> {m.prediction_block} </prediction>")
    if m.think_block is not None:
        parts.append(f"<think> {m.think_block} </think>")
    head = " ".join(parts)
    actions = "[" + ", ".join(f"['{a.lateral.value}', '{a.longitudinal.value}']" for a in m.actions.actions) + "]"
    traj = _fmt_waypoints(m.trajectory.waypoints)
    body = f"{ACTION_HEADER} {actions}\n\n{TRAJECTORY_HEADER} {traj}"
    return f"{head}\n\n{body}" if head else body


# ---------------------------------------------------------------------------
# reasoning validation against a pluggable generator

VERIFICATION_HEADER = "Decide the ego meta-action for the next second."
REASONING_HEADER = "Describe the driving scene and the driver's plan."

_VERDICT_RE = re.compile(
    r"\(\s*\[\s*(['\"])([^'\"]+)\1\s*,\s*(['\"])([^'\"]+)\3\s*\]\s*(?:,\s*([0-9.]+))?\s*\)"
)


class GeneratorClient(TypingProtocol):
    """Synchronous text generation: (prompt, temperature, seed) -> completion."""

    def complete(self, prompt: str, temperature: float = 0.0, seed: int = 0) -> str: ...


class GeneratorUnavailable(RuntimeError):
    pass


class ExternalServiceStub:
    """Placeholder for a hosted generator; this build never performs network calls."""

    def complete(self, prompt: str, temperature: float = 0.0, seed: int = 0) -> str:
        raise GeneratorUnavailable("external text generation is not available in this build")


@dataclass(frozen=True)
class MockGenerator:
    """Deterministic template-filler standing in for the external generator.

    Verification queries get ``action`` rendered in the verdict format
    (falling back to STRAIGHT/MAINTAIN); other queries get a canned
    reasoning paragraph. Output depends only on (prompt, seed).
    """

    action: Optional[MetaAction] = None
    raw_reply: Optional[str] = None

    def complete(self, prompt: str, temperature: float = 0.0, seed: int = 0) -> str:
        if self.raw_reply is not None:
            return self.raw_reply
        if VERIFICATION_HEADER in prompt:
            act = self.action or MetaAction(LateralAction.STRAIGHT, LongitudinalAction.MAINTAIN)
            confidence = seed % 6
            return f"(['{act.lateral.value}', '{act.longitudinal.value}'], {confidence})"
        return (
            f"The ego vehicle proceeds along its lane while tracking nearby traffic "
            f"(pattern {seed % 97}). No conflict requires an evasive maneuver."
        )


def parse_action_verdict(text: str) -> Optional[tuple[MetaAction, Optional[float]]]:
    """Extract (['LATERAL', 'LONGITUDINAL'], confidence?) from generator output."""
    m = _VERDICT_RE.search(text)
    if m is None:
        return None
    try:
        lat = LateralAction(normalize_action_name(m.group(2)))
        lon = LongitudinalAction(normalize_action_name(m.group(4)))
    except ValueError:
        return None
    confidence = float(m.group(5)) if m.group(5) is not None else None
    return (MetaAction(lat, lon), confidence)


def pose_series_from_sample(s: SceneSample) -> list[tuple[float, float]]:
    """(yaw deg, speed) samples at t=0..3 s derived from the sample's ground truth."""
    return pose_series_from_trajectory(s.gt_trajectory, s.ego.speed)


def build_verification_request(s: SceneSample, reasoning: str) -> str:
    return (
        f"{VERIFICATION_HEADER}\n"
        f"Ego: {_ego_text(s.ego)}\n"
        f"Objects:\n{_perception_text(s.objects)}\n"
        f"Reasoning:\n{reasoning}\n"
        "Answer exactly in the form (['<LATERAL>', '<LONGITUDINAL>'], <CONFIDENCE>)."
    )


def build_reasoning_request(s: SceneSample) -> str:
    return (
        f"{REASONING_HEADER}\n"
        f"Ego: {_ego_text(s.ego)}\n"
        f"Objects:\n{_perception_text(s.objects)}"
    )


@dataclass(frozen=True)
class ReasoningValidation:
    accepted: bool
    reason: str
    predicted: Optional[MetaAction] = None
    reasoning_text: Optional[str] = None


def validate_reasoning(
    s: SceneSample,
    gen: GeneratorClient,
    th: LabelerThresholds = LabelerThresholds(),
    seed: int = 0,
) -> ReasoningValidation:
    """Accept a reasoning candidate iff the generator's action matches ground truth.

    The generator is shown the sample context plus the reasoning and asked
    for one meta-action. The verdict is accepted when it equals the 1 s
    ground-truth action or any cumulative [0->t] action derived from the
    sample (t in {1, 2, 3}); unparseable output is rejected with a reason.
    """
    reasoning = s.reasoning
    if reasoning is None:
        reasoning = gen.complete(build_reasoning_request(s), temperature=0.0, seed=seed)

    reply = gen.complete(build_verification_request(s, reasoning), temperature=0.0, seed=seed)
    verdict = parse_action_verdict(reply)
    if verdict is None:
        return ReasoningValidation(False, f"unparseable generator verdict: {reply!r}", None, reasoning)
    predicted, _conf = verdict

    acceptable = {s.gt_actions.actions[0]}
    cumulative = label_cumulative_sequence(pose_series_from_sample(s), th)
    acceptable.update(cumulative.actions)
    if predicted in acceptable:
        return ReasoningValidation(True, "matched a ground-truth or cumulative action", predicted, reasoning)
    return ReasoningValidation(
        False,
        f"predicted {predicted.as_pair()} not in the acceptable action set",
        predicted,
        reasoning,
    )
