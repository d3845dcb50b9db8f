import json
import string

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bevplan.core import Trajectory, Waypoint
from bevplan.dataset_io import (
    BadArity,
    DatasetValidationError,
    ExternalServiceStub,
    GeneratorUnavailable,
    MalformedNumber,
    MissingSection,
    MockGenerator,
    ModelOutput,
    ParseError,
    UnknownAction,
    build_prompt,
    build_verification_request,
    format_number,
    load_samples,
    parse_action_verdict,
    parse_model_output,
    save_samples,
    serialize_completion,
    validate_reasoning,
)
from bevplan.meta_actions import (
    ActionSequence,
    Formulation,
    LateralAction,
    LongitudinalAction,
    MetaAction,
    label_cumulative_sequence,
    label_local_sequence,
)
from bevplan.dataset_io import pose_series_from_sample, SceneSample

from demo_fixtures import build_demo_sample, straight_maintain


# --- number formatting -------------------------------------------------------


@pytest.mark.parametrize(
    "value,text",
    [(1.25, "1.25"), (-0.5, "-0.5"), (1.0, "1"), (0.1, "0.1"), (1e-5, "1e-05"), (3.0, "3")],
)
def test_format_number(value, text):
    assert format_number(value) == text
    assert float(format_number(value)) == value


@given(st.floats(allow_nan=False, allow_infinity=False, width=64))
def test_format_number_round_trips(value):
    assert float(format_number(value)) == value


# --- dataset records ---------------------------------------------------------


def test_save_load_round_trip(tmp_path, demo_sample):
    path = tmp_path / "data.jsonl"
    save_samples([demo_sample], path)
    loaded = load_samples(path)
    assert loaded == [demo_sample]
    # a second cycle is byte-identical
    path2 = tmp_path / "again.jsonl"
    save_samples(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_reports_bad_waypoint_count(tmp_path, demo_sample):
    path = tmp_path / "data.jsonl"
    save_samples([demo_sample], path)
    rec = json.loads(path.read_text())
    rec["gt_trajectory"] = rec["gt_trajectory"][:5]
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(DatasetValidationError) as err:
        load_samples(path)
    assert err.value.errors[0].record_index == 0
    assert "gt_trajectory" in str(err.value)


def test_load_normalizes_action_spelling(tmp_path, demo_sample):
    path = tmp_path / "data.jsonl"
    save_samples([demo_sample], path)
    rec = json.loads(path.read_text())
    rec["gt_actions"][0] = ["TURN LEFT", "brake-to-stop"]
    path.write_text(json.dumps(rec) + "\n")
    sample = load_samples(path)[0]
    assert sample.gt_actions.actions[0] == MetaAction(
        LateralAction.TURN_LEFT, LongitudinalAction.BRAKE_TO_STOP
    )


@pytest.mark.parametrize(
    "mutate,field",
    [
        (lambda r: r.pop("sample_id"), "sample_id"),
        (lambda r: r["gt_actions"].__setitem__(0, ["SIDEWAYS", "MAINTAIN"]), "unknown lateral"),
        (lambda r: r["ego"].__setitem__("velocity", ["abc", 0.0]), "could not convert"),
        (lambda r: r.__setitem__("gt_mask", [1, 1, 1]), "gt_mask"),
        (lambda r: r.__setitem__("split", "dev"), "split"),
    ],
)
def test_load_validation_errors(tmp_path, demo_sample, mutate, field):
    path = tmp_path / "data.jsonl"
    save_samples([demo_sample], path)
    rec = json.loads(path.read_text())
    mutate(rec)
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(DatasetValidationError) as err:
        load_samples(path)
    assert field in str(err.value)


def test_load_reports_json_errors_with_index(tmp_path):
    path = tmp_path / "data.jsonl"
    path.write_text("{not json}\n")
    with pytest.raises(DatasetValidationError) as err:
        load_samples(path)
    assert err.value.errors[0].record_index == 0
    assert err.value.errors[0].field == "<json>"


def test_occupancy_round_trip(tmp_path, demo_sample):
    from bevplan.core import OccupancyGrid

    cells = np.zeros((200, 200), dtype=np.uint8)
    cells[10, 20] = 1
    grids = tuple(OccupancyGrid(cells, t) for t in range(1, 7))
    sample = SceneSample(
        **{
            **{f: getattr(demo_sample, f) for f in (
                "sample_id", "split", "ego", "objects", "gt_trajectory",
                "gt_mask", "gt_actions", "reasoning",
            )},
            "occupancy": grids,
            "occupancy_path": "occ/demo-000000.npz",
        }
    )
    path = tmp_path / "data.jsonl"
    save_samples([sample], path, write_occupancy=True)
    loaded = load_samples(path)[0]
    assert loaded.occupancy is not None
    assert loaded.occupancy[0].cells[10, 20] == 1
    assert loaded == sample


# --- prompts -----------------------------------------------------------------


def test_prompt_is_deterministic(demo_sample):
    a = build_prompt(demo_sample)
    b = build_prompt(demo_sample)
    assert a.human_text == b.human_text
    assert a.expected_completion == b.expected_completion


def test_prompt_block_order(demo_sample):
    text = build_prompt(demo_sample).human_text
    i_task = text.index("<task>")
    i_pool = text.index("<meta action pool>")
    i_coord = text.index("<coordinate instruction>")
    assert i_task < i_pool < i_coord
    assert "speed 5 m/s" in text
    assert "car at (3.2, 30), velocity (0.1, -2)" in text


def test_prompt_empty_perception_marker(demo_sample):
    bare = SceneSample(
        **{
            **{f: getattr(demo_sample, f) for f in (
                "sample_id", "split", "ego", "gt_trajectory",
                "gt_mask", "gt_actions", "reasoning",
            )},
            "objects": (),
        }
    )
    assert "listed here: none observed." in build_prompt(bare).human_text


def test_prompt_matches_golden_bytes(demo_sample):
    import pathlib

    golden = pathlib.Path(__file__).parent / "goldens" / "prompt_golden.txt"
    assert build_prompt(demo_sample).human_text.encode("utf-8") == golden.read_bytes()


def test_expected_completion_parses_back(demo_sample):
    bundle = build_prompt(demo_sample)
    out = parse_model_output(bundle.expected_completion)
    assert out.trajectory == demo_sample.gt_trajectory
    assert out.actions == demo_sample.gt_actions
    assert out.think_block == demo_sample.reasoning


# --- completion grammar ------------------------------------------------------


def actions_seq():
    a = MetaAction(LateralAction.VEER_LEFT, LongitudinalAction.DECELERATE)
    b = MetaAction(LateralAction.STRAIGHT, LongitudinalAction.MAINTAIN)
    return ActionSequence((a, b, b), Formulation.LOCAL)


def test_serialize_layout_and_round_trip():
    m = ModelOutput(
        actions=actions_seq(),
        trajectory=Trajectory.from_xy([(1.25, -0.5)] + [(0.0, k) for k in range(1, 6)]),
        prediction_block="car obj-1: [(0,1), (0,2), (0,3), (0,4), (0,5), (0,6)]",
        think_block="clear road",
    )
    text = serialize_completion(m)
    assert "(1.25,-0.5)" in text
    assert text.index("<prediction>") < text.index("<think>") < text.index("### Correct action:")
    assert parse_model_output(text) == m


def test_serialize_omits_absent_blocks():
    m = ModelOutput(actions=actions_seq(), trajectory=Trajectory.from_xy([(0, 1)] * 6))
    text = serialize_completion(m)
    assert "<prediction>" not in text and "<think>" not in text
    parsed = parse_model_output(text)
    assert parsed == m
    assert parsed.prediction_block is None and parsed.think_block is None


def test_parse_missing_trajectory():
    text = "### Correct action: [['STRAIGHT', 'MAINTAIN'], ['STRAIGHT', 'MAINTAIN'], ['STRAIGHT', 'MAINTAIN']]"
    with pytest.raises(MissingSection) as err:
        parse_model_output(text)
    assert err.value.section == "trajectory"


def test_parse_missing_actions():
    with pytest.raises(MissingSection) as err:
        parse_model_output("### 3-second trajectory: [(0,1), (0,2), (0,3), (0,4), (0,5), (0,6)]")
    assert err.value.section == "actions"


def test_parse_bad_arity():
    text = (
        "### Correct action: [['STRAIGHT', 'MAINTAIN'], ['STRAIGHT', 'MAINTAIN'], ['STRAIGHT', 'MAINTAIN']]\n\n"
        "### 3-second trajectory: [(0,1), (0,2), (0,3), (0,4), (0,5)]"
    )
    with pytest.raises(BadArity) as err:
        parse_model_output(text)
    assert (err.value.expected, err.value.found) == (6, 5)

    text = (
        "### Correct action: [['STRAIGHT', 'MAINTAIN'], ['STRAIGHT', 'MAINTAIN']]\n\n"
        "### 3-second trajectory: [(0,1), (0,2), (0,3), (0,4), (0,5), (0,6)]"
    )
    with pytest.raises(BadArity) as err:
        parse_model_output(text)
    assert (err.value.expected, err.value.found) == (3, 2)


def test_parse_unknown_action_with_offset():
    text = (
        "### Correct action: [['SIDEWAYS', 'MAINTAIN'], ['STRAIGHT', 'MAINTAIN'], ['STRAIGHT', 'MAINTAIN']]\n\n"
        "### 3-second trajectory: [(0,1), (0,2), (0,3), (0,4), (0,5), (0,6)]"
    )
    with pytest.raises(UnknownAction) as err:
        parse_model_output(text)
    assert err.value.token == "SIDEWAYS"
    assert text[err.value.char_offset : err.value.char_offset + 8] == "SIDEWAYS"
    assert err.value.byte_offset == err.value.char_offset  # pure ASCII here


def test_parse_malformed_number():
    text = (
        "### Correct action: [['STRAIGHT', 'MAINTAIN'], ['STRAIGHT', 'MAINTAIN'], ['STRAIGHT', 'MAINTAIN']]\n\n"
        "### 3-second trajectory: [(0,abc), (0,2), (0,3), (0,4), (0,5), (0,6)]"
    )
    with pytest.raises(MalformedNumber):
        parse_model_output(text)
    # an overflowing literal is malformed, not infinite
    with pytest.raises(MalformedNumber):
        parse_model_output(text.replace("abc", "1e999"))


def test_parse_accepts_quote_styles_and_whitespace():
    text = (
        '###  ignored preamble\n### Correct action:  [ [ "turn left" ,  \'ACCELERATE\' ] ,'
        " ['STRAIGHT', 'MAINTAIN'], ['STRAIGHT', 'MAINTAIN'] ]\n\n"
        "### 3-second trajectory:  [ ( 0.5 , 1 ) , (0,2), (0,3), (0,4), (0,5), (0.25e1,6) ]"
    )
    out = parse_model_output(text)
    assert out.actions.actions[0] == MetaAction(LateralAction.TURN_LEFT, LongitudinalAction.ACCELERATE)
    assert out.trajectory.waypoints[0] == Waypoint(0.5, 1.0)
    assert out.trajectory.waypoints[5] == Waypoint(2.5, 6.0)


def test_parse_byte_offsets_with_multibyte_text():
    text = (
        "<think> café ahead </think>\n\n"
        "### Correct action: [['SIDEWAYS', 'MAINTAIN'], ['STRAIGHT', 'MAINTAIN'], ['STRAIGHT', 'MAINTAIN']]\n\n"
        "### 3-second trajectory: [(0,1), (0,2), (0,3), (0,4), (0,5), (0,6)]"
    )
    with pytest.raises(UnknownAction) as err:
        parse_model_output(text)
    assert err.value.byte_offset == err.value.char_offset + 1  # one two-byte char before


# --- randomized round trips and fuzz ----------------------------------------

lat_st = st.sampled_from(list(LateralAction))
lon_st = st.sampled_from(list(LongitudinalAction))
coord_st = st.floats(min_value=-100.0, max_value=100.0, allow_nan=False, allow_infinity=False)
block_text = st.text(
    alphabet=string.ascii_letters + string.digits + " .,:;()[]" ,
    min_size=1,
    max_size=60,
).map(str.strip).filter(lambda s: s)


@st.composite
def model_outputs(draw):
    actions = ActionSequence(
        tuple(MetaAction(draw(lat_st), draw(lon_st)) for _ in range(3)), Formulation.LOCAL
    )
    traj = Trajectory.from_xy([(draw(coord_st), draw(coord_st)) for _ in range(6)])
    prediction = draw(st.one_of(st.none(), block_text))
    think = draw(st.one_of(st.none(), block_text))
    return ModelOutput(actions=actions, trajectory=traj, prediction_block=prediction, think_block=think)


@settings(max_examples=1000, deadline=None)
@given(model_outputs())
def test_serialize_parse_identity(m):
    assert parse_model_output(serialize_completion(m)) == m


@settings(max_examples=1000, deadline=None)
@given(st.text(max_size=200))
def test_parser_never_crashes_on_arbitrary_text(text):
    try:
        parse_model_output(text)
    except ParseError:
        pass


def test_parser_fuzz_random_bytes():
    rng = np.random.default_rng(9)
    alphabet = string.printable + "é中"
    for _ in range(10_000):
        n = int(rng.integers(0, 120))
        text = "".join(alphabet[i] for i in rng.integers(0, len(alphabet), size=n))
        try:
            parse_model_output(text)
        except ParseError:
            pass


# --- generator clients and reasoning validation ------------------------------


def test_mock_generator_is_deterministic(demo_sample):
    gen = MockGenerator()
    prompt = build_verification_request(demo_sample, "reasoning")
    assert gen.complete(prompt, seed=3) == gen.complete(prompt, seed=3)
    assert parse_action_verdict(gen.complete(prompt, seed=3)) is not None


def test_external_stub_refuses():
    with pytest.raises(GeneratorUnavailable):
        ExternalServiceStub().complete("anything")


def test_parse_action_verdict_variants():
    verdict = parse_action_verdict("(['VEER_LEFT', 'MAINTAIN'], 4)")
    assert verdict[0] == MetaAction(LateralAction.VEER_LEFT, LongitudinalAction.MAINTAIN)
    assert verdict[1] == 4.0
    verdict = parse_action_verdict('(["turn right", "brake to stop"])')
    assert verdict[0] == MetaAction(LateralAction.TURN_RIGHT, LongitudinalAction.BRAKE_TO_STOP)
    assert parse_action_verdict("no action here") is None


def test_validate_reasoning_accepts_matching_action(demo_sample):
    gen = MockGenerator(action=demo_sample.gt_actions.actions[0])
    result = validate_reasoning(demo_sample, gen)
    assert result.accepted


def test_validate_reasoning_rejects_wrong_action(demo_sample):
    wrong = MetaAction(LateralAction.TURN_RIGHT, LongitudinalAction.REVERSE)
    result = validate_reasoning(demo_sample, MockGenerator(action=wrong))
    assert not result.accepted
    assert "acceptable" in result.reason


def test_validate_reasoning_rejects_unparseable(demo_sample):
    result = validate_reasoning(demo_sample, MockGenerator(raw_reply="I refuse."))
    assert not result.accepted
    assert "unparseable" in result.reason


def _yaw_ramp_sample():
    """Local labels all STRAIGHT but cumulative reaches VEER_LEFT."""
    import math

    pts = []
    x, y = 0.0, 0.0
    headings = [4.0, 4.0, 8.0, 8.0, 12.0, 12.0]
    for h in headings:
        x -= 2.5 * math.sin(math.radians(h))
        y += 2.5 * math.cos(math.radians(h))
        pts.append((x, y))
    demo = build_demo_sample()
    sample = SceneSample(
        sample_id="ramp-000000",
        split="train",
        ego=demo.ego,
        objects=(),
        gt_trajectory=Trajectory.from_xy(pts),
        gt_mask=demo.gt_mask,
        gt_actions=straight_maintain(),
        reasoning="the road bends gently left",
    )
    poses = pose_series_from_sample(sample)
    local = label_local_sequence(poses)
    assert sample.gt_actions == local  # fixture is self-consistent
    return sample


def test_validate_reasoning_cumulative_clause():
    sample = _yaw_ramp_sample()
    cumulative = label_cumulative_sequence(pose_series_from_sample(sample))
    candidate = cumulative.actions[1]
    assert candidate not in sample.gt_actions.actions  # differs from every local label
    result = validate_reasoning(sample, MockGenerator(action=candidate))
    assert result.accepted
    assert result.predicted == candidate
