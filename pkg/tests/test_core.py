import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bevplan.core import (
    BevGridSpec,
    CriticalObjectConfig,
    EgoFootprint,
    EgoState,
    ObjectState,
    OccupancyGrid,
    Trajectory,
    VisibilityMask,
    Waypoint,
    displacement_at,
    rasterize_footprint,
    select_critical_objects,
    subsample_1hz,
    world_to_grid,
)

coords = st.floats(min_value=-80.0, max_value=80.0, allow_nan=False, allow_infinity=False)


def waypoints_st(n=6):
    return st.lists(st.tuples(coords, coords), min_size=n, max_size=n)


def make_traj(pairs):
    return Trajectory.from_xy(pairs)


# --- type invariants -------------------------------------------------------


def test_waypoint_rejects_non_finite():
    with pytest.raises(ValueError):
        Waypoint(float("nan"), 0.0)
    with pytest.raises(ValueError):
        Waypoint(0.0, float("inf"))


def test_trajectory_requires_six_waypoints():
    with pytest.raises(ValueError):
        Trajectory(tuple(Waypoint(0, i) for i in range(5)))
    traj = make_traj([(0, i) for i in range(6)])
    assert traj.n_steps == 6


def test_visibility_mask_flags_are_binary():
    with pytest.raises(ValueError):
        VisibilityMask((0, 2, 1, 1, 1, 1))
    assert VisibilityMask.full().flags == (1,) * 6


def test_ego_state_pins_position_and_history():
    with pytest.raises(ValueError):
        EgoState(velocity=(0, 1), acceleration=(0, 0), yaw_deg=0.0, position=Waypoint(1, 0))
    with pytest.raises(ValueError):
        EgoState(velocity=(0, 1), acceleration=(0, 0), yaw_deg=0.0, history=(Waypoint(0, 0),) * 5)
    assert EgoState(velocity=(3, 4), acceleration=(0, 0), yaw_deg=0.0).speed == 5.0


def test_object_state_needs_class_label():
    with pytest.raises(ValueError):
        ObjectState("id", Waypoint(0, 0), (0, 0), "")


def test_grid_spec_invariants():
    spec = BevGridSpec()
    assert spec.dims[0] * spec.dx[0] == 100.0
    assert spec.bx == (-49.75, -49.75)
    with pytest.raises(ValueError):
        BevGridSpec(dx=(0.5, 0.5), bx=(-49.75, -49.75), dims=(100, 200))
    with pytest.raises(ValueError):
        BevGridSpec(dx=(0.5, 0.5), bx=(-49.0, -49.75), dims=(200, 200))
    # a coarser grid covering the same extent is fine
    BevGridSpec(dx=(1.0, 1.0), bx=(-49.5, -49.5), dims=(100, 100))


def test_occupancy_grid_validation():
    with pytest.raises(ValueError):
        OccupancyGrid(np.zeros((10, 10), dtype=np.uint8), 1)
    with pytest.raises(ValueError):
        OccupancyGrid(np.full((200, 200), 2, dtype=np.uint8), 1)
    with pytest.raises(ValueError):
        OccupancyGrid(np.zeros((200, 200), dtype=np.uint8), 0)
    grid = OccupancyGrid.empty(3)
    assert grid.timestep == 3
    with pytest.raises(ValueError):
        grid.cells[0, 0] = 1  # frozen


def test_footprint_invariant():
    fp = EgoFootprint()
    assert fp.length == 4.084 and fp.width == 1.85
    with pytest.raises(ValueError):
        EgoFootprint(1.0, 2.0)


# --- displacement ----------------------------------------------------------


def test_displacement_identity_and_units():
    traj = make_traj([(0, i) for i in range(6)])
    for t in range(1, 7):
        assert displacement_at(traj, traj, t) == 0.0
    pred = make_traj([(1, 0)] + [(0, 0)] * 5)
    gt = make_traj([(0, 0)] * 6)
    assert displacement_at(pred, gt, 1) == 1.0
    pred = make_traj([(3, 4)] + [(0, 0)] * 5)
    assert displacement_at(pred, gt, 1) == 5.0  # 3-4-5 triangle


def test_displacement_index_errors():
    traj = make_traj([(0, i) for i in range(6)])
    with pytest.raises(IndexError):
        displacement_at(traj, traj, 0)
    with pytest.raises(IndexError):
        displacement_at(traj, traj, 7)


@given(waypoints_st(), waypoints_st(), waypoints_st(), st.integers(min_value=1, max_value=6))
def test_displacement_symmetry_and_triangle(a, b, c, t):
    ta, tb, tc = make_traj(a), make_traj(b), make_traj(c)
    assert displacement_at(ta, tb, t) == displacement_at(tb, ta, t)
    assert displacement_at(ta, tc, t) <= displacement_at(ta, tb, t) + displacement_at(tb, tc, t) + 1e-9


# --- 1 Hz subsampling ------------------------------------------------------


def test_subsample_selects_even_steps():
    traj = make_traj([(0, i) for i in range(1, 7)])
    assert [w.y for w in subsample_1hz(traj)] == [2, 4, 6]


def test_subsample_constant_and_shape():
    traj = make_traj([(1.5, 2.5)] * 6)
    out = subsample_1hz(traj)
    assert len(out) == 3
    assert all(w == Waypoint(1.5, 2.5) for w in out)


# --- critical objects ------------------------------------------------------


def _obj(x, y):
    return ObjectState("o", Waypoint(x, y), (0, 0), "car")


def test_critical_selection_radius():
    cfg = CriticalObjectConfig(L0=20.0, kappa=2.0)
    assert select_critical_objects([_obj(0, 19)], (0, 0), cfg) != []
    assert select_critical_objects([_obj(0, 29)], (0, 5), cfg) != []  # radius 30
    assert select_critical_objects([_obj(0, 1000)], (0, 5), cfg) == []
    assert select_critical_objects([], (0, 0), cfg) == []


def test_critical_selection_preserves_order():
    objs = [_obj(0, 5), _obj(0, 50), _obj(0, 1)]
    out = select_critical_objects(objs, (0, 0), CriticalObjectConfig(20, 2))
    assert out == [objs[0], objs[2]]


@given(
    st.lists(st.tuples(coords, coords), max_size=8),
    st.floats(min_value=0.1, max_value=40.0),
    st.floats(min_value=0.0, max_value=5.0),
    st.floats(min_value=0.0, max_value=20.0),
)
def test_critical_selection_monotone(positions, l0, kappa, grow):
    objs = [_obj(x, y) for x, y in positions]
    small = select_critical_objects(objs, (0, 3), CriticalObjectConfig(l0, kappa))
    large = select_critical_objects(objs, (0, 3), CriticalObjectConfig(l0 + grow, kappa + grow))
    assert set(id(o) for o in small) <= set(id(o) for o in large)


# --- grid indexing ---------------------------------------------------------


def test_world_to_grid_examples():
    assert world_to_grid(Waypoint(-50.0, -50.0)) == (0, 0)
    assert world_to_grid(Waypoint(0.0, 0.0)) == (100, 100)
    assert world_to_grid(Waypoint(60.0, 0.0)) is None
    assert world_to_grid(Waypoint(50.0, 0.0)) is None  # upper edge is exclusive


def test_world_to_grid_inverts_cell_centers():
    spec = BevGridSpec()
    centers_r = spec.bx[0] + spec.dx[0] * np.arange(spec.dims[0])
    centers_c = spec.bx[1] + spec.dx[1] * np.arange(spec.dims[1])
    for r in range(spec.dims[0]):
        for c in range(spec.dims[1]):
            assert world_to_grid(Waypoint(centers_r[r], centers_c[c]), spec) == (r, c)


# --- rasterization ---------------------------------------------------------


def oracle_rasterize(center, fp, spec, length_along_forward=True):
    """Exhaustive cell-center containment over all grid cells."""
    half_x = (fp.width if length_along_forward else fp.length) / 2.0
    half_y = (fp.length if length_along_forward else fp.width) / 2.0
    cx = spec.bx[0] + spec.dx[0] * np.arange(spec.dims[0])
    cy = spec.bx[1] + spec.dx[1] * np.arange(spec.dims[1])
    in_x = (cx >= center.x - half_x) & (cx < center.x + half_x)
    in_y = (cy >= center.y - half_y) & (cy < center.y + half_y)
    rr, cc = np.nonzero(in_x[:, None] & in_y[None, :])
    return set(zip(rr.tolist(), cc.tolist()))


def test_rasterize_matches_oracle_randomized():
    spec = BevGridSpec()
    rng = np.random.default_rng(11)
    for _ in range(1000):
        width = float(rng.uniform(0.05, 6.0))
        fp = EgoFootprint(length=width + float(rng.uniform(0.01, 6.0)), width=width)
        center = Waypoint(float(rng.uniform(-60, 60)), float(rng.uniform(-60, 60)))
        assert rasterize_footprint(center, fp, spec) == oracle_rasterize(center, fp, spec)


def test_rasterize_default_footprint_at_origin():
    spec = BevGridSpec()
    cells = rasterize_footprint(Waypoint(0, 0), EgoFootprint(), spec)
    assert cells == oracle_rasterize(Waypoint(0, 0), EgoFootprint(), spec)
    # 1.85 m spans 4 cell centers laterally, 4.084 m spans 8 longitudinally
    assert len(cells) == 32


def test_rasterize_clips_fully_outside():
    assert rasterize_footprint(Waypoint(0, 200), EgoFootprint()) == set()


def test_rasterize_tiny_box_on_cell_center():
    spec = BevGridSpec()
    center = Waypoint(*spec.cell_center(100, 120))
    fp = EgoFootprint(length=0.4, width=0.3)
    cells = rasterize_footprint(center, fp, spec)
    assert cells == oracle_rasterize(center, fp, spec)
    assert cells == {(100, 120)}


def test_rasterize_axis_swap_flag():
    spec = BevGridSpec()
    fp = EgoFootprint(length=4.0, width=1.0)
    tall = rasterize_footprint(Waypoint(0, 0), fp, spec, length_along_forward=True)
    wide = rasterize_footprint(Waypoint(0, 0), fp, spec, length_along_forward=False)
    assert {(c, r) for r, c in tall} == wide


eighth = st.integers(min_value=-240, max_value=240).map(lambda n: n / 8.0)


@given(
    eighth,
    eighth,
    st.integers(min_value=1, max_value=40).map(lambda n: n / 8.0),
    st.integers(min_value=-4, max_value=4),
    st.integers(min_value=-4, max_value=4),
)
def test_rasterize_translation_invariance(cx, cy, width, n, m):
    # Quantized inputs keep every bound exactly representable, so shifting
    # the center by whole cells shifts the cell set exactly (modulo cells
    # clipped at the boundary on either side).
    spec = BevGridSpec()
    fp = EgoFootprint(length=width + 0.5, width=width)
    base = rasterize_footprint(Waypoint(cx, cy), fp, spec)
    shifted = rasterize_footprint(Waypoint(cx + n * 0.5, cy + m * 0.5), fp, spec)
    in_bounds = lambda r, c: 0 <= r < spec.dims[0] and 0 <= c < spec.dims[1]
    expected = {(r + n, c + m) for r, c in base if in_bounds(r + n, c + m)}
    # Cells of the shifted box whose pre-image fell off the grid cannot be
    # predicted from `base`; exclude them from the comparison.
    unmatched = {(r, c) for r, c in shifted if not in_bounds(r - n, c - m)}
    assert shifted - unmatched == expected
    if abs(cx) < 25 and abs(cy) < 25:  # fully interior: no clipping anywhere
        assert shifted == expected
