import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lastmeter.errors import NoFreeSource, NoViableWaypoint
from lastmeter.geometry import Pose2D
from lastmeter.grid import FREE, OBSTACLE, UNKNOWN, GridMap, cell_to_world
from lastmeter.planner import (EXCLUDED, Action, ClearanceField, DistanceField, PlannerParams,
                               adjusted_cost, adjusted_cost_field, approach_step, edt, fmm_distance,
                               local_step, select_waypoint)

from .oracles import brute_edt, dijkstra8, random_occupancy

P = PlannerParams()
CS = 0.05


def grid_of(occ, cs=CS):
    return GridMap(np.asarray(occ, dtype=np.uint8), cs)


# --- FMM -------------------------------------------------------------------------------------

def test_fmm_source_is_zero_and_obstacles_infinite():
    occ = np.zeros((20, 20), np.uint8)
    occ[5:15, 10] = OBSTACLE
    d = fmm_distance(grid_of(occ), [(10, 3)]).values
    assert d[10, 3] == 0.0
    assert np.all(np.isinf(d[occ == OBSTACLE]))
    assert np.all(np.isfinite(d[occ == FREE]))


def test_fmm_open_map_straight_line():
    g = grid_of(np.zeros((64, 64)))
    d = fmm_distance(g, [(32, 10)]).values
    assert d[32, 30] == pytest.approx(20 * CS, rel=0.02)
    assert d[12, 10] == pytest.approx(20 * CS, rel=0.02)


def test_fmm_unknown_is_traversable():
    occ = np.full((10, 10), UNKNOWN, np.uint8)
    occ[:, 5] = OBSTACLE
    occ[9, 5] = UNKNOWN
    d = fmm_distance(grid_of(occ), [(0, 0)]).values
    assert np.isfinite(d[0, 9])


def test_fmm_no_free_source():
    occ = np.ones((5, 5), np.uint8)
    with pytest.raises(NoFreeSource):
        fmm_distance(grid_of(occ), [(2, 2)])
    with pytest.raises(NoFreeSource):
        fmm_distance(grid_of(np.zeros((5, 5))), [])
    with pytest.raises(NoFreeSource):
        fmm_distance(grid_of(np.zeros((5, 5))), [(9, 9)])


def test_fmm_targets_match_full_march():
    rng = np.random.default_rng(4)
    occ = random_occupancy(rng, (48, 48), 0.15)
    occ[24, 24] = FREE
    full = fmm_distance(grid_of(occ), [(24, 24)]).values
    targets = np.zeros(occ.shape, bool)
    targets[30:34, 30:34] = True
    part = fmm_distance(grid_of(occ), [(24, 24)], targets=targets).values
    sel = targets & np.isfinite(full)
    assert np.array_equal(part[sel], full[sel])


def test_fmm_against_dijkstra_small_suite():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        occ = random_occupancy(rng)
        src = tuple(np.argwhere(occ == FREE)[rng.integers(np.sum(occ == FREE))])
        fmm = fmm_distance(grid_of(occ, 1.0), [src]).values
        dij = dijkstra8(occ == FREE, [src])
        assert np.array_equal(np.isfinite(fmm), np.isfinite(dij))
        ok = np.isfinite(dij)
        assert np.all(fmm[ok] <= 1.02 * dij[ok] + 1e-9)
        rr, cc = np.nonzero(ok)
        euclid = np.hypot(rr - src[0], cc - src[1])
        assert np.all(fmm[ok] >= euclid - 1.0 - 1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fmm_eikonal_consistency(seed):
    rng = np.random.default_rng(seed)
    occ = random_occupancy(rng, (32, 32))
    free = np.argwhere(occ == FREE)
    if len(free) == 0:
        return
    d = fmm_distance(grid_of(occ), [tuple(free[rng.integers(len(free))])]).values
    for axis in (0, 1):
        a = d.take(range(d.shape[axis] - 1), axis=axis)
        b = d.take(range(1, d.shape[axis]), axis=axis)
        both = np.isfinite(a) & np.isfinite(b)
        assert np.all(np.abs(a[both] - b[both]) <= CS + 1e-9)


# --- EDT -------------------------------------------------------------------------------------

def test_edt_examples():
    occ = np.zeros((9, 9), np.uint8)
    occ[4, 4] = OBSTACLE
    c = edt(grid_of(occ)).values
    assert c[4, 4] == 0.0
    assert c[4, 5] == pytest.approx(CS)
    assert c[5, 5] == pytest.approx(CS * math.sqrt(2))
    assert np.all(edt(grid_of(np.zeros((4, 4))), max_range=3.0).values == 3.0)


def test_edt_matches_brute_force():
    for seed in range(5):
        occ = random_occupancy(np.random.default_rng(100 + seed), (32, 32), 0.05)
        occ[0, 0] = OBSTACLE
        assert np.max(np.abs(edt(grid_of(occ, 1.0)).values - brute_edt(occ == OBSTACLE))) < 1e-9


# --- clearance-adjusted cost -----------------------------------------------------------------

def test_adjusted_cost_examples():
    assert adjusted_cost(2.0, 1.0, P) == pytest.approx(2.0 - P.w_obs)
    assert adjusted_cost(2.0, P.r_safe, P) == pytest.approx(2.0 - P.w_obs)
    assert adjusted_cost(2.0, P.r_safe / 2, P) == pytest.approx(2.0 - P.w_obs / 2)
    assert adjusted_cost(2.0, P.r_agent - 1e-9, P) == EXCLUDED
    assert adjusted_cost(0.1, 1.0, P) == 0.0      # clamped at zero


@given(st.floats(0, 20), st.floats(0, 2), st.floats(0, 20), st.floats(0, 2))
def test_excluded_is_absorbing(d1, c1, d2, c2):
    a, b = adjusted_cost(d1, c1, P), adjusted_cost(d2, c2, P)
    if c1 < P.r_agent and c2 >= P.r_agent:
        assert a > b
    field = adjusted_cost_field(np.array([d1, d2]), np.array([c1, c2]), P)
    assert field.tolist() == [a, b]


# --- waypoint selection ----------------------------------------------------------------------

def test_waypoint_open_field_on_line_at_lookahead():
    occ = np.zeros((40, 100), np.uint8)
    g = grid_of(occ)
    goal = (20, 95)
    dist = fmm_distance(g, [goal])
    clear = edt(g, max_range=10.0)
    agent = Pose2D(*cell_to_world(20, 10, CS), 0.0)
    wp = select_waypoint(dist, clear, agent, P)
    # enumeration oracle: the candidate disc's minimum raw distance
    best, best_d = None, math.inf
    for r in range(40):
        for c in range(100):
            x, y = cell_to_world(r, c, CS)
            if math.hypot(x - agent.x, y - agent.y) <= P.lookahead + 1e-12 and dist.values[r, c] < best_d:
                best, best_d = (r, c), dist.values[r, c]
    assert wp == best
    wx, wy = cell_to_world(*wp, CS)
    assert abs(wy - agent.y) < 1e-9
    assert math.hypot(wx - agent.x, wy - agent.y) == pytest.approx(P.lookahead, abs=CS)


def test_waypoint_narrow_corridor_excluded():
    occ = np.ones((20, 80), np.uint8)
    occ[9:12, :] = FREE                   # 0.15 m wide: every cell is inside the exclusion zone
    g = grid_of(occ)
    dist = fmm_distance(g, [(10, 75)])
    agent = Pose2D(*cell_to_world(10, 5, CS), 0.0)
    with pytest.raises(NoViableWaypoint):
        select_waypoint(dist, edt(g), agent, P)


def test_waypoint_prefers_clearance_at_equal_distance():
    d = np.full((21, 21), 5.0)
    d[10, 5] = d[10, 15] = 1.0
    c = np.full((21, 21), 1.0)
    c[10, 5] = P.r_agent + CS
    c[10, 15] = P.r_safe
    agent = Pose2D(*cell_to_world(10, 10, CS), 0.0)
    wp = select_waypoint(DistanceField(d, ((0, 0),), CS), ClearanceField(c, CS), agent, P)
    assert wp == (10, 15)


def test_waypoint_tie_break_row_major():
    d = np.full((21, 21), 5.0)
    d[8, 10] = d[12, 10] = 1.0
    agent = Pose2D(*cell_to_world(10, 10, CS), 0.0)
    wp = select_waypoint(DistanceField(d, ((0, 0),), CS), ClearanceField(np.ones((21, 21)), CS), agent, P)
    assert wp == (8, 10)


# --- local control ---------------------------------------------------------------------------

@pytest.mark.parametrize("bearing,expected", [(0.0, Action.FORWARD), (90.0, Action.TURN_LEFT),
                                              (-90.0, Action.TURN_RIGHT), (-14.0, Action.FORWARD),
                                              (16.0, Action.TURN_LEFT)])
def test_local_step(bearing, expected):
    agent = Pose2D(1.0, 1.0, 0.0)
    th = math.radians(bearing)
    assert local_step(agent, (1.0 + math.cos(th), 1.0 + math.sin(th)), P) is expected


def test_approach_step_reaches_target():
    occ = np.zeros((40, 40), np.uint8)
    occ[[0, -1], :] = OBSTACLE
    occ[:, [0, -1]] = OBSTACLE
    g = grid_of(occ)
    clear = edt(g)
    pose = Pose2D(0.5, 0.5, 0.0)
    target = (1.5, 1.2)
    for _ in range(40):
        act = approach_step(pose, target, P, clear, 0.15)
        if act is None:
            break
        if act is Action.FORWARD:
            th = math.radians(pose.yaw)
            pose = Pose2D(pose.x + P.step_size * math.cos(th), pose.y + P.step_size * math.sin(th), pose.yaw)
        else:
            pose = Pose2D(pose.x, pose.y, pose.yaw + (30 if act is Action.TURN_LEFT else -30))
    assert math.hypot(pose.x - target[0], pose.y - target[1]) <= 0.25


def test_params_validation():
    with pytest.raises(ValueError):
        PlannerParams(r_agent=0.6)
    with pytest.raises(ValueError):
        PlannerParams(turn_increment=7.0)
