import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lastmeter.bev import Frontier
from lastmeter.errors import EmptyInput, NonpositiveDistance
from lastmeter.frontier import (FrontierWeights, ScoredFrontier, frontier_inputs, norm_stat,
                                score_frontiers, select_frontier)
from lastmeter.geometry import Pose2D
from lastmeter.grid import FREE, UNKNOWN, GridMap

W = FrontierWeights()


def make(S=0.0, D=1.0, A=0.0, E=0.0, key=0):
    return Frontier(np.array([[0, key]]), (0.0, 0.0), S=S, D=D, A=A, E=E, key=key)


def random_frontiers(rng, n):
    return [make(S=float(rng.choice([0.0, rng.uniform(0, 0.003)])), D=float(rng.uniform(0.1, 10)),
                 A=float(rng.uniform(0, 180)), E=float(rng.uniform(0, 1)), key=k)
            for k in range(n)]


# --- norm_stat -------------------------------------------------------------------------------

def test_norm_stat_analytic():
    x = np.array([1.0, 2.0, 3.0, 4.0, 10.0])
    m, s = x.mean(), x.std()
    assert np.allclose(norm_stat(x), 0.5 + 0.5 * np.tanh((x - m) / s), atol=1e-12)
    assert norm_stat([m - 1, m, m + 1])[1] == pytest.approx(0.5, abs=1e-12)
    y = np.array([-1.0, 1.0])          # mean 0, std 1
    assert norm_stat(y)[1] == pytest.approx(0.5 + 0.5 * math.tanh(1.0), abs=1e-12)
    assert norm_stat(y)[1] == pytest.approx(0.8808, abs=1e-4)


def test_norm_stat_constant_and_empty():
    assert np.all(norm_stat([3.0, 3.0, 3.0]) == 0.5)
    assert np.all(norm_stat([7.0]) == 0.5)
    with pytest.raises(EmptyInput):
        norm_stat([])


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30),
       st.floats(-100, 100), st.floats(0.01, 100))
def test_norm_stat_rank_preserving_and_equivariant(xs, shift, scale):
    x = np.array(xs)
    out = norm_stat(x)
    assert np.all((out >= 0.0) & (out <= 1.0))
    if x.std() < 1e-6:
        return
    order = np.argsort(x, kind="stable")
    assert np.all(np.diff(out[order]) >= -1e-12)
    assert np.allclose(norm_stat(x * scale + shift), out, atol=1e-9)


# --- scoring ---------------------------------------------------------------------------------

def test_three_frontier_formula_oracle():
    # frozen from an independent recomputation with the statistics module
    fs = [make(0.0, 1.0, 10.0, 0.2, 0), make(0.0007, 2.5, 90.0, 0.5, 1), make(0.002, 4.0, 170.0, 0.1, 2)]
    scores = [sf.score for sf in score_frontiers(fs, W)]
    assert scores == pytest.approx([0.8713143715146523, 0.5595042950777647, 0.6123341417659719],
                                   abs=1e-12)


def test_saturated_and_zero_relevance_examples():
    fs = [make(W.theta_relev, 1.0, 30.0, 0.4, 0), make(0.0, 3.0, 60.0, 0.9, 1), make(0.0, 2.0, 5.0, 0.1, 2)]
    out = score_frontiers(fs, W)
    sat, zero = out[0], out[1]
    assert sat.S_norm == 1.0
    assert sat.score == pytest.approx(W.w_s + W.w_e * sat.E_norm, abs=1e-15)
    assert zero.score == pytest.approx(W.w_d * zero.D_norm + W.w_h * zero.H_norm + W.w_e * zero.E_norm,
                                       abs=1e-15)


def test_score_errors():
    with pytest.raises(EmptyInput):
        score_frontiers([], W)
    with pytest.raises(NonpositiveDistance):
        score_frontiers([make(D=0.0)], W)


def test_single_term_variants():
    fs = [make(0.0007, 1.0, 0.0, 0.2, 0), make(0.0, 2.0, 90.0, 0.8, 1)]
    for variant, attr in (("s_only", "S_norm"), ("d_only", "D_norm"), ("e_only", "E_norm")):
        for sf in score_frontiers(fs, replace(W, variant=variant)):
            assert sf.score == getattr(sf, attr)
    with pytest.raises(ValueError):
        FrontierWeights(variant="h_only")


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12))
def test_scored_fields_recompute(seed, n):
    out = score_frontiers(random_frontiers(np.random.default_rng(seed), n), W)
    for sf in out:
        for v in (sf.S_norm, sf.D_norm, sf.H_norm, sf.E_norm):
            assert 0.0 <= v <= 1.0
        expect = W.w_s * sf.S_norm + (1 - sf.S_norm) * (W.w_d * sf.D_norm + W.w_h * sf.H_norm) \
            + W.w_e * sf.E_norm
        assert sf.score == pytest.approx(expect, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 10), st.floats(0.0, 1.0))
def test_relevance_monotone(seed, n, bump):
    rng = np.random.default_rng(seed)
    fs = random_frontiers(rng, n)
    before = score_frontiers(fs, W)[0]
    fs[0] = make(fs[0].S + bump * W.theta_relev, fs[0].D, fs[0].A, fs[0].E, 0)
    after = score_frontiers(fs, W)[0]
    assert after.S_norm >= before.S_norm
    if W.w_s >= W.w_d * before.D_norm + W.w_h * before.H_norm:
        assert after.score >= before.score - 1e-12


# --- selection -------------------------------------------------------------------------------

def scored(score, D, key):
    return ScoredFrontier(make(D=D, key=key), 0, 0, 0, 0, score)


def test_select_examples():
    one = scored(0.3, 1.0, 0)
    assert select_frontier([one]) is one
    assert select_frontier([scored(0.5, 5.0, 0), scored(0.5, 2.0, 1)]).frontier.D == 2.0
    assert select_frontier([scored(0.5, 2.0, 7), scored(0.5, 2.0, 3)]).frontier.key == 3
    with pytest.raises(EmptyInput):
        select_frontier([])


@given(st.lists(st.tuples(st.floats(0, 2), st.floats(0.1, 10)), min_size=1, max_size=20))
def test_select_matches_linear_scan(items):
    lst = [scored(s, d, k) for k, (s, d) in enumerate(items)]
    best = lst[0]
    for sf in lst[1:]:
        if (sf.score > best.score or (sf.score == best.score and sf.frontier.D < best.frontier.D)):
            best = sf
    assert select_frontier(lst) is best
    assert select_frontier(list(lst)) is select_frontier(lst)


# --- inputs ----------------------------------------------------------------------------------

def test_frontier_inputs_fill_terms():
    g = GridMap.unknown((20, 20), 0.1)
    g.occupancy[:, :10] = FREE
    g.relevance[5, 12] = 0.004
    cells = np.array([[r, 9] for r in range(20)])
    f = Frontier(cells, (0.95, 1.0), key=9)
    dist = np.full((20, 20), np.inf)
    dist[:, :10] = 0.5
    out = frontier_inputs([f], g, Pose2D(0.5, 1.0, 0.0), dist)[0]
    assert out.D == 0.5
    assert out.S == pytest.approx(0.004)       # within 0.5 m of column 9
    assert out.A == pytest.approx(0.0, abs=1e-9)
    assert 0.4 < out.E < 0.6                   # half the disc lies in the unknown half
    assert np.sum(g.occupancy == UNKNOWN) == 200
