"""End-to-end acceptance criteria; each test prints one PASS/FAIL line."""
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from lastmeter import harness
from lastmeter.bev import cone_mask
from lastmeter.cascade import CascadeParams, RegistrationResult, localize
from lastmeter.frontier import FrontierWeights, norm_stat, score_frontiers
from lastmeter.geometry import (Pose2D, Sim3Transform, orientation_correction, signed_angle_diff,
                                umeyama_sim3, yaw_of)
from lastmeter.grid import FREE, OBSTACLE, GridMap
from lastmeter.planner import PlannerParams, edt, fmm_distance
from lastmeter.providers import RegistrationProviderSpec, RelevanceProviderSpec, random_sim3
from lastmeter.sim.runner import SystemConfig

from .oracles import brute_edt, brute_force_yaw, dijkstra8, random_occupancy
from .test_cascade import register_exact, walk
from .test_frontier import make

R_AGENT = PlannerParams().r_agent
THETA = CascadeParams().theta
SEED = 0
# relevance noise keeps frontier relevance continuous, as real feature similarities are
NOISY = SystemConfig(registration=RegistrationProviderSpec(pose_noise_std=0.05),
                     relevance=RelevanceProviderSpec(noise_std=0.001))


@pytest.fixture
def verdict(capsys):
    def emit(name: str, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, f"{name}: {detail}"
    return emit


# --- geometry and fields ---------------------------------------------------------------------

def test_sim3_exactness(verdict):
    rng = np.random.default_rng(1)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(1000):
        n = int(rng.integers(3, 65))
        s = float(rng.uniform(0.1, 10.0))
        G = Sim3Transform(s, Rotation.random(random_state=rng).as_matrix(), rng.normal(0, 3, 3))
        X = rng.normal(size=(n, 3))
        Y = G.apply_points(X)
        T = umeyama_sim3(X, Y)
        worst = max(worst, float(np.max(np.linalg.norm(T.apply_points(X) - Y, axis=1))))
    elapsed = time.perf_counter() - t0
    verdict("Sim(3) exactness", worst < 1e-9 and elapsed < 5.0,
            f"max residual {worst:.2e} over 1000 sets in {elapsed:.2f}s")


def test_orientation_vs_brute_force(verdict):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        n = int(rng.choice([3, 5, 7]))
        aligned = [Rotation.random(random_state=rng).as_matrix() for _ in range(n)]
        centre = rng.uniform(0, 360)
        reference = [Rotation.from_euler("z", centre + rng.uniform(-60, 60), degrees=True).as_matrix() @ R
                     for R in aligned]
        got = yaw_of(orientation_correction(aligned, reference))
        worst = max(worst, abs(signed_angle_diff(got, brute_force_yaw(aligned, reference))))
    verdict("orientation correction", worst <= 0.5,
            f"max yaw gap to 0.1 deg brute force {worst:.3f} deg over 100 cases")


def test_fmm_vs_dijkstra(verdict):
    rng = np.random.default_rng(3)
    worst_ratio, reach_ok, floor_ok = 0.0, True, True
    t0 = time.perf_counter()
    for _ in range(100):
        occ = random_occupancy(rng)
        free = np.argwhere(occ == FREE)
        src = tuple(free[rng.integers(len(free))])
        fmm = fmm_distance(GridMap(occ, 1.0), [src]).values
        dij = dijkstra8(occ == FREE, [src])
        reach_ok &= bool(np.array_equal(np.isfinite(fmm), np.isfinite(dij)))
        ok = np.isfinite(dij) & (dij > 0)
        worst_ratio = max(worst_ratio, float(np.max(fmm[ok] / dij[ok])) if ok.any() else 0.0)
        rr, cc = np.nonzero(ok)
        floor_ok &= bool(np.all(fmm[ok] >= np.hypot(rr - src[0], cc - src[1]) - 1.0 - 1e-9))
    elapsed = time.perf_counter() - t0
    ok = reach_ok and floor_ok and worst_ratio <= 1.02 + 1e-9 and elapsed < 30.0
    verdict("FMM vs Dijkstra", ok,
            f"same reachability {reach_ok}, max FMM/Dijkstra {worst_ratio:.4f}, "
            f"Euclidean floor {floor_ok}, {elapsed:.1f}s for 100 maps")


def test_edt_exactness(verdict):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        occ = random_occupancy(rng)
        occ[rng.integers(64), rng.integers(64)] = OBSTACLE
        worst = max(worst, float(np.max(np.abs(edt(GridMap(occ, 1.0)).values - brute_edt(occ == OBSTACLE)))))
    verdict("EDT exactness", worst < 1e-9, f"max deviation {worst:.2e} over 20 maps")


def test_analytic_checks(verdict):
    fov = 90.0
    x = np.array([-1.0, 1.0])
    checks = [
        abs(float(cone_mask(0.0, fov)) - 1.0),
        abs(float(cone_mask(fov / 2, fov))),
        abs(float(cone_mask(fov / 4, fov)) - 0.5),
        abs(float(norm_stat([-1.0, 0.0, 1.0])[1]) - 0.5),
        abs(float(norm_stat(x)[1]) - (0.5 + 0.5 * math.tanh(1.0))),
    ]
    verdict("analytic checks", max(checks) <= 1e-12, f"max deviation {max(checks):.1e}")


# --- frontier and cascade properties ---------------------------------------------------------

def test_gate_saturation(verdict):
    rng = np.random.default_rng(5)
    W = FrontierWeights()
    worst, checked = 0.0, 0
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        fs = [make(S=float(rng.choice([rng.uniform(0, W.theta_relev), rng.uniform(W.theta_relev, 0.01)])),
                   D=float(rng.uniform(0.1, 10)), A=float(rng.uniform(0, 180)),
                   E=float(rng.uniform(0, 1)), key=k) for k in range(n)]
        base = score_frontiers(fs, W)
        for i, f in enumerate(fs):
            if f.S < W.theta_relev:
                continue
            moved = list(fs)
            moved[i] = replace(f, D=float(rng.uniform(0.1, 10)), A=float(rng.uniform(0, 180)))
            worst = max(worst, abs(score_frontiers(moved, W)[i].score - base[i].score))
            checked += 1
    verdict("gate saturation", worst == 0.0 and checked > 0,
            f"max score change {worst:.1e} over {checked} saturated frontiers")


def test_canonical_invariance(verdict):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        frames = walk(12, rng)
        goal = Pose2D(rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 360))
        reg = register_exact(frames, goal, random_sim3(rng, (0.2, 5.0)), 0.03, rng)
        before = localize(frames, reg).goal
        G = random_sim3(rng, (0.1, 10.0))
        moved = RegistrationResult(tuple(G.apply_pose(p) for p in reg.canonical_poses),
                                   reg.raw_attention, reg.raw_feature)
        after = localize(frames, moved).goal
        worst = max(worst, math.hypot(after.x - before.x, after.y - before.y),
                    math.radians(abs(signed_angle_diff(after.yaw, before.yaw))))
    verdict("canonical-frame invariance", worst < 1e-6, f"max change {worst:.2e} over 100 trials")


# --- end-to-end suites -----------------------------------------------------------------------

def _timed(cfg: harness.SuiteConfig) -> tuple[harness.SuiteReport, float]:
    t0 = time.perf_counter()
    rep = harness.run_suite(cfg)
    return rep, time.perf_counter() - t0


@pytest.fixture(scope="module")
def out_root(tmp_path_factory) -> Path:
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def noiseless(out_root):
    return _timed(harness.SuiteConfig(seed=SEED, out_dir=str(out_root / "noiseless")))


@pytest.fixture(scope="module")
def fine(out_root):
    system = SystemConfig(cascade=CascadeParams(fine_turn=2.0))
    return _timed(harness.SuiteConfig(system=system, seed=SEED, out_dir=str(out_root / "fine")))


@pytest.fixture(scope="module")
def ablation(out_root):
    base = harness.SuiteConfig(system=NOISY, seed=SEED, out_dir=str(out_root / "ablation"))
    axes = {"refinement": [False], "theta": [2 * THETA], "scoring": ["s_only"]}
    return base, harness.run_ablation(base, axes)


def _summary(a: dict, elapsed: float) -> str:
    return (f"SR {a['SR']:.3f}, eps_pos {a['mean_eps_pos']:.3f} m, "
            f"eps_head {a['mean_eps_head']:.2f} deg, {elapsed:.0f}s")


def test_noiseless_end_to_end(verdict, noiseless):
    rep, elapsed = noiseless
    a = rep.aggregates
    ok = a["n"] == 200 and a["SR"] >= 0.95 and a["mean_eps_pos"] <= 0.30 \
        and a["mean_eps_head"] <= 15.0 and elapsed < 600
    verdict("noiseless end-to-end", ok, _summary(a, elapsed))


def test_noiseless_fine_alignment(verdict, fine):
    rep, elapsed = fine
    a = rep.aggregates
    ok = a["n"] == 200 and a["SR"] >= 0.95 and a["mean_eps_pos"] <= 0.30 \
        and a["mean_eps_head"] <= 2.0 and elapsed < 600
    verdict("noiseless end-to-end, fine alignment", ok, _summary(a, elapsed))


def test_ablation_trends(verdict, ablation):
    _, reports = ablation
    assert all(r.aggregates["n"] == 200 for r in reports.values())
    base = reports["baseline"].aggregates
    no_ref = reports["refinement=false"].aggregates
    theta2 = reports[f"theta={2 * THETA}"].aggregates
    s_only = reports['scoring="s_only"'].aggregates
    trends = [
        ("refinement off raises eps_pos", no_ref["mean_eps_pos"] > base["mean_eps_pos"],
         f"{base['mean_eps_pos']:.4f} -> {no_ref['mean_eps_pos']:.4f} m"),
        ("2x theta lowers SR", theta2["SR"] < base["SR"], f"{base['SR']:.3f} -> {theta2['SR']:.3f}"),
        ("relevance-only scoring lowers SPL", s_only["SPL"] < base["SPL"],
         f"{base['SPL']:.4f} -> {s_only['SPL']:.4f}"),
    ]
    verdict("ablation trends", all(ok for _, ok, _ in trends),
            "; ".join(f"{name} {'ok' if ok else 'NOT MET'} ({detail})" for name, ok, detail in trends))


def test_determinism(verdict, ablation, out_root):
    base, _ = ablation
    first = Path(base.out_dir) / "baseline" / "episodes.jsonl"
    harness.run_suite(replace(base, out_dir=str(out_root / "determinism")))
    same = first.read_bytes() == (out_root / "determinism" / "episodes.jsonl").read_bytes()
    verdict("determinism", same, "episodes.jsonl byte-identical across two runs" if same
            else "episodes.jsonl differs between two runs")


def test_safety_invariant(verdict, noiseless, fine, ablation):
    suites = {"noiseless": noiseless[0], "fine": fine[0], **ablation[1]}
    records = [r for rep in suites.values() for r in rep.records]
    worst = min(r["min_clearance"] for r in records)
    verdict("safety invariant", worst >= R_AGENT,
            f"min clearance {worst:.4f} m >= r_agent {R_AGENT} over {len(records)} episodes "
            f"in {len(suites)} suites")
