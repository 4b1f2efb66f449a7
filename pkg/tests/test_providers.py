import math

import numpy as np
import pytest

from lastmeter.cascade import CascadeParams, Keyframe, MemoryCache, confidence_score, localize
from lastmeter.errors import EmptyFrames, PoseOutsideWorld
from lastmeter.geometry import Pose2D, signed_angle_diff
from lastmeter.providers import (Recorder, RegistrationProviderSpec, RelevanceProviderSpec,
                                 ReplayProvider, SyntheticRegistration, SyntheticRelevance,
                                 goal_overlap, synth_register, synth_relevance, visibility_overlap)
from lastmeter.sim import parse_ascii

# two sealed rooms; the dividing wall is two cells thick so no cell is seen from both sides
TWO_ROOMS = "\n".join(["#" * 42] + ["#" + "." * 19 + "##" + "." * 19 + "#"] * 19 + ["#" * 42])
WORLD = parse_ascii(TWO_ROOMS, 0.1)
LEFT = Pose2D(0.5, 1.0, 0.0)
RIGHT = Pose2D(3.6, 1.0, 180.0)


def frames_at(poses):
    return [Keyframe(k, p) for k, p in enumerate(poses)]


# --- visibility overlap ----------------------------------------------------------------------

def test_visibility_overlap_examples():
    assert visibility_overlap(LEFT, LEFT, WORLD) == 1.0
    assert visibility_overlap(LEFT, RIGHT, WORLD) == 0.0
    wide = Pose2D(0.3, 1.0, 0.0)
    narrow = Pose2D(1.2, 1.0, 0.0)
    # the nearer camera behind sees everything the farther one sees along the same axis
    assert visibility_overlap(wide, narrow, WORLD) == pytest.approx(1.0, abs=0.05)
    assert visibility_overlap(narrow, wide, WORLD) < 1.0


def test_goal_overlap_is_fraction_of_goal_view():
    near = Pose2D(0.6, 1.0, 0.0)
    assert goal_overlap([near], LEFT, WORLD) == visibility_overlap(near, LEFT, WORLD)
    assert goal_overlap([LEFT, RIGHT], LEFT, WORLD) == pytest.approx(0.5)


# --- relevance -------------------------------------------------------------------------------

def test_relevance_self_overlap_dominates():
    spec = RelevanceProviderSpec()
    at_goal = synth_relevance(LEFT, LEFT, WORLD, spec).max()
    for pose in (Pose2D(1.0, 1.5, 0.0), Pose2D(1.5, 0.5, 45.0), Pose2D(0.8, 1.2, 90.0)):
        assert at_goal >= synth_relevance(pose, LEFT, WORLD, spec).max()


def test_relevance_disjoint_rooms_zero_and_shape():
    out = synth_relevance(RIGHT, LEFT, WORLD, RelevanceProviderSpec())
    assert out.shape == (1, 61)
    assert np.all(out == 0.0)


def test_relevance_deterministic_and_noisy():
    spec = RelevanceProviderSpec(noise_std=0.05, seed=3)
    a = synth_relevance(LEFT, Pose2D(1.0, 1.0, 0.0), WORLD, spec, step=4)
    b = synth_relevance(LEFT, Pose2D(1.0, 1.0, 0.0), WORLD, spec, step=4)
    c = synth_relevance(LEFT, Pose2D(1.0, 1.0, 0.0), WORLD, spec, step=5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.all(np.abs(a) <= 1.0)


def test_relevance_pose_checks():
    with pytest.raises(PoseOutsideWorld):
        synth_relevance(Pose2D(2.05, 1.0), LEFT, WORLD, RelevanceProviderSpec())
    with pytest.raises(PoseOutsideWorld):
        synth_relevance(LEFT, Pose2D(-1.0, 1.0), WORLD, RelevanceProviderSpec())


# --- registration ----------------------------------------------------------------------------

def test_register_zero_noise_is_exact_sim3_image():
    poses = [Pose2D(0.5, 0.5, 10), Pose2D(1.0, 0.6, 40), Pose2D(1.4, 1.4, 80), Pose2D(0.7, 1.6, 200)]
    goal = Pose2D(1.2, 1.0, 130.0)
    frames = frames_at(poses)
    reg = synth_register(frames, goal, WORLD, RegistrationProviderSpec(seed=5), step=2)
    assert len(reg.canonical_poses) == 5
    out = localize(frames, reg).goal
    assert math.hypot(out.x - goal.x, out.y - goal.y) < 1e-6
    assert abs(signed_angle_diff(out.yaw, goal.yaw)) < 1e-6


def test_register_overlap_floor():
    frames = frames_at([Pose2D(0.5, 0.5, 0), Pose2D(0.6, 0.5, 30), Pose2D(0.7, 0.5, 60)])
    reg = synth_register(frames, RIGHT, WORLD, RegistrationProviderSpec())
    assert reg.raw_attention[-1] == reg.raw_attention.min()
    assert reg.raw_feature[-1] == reg.raw_feature.min()


def test_register_confidence_monotone_in_overlap():
    base = [Pose2D(0.5, 1.0, 0.0), Pose2D(0.5, 1.0, 60.0), Pose2D(0.5, 1.0, 120.0)]
    goal = Pose2D(0.5, 1.0, 300.0)
    confs, ovs = [], []
    # rotating the last frame toward the goal heading increases the overlap with the goal
    for yaw in (180.0, 240.0, 300.0):
        frames = frames_at(base + [Pose2D(0.5, 1.0, yaw)])
        ovs.append(goal_overlap([f.pose for f in frames], goal, WORLD))
        reg = synth_register(frames, goal, WORLD, RegistrationProviderSpec())
        confs.append(confidence_score(reg, CascadeParams()))
    assert ovs == sorted(ovs) and ovs[0] < ovs[-1]
    assert confs == sorted(confs)


def test_register_noise_shrinks_localize_error():
    poses = [Pose2D(0.4 + 0.3 * k, 0.5 + 0.4 * (k % 3), 45.0 * k) for k in range(6)]
    goal = Pose2D(1.0, 1.5, 90.0)
    medians = []
    for sigma in (0.2, 0.05, 0.0):
        errs = []
        for seed in range(100):
            frames = frames_at(poses)
            spec = RegistrationProviderSpec(pose_noise_std=sigma, rot_noise_std=10 * sigma, seed=seed)
            out = localize(frames, synth_register(frames, goal, WORLD, spec)).goal
            errs.append(math.hypot(out.x - goal.x, out.y - goal.y))
        medians.append(float(np.median(errs)))
    assert medians[0] > medians[1] > medians[2]
    assert medians[2] < 1e-6


def test_register_empty_and_deterministic():
    with pytest.raises(EmptyFrames):
        synth_register([], LEFT, WORLD, RegistrationProviderSpec())
    frames = frames_at([Pose2D(0.5, 0.5, 0), Pose2D(1.0, 0.5, 30)])
    spec = RegistrationProviderSpec(pose_noise_std=0.1, seed=9)
    a = synth_register(frames, LEFT, WORLD, spec, step=3)
    b = synth_register(frames, LEFT, WORLD, spec, step=3)
    for p, q in zip(a.canonical_poses, b.canonical_poses):
        assert np.array_equal(p.rotation, q.rotation) and np.array_equal(p.position, q.position)
    assert np.array_equal(a.raw_attention, b.raw_attention)


def test_spec_validation():
    with pytest.raises(ValueError):
        RegistrationProviderSpec(canonical_scale_range=(2.0, 1.0))
    with pytest.raises(ValueError):
        RelevanceProviderSpec(noise_std=-1.0)
    with pytest.raises(ValueError):
        RelevanceProviderSpec(mode="live")


# --- record and replay -----------------------------------------------------------------------

def test_record_replay_round_trip(tmp_path):
    path = tmp_path / "calls.jsonl"
    rel = Recorder(SyntheticRelevance(WORLD, LEFT, RelevanceProviderSpec(noise_std=0.01)), "relevance", path)
    reg = Recorder(SyntheticRegistration(WORLD, LEFT, RegistrationProviderSpec(pose_noise_std=0.02)),
                   "registration", path)
    frames = frames_at([Pose2D(0.5, 0.5, 0), Pose2D(1.0, 0.5, 30), Pose2D(1.0, 1.0, 60)])
    r1 = rel(Pose2D(1.0, 1.0, 0.0), 7)
    g1 = reg(frames, 7)

    rel2, reg2 = ReplayProvider(path, "relevance"), ReplayProvider(path, "registration")
    assert np.array_equal(rel2(Pose2D(1.0, 1.0, 0.0), 7), r1)
    g2 = reg2(frames, 7)
    for p, q in zip(g1.canonical_poses, g2.canonical_poses):
        assert np.array_equal(p.rotation, q.rotation) and np.array_equal(p.position, q.position)
    assert np.array_equal(g1.raw_feature, g2.raw_feature)
    with pytest.raises(KeyError):
        rel2(Pose2D(1.0, 1.0, 0.0), 8)


def test_memory_frames_feed_registration():
    mem = MemoryCache()
    for k, p in enumerate([Pose2D(0.5, 0.5, 0), Pose2D(1.0, 0.5, 30)]):
        mem.push(Keyframe(k, p))
    reg = SyntheticRegistration(WORLD, LEFT, RegistrationProviderSpec())
    out = reg(mem.short(2), 1)
    assert reg.calls == 1 and out.n_frames == 2
