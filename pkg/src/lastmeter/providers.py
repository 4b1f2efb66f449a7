"""Provider interfaces for relevance and multi-view registration, with synthetic and replay backends.

The synthetic backends derive everything from the ground-truth world: relevance
from how much of the goal camera's visible area a column looks at, and
registration confidence and pose noise from visibility overlap with the goal.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .bev import column_bearings
from .cascade import Keyframe, RegistrationResult
from .errors import EmptyFrames, PoseOutsideWorld
from .geometry import Pose, Pose2D, Sim3Transform
from .grid import disc_offsets
from .sim.sensors import scan, visible_mask
from .sim.world import GridWorld

MODES = ("synthetic", "replay")


@dataclass(frozen=True)
class SensorSpec:
    fov: float = 90.0
    width: int = 61
    max_range: float = 10.0


@dataclass(frozen=True)
class RelevanceProviderSpec:
    mode: str = "synthetic"
    noise_std: float = 0.0
    falloff_range: float = 0.5     # metres
    seed: int = 0
    region_radius: float = 0.5     # metres around each column's depth return
    replay_path: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown provider mode {self.mode!r}")
        if self.noise_std < 0 or not self.falloff_range > 0 or not self.region_radius > 0:
            raise ValueError("need noise_std >= 0 and positive falloff_range, region_radius")


@dataclass(frozen=True)
class RegistrationProviderSpec:
    mode: str = "synthetic"
    pose_noise_std: float = 0.0    # metres
    rot_noise_std: float = 0.0     # degrees
    canonical_scale_range: tuple[float, float] = (0.2, 5.0)
    overlap_sharpness: float = 2.0
    seed: int = 0
    replay_path: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown provider mode {self.mode!r}")
        lo, hi = self.canonical_scale_range
        if self.pose_noise_std < 0 or self.rot_noise_std < 0:
            raise ValueError("noise standard deviations must be non-negative")
        if not 0 < lo <= hi:
            raise ValueError("canonical_scale_range must satisfy 0 < low <= high")
        if not self.overlap_sharpness > 0:
            raise ValueError("overlap_sharpness must be positive")
        object.__setattr__(self, "canonical_scale_range", (float(lo), float(hi)))


class RelevanceProvider(Protocol):
    def __call__(self, agent_pose: Pose2D, step: int) -> np.ndarray: ...


class RegistrationProvider(Protocol):
    def __call__(self, frames: list[Keyframe], step: int) -> RegistrationResult: ...


def _q(v: float) -> int:
    return int(round(v * 1e6))


def call_seed(seed: int, step: int, poses: Sequence[Pose2D]) -> np.random.SeedSequence:
    """Seed material for one provider call: base seed, step index and the quantised poses."""
    key = [int(seed) & 0xFFFFFFFF, int(step) & 0xFFFFFFFF]
    for p in poses:
        key += [_q(p.x) & 0xFFFFFFFF, _q(p.y) & 0xFFFFFFFF, _q(p.yaw) & 0xFFFFFFFF]
    return np.random.SeedSequence(key)


def visibility_overlap(pose_a: Pose2D, pose_b: Pose2D, world: GridWorld,
                       sensor: SensorSpec = SensorSpec()) -> float:
    """Fraction of the cells visible from ``pose_b`` that are also visible from ``pose_a``."""
    va = visible_mask(world, pose_a, sensor.fov, sensor.width, sensor.max_range)
    vb = visible_mask(world, pose_b, sensor.fov, sensor.width, sensor.max_range)
    nb = int(vb.sum())
    if nb == 0:
        return 0.0
    return float(np.count_nonzero(va & vb)) / nb


def goal_overlap(poses: Sequence[Pose2D], goal_pose: Pose2D, world: GridWorld,
                 sensor: SensorSpec = SensorSpec()) -> float:
    """Mean share of the goal camera's visible cells that each frame also sees."""
    return float(np.mean([visibility_overlap(p, goal_pose, world, sensor) for p in poses]))


def _check_pose(world: GridWorld, pose: Pose2D):
    if not world.is_free(pose.x, pose.y):
        raise PoseOutsideWorld(f"pose ({pose.x:.3f}, {pose.y:.3f}) is not on a free world cell")


def synth_relevance(agent_pose: Pose2D, goal_pose: Pose2D, world: GridWorld,
                    spec: RelevanceProviderSpec, step: int = 0,
                    sensor: SensorSpec = SensorSpec()) -> np.ndarray:
    """One-row relevance image, one value per image column.

    A column's base value is the share of the agent-visible cells near its depth
    return that the goal camera also sees, damped by the agent-goal distance.
    """
    _check_pose(world, agent_pose)
    _check_pose(world, goal_pose)
    depth, va = scan(world, agent_pose, sensor.fov, sensor.width, sensor.max_range)
    vg = visible_mask(world, goal_pose, sensor.fov, sensor.width, sensor.max_range)
    cs = world.cell_size
    th = np.radians(agent_pose.yaw + column_bearings(sensor.width, sensor.fov))
    reach = np.maximum(depth - 0.5 * cs, 0.0)
    ex = agent_pose.x + reach * np.cos(th)
    ey = agent_pose.y + reach * np.sin(th)
    er = np.floor((ey - world.origin[1]) / cs).astype(int)
    ec = np.floor((ex - world.origin[0]) / cs).astype(int)
    off = disc_offsets(spec.region_radius / cs)
    rr = er[:, None] + off[None, :, 0]
    cc = ec[:, None] + off[None, :, 1]
    h, w = world.shape
    inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
    rr = np.clip(rr, 0, h - 1)
    cc = np.clip(cc, 0, w - 1)
    seen = va[rr, cc] & inside
    both = seen & vg[rr, cc]
    den = seen.sum(axis=1)
    overlap = np.where(den > 0, both.sum(axis=1) / np.maximum(den, 1), 0.0)
    rng_dist = math.hypot(agent_pose.x - goal_pose.x, agent_pose.y - goal_pose.y)
    values = overlap * math.exp(-rng_dist / spec.falloff_range)
    if spec.noise_std > 0:
        rng = np.random.default_rng(call_seed(spec.seed, step, [agent_pose, goal_pose]))
        values = values + rng.normal(0.0, spec.noise_std, values.shape)
    return np.clip(values, -1.0, 1.0)[None, :]


def attention_map(overlap, sharpness: float):
    return np.power(np.clip(overlap, 0.0, 1.0), sharpness)


def feature_map(overlap, sharpness: float):
    o = np.clip(overlap, 0.0, 1.0)
    return (1.0 - np.exp(-sharpness * o)) / (1.0 - math.exp(-sharpness))


def random_sim3(rng: np.random.Generator, scale_range: tuple[float, float]) -> Sim3Transform:
    lo, hi = scale_range
    s = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
    R = Rotation.random(random_state=rng).as_matrix()
    t = rng.normal(0.0, 2.0, 3)
    return Sim3Transform(s, R, t)


def synth_register(frames: Sequence[Keyframe], goal_pose: Pose2D, world: GridWorld,
                   spec: RegistrationProviderSpec, step: int = 0,
                   sensor: SensorSpec = SensorSpec()) -> RegistrationResult:
    """Canonical poses as a hidden similarity image of the true poses, perturbed by noise that
    shrinks as the frames see more of the goal's view; scores follow visibility overlap."""
    frames = list(frames)
    if not frames:
        raise EmptyFrames("registration needs at least one frame")
    poses = [f.pose for f in frames]
    rng = np.random.default_rng(call_seed(spec.seed, step, poses + [goal_pose]))
    hidden = random_sim3(rng, spec.canonical_scale_range)

    # each entry measures how much of that frame's own view is shared: with the reference
    # frame for the frames, with the goal camera (averaged over frames) for the goal
    ref = poses[0]
    frame_ov = np.array([visibility_overlap(ref, p, world, sensor) for p in poses])
    overlap_g = goal_overlap(poses, goal_pose, world, sensor)

    sig_p = spec.pose_noise_std * (1.0 - overlap_g)
    sig_r = math.radians(spec.rot_noise_std) * (1.0 - overlap_g)
    canonical = []
    for p in poses + [goal_pose]:
        true = p.to_pose()
        pos = true.position + rng.normal(0.0, 1.0, 3) * sig_p
        rot = Rotation.from_rotvec(rng.normal(0.0, 1.0, 3) * sig_r).as_matrix() @ true.rotation
        canonical.append(hidden.apply_pose(Pose(rot, pos)))

    ov = np.append(frame_ov, overlap_g)
    k = spec.overlap_sharpness
    return RegistrationResult(tuple(canonical), attention_map(ov, k), feature_map(ov, k))


class SyntheticRelevance:
    def __init__(self, world: GridWorld, goal: Pose2D, spec: RelevanceProviderSpec,
                 sensor: SensorSpec = SensorSpec()):
        self.world, self.goal, self.spec, self.sensor = world, goal, spec, sensor
        self.calls = 0

    def __call__(self, agent_pose: Pose2D, step: int) -> np.ndarray:
        self.calls += 1
        return synth_relevance(agent_pose, self.goal, self.world, self.spec, step, self.sensor)


class SyntheticRegistration:
    def __init__(self, world: GridWorld, goal: Pose2D, spec: RegistrationProviderSpec,
                 sensor: SensorSpec = SensorSpec()):
        self.world, self.goal, self.spec, self.sensor = world, goal, spec, sensor
        self.calls = 0

    def __call__(self, frames: list[Keyframe], step: int) -> RegistrationResult:
        self.calls += 1
        return synth_register(frames, self.goal, self.world, self.spec, step, self.sensor)


# --- record / replay -------------------------------------------------------------------------

def input_hash(kind: str, step: int, poses: Sequence[Pose2D]) -> str:
    payload = json.dumps([kind, step, [[_q(p.x), _q(p.y), _q(p.yaw)] for p in poses]])
    return hashlib.sha256(payload.encode()).hexdigest()[:20]


def _pose_to_json(p: Pose) -> dict:
    return {"R": p.rotation.tolist(), "t": p.position.tolist()}


def _pose_from_json(d: dict) -> Pose:
    # JSON floats round-trip exactly, so the rotation stays orthonormal bit for bit
    return Pose(np.asarray(d["R"], dtype=float), np.asarray(d["t"], dtype=float))


class Recorder:
    """Wraps a provider and appends one JSONL record per call."""

    def __init__(self, inner, kind: str, path):
        self.inner, self.kind, self.path = inner, kind, Path(path)

    def __call__(self, arg, step: int):
        out = self.inner(arg, step)
        if self.kind == "relevance":
            rec = {"kind": "relevance", "step": step, "hash": input_hash("relevance", step, [arg]),
                   "values": np.asarray(out).tolist()}
        else:
            rec = {"kind": "registration", "step": step,
                   "hash": input_hash("registration", step, [f.pose for f in arg]),
                   "poses": [_pose_to_json(p) for p in out.canonical_poses],
                   "raw_attention": out.raw_attention.tolist(),
                   "raw_feature": out.raw_feature.tolist()}
        with open(self.path, "a") as fh:
            fh.write(json.dumps(rec) + "\n")
        return out


class ReplayProvider:
    """Serves recorded outputs keyed by the hash of the call inputs."""

    def __init__(self, path, kind: str):
        self.kind = kind
        self.records: dict[str, dict] = {}
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    if rec["kind"] == kind:
                        self.records[rec["hash"]] = rec
        self.calls = 0

    def __call__(self, arg, step: int):
        self.calls += 1
        poses = [arg] if self.kind == "relevance" else [f.pose for f in arg]
        key = input_hash(self.kind, step, poses)
        if key not in self.records:
            raise KeyError(f"no recorded {self.kind} output for step {step}")
        rec = self.records[key]
        if self.kind == "relevance":
            return np.asarray(rec["values"], dtype=float)
        return RegistrationResult(tuple(_pose_from_json(p) for p in rec["poses"]),
                                  np.asarray(rec["raw_attention"]), np.asarray(rec["raw_feature"]))


def make_relevance_provider(spec: RelevanceProviderSpec, world: GridWorld, goal: Pose2D,
                            sensor: SensorSpec = SensorSpec()):
    if spec.mode == "replay":
        return ReplayProvider(spec.replay_path, "relevance")
    return SyntheticRelevance(world, goal, spec, sensor)


def make_registration_provider(spec: RegistrationProviderSpec, world: GridWorld, goal: Pose2D,
                               sensor: SensorSpec = SensorSpec()):
    if spec.mode == "replay":
        return ReplayProvider(spec.replay_path, "registration")
    return SyntheticRegistration(world, goal, spec, sensor)
