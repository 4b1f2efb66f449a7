"""Semantic-to-geometric cascade: proximity gate, verification confidence, localization, refinement."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateConfiguration, InsufficientBaseline, LastMeterError, TooFewFrames
from .geometry import Pose, Pose2D, align_trajectories, transport_goal_pose, yaw_of

DEFAULT_THETA = 0.0014


@dataclass(frozen=True)
class CascadeParams:
    theta: float = DEFAULT_THETA
    tau: float = 0.10
    m: int = 4
    K: int = 16
    distinct_position_eps: float = 0.25
    w_att: float = 0.5
    w_feat: float = 0.5
    refinement: bool = True
    stop_tolerance: float = 0.15
    # below this ratio of the two leading position spreads the long window is extended
    min_spread_ratio: float = 0.05
    # optional terminal fine-turn increment in degrees (None: coarse turns only)
    fine_turn: float | None = None

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if self.m < 2 or self.K < self.m:
            raise ValueError("need m >= 2 and K >= m")
        if abs(self.w_att + self.w_feat - 1.0) > 1e-9 or min(self.w_att, self.w_feat) < 0:
            raise ValueError("w_att and w_feat must be non-negative and sum to 1")
        if self.distinct_position_eps <= 0 or self.stop_tolerance <= 0:
            raise ValueError("distinct_position_eps and stop_tolerance must be positive")
        if self.fine_turn is not None and self.fine_turn <= 0:
            raise ValueError("fine_turn must be positive")


class Mode(str, Enum):
    EXPLORE = "Explore"
    VERIFY = "Verify"
    LOCALIZE = "Localize"
    DONE = "Done"


@dataclass(frozen=True)
class Keyframe:
    step: int
    pose: Pose2D
    depth: np.ndarray | None = field(default=None, compare=False, repr=False)

    @property
    def frame_id(self) -> str:
        return f"f{self.step}"


GOAL = "goal"


class MemoryCache:
    """Chronological keyframe store with a capacity bound (oldest frames evicted)."""

    def __init__(self, capacity: int = 4096):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.frames: list[Keyframe] = []

    def __len__(self):
        return len(self.frames)

    def push(self, frame: Keyframe):
        if self.frames and frame.step <= self.frames[-1].step:
            raise ValueError("keyframe timestamps must increase strictly")
        if not (math.isfinite(frame.pose.x) and math.isfinite(frame.pose.y)):
            raise ValueError("keyframe pose must be finite")
        self.frames.append(frame)
        if len(self.frames) > self.capacity:
            del self.frames[0]

    def short(self, m: int) -> list[Keyframe]:
        return self.frames[-m:]

    def long(self, K: int, eps: float, min_spread_ratio: float = 0.0) -> list[Keyframe]:
        return select_long_memory(self.frames, K, eps, min_spread_ratio)


def count_distinct(positions, eps: float) -> int:
    """Greedy count of positions pairwise farther apart than ``eps``."""
    kept: list[np.ndarray] = []
    for p in positions:
        p = np.asarray(p, dtype=float)
        if all(np.linalg.norm(p - q) > eps for q in kept):
            kept.append(p)
    return len(kept)


def spread_ratio(positions) -> float:
    P = np.asarray(positions, dtype=float)
    if len(P) < 3:
        return 0.0
    sv = np.linalg.svd(P - P.mean(axis=0), compute_uv=False)
    return float(sv[1] / sv[0]) if sv[0] > 0 else 0.0


def select_long_memory(history: Sequence[Keyframe], K: int, eps: float,
                       min_spread_ratio: float = 0.0) -> list[Keyframe]:
    """Most recent frames, kept only when at least ``eps`` from the previously kept one.

    Stops at K frames once three distinct positions exist and the kept positions
    are not (nearly) collinear; otherwise keeps walking back through history.
    Returned frames are chronological.
    """
    kept: list[Keyframe] = []
    for fr in reversed(history):
        if kept and math.hypot(fr.pose.x - kept[-1].pose.x, fr.pose.y - kept[-1].pose.y) < eps:
            continue
        kept.append(fr)
        if len(kept) >= K:
            pos = [(k.pose.x, k.pose.y) for k in kept]
            if count_distinct(pos, eps) >= 3 and spread_ratio(pos) >= min_spread_ratio:
                break
    kept.reverse()
    return kept


@dataclass(frozen=True)
class RegistrationResult:
    """Canonical poses for each input frame followed by the goal, plus raw per-frame scores
    (the goal's scores last)."""

    canonical_poses: tuple
    raw_attention: np.ndarray
    raw_feature: np.ndarray

    def __post_init__(self):
        att = np.asarray(self.raw_attention, dtype=float)
        feat = np.asarray(self.raw_feature, dtype=float)
        if not (len(self.canonical_poses) == len(att) == len(feat)):
            raise ValueError("pose and score counts must match")
        if not (np.all(np.isfinite(att)) and np.all(np.isfinite(feat))):
            raise ValueError("raw scores must be finite")
        object.__setattr__(self, "canonical_poses", tuple(self.canonical_poses))
        object.__setattr__(self, "raw_attention", att)
        object.__setattr__(self, "raw_feature", feat)

    @property
    def n_frames(self) -> int:
        return len(self.canonical_poses) - 1


@dataclass(frozen=True)
class CascadeState:
    mode: Mode = Mode.EXPLORE
    S_relev: float = 0.0
    S_conf: float = math.nan
    S_conf_best: float = -math.inf
    committed_goal: Pose2D | None = None

    def __post_init__(self):
        has_goal = self.committed_goal is not None
        if has_goal != (self.mode in (Mode.LOCALIZE, Mode.DONE)):
            raise ValueError("a committed goal exists exactly in Localize and Done")


def proximity_score(S) -> float:
    return float(np.max(np.asarray(S, dtype=float)))


def order_verification_window(short: Sequence) -> list:
    """Temporally central frame first, the rest chronologically, the goal marker last."""
    frames = list(short)
    if len(frames) < 2:
        raise TooFewFrames(f"verification needs at least 2 frames, got {len(frames)}")
    c = len(frames) // 2
    return [frames[c]] + frames[:c] + frames[c + 1:] + [GOAL]


def minmax(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    lo, hi = v.min(), v.max()
    if hi - lo <= 1e-15 * max(1.0, abs(hi)):
        return np.full(v.shape, 0.5)
    return (v - lo) / (hi - lo)


def confidence_score(result: RegistrationResult, params: CascadeParams) -> float:
    """Goal confidence: min-max normalised attention and feature scores, mixed."""
    if len(result.raw_attention) < 2:
        raise TooFewFrames("confidence needs at least two entries for min-max normalisation")
    att = minmax(result.raw_attention)[-1]
    feat = minmax(result.raw_feature)[-1]
    return float(params.w_att * att + params.w_feat * feat)


@dataclass(frozen=True)
class Localization:
    goal: Pose2D
    goal_pose: Pose
    alignment: object


def localize(long: Sequence[Keyframe], goal_registration: RegistrationResult,
             eps: float = 0.25) -> Localization:
    """World goal pose from canonical poses registered against recorded frame poses."""
    frames = list(long)
    if goal_registration.n_frames != len(frames):
        raise ValueError("registration does not match the frame list")
    recorded = [f.pose.to_pose() for f in frames]
    if count_distinct([p.position for p in recorded], eps) < 3:
        raise InsufficientBaseline("long memory spans fewer than three distinct positions")
    canonical = list(goal_registration.canonical_poses)
    alignment = align_trajectories(canonical[:-1], recorded)
    goal_pose = transport_goal_pose(alignment, canonical[-1])
    goal2d = Pose2D(goal_pose.position[0], goal_pose.position[1], yaw_of(goal_pose.rotation))
    return Localization(goal2d, goal_pose, alignment)


class DirectiveKind(str, Enum):
    EXPLORE = "explore"
    GOTO = "goto"
    STOP = "stop"


@dataclass(frozen=True)
class Directive:
    kind: DirectiveKind
    goal: Pose2D | None = None


Register = Callable[[list[Keyframe], int], RegistrationResult]


@dataclass
class StepInputs:
    step: int
    relevance: np.ndarray
    memory: MemoryCache
    register: Register
    # terminal maneuver toward the current committed goal is complete
    arrived: bool = False


@dataclass
class StepReport:
    """What happened inside one cascade step, for the episode trace."""

    verified: bool = False
    accepted: bool = False
    localized: bool = False
    refined: bool = False
    error: str | None = None
    mode_seen: Mode = Mode.EXPLORE


def _verify(inputs: StepInputs, params: CascadeParams) -> float:
    window = order_verification_window(inputs.memory.short(params.m))
    frames = [f for f in window if f is not GOAL]
    return confidence_score(inputs.register(frames, inputs.step), params)


def _localize(inputs: StepInputs, params: CascadeParams) -> Pose2D:
    frames = inputs.memory.long(params.K, params.distinct_position_eps, params.min_spread_ratio)
    if len(frames) < 3:
        raise InsufficientBaseline("fewer than three keyframes in long memory")
    reg = inputs.register(frames, inputs.step)
    return localize(frames, reg, params.distinct_position_eps).goal


def step_cascade(state: CascadeState, inputs: StepInputs,
                 params: CascadeParams) -> tuple[CascadeState, Directive, StepReport]:
    """Advance the cascade by one observation.

    The registration provider is called only when the proximity score strictly
    exceeds ``theta``. Explore escalates to verification and, on acceptance, to
    localization within the same step; a rejected or unlocalizable verification
    falls back to exploration.
    """
    s_relev = proximity_score(inputs.relevance)
    rep = StepReport(mode_seen=state.mode)
    state = replace(state, S_relev=s_relev, S_conf=math.nan)
    gate = s_relev > params.theta

    if state.mode is Mode.DONE:
        return state, Directive(DirectiveKind.STOP, state.committed_goal), rep

    if state.mode is Mode.EXPLORE:
        if not gate:
            return state, Directive(DirectiveKind.EXPLORE), rep
        rep.mode_seen = Mode.VERIFY
        try:
            s_conf = _verify(inputs, params)
        except LastMeterError as exc:
            rep.error = type(exc).__name__
            return state, Directive(DirectiveKind.EXPLORE), rep
        rep.verified = True
        state = replace(state, S_conf=s_conf, S_conf_best=max(state.S_conf_best, s_conf))
        if not s_conf > params.tau:
            return state, Directive(DirectiveKind.EXPLORE), rep
        rep.accepted = True
        try:
            goal = _localize(inputs, params)
        except (InsufficientBaseline, DegenerateConfiguration, TooFewFrames) as exc:
            rep.error = type(exc).__name__
            return state, Directive(DirectiveKind.EXPLORE), rep
        rep.localized = True
        state = replace(state, mode=Mode.LOCALIZE, committed_goal=goal)
        return state, Directive(DirectiveKind.GOTO, goal), rep

    # Localize
    changed = False
    if gate and params.refinement:
        try:
            s_conf = _verify(inputs, params)
        except LastMeterError as exc:
            rep.error = type(exc).__name__
            s_conf = None
        if s_conf is not None:
            rep.verified = True
            improved = s_conf > state.S_conf_best
            state = replace(state, S_conf=s_conf, S_conf_best=max(state.S_conf_best, s_conf))
            if improved:
                try:
                    goal = _localize(inputs, params)
                    changed = goal != state.committed_goal
                    state = replace(state, committed_goal=goal)
                    rep.refined = True
                    rep.localized = True
                except (InsufficientBaseline, DegenerateConfiguration, TooFewFrames) as exc:
                    rep.error = type(exc).__name__
    if inputs.arrived and not changed:
        state = replace(state, mode=Mode.DONE)
        return state, Directive(DirectiveKind.STOP, state.committed_goal), rep
    return state, Directive(DirectiveKind.GOTO, state.committed_goal), rep
