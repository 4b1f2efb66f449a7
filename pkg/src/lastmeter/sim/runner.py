"""The observe / map / cascade / act loop for one episode."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..bev import (ProjectionParams, accumulate, compress_to_ray, project_step_relevance,
                   update_occupancy)
from ..cascade import (CascadeParams, CascadeState, DirectiveKind, Keyframe, MemoryCache, Mode,
                       StepInputs, step_cascade)
from ..frontier import FrontierWeights
from ..geometry import heading_error, position_error
from ..grid import OBSTACLE, GridMap
from ..planner import Action, PlannerParams
from ..policy import MapView, Navigator
from ..providers import (RegistrationProviderSpec, RelevanceProviderSpec, SensorSpec,
                         goal_overlap, make_registration_provider, make_relevance_provider)
from .episodes import Episode
from .kinematics import apply_action
from .sensors import scan
from .world import GridWorld


@dataclass(frozen=True)
class SystemConfig:
    projection: ProjectionParams = ProjectionParams()
    frontier: FrontierWeights = FrontierWeights()
    planner: PlannerParams = PlannerParams()
    cascade: CascadeParams = CascadeParams()
    relevance: RelevanceProviderSpec = RelevanceProviderSpec()
    registration: RegistrationProviderSpec = RegistrationProviderSpec()
    min_cluster: int = 5
    # frontier S_norm cap follows the cascade gate unless set explicitly
    tie_theta: bool = True

    @property
    def sensor(self) -> SensorSpec:
        p = self.projection
        return SensorSpec(p.fov, p.width, p.max_range)

    def resolved_weights(self) -> FrontierWeights:
        if self.tie_theta:
            return replace(self.frontier, theta_relev=self.cascade.theta)
        return self.frontier


@dataclass
class EpisodeResult:
    episode_id: str
    success: bool
    stopped: bool
    steps: int
    path_length: float
    geodesic: float
    eps_pos: float
    eps_head: float
    eps_head_mod360: float
    final_pose: dict
    committed_goal: dict | None
    failure: str | None
    collisions: int
    min_clearance: float
    relevance_calls: int
    registration_calls: int
    trace: list = field(default_factory=list, repr=False)
    final_grid: GridMap | None = field(default=None, repr=False)

    def record(self) -> dict:
        """Per-episode summary without the trace or map (JSON-serialisable)."""
        d = {k: v for k, v in self.__dict__.items() if k not in ("trace", "final_grid")}
        return _clean(d)


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.floating):
        return _clean(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _episode_seed(base: int, episode_seed: int) -> int:
    return (int(base) * 1_000_003 + int(episode_seed)) % (2**32)


def _bump(grid: GridMap, world: GridWorld, point, radius: float):
    """Contact sensing: reveal true obstacle cells around the blocked point."""
    cs = world.cell_size
    R = int(math.ceil(radius / cs))
    r0, c0 = world.cell_of(*point)
    h, w = world.shape
    rs = slice(max(0, r0 - R), min(h, r0 + R + 1))
    cs_ = slice(max(0, c0 - R), min(w, c0 + R + 1))
    rr, cc = np.mgrid[rs, cs_]
    near = (rr - r0) ** 2 + (cc - c0) ** 2 <= R * R
    hit = near & (world.occupancy[rs, cs_] == OBSTACLE)
    grid.occupancy[rr[hit], cc[hit]] = OBSTACLE


def run_episode(episode: Episode, config: SystemConfig = SystemConfig(), record_trace: bool = True,
                providers=None) -> EpisodeResult:
    """Run one episode to Stop or the step budget.

    ``providers`` optionally overrides the (relevance, registration) callables,
    e.g. with recorders or call counters.
    """
    world = episode.world
    P = config.planner
    sensor = config.sensor
    proj = config.projection
    rel_spec = replace(config.relevance, seed=_episode_seed(config.relevance.seed, episode.seed))
    reg_spec = replace(config.registration,
                       seed=_episode_seed(config.registration.seed, episode.seed))
    if providers is None:
        relevance = make_relevance_provider(rel_spec, world, episode.goal, sensor)
        register = make_registration_provider(reg_spec, world, episode.goal, sensor)
    else:
        relevance, register = providers

    grid = GridMap.unknown(world.shape, world.cell_size, world.origin)
    nav = Navigator(P, config.resolved_weights(), config.min_cluster, world.shape,
                    config.cascade.fine_turn, config.cascade.stop_tolerance)
    memory = MemoryCache()
    state = CascadeState()
    pose = episode.start
    trace: list[dict] = []
    forwards = 0
    collisions = 0
    min_clear = float(world.clearance[world.cell_of(pose.x, pose.y)])
    stopped = False
    steps = 0

    for t in range(episode.max_steps):
        steps = t + 1
        depth, vis = scan(world, pose, sensor.fov, sensor.width, sensor.max_range)
        rr, cc = np.nonzero(vis)
        update_occupancy(grid, rr, cc, world.occupancy[rr, cc])
        image = relevance(pose, t)
        ray = compress_to_ray(image, proj.sigma_h)
        accumulate(grid, project_step_relevance(ray, depth, pose, proj, grid))
        memory.push(Keyframe(t, pose, depth))

        view = MapView.build(grid, P)
        arrived = False
        if state.mode is Mode.LOCALIZE:
            arrived = nav.near_goal(view, pose, state.committed_goal) and \
                nav.terminal(view, pose, state.committed_goal) is None

        state, directive, rep = step_cascade(
            state, StepInputs(t, image, memory, register, arrived), config.cascade)

        turn = P.turn_increment
        if directive.kind is DirectiveKind.STOP:
            action, info = Action.STOP, None
        elif directive.kind is DirectiveKind.GOTO:
            action, turn, info = nav.goto(view, pose, directive.goal)
            if action is None:
                # goal replaced this step but already satisfied: settle on the next step
                action, turn = Action.TURN_LEFT, 0.0
        else:
            if rep.verified and not rep.accepted:
                # the goal view is close but the heading may be wrong: sweep headings here
                nav.look_around(pose)
            action, info = nav.explore(view, pose)

        rec = None
        if record_trace:
            gd = math.hypot(pose.x - episode.goal.x, pose.y - episode.goal.y)
            rec = {"step": t, "pose": pose.to_dict(), "mode": rep.mode_seen.value,
                   "mode_after": state.mode.value, "S_relev": state.S_relev,
                   "S_conf": state.S_conf, "S_conf_best": state.S_conf_best,
                   "verified": rep.verified, "accepted": rep.accepted,
                   "localized": rep.localized, "refined": rep.refined, "error": rep.error,
                   "goal": state.committed_goal.to_dict() if state.committed_goal else None,
                   "dist_to_goal": gd, "action": action.value, "turn": turn}
            if rep.accepted:
                rec["true_overlap"] = goal_overlap([pose], episode.goal, world, sensor)
            if info is not None:
                rec["no_waypoint"] = info.no_waypoint
                rec["fallback"] = info.fallback

        if action is Action.STOP:
            stopped = True
            if rec is not None:
                rec["collision"] = False
                trace.append(_clean(rec))
            break
        moved = apply_action(world, pose, action, P.step_size, turn, P.r_agent)
        if moved.collided:
            collisions += 1
            _bump(grid, world, moved.blocked_at, P.r_agent + world.cell_size)
        elif action is Action.FORWARD:
            forwards += 1
        pose = moved.pose
        min_clear = min(min_clear, float(world.clearance[world.cell_of(pose.x, pose.y)]))
        if rec is not None:
            rec["collision"] = moved.collided
            trace.append(_clean(rec))

    eps_pos = position_error(pose, episode.goal)
    success = stopped and eps_pos <= episode.success_radius
    return EpisodeResult(
        episode_id=episode.episode_id,
        success=bool(success),
        stopped=stopped,
        steps=steps,
        path_length=forwards * P.step_size,
        geodesic=episode.geodesic,
        eps_pos=eps_pos,
        eps_head=heading_error(pose.yaw, episode.goal.yaw, "mod180"),
        eps_head_mod360=heading_error(pose.yaw, episode.goal.yaw, "mod360"),
        final_pose=pose.to_dict(),
        committed_goal=state.committed_goal.to_dict() if state.committed_goal else None,
        failure=None if stopped else "StepBudget",
        collisions=collisions,
        min_clearance=min_clear,
        relevance_calls=getattr(relevance, "calls", -1),
        registration_calls=getattr(register, "calls", -1),
        trace=trace,
        final_grid=grid,
    )


def trace_jsonl(result: EpisodeResult) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in result.trace)
