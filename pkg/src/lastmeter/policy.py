"""Agent-side navigation: frontier exploration and goal approach on the agent's own map."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .bev import extract_frontiers
from .errors import NoFreeSource, NoViableWaypoint
from .frontier import FrontierWeights, frontier_inputs, score_frontiers, select_frontier
from .geometry import Pose2D, signed_angle_diff
from .grid import GridMap, cell_to_world, segment_clear
from .planner import (Action, ClearanceField, PlannerParams, align_step, approach_step, edt,
                      fmm_distance, line_of_sight_mask, local_step, safe_traversable,
                      select_waypoint, unknown_mask)


@dataclass
class NavInfo:
    """Per-step bookkeeping surfaced in the trace."""

    target: tuple[float, float] | None = None
    no_waypoint: bool = False
    fallback: bool = False
    n_frontiers: int = 0


@dataclass
class MapView:
    grid: GridMap
    clearance: ClearanceField
    trav: np.ndarray
    unknown: np.ndarray

    @classmethod
    def build(cls, grid: GridMap, params: PlannerParams) -> "MapView":
        clearance = edt(grid, max_range=max(params.r_safe, 1.0))
        return cls(grid, clearance, safe_traversable(grid.occupancy, clearance, params),
                   unknown_mask(grid.occupancy))

    def cell(self, x: float, y: float) -> tuple[int, int]:
        g = self.grid
        return (int(math.floor((y - g.origin[1]) / g.cell_size)),
                int(math.floor((x - g.origin[0]) / g.cell_size)))


class Navigator:
    WATCH_STEPS = 15
    WATCH_GAIN = 0.1          # metres of progress expected per watch window
    LOOK_RADIUS = 1.0         # metres blacklisted after a look-around
    HYSTERESIS = 0.05         # score bonus for keeping the previous target
    STALL_STEPS = 24
    STALL_RADIUS = 0.3

    def __init__(self, params: PlannerParams, weights: FrontierWeights, min_cluster: int,
                 shape, fine_turn: float | None = None, stop_tolerance: float = 0.15):
        self.params = params
        self.weights = weights
        self.min_cluster = min_cluster
        self.fine_turn = fine_turn
        self.stop_tolerance = stop_tolerance
        self.blacklist = np.zeros(shape, dtype=bool)
        self.pending_turns = 0
        self._watch_target = None
        self._watch_best = math.inf
        self._watch_count = 0
        self._prev_target = None
        self._fb_target: tuple[int, int] | None = None
        self._looked: list[tuple[float, float]] = []
        self._recent: deque = deque(maxlen=self.STALL_STEPS)

    # -- helpers ---------------------------------------------------------------------------

    def _lookahead_mask(self, view: MapView, pose: Pose2D) -> np.ndarray:
        cs = view.grid.cell_size
        R = int(math.ceil(self.params.lookahead / cs))
        return line_of_sight_mask(view.trav, view.cell(pose.x, pose.y), R)

    def _follow(self, view: MapView, pose: Pose2D, sources) -> tuple[Action, tuple[float, float]]:
        """One control action along the distance field grown from ``sources``."""
        reach = self._lookahead_mask(view, pose)
        if not reach.any():
            raise NoViableWaypoint("agent cell is not traversable")
        dist = fmm_distance(view.grid, sources, traversable=view.trav, targets=reach)
        wp = select_waypoint(dist, view.clearance, pose, self.params, reachable=reach,
                             unknown=view.unknown)
        wxy = cell_to_world(wp[0], wp[1], view.grid.cell_size, view.grid.origin)
        # local_step converges on the lattice heading nearest the waypoint bearing; if a step
        # along that heading is unsafe, descend the field instead so the two never alternate
        inc = self.params.turn_increment
        bearing = math.degrees(math.atan2(wxy[1] - pose.y, wxy[0] - pose.x))
        k = round(signed_angle_diff(bearing, pose.yaw) / inc)
        if self._step_safe(view, pose, pose.yaw + k * inc):
            return local_step(pose, wxy, self.params), wxy
        return self._descend(view, pose, dist.values), wxy

    def _step_safe(self, view: MapView, pose: Pose2D, yaw: float) -> bool:
        p = self.params
        th = math.radians(yaw)
        end = (pose.x + p.step_size * math.cos(th), pose.y + p.step_size * math.sin(th))
        return segment_clear(view.clearance.values, (pose.x, pose.y), end, p.r_agent,
                             view.grid.cell_size, view.grid.origin)

    def _descend(self, view: MapView, pose: Pose2D, field: np.ndarray) -> Action:
        """Discrete-heading descent of ``field``: the safe one-step move that lowers it most."""
        p = self.params
        n = int(round(360.0 / p.turn_increment))
        h, w = field.shape
        best_k, best_v = None, math.inf
        for k in range(n):
            yaw = pose.yaw + k * p.turn_increment
            th = math.radians(yaw)
            r, c = view.cell(pose.x + p.step_size * math.cos(th), pose.y + p.step_size * math.sin(th))
            if not (0 <= r < h and 0 <= c < w) or not math.isfinite(field[r, c]):
                continue
            if field[r, c] < best_v - 1e-12 and self._step_safe(view, pose, yaw):
                best_k, best_v = k, field[r, c]
        if best_k is None:
            raise NoViableWaypoint("no safe heading descends the distance field")
        if best_k == 0:
            return Action.FORWARD
        return Action.TURN_LEFT if best_k <= n // 2 else Action.TURN_RIGHT

    def look_around(self, pose: Pose2D) -> bool:
        """Queue a full turn in place unless one was already made near ``pose``."""
        if self.pending_turns > 0 or any(math.hypot(pose.x - x, pose.y - y) < self.LOOK_RADIUS
                                         for x, y in self._looked):
            return False
        self._looked.append((pose.x, pose.y))
        self.pending_turns = int(round(360.0 / self.params.turn_increment)) - 1
        return True

    def _blacklist_cells(self, cells, radius_cells: int):
        mask = np.zeros_like(self.blacklist)
        mask[cells[:, 0], cells[:, 1]] = True
        if radius_cells > 0:
            mask = ndimage.binary_dilation(mask, iterations=radius_cells)
        self.blacklist |= mask

    def _stalled(self, pose: Pose2D) -> bool:
        """True when exploration has kept the agent within a small disc for a whole window."""
        self._recent.append((pose.x, pose.y))
        if len(self._recent) < self._recent.maxlen:
            return False
        pts = np.asarray(self._recent)
        return bool(np.max(np.hypot(*(pts - pts[0]).T)) < self.STALL_RADIUS)

    def _watch(self, key, D: float) -> bool:
        """True when the current target has not drawn nearer for a whole window."""
        if key != self._watch_target:
            self._watch_target, self._watch_best, self._watch_count = key, D, 0
            return False
        if D < self._watch_best - self.WATCH_GAIN:
            self._watch_best, self._watch_count = D, 0
            return False
        self._watch_count += 1
        return self._watch_count >= self.WATCH_STEPS

    # -- exploration ----------------------------------------------------------------------

    def explore(self, view: MapView, pose: Pose2D) -> tuple[Action, NavInfo]:
        info = NavInfo()
        if self.pending_turns > 0:
            self.pending_turns -= 1
            return Action.TURN_LEFT, info
        for _ in range(3):
            frontiers = [f for f in extract_frontiers(view.grid, self.min_cluster)
                         if self.blacklist[f.cells[:, 0], f.cells[:, 1]].mean() <= 0.5]
            info.n_frontiers = len(frontiers)
            if not frontiers:
                break
            mask = np.zeros(view.grid.shape, dtype=bool)
            for f in frontiers:
                mask[f.cells[:, 0], f.cells[:, 1]] = True
            agent = view.cell(pose.x, pose.y)
            dist = fmm_distance(view.grid, [agent], traversable=view.trav, targets=mask).values
            frontiers = [f for f in frontier_inputs(frontiers, view.grid, pose, dist)
                         if math.isfinite(f.D)]
            if not frontiers:
                break
            scored = score_frontiers(frontiers, self.weights)
            if self._prev_target is not None:
                # hysteresis: the heading term changes as the agent turns, which would
                # otherwise let two frontiers trade places every step
                px, py = self._prev_target
                scored = [replace(sf, score=sf.score + self.HYSTERESIS)
                          if math.hypot(sf.frontier.centroid[0] - px,
                                        sf.frontier.centroid[1] - py) <= 0.5 else sf
                          for sf in scored]
            best = select_frontier(scored).frontier
            info.target = best.centroid
            self._prev_target = best.centroid
            cs = view.grid.cell_size
            key = (round(best.centroid[0] / 0.5), round(best.centroid[1] / 0.5))
            if self._watch(key, best.D) or self._stalled(pose):
                self._blacklist_cells(best.cells, int(round(0.25 / cs)))
                self._watch_target = None
                self._prev_target = None
                self._recent.clear()
                continue
            try:
                action, _ = self._follow(view, pose, [tuple(c) for c in best.cells])
                return action, info
            except (NoViableWaypoint, NoFreeSource):
                info.no_waypoint = True
                self._blacklist_cells(best.cells, int(round(0.25 / cs)))
        return self._fallback(view, pose, info)

    def _fallback(self, view: MapView, pose: Pose2D, info: NavInfo) -> tuple[Action, NavInfo]:
        """No usable frontier: visit the strongest relevance peaks and look around at each."""
        info.fallback = True
        grid = view.grid
        cs = grid.cell_size
        agent = view.cell(pose.x, pose.y)
        dist = fmm_distance(grid, [agent], traversable=view.trav).values
        tgt = self._fb_target
        if tgt is None or self.blacklist[tgt] or not math.isfinite(dist[tgt]):
            # relevance is re-accumulated every view, so the peak is picked once and kept
            cand = (grid.relevance > 0) & np.isfinite(dist) & ~self.blacklist
            if not cand.any():
                cand = np.isfinite(dist) & ~self.blacklist & view.trav
            if not cand.any():
                info.no_waypoint = True
                return Action.TURN_LEFT, info
            rr, cc = np.nonzero(cand)
            order = np.lexsort((rr * grid.shape[1] + cc, dist[rr, cc], -grid.relevance[rr, cc]))
            tgt = self._fb_target = (int(rr[order[0]]), int(cc[order[0]]))
        tr, tc = tgt
        txy = cell_to_world(tr, tc, cs, grid.origin)
        info.target = txy
        reached = math.hypot(txy[0] - pose.x, txy[1] - pose.y) <= 0.3
        if reached or self._watch(("fallback", tgt), dist[tgt] * cs):
            if reached:
                self.look_around(pose)
            self._blacklist_cells(np.array([[tr, tc]]), int(round(self.LOOK_RADIUS / cs)))
            self._fb_target = None
            self._watch_target = None
            return Action.TURN_LEFT, info
        try:
            action, _ = self._follow(view, pose, [(tr, tc)])
            return action, info
        except (NoViableWaypoint, NoFreeSource):
            info.no_waypoint = True
            self._blacklist_cells(np.array([[tr, tc]]), 2)
            self._fb_target = None
            return Action.TURN_LEFT, info

    # -- goal reaching ---------------------------------------------------------------------

    def _goal_source(self, view: MapView, goal: Pose2D) -> tuple[int, int]:
        """The goal cell, or the nearest traversable cell when the goal itself is not."""
        h, w = view.grid.shape
        r, c = view.cell(goal.x, goal.y)
        r = min(max(r, 0), h - 1)
        c = min(max(c, 0), w - 1)
        if view.trav[r, c]:
            return r, c
        _, idx = ndimage.distance_transform_edt(~view.trav, return_indices=True)
        return int(idx[0][r, c]), int(idx[1][r, c])

    def terminal(self, view: MapView, pose: Pose2D, goal: Pose2D) -> tuple[Action, float] | None:
        """Final approach then in-place alignment; None once both are complete."""
        p = self.params
        act = approach_step(pose, (goal.x, goal.y), p, view.clearance, self.stop_tolerance)
        if act is not None:
            return act, p.turn_increment
        act = align_step(pose.yaw, goal.yaw, p.turn_increment)
        if act is not None:
            return act, p.turn_increment
        if self.fine_turn is not None:
            act = align_step(pose.yaw, goal.yaw, self.fine_turn)
            if act is not None:
                return act, self.fine_turn
        return None

    def near_goal(self, view: MapView, pose: Pose2D, goal: Pose2D) -> bool:
        """Close enough for the greedy terminal maneuver to take over."""
        p = self.params
        d = math.hypot(goal.x - pose.x, goal.y - pose.y)
        if d <= p.lookahead and segment_clear(view.clearance.values, (pose.x, pose.y),
                                              (goal.x, goal.y), p.r_agent, view.grid.cell_size,
                                              view.grid.origin):
            return True
        src = self._goal_source(view, goal)
        sxy = cell_to_world(src[0], src[1], view.grid.cell_size, view.grid.origin)
        return math.hypot(sxy[0] - pose.x, sxy[1] - pose.y) <= p.step_size

    def goto(self, view: MapView, pose: Pose2D, goal: Pose2D) -> tuple[Action | None, float, NavInfo]:
        info = NavInfo(target=(goal.x, goal.y))
        if self.near_goal(view, pose, goal):
            out = self.terminal(view, pose, goal)
            if out is None:
                return None, 0.0, info
            return out[0], out[1], info
        try:
            action, _ = self._follow(view, pose, [self._goal_source(view, goal)])
            return action, self.params.turn_increment, info
        except (NoViableWaypoint, NoFreeSource):
            info.no_waypoint = True
            out = self.terminal(view, pose, goal)
            if out is None:
                return None, 0.0, info
            return out[0], out[1], info
