"""Discrete agent motion with swept-disc collision checking."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import Pose2D
from ..planner import Action
from .world import GridWorld


@dataclass(frozen=True)
class MoveResult:
    pose: Pose2D
    collided: bool = False
    blocked_at: tuple[float, float] | None = None   # first unsafe sample on the swept segment


def first_unsafe_point(world: GridWorld, p0, p1, r_agent: float):
    """First sample (quarter-cell spacing) along p0->p1 whose clearance is below r_agent."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    cs = world.cell_size
    n = max(1, int(math.ceil(np.linalg.norm(p1 - p0) / (0.25 * cs))))
    ts = np.linspace(0.0, 1.0, n + 1)
    pts = p0[None, :] + ts[:, None] * (p1 - p0)[None, :]
    cols = np.floor((pts[:, 0] - world.origin[0]) / cs).astype(int)
    rows = np.floor((pts[:, 1] - world.origin[1]) / cs).astype(int)
    h, w = world.shape
    inside = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    bad = ~inside
    bad[inside] = world.clearance[rows[inside], cols[inside]] < r_agent - 1e-12
    if not bad.any():
        return None
    k = int(np.argmax(bad))
    return float(pts[k, 0]), float(pts[k, 1])


def apply_action(world: GridWorld, pose: Pose2D, action: Action, step_size: float = 0.25,
                 turn_increment: float = 30.0, r_agent: float = 0.18) -> MoveResult:
    """Forward moves ``step_size`` along the heading unless the swept disc would come
    closer than ``r_agent`` to an obstacle; turns rotate in place."""
    action = Action(action)
    if action is Action.TURN_LEFT:
        return MoveResult(Pose2D(pose.x, pose.y, pose.yaw + turn_increment))
    if action is Action.TURN_RIGHT:
        return MoveResult(Pose2D(pose.x, pose.y, pose.yaw - turn_increment))
    if action is Action.STOP:
        return MoveResult(pose)
    th = math.radians(pose.yaw)
    nx = pose.x + step_size * math.cos(th)
    ny = pose.y + step_size * math.sin(th)
    bad = first_unsafe_point(world, (pose.x, pose.y), (nx, ny), r_agent)
    if bad is not None:
        return MoveResult(pose, True, bad)
    return MoveResult(Pose2D(nx, ny, pose.yaw))
