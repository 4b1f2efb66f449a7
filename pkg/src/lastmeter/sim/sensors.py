"""Depth raycasting and visibility sets."""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from ..bev import bearing_to_column, column_bearings
from ..errors import PoseOutsideWorld
from ..geometry import Pose2D
from ..grid import OBSTACLE
from .world import GridWorld


@njit(cache=True)
def _cast(occ, x, y, theta, cs, ox, oy, max_range):
    """Amanatides-Woo grid traversal; distance to the first obstacle cell boundary."""
    h, w = occ.shape
    dx = math.cos(theta)
    dy = math.sin(theta)
    gx = (x - ox) / cs
    gy = (y - oy) / cs
    c = int(math.floor(gx))
    r = int(math.floor(gy))
    if r < 0 or r >= h or c < 0 or c >= w:
        return 0.0
    if occ[r, c] == OBSTACLE:
        return 0.0
    inf = 1e300
    if dx > 0:
        step_c = 1
        t_max_x = (c + 1 - gx) / dx
        t_dx = 1.0 / dx
    elif dx < 0:
        step_c = -1
        t_max_x = (gx - c) / -dx
        t_dx = -1.0 / dx
    else:
        step_c = 0
        t_max_x = inf
        t_dx = inf
    if dy > 0:
        step_r = 1
        t_max_y = (r + 1 - gy) / dy
        t_dy = 1.0 / dy
    elif dy < 0:
        step_r = -1
        t_max_y = (gy - r) / -dy
        t_dy = -1.0 / dy
    else:
        step_r = 0
        t_max_y = inf
        t_dy = inf
    limit = max_range / cs
    while True:
        if t_max_x < t_max_y:
            t = t_max_x
            t_max_x += t_dx
            c += step_c
        else:
            t = t_max_y
            t_max_y += t_dy
            r += step_r
        if t >= limit:
            return max_range
        if r < 0 or r >= h or c < 0 or c >= w or occ[r, c] == OBSTACLE:
            return t * cs


@njit(cache=True)
def _cast_all(occ, x, y, thetas, cs, ox, oy, max_range):
    out = np.empty(thetas.shape[0])
    for k in range(thetas.shape[0]):
        out[k] = _cast(occ, x, y, thetas[k], cs, ox, oy, max_range)
    return out


def _check_pose(world: GridWorld, pose: Pose2D):
    if not world.is_free(pose.x, pose.y):
        raise PoseOutsideWorld(f"pose ({pose.x:.3f}, {pose.y:.3f}) is not on a free world cell")


def raycast_depth(world: GridWorld, pose: Pose2D, fov: float = 90.0, width: int = 61,
                  max_range: float = 10.0) -> np.ndarray:
    """Per-column depth to the first obstacle, clamped to ``max_range``; column 0 is leftmost."""
    _check_pose(world, pose)
    thetas = np.radians(pose.yaw + column_bearings(width, fov))
    d = _cast_all(world.occupancy, pose.x, pose.y, thetas, world.cell_size,
                  world.origin[0], world.origin[1], float(max_range))
    return np.clip(d, 1e-9, max_range)


def visible_mask_from_depth(world: GridWorld, pose: Pose2D, depth: np.ndarray, fov: float,
                            max_range: float) -> np.ndarray:
    """Cells seen by the depth scan: inside the field of view and no deeper than their
    column's return (plus three quarters of a cell so the struck obstacle cell counts)."""
    h, w = world.shape
    cs = world.cell_size
    ox, oy = world.origin
    R = int(math.ceil(max_range / cs)) + 1
    ar, ac = world.cell_of(pose.x, pose.y)
    r0, r1 = max(0, ar - R), min(h, ar + R + 1)
    c0, c1 = max(0, ac - R), min(w, ac + R + 1)
    dy = (oy + (np.arange(r0, r1) + 0.5) * cs - pose.y)[:, None]
    dx = (ox + (np.arange(c0, c1) + 0.5) * cs - pose.x)[None, :]
    rho = np.hypot(dx, dy)
    phi = (np.degrees(np.arctan2(dy, dx)) - pose.yaw + 180.0) % 360.0 - 180.0
    phi = np.where(rho < 1e-12, 0.0, phi)
    j = bearing_to_column(phi, depth.shape[0], fov)
    sub = (np.abs(phi) <= fov / 2.0) & (rho <= depth[j] + 0.75 * cs) & (rho <= max_range)
    out = np.zeros((h, w), dtype=bool)
    out[r0:r1, c0:c1] = sub
    out[ar, ac] = True
    return out


def scan(world: GridWorld, pose: Pose2D, fov: float = 90.0, width: int = 61,
         max_range: float = 10.0) -> tuple[np.ndarray, np.ndarray]:
    """Depth returns and visible cell set of a pose, memoised on the world per
    (pose, sensor) key. Both arrays are read-only."""
    key = (round(pose.x, 9), round(pose.y, 9), round(pose.yaw, 9), fov, width, max_range)
    cache = world._vis_cache
    hit = cache.get(key)
    if hit is None:
        depth = raycast_depth(world, pose, fov, width, max_range)
        mask = visible_mask_from_depth(world, pose, depth, fov, max_range)
        depth.setflags(write=False)
        mask.setflags(write=False)
        if len(cache) > 4096:
            cache.clear()
        hit = cache[key] = (depth, mask)
    return hit


def visible_mask(world: GridWorld, pose: Pose2D, fov: float = 90.0, width: int = 61,
                 max_range: float = 10.0) -> np.ndarray:
    return scan(world, pose, fov, width, max_range)[1]
