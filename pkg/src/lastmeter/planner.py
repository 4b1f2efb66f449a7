"""Fast Marching planning with a two-tier clearance mechanism and discrete local control."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit
from scipy import ndimage

from .errors import NoFreeSource, NoViableWaypoint
from .geometry import Pose2D, signed_angle_diff
from .grid import OBSTACLE, UNKNOWN, cell_to_world, segment_clear

EXCLUDED = math.inf


class Action(str, Enum):
    FORWARD = "Forward"
    TURN_LEFT = "TurnLeft"
    TURN_RIGHT = "TurnRight"
    STOP = "Stop"


@dataclass(frozen=True)
class PlannerParams:
    r_agent: float = 0.18
    r_safe: float = 0.5
    w_obs: float = 0.3
    lookahead: float = 1.5
    step_size: float = 0.25
    turn_increment: float = 30.0
    safe: bool = True

    def __post_init__(self):
        if not (0 < self.r_agent <= self.r_safe):
            raise ValueError("need 0 < r_agent <= r_safe")
        if self.w_obs < 0:
            raise ValueError("w_obs must be >= 0")
        if self.step_size <= 0 or self.lookahead <= 0:
            raise ValueError("step_size and lookahead must be positive")
        n = 360.0 / self.turn_increment
        if self.turn_increment <= 0 or abs(n - round(n)) > 1e-9:
            raise ValueError("turn_increment must divide 360")


@dataclass(frozen=True)
class DistanceField:
    values: np.ndarray
    sources: tuple
    cell_size: float
    origin: tuple = (0.0, 0.0)


@dataclass(frozen=True)
class ClearanceField:
    values: np.ndarray
    cell_size: float
    origin: tuple = (0.0, 0.0)


@njit(cache=True, inline="always")
def _line_of_sight(trav, r0, c0, r1, c1):
    """Exact supercover walk between cell centres; touching a vertex checks both side cells."""
    dr = r1 - r0
    dc = c1 - c0
    sr = 1 if dr > 0 else -1
    sc = 1 if dc > 0 else -1
    nr = abs(dr)
    nc = abs(dc)
    r = r0
    c = c0
    ir = 0
    ic = 0
    while ir < nr or ic < nc:
        # compare (0.5 + ir) / nr with (0.5 + ic) / nc without division
        lhs = (1 + 2 * ir) * nc
        rhs = (1 + 2 * ic) * nr
        if ir < nr and (ic >= nc or lhs < rhs):
            r += sr
            ir += 1
        elif ic < nc and (ir >= nr or rhs < lhs):
            c += sc
            ic += 1
        else:
            if not trav[r + sr, c] or not trav[r, c + sc]:
                return False
            r += sr
            c += sc
            ir += 1
            ic += 1
        if not trav[r, c]:
            return False
    return True


@njit(cache=True, inline="always")
def _sift_up(heap, hkey, pos, i, key):
    # indexed min-heap of cell ids with keys stored alongside; pos[cell] is the slot or -1
    x = heap[i]
    while i > 0:
        p = (i - 1) >> 1
        if hkey[p] <= key:
            break
        y = heap[p]
        heap[i] = y
        hkey[i] = hkey[p]
        pos[y] = i
        i = p
    heap[i] = x
    hkey[i] = key
    pos[x] = i


@njit(cache=True, inline="always")
def _heap_update(heap, hkey, pos, size, cell, key):
    i = pos[cell]
    if i < 0:
        heap[size] = cell
        _sift_up(heap, hkey, pos, size, key)
        return size + 1
    _sift_up(heap, hkey, pos, i, key)
    return size


@njit(cache=True, inline="always")
def _heap_pop(heap, hkey, pos, size):
    top = heap[0]
    pos[top] = -1
    size -= 1
    if size == 0:
        return top, size
    x = heap[size]
    key = hkey[size]
    i = 0
    while True:
        l = 2 * i + 1
        if l >= size:
            break
        m = l
        if l + 1 < size and hkey[l + 1] < hkey[l]:
            m = l + 1
        if key <= hkey[m]:
            break
        y = heap[m]
        heap[i] = y
        hkey[i] = hkey[m]
        pos[y] = i
        i = m
    heap[i] = x
    hkey[i] = key
    pos[x] = i
    return top, size


@njit(cache=True, inline="always")
def _solve2(a, b, h):
    # upwind solve of (x-a)^2 + (x-b)^2 = h^2, falling back to the one-sided update
    if a > b:
        a, b = b, a
    if b - a >= h:
        return a + h
    return 0.5 * (a + b + math.sqrt(2.0 * h * h - (a - b) * (a - b)))


@njit(cache=True)
def _fmm_kernel(trav_in, src_r, src_c, init_radius, target_in, n_target):
    H, W = trav_in.shape
    # one-cell False border so neighbour lookups need no bounds checks
    Wp = W + 2
    N = (H + 2) * Wp
    trav = np.zeros(N, np.bool_)
    for r in range(H):
        for c in range(W):
            trav[(r + 1) * Wp + c + 1] = trav_in[r, c]
    use_target = n_target > 0
    target = np.zeros(N, np.bool_)
    if use_target:
        for r in range(H):
            for c in range(W):
                target[(r + 1) * Wp + c + 1] = target_in[r, c]
    u = np.full(N, np.inf)
    known = np.zeros(N, np.bool_)
    heap = np.empty(N, np.int64)
    hkey = np.empty(N)
    pos = np.full(N, -1, np.int64)
    size = 0

    for k in range(src_r.shape[0]):
        i = (src_r[k] + 1) * Wp + src_c[k] + 1
        if u[i] > 0.0:
            u[i] = 0.0
            size = _heap_update(heap, hkey, pos, size, i, u[i])

    # Seed a small disc around each source with exact line-of-sight distances;
    # this removes most of the first-order error of point sources.
    R = int(init_radius)
    for k in range(src_r.shape[0]):
        r0, c0 = src_r[k], src_c[k]
        for dr in range(-R, R + 1):
            for dc in range(-R, R + 1):
                d = math.sqrt(dr * dr + dc * dc)
                if d == 0.0 or d > init_radius:
                    continue
                rr = r0 + dr
                cc = c0 + dc
                if rr < 0 or rr >= H or cc < 0 or cc >= W or not trav_in[rr, cc]:
                    continue
                i = (rr + 1) * Wp + cc + 1
                if d >= u[i]:
                    continue
                if _line_of_sight(trav_in, r0, c0, rr, cc):
                    u[i] = d
                    size = _heap_update(heap, hkey, pos, size, i, u[i])

    # uk holds accepted values only (inf elsewhere) so stencils need no known[] branches;
    # diag bit k marks that diagonal neighbour k can be used without cutting a corner
    uk = np.full(N, np.inf)
    diag = np.zeros(N, np.uint8)
    for j in range(Wp + 1, N - Wp - 1):
        if trav[j]:
            up = trav[j - Wp]
            dn = trav[j + Wp]
            lf = trav[j - 1]
            rt = trav[j + 1]
            diag[j] = (1 if up and lf else 0) | (2 if dn and rt else 0) | \
                (4 if up and rt else 0) | (8 if dn and lf else 0)

    sq2 = math.sqrt(2.0)
    remaining = n_target
    while size > 0:
        i, size = _heap_pop(heap, hkey, pos, size)
        known[i] = True
        uk[i] = u[i]
        if use_target and target[i]:
            remaining -= 1
            if remaining == 0:
                break
        for dr in range(-1, 2):
            for dc in range(-1, 2):
                if dr == 0 and dc == 0:
                    continue
                j = i + dr * Wp + dc
                if known[j] or not trav[j]:
                    continue
                a = min(uk[j - 1], uk[j + 1])
                b = min(uk[j - Wp], uk[j + Wp])
                new = _solve2(a, b, 1.0)
                m = diag[j]
                p = np.inf
                q = np.inf
                if m & 1:
                    p = uk[j - Wp - 1]
                if m & 2:
                    p = min(p, uk[j + Wp + 1])
                if m & 4:
                    q = uk[j - Wp + 1]
                if m & 8:
                    q = min(q, uk[j + Wp - 1])
                if p < np.inf or q < np.inf:
                    alt = _solve2(p, q, sq2)
                    if alt < new:
                        new = alt
                if new < u[j]:
                    u[j] = new
                    size = _heap_update(heap, hkey, pos, size, j, new)

    out = np.full((H, W), np.inf)
    for r in range(H):
        for c in range(W):
            i = (r + 1) * Wp + c + 1
            if known[i]:
                out[r, c] = u[i]
    return out


def traversable_mask(occupancy: np.ndarray) -> np.ndarray:
    """Free and Unknown cells are traversable; the planner is optimistic about Unknown."""
    return np.asarray(occupancy) != OBSTACLE


def fmm_distance(grid, sources, traversable=None, targets=None, init_radius: float = 2.0) -> DistanceField:
    """Geodesic distance (metres) from ``sources`` by first-order upwind Fast Marching.

    ``grid`` is anything with ``occupancy`` and ``cell_size`` (a GridMap or GridWorld).
    ``traversable`` overrides the default mask (not Obstacle). When ``targets`` is a
    boolean mask the march stops once all reachable targets are accepted; cells not
    accepted by then are reported as +inf.
    """
    occ = np.asarray(grid.occupancy)
    trav = traversable_mask(occ) if traversable is None else np.asarray(traversable, dtype=bool)
    src = np.asarray(list(sources), dtype=np.int64).reshape(-1, 2)
    if src.shape[0] == 0:
        raise NoFreeSource("no source cells given")
    h, w = occ.shape
    inside = (src[:, 0] >= 0) & (src[:, 0] < h) & (src[:, 1] >= 0) & (src[:, 1] < w)
    src = src[inside]
    if src.shape[0] == 0 or not np.any(occ[src[:, 0], src[:, 1]] != OBSTACLE):
        raise NoFreeSource("every source cell is an obstacle or out of bounds")
    src = src[occ[src[:, 0], src[:, 1]] != OBSTACLE]
    if targets is None:
        tgt = np.zeros((1, 1), dtype=np.bool_)
        n_target = 0
    else:
        tgt = np.asarray(targets, dtype=np.bool_)
        n_target = int(tgt.sum())
        if n_target == 0:
            tgt = np.zeros((1, 1), dtype=np.bool_)
    u = _fmm_kernel(np.ascontiguousarray(trav), np.ascontiguousarray(src[:, 0]),
                    np.ascontiguousarray(src[:, 1]), float(init_radius), tgt, n_target)
    origin = tuple(getattr(grid, "origin", (0.0, 0.0)))
    return DistanceField(u * grid.cell_size, tuple(map(tuple, src.tolist())), grid.cell_size, origin)


@njit(cache=True)
def _los_mask(trav, r0, c0, R):
    h, w = trav.shape
    out = np.zeros((h, w), dtype=np.bool_)
    if not trav[r0, c0]:
        return out
    for r in range(max(0, r0 - R), min(h, r0 + R + 1)):
        for c in range(max(0, c0 - R), min(w, c0 + R + 1)):
            if (r - r0) * (r - r0) + (c - c0) * (c - c0) <= R * R and trav[r, c]:
                out[r, c] = _line_of_sight(trav, r0, c0, r, c)
    return out


def line_of_sight_mask(traversable: np.ndarray, cell, radius_cells: int) -> np.ndarray:
    """Cells within ``radius_cells`` reachable from ``cell`` along a straight traversable line."""
    return _los_mask(np.ascontiguousarray(traversable, dtype=np.bool_), int(cell[0]), int(cell[1]),
                     int(radius_cells))


def edt(grid, max_range: float = math.inf) -> ClearanceField:
    """Exact Euclidean distance (metres) from each cell centre to the nearest Obstacle centre."""
    occ = np.asarray(grid.occupancy)
    origin = tuple(getattr(grid, "origin", (0.0, 0.0)))
    obstacle = occ == OBSTACLE
    if not obstacle.any():
        return ClearanceField(np.full(occ.shape, float(max_range)), grid.cell_size, origin)
    values = ndimage.distance_transform_edt(~obstacle) * grid.cell_size
    return ClearanceField(np.minimum(values, max_range), grid.cell_size, origin)


def adjusted_cost(d: float, clearance: float, params: PlannerParams) -> float:
    """Clearance-adjusted distance; returns EXCLUDED (+inf) inside the hard exclusion zone."""
    if clearance < params.r_agent:
        return EXCLUDED
    bonus = params.w_obs * min(clearance, params.r_safe) / params.r_safe
    return max(0.0, d - bonus)


def adjusted_cost_field(d: np.ndarray, clearance: np.ndarray, params: PlannerParams,
                        unknown: np.ndarray | None = None) -> np.ndarray:
    if not params.safe:
        return np.asarray(d, dtype=float).copy()
    bonus = params.w_obs * np.minimum(clearance, params.r_safe) / params.r_safe
    if unknown is not None:
        bonus = np.where(unknown, 0.0, bonus)
    cost = np.maximum(0.0, d - bonus)
    cost[clearance < params.r_agent] = EXCLUDED
    return cost


def select_waypoint(dist: DistanceField, clearance: ClearanceField, agent: Pose2D,
                    params: PlannerParams, reachable: np.ndarray | None = None,
                    unknown: np.ndarray | None = None) -> tuple[int, int]:
    """Cell within ``lookahead`` of the agent minimising the clearance-adjusted cost.

    Ties go to the smaller raw distance, then to the smaller row-major index.
    """
    d = dist.values
    h, w = d.shape
    cs = dist.cell_size
    ox, oy = dist.origin
    R = int(math.ceil(params.lookahead / cs)) + 1
    ar = int(math.floor((agent.y - oy) / cs))
    ac = int(math.floor((agent.x - ox) / cs))
    r0, r1 = max(0, ar - R), min(h, ar + R + 1)
    c0, c1 = max(0, ac - R), min(w, ac + R + 1)
    if r0 >= r1 or c0 >= c1:
        raise NoViableWaypoint("agent outside the distance field")
    rows = np.arange(r0, r1)
    cols = np.arange(c0, c1)
    cy = oy + (rows + 0.5) * cs
    cx = ox + (cols + 0.5) * cs
    dx = cx[None, :] - agent.x
    dy = cy[:, None] - agent.y
    within = dx * dx + dy * dy <= params.lookahead ** 2 + 1e-12
    dsub = d[r0:r1, c0:c1]
    csub = clearance.values[r0:r1, c0:c1]
    usub = None if unknown is None else unknown[r0:r1, c0:c1]
    cost = adjusted_cost_field(dsub, csub, params, usub)
    valid = within & np.isfinite(dsub) & np.isfinite(cost)
    if reachable is not None:
        valid &= reachable[r0:r1, c0:c1]
    if not valid.any():
        raise NoViableWaypoint("every candidate within the lookahead is excluded or unreachable")
    rr, cc = np.nonzero(valid)
    flat = (rr + r0) * w + (cc + c0)
    order = np.lexsort((flat, dsub[rr, cc], cost[rr, cc]))
    k = order[0]
    return int(rr[k] + r0), int(cc[k] + c0)


def local_step(agent: Pose2D, waypoint_xy, params: PlannerParams) -> Action:
    """Turn toward the waypoint until within half a turn increment, then go forward."""
    dx = waypoint_xy[0] - agent.x
    dy = waypoint_xy[1] - agent.y
    if math.hypot(dx, dy) < 1e-9:
        return Action.FORWARD
    err = signed_angle_diff(math.degrees(math.atan2(dy, dx)), agent.yaw)
    if abs(err) > params.turn_increment / 2.0:
        return Action.TURN_LEFT if err > 0 else Action.TURN_RIGHT
    return Action.FORWARD


def align_step(yaw: float, target_yaw: float, increment: float) -> Action | None:
    """Turn toward ``target_yaw``; None once within half an increment."""
    err = signed_angle_diff(target_yaw, yaw)
    if abs(err) <= increment / 2.0 + 1e-9:
        return None
    return Action.TURN_LEFT if err > 0 else Action.TURN_RIGHT


def approach_step(agent: Pose2D, target_xy, params: PlannerParams, clearance: ClearanceField,
                  tolerance: float) -> Action | None:
    """Greedy terminal approach over the reachable one-step headings.

    Returns None when the agent is within ``tolerance`` of the target or when no
    safe forward step (after turning) would bring it closer.
    """
    tx, ty = float(target_xy[0]), float(target_xy[1])
    here = math.hypot(tx - agent.x, ty - agent.y)
    if here <= tolerance:
        return None
    n = int(round(360.0 / params.turn_increment))
    best_k, best_d = None, here - 1e-9
    for k in range(n):
        yaw = math.radians(agent.yaw + k * params.turn_increment)
        nx = agent.x + params.step_size * math.cos(yaw)
        ny = agent.y + params.step_size * math.sin(yaw)
        dist = math.hypot(tx - nx, ty - ny)
        if dist >= best_d:
            continue
        if not segment_clear(clearance.values, (agent.x, agent.y), (nx, ny), params.r_agent,
                             clearance.cell_size, clearance.origin):
            continue
        best_k, best_d = k, dist
    if best_k is None:
        return None
    if best_k == 0:
        return Action.FORWARD
    return Action.TURN_LEFT if best_k <= n // 2 else Action.TURN_RIGHT


def waypoint_world(cell, cell_size: float, origin=(0.0, 0.0)) -> tuple[float, float]:
    return cell_to_world(cell[0], cell[1], cell_size, origin)


def safe_traversable(occupancy: np.ndarray, clearance: ClearanceField, params: PlannerParams) -> np.ndarray:
    """Traversability used for planning: in safe mode cells inside the exclusion zone are blocked."""
    trav = traversable_mask(occupancy)
    if params.safe:
        trav &= clearance.values >= params.r_agent
    return trav


def unknown_mask(occupancy: np.ndarray) -> np.ndarray:
    return np.asarray(occupancy) == UNKNOWN
