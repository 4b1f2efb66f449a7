"""Adaptive gated frontier scoring and selection."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numba
import numpy as np
from scipy import ndimage

from .bev import Frontier
from .errors import EmptyInput, NonpositiveDistance
from .geometry import Pose2D, signed_angle_diff
from .grid import UNKNOWN, GridMap, disc_offsets

DEFAULT_THETA = 0.0014


@dataclass(frozen=True)
class FrontierWeights:
    w_s: float = 0.60
    w_d: float = 0.55
    w_h: float = 0.35
    w_e: float = 0.10
    theta_relev: float = DEFAULT_THETA
    # "full" or one of the single-term ablations
    variant: str = "full"

    def __post_init__(self):
        if min(self.w_s, self.w_d, self.w_h, self.w_e) < 0:
            raise ValueError("frontier weights must be non-negative")
        if not self.theta_relev > 0:
            raise ValueError("theta_relev must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown scoring variant {self.variant!r}")


VARIANTS = ("full", "s_only", "d_only", "e_only")


@dataclass(frozen=True)
class ScoredFrontier:
    frontier: Frontier
    S_norm: float
    D_norm: float
    H_norm: float
    E_norm: float
    score: float


def norm_stat(values) -> np.ndarray:
    """Map values through 0.5 + 0.5 tanh(z-score); a zero-variance list maps to 0.5."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise EmptyInput("norm_stat needs at least one value")
    std = float(x.std())
    if std < 1e-12:
        return np.full(x.shape, 0.5)
    return 0.5 + 0.5 * np.tanh((x - x.mean()) / std)


def composite_score(S_norm, D_norm, H_norm, E_norm, w: FrontierWeights):
    return w.w_s * S_norm + (1.0 - S_norm) * (w.w_d * D_norm + w.w_h * H_norm) + w.w_e * E_norm


def score_frontiers(frontiers: list[Frontier], weights: FrontierWeights) -> list[ScoredFrontier]:
    if not frontiers:
        raise EmptyInput("no frontiers to score")
    D = np.array([f.D for f in frontiers], dtype=float)
    if np.any(~(D > 0)):
        raise NonpositiveDistance("frontier distances must be positive")
    S = np.array([f.S for f in frontiers], dtype=float)
    A = np.array([f.A for f in frontiers], dtype=float)
    E = np.array([f.E for f in frontiers], dtype=float)
    s_norm = np.minimum(S / weights.theta_relev, 1.0)
    d_norm = norm_stat(1.0 / D)
    h_norm = norm_stat(1.0 - A / 180.0)
    e_norm = norm_stat(E)
    if weights.variant == "full":
        scores = composite_score(s_norm, d_norm, h_norm, e_norm, weights)
    elif weights.variant == "s_only":
        scores = s_norm.copy()
    elif weights.variant == "d_only":
        scores = d_norm.copy()
    else:
        scores = e_norm.copy()
    return [ScoredFrontier(f, float(s), float(d), float(h), float(e), float(sc))
            for f, s, d, h, e, sc in zip(frontiers, s_norm, d_norm, h_norm, e_norm, scores)]


def select_frontier(scored: list[ScoredFrontier]) -> ScoredFrontier:
    """Highest score; ties go to the smaller D, then to the frontier's raster key."""
    if not scored:
        raise EmptyInput("nothing to select from")
    return min(scored, key=lambda s: (-s.score, s.frontier.D, s.frontier.key))


@numba.njit(cache=True)
def _disc_max(G, rows, cols, offsets):
    # outside the grid counts as zero, matching a zero-padded maximum filter
    h, w = G.shape
    out = np.empty(rows.shape[0])
    for i in range(rows.shape[0]):
        best = 0.0
        for k in range(offsets.shape[0]):
            r = rows[i] + offsets[k, 0]
            c = cols[i] + offsets[k, 1]
            if 0 <= r < h and 0 <= c < w and G[r, c] > best:
                best = G[r, c]
        out[i] = best
    return out


@numba.njit(cache=True)
def _disc_fraction(mask, gr, gc, R):
    # share of in-grid cells within R of (gr, gc) that are set; 0 when none are in the grid
    h, w = mask.shape
    n = 0
    hit = 0
    for r in range(max(0, gr - R), min(h, gr + R + 1)):
        for c in range(max(0, gc - R), min(w, gc + R + 1)):
            if (r - gr) * (r - gr) + (c - gc) * (c - gc) <= R * R:
                n += 1
                if mask[r, c]:
                    hit += 1
    return hit / n if n > 0 else 0.0


def frontier_inputs(frontiers: list[Frontier], grid: GridMap, agent: Pose2D, dist: np.ndarray,
                    relevance_radius: float = 0.5, unexplored_radius: float = 1.0) -> list[Frontier]:
    """Fill S, D, A, E for each frontier.

    S is the strongest accumulated relevance within ``relevance_radius`` of any
    frontier cell, D the geodesic distance from the agent (``dist`` in metres, a
    cell not reached counts via its best accepted neighbour), A the absolute
    bearing deviation to the centroid, and E the Unknown fraction of the disc of
    ``unexplored_radius`` around the centroid.
    """
    cs = grid.cell_size
    rad = max(1, int(round(relevance_radius / cs)))
    offsets = disc_offsets(rad).astype(np.int64)
    G = np.ascontiguousarray(np.maximum(grid.relevance, 0.0), dtype=np.float64)
    any_rel = bool(G.max() > 0.0) if G.size else False

    finite = np.isfinite(dist)
    near = ndimage.minimum_filter(np.where(finite, dist, np.inf), size=3, mode="constant",
                                  cval=np.inf) + cs * math.sqrt(2.0)
    d_eff = np.where(finite, dist, near)

    unknown = grid.occupancy == UNKNOWN
    ur = int(round(unexplored_radius / cs))
    out = []
    for f in frontiers:
        r, c = f.cells[:, 0], f.cells[:, 1]
        S = float(_disc_max(G, r.astype(np.int64), c.astype(np.int64), offsets).max()) \
            if any_rel else 0.0
        # a frontier under the agent still needs D > 0 for the 1/D term
        D = max(float(d_eff[r, c].min()), 0.5 * cs)
        cx, cy = f.centroid
        bearing = math.degrees(math.atan2(cy - agent.y, cx - agent.x))
        A = abs(signed_angle_diff(bearing, agent.yaw))
        gr = int(math.floor((cy - grid.origin[1]) / cs))
        gc = int(math.floor((cx - grid.origin[0]) / cs))
        E = _disc_fraction(unknown, gr, gc, ur)
        out.append(replace(f, S=S, D=D, A=A, E=E))
    return out
