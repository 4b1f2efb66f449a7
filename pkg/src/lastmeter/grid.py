"""Grid storage and world/cell coordinate helpers shared by all modules.

Cell ``(r, c)`` covers ``[ox + c*cs, ox + (c+1)*cs) x [oy + r*cs, oy + (r+1)*cs)``;
rows grow with world y and columns with world x.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FREE = 0
OBSTACLE = 1
UNKNOWN = 2


@dataclass
class GridMap:
    """Agent-side multi-channel map: occupancy, accumulated relevance and its confidence."""

    occupancy: np.ndarray
    cell_size: float
    origin: tuple[float, float] = (0.0, 0.0)
    relevance: np.ndarray = field(default=None)
    confidence: np.ndarray = field(default=None)

    def __post_init__(self):
        self.occupancy = np.asarray(self.occupancy, dtype=np.uint8)
        if self.relevance is None:
            self.relevance = np.zeros(self.occupancy.shape)
        if self.confidence is None:
            self.confidence = np.zeros(self.occupancy.shape)
        if not (self.occupancy.shape == self.relevance.shape == self.confidence.shape):
            raise ValueError("GridMap channels must share a shape")
        if np.any(self.occupancy > UNKNOWN):
            raise ValueError("occupancy codes must be FREE, OBSTACLE or UNKNOWN")

    @classmethod
    def unknown(cls, shape, cell_size: float, origin=(0.0, 0.0)) -> "GridMap":
        return cls(np.full(shape, UNKNOWN, dtype=np.uint8), cell_size, tuple(origin))

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupancy.shape

    def copy(self) -> "GridMap":
        return GridMap(self.occupancy.copy(), self.cell_size, self.origin,
                       self.relevance.copy(), self.confidence.copy())


def world_to_cell(x: float, y: float, cell_size: float, origin=(0.0, 0.0)) -> tuple[int, int]:
    return (int(math.floor((y - origin[1]) / cell_size)),
            int(math.floor((x - origin[0]) / cell_size)))


def cell_to_world(r: int, c: int, cell_size: float, origin=(0.0, 0.0)) -> tuple[float, float]:
    return (origin[0] + (c + 0.5) * cell_size, origin[1] + (r + 0.5) * cell_size)


def in_bounds(shape, r: int, c: int) -> bool:
    return 0 <= r < shape[0] and 0 <= c < shape[1]


def cell_centers(shape, cell_size: float, origin=(0.0, 0.0)):
    """Return (X, Y) arrays of cell-centre world coordinates."""
    rows = origin[1] + (np.arange(shape[0]) + 0.5) * cell_size
    cols = origin[0] + (np.arange(shape[1]) + 0.5) * cell_size
    X, Y = np.meshgrid(cols, rows)
    return X, Y


def disc_offsets(radius_cells: float) -> np.ndarray:
    """Integer (dr, dc) offsets whose centre lies within ``radius_cells``."""
    R = int(math.floor(radius_cells))
    dr, dc = np.mgrid[-R:R + 1, -R:R + 1]
    keep = dr * dr + dc * dc <= radius_cells * radius_cells + 1e-9
    return np.stack([dr[keep], dc[keep]], axis=1)


def disc_footprint(radius_cells: float) -> np.ndarray:
    R = int(math.floor(radius_cells))
    dr, dc = np.mgrid[-R:R + 1, -R:R + 1]
    return dr * dr + dc * dc <= radius_cells * radius_cells + 1e-9


def segment_clear(clearance: np.ndarray, p0, p1, min_clearance: float,
                  cell_size: float, origin=(0.0, 0.0)) -> bool:
    """True if every cell touched by the segment p0->p1 has clearance >= min_clearance.

    The segment is sampled at a quarter of a cell so no traversed cell is skipped.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    n = max(1, int(math.ceil(np.linalg.norm(p1 - p0) / (0.25 * cell_size))))
    ts = np.linspace(0.0, 1.0, n + 1)
    pts = p0[None, :] + ts[:, None] * (p1 - p0)[None, :]
    cols = np.floor((pts[:, 0] - origin[0]) / cell_size).astype(int)
    rows = np.floor((pts[:, 1] - origin[1]) / cell_size).astype(int)
    h, w = clearance.shape
    if np.any((rows < 0) | (rows >= h) | (cols < 0) | (cols >= w)):
        return False
    return bool(np.all(clearance[rows, cols] >= min_clearance - 1e-12))
