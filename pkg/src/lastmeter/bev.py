"""Bird's-eye-view relevance mapping and frontier extraction."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import OutOfFov, PoseOutsideGrid, ShapeMismatch
from .geometry import Pose2D
from .grid import FREE, OBSTACLE, UNKNOWN, GridMap, cell_to_world

__all__ = [
    "GridMap", "ProjectionParams", "ConeEntries", "Frontier", "relevance_map", "compress_to_ray",
    "cone_mask", "column_bearings", "bearing_to_column", "project_step_relevance", "accumulate",
    "update_occupancy", "extract_frontiers", "export_snapshot",
]


@dataclass(frozen=True)
class ProjectionParams:
    sigma_h: float | None = None   # pixels; None means H/4 of the image being compressed
    fov: float = 90.0              # degrees
    cell_size: float = 0.05        # metres
    max_range: float = 10.0        # metres
    width: int = 61                # image columns W

    def __post_init__(self):
        if self.sigma_h is not None and self.sigma_h <= 0:
            raise ValueError("sigma_h must be positive")
        if not 0 < self.fov < 180:
            raise ValueError("fov must lie in (0, 180) degrees")
        if self.cell_size <= 0 or self.max_range <= 0 or self.width < 1:
            raise ValueError("cell_size, max_range and width must be positive")


@dataclass(frozen=True)
class ConeEntries:
    """Sparse per-step projection: parallel arrays of cell indices, values and confidences."""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    confidence: np.ndarray

    def __len__(self):
        return len(self.rows)


@dataclass
class Frontier:
    cells: np.ndarray              # (n, 2) int array of (row, col)
    centroid: tuple[float, float]  # world (x, y)
    S: float = 0.0
    D: float = math.inf
    A: float = 0.0
    E: float = 0.0
    key: int = field(default=0)    # row-major index of the smallest cell; fixes ordering


def relevance_map(feat_obs, feat_goal) -> np.ndarray:
    """Per-pixel cosine similarity; pixels where either feature has zero norm score 0."""
    a = np.asarray(feat_obs, dtype=float)
    b = np.asarray(feat_goal, dtype=float)
    if a.shape != b.shape or a.ndim != 3:
        raise ShapeMismatch(f"feature grids differ: {a.shape} vs {b.shape}")
    dot = np.einsum("ijk,ijk->ij", a, b)
    norm = np.linalg.norm(a, axis=2) * np.linalg.norm(b, axis=2)
    out = np.zeros(dot.shape)
    ok = norm > 0
    out[ok] = dot[ok] / norm[ok]
    return np.clip(out, -1.0, 1.0)


def row_weights(H: int, sigma_h: float) -> np.ndarray:
    i = np.arange(H, dtype=float)
    w = np.exp(-((i - H / 2.0) ** 2) / (2.0 * sigma_h ** 2))
    return w / w.max()


def compress_to_ray(S, sigma_h: float | None = None) -> np.ndarray:
    """Gaussian-weighted maximum over image rows, weights peaking at 1 on the central row."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    H = S.shape[0]
    if sigma_h is None:
        sigma_h = H / 4.0
    if sigma_h <= 0:
        raise ValueError("sigma_h must be positive")
    return np.max(row_weights(H, sigma_h)[:, None] * S, axis=0)


def cone_mask(phi, fov: float):
    """cos^2 attenuation from 1 on the optical axis to 0 at the field-of-view edge."""
    phi_arr = np.asarray(phi, dtype=float)
    half = fov / 2.0
    if np.any(np.abs(phi_arr) > half + 1e-12):
        raise OutOfFov(f"bearing outside +/-{half} degrees")
    out = np.cos(phi_arr / half * (math.pi / 2.0)) ** 2
    out = np.where(np.isclose(np.abs(phi_arr), half, rtol=0.0, atol=1e-12), 0.0, out)
    return float(out) if np.ndim(out) == 0 else out


def column_bearings(width: int, fov: float) -> np.ndarray:
    """Bearing (degrees, left positive) of each image column's centre; column 0 is leftmost."""
    step = fov / width
    return fov / 2.0 - (np.arange(width) + 0.5) * step


def bearing_to_column(phi, width: int, fov: float):
    step = fov / width
    j = np.floor((fov / 2.0 - np.asarray(phi, dtype=float)) / step)
    return np.clip(j, 0, width - 1).astype(int)


def _cone_geometry(shape, pose: Pose2D, params: ProjectionParams, origin, cell_size):
    """Polar coordinates of all cells inside the sensor's range box."""
    h, w = shape
    R = int(math.ceil(params.max_range / cell_size)) + 1
    ar = int(math.floor((pose.y - origin[1]) / cell_size))
    ac = int(math.floor((pose.x - origin[0]) / cell_size))
    r0, r1 = max(0, ar - R), min(h, ar + R + 1)
    c0, c1 = max(0, ac - R), min(w, ac + R + 1)
    rows = np.arange(r0, r1)
    cols = np.arange(c0, c1)
    dy = (origin[1] + (rows + 0.5) * cell_size - pose.y)[:, None]
    dx = (origin[0] + (cols + 0.5) * cell_size - pose.x)[None, :]
    rho = np.hypot(dx, dy)
    ang = np.degrees(np.arctan2(dy, dx)) - pose.yaw
    phi = (ang + 180.0) % 360.0 - 180.0
    phi = np.where(rho < 1e-12, 0.0, phi)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return rr, cc, rho, phi


def _check_inside(grid: GridMap, pose: Pose2D):
    h, w = grid.shape
    r = math.floor((pose.y - grid.origin[1]) / grid.cell_size)
    c = math.floor((pose.x - grid.origin[0]) / grid.cell_size)
    if not (0 <= r < h and 0 <= c < w):
        raise PoseOutsideGrid(f"pose ({pose.x:.3f}, {pose.y:.3f}) outside the grid")


def project_step_relevance(ray, depth_ray, agent_pose: Pose2D, params: ProjectionParams,
                           grid: GridMap) -> ConeEntries:
    """Project a relevance ray into the cone of visible cells.

    A cell at bearing phi and range rho, nearest image column j, gets value
    ``mask(phi) * ray[j]`` and confidence ``mask(phi)`` when ``rho <= depth[j]``;
    cells past their column's depth get no entry. Negative similarities are
    projected as 0 so the accumulated map stays non-negative.
    """
    ray = np.asarray(ray, dtype=float)
    depth = np.asarray(depth_ray, dtype=float)
    if ray.shape != depth.shape:
        raise ShapeMismatch("relevance ray and depth ray differ in length")
    _check_inside(grid, agent_pose)
    width = ray.shape[0]
    rr, cc, rho, phi = _cone_geometry(grid.shape, agent_pose, params, grid.origin, grid.cell_size)
    half = params.fov / 2.0
    in_fov = np.abs(phi) <= half + 1e-12
    j = bearing_to_column(phi, width, params.fov)
    keep = in_fov & (rho <= depth[j]) & (rho <= params.max_range)
    phi_k = np.clip(phi[keep], -half, half)
    conf = cone_mask(phi_k, params.fov)
    conf = np.atleast_1d(conf)
    vals = conf * np.maximum(ray[j[keep]], 0.0)
    return ConeEntries(rr[keep], cc[keep], vals, conf)


def accumulate(grid: GridMap, cone: ConeEntries) -> GridMap:
    """Confidence-weighted running average of relevance (updates ``grid`` in place)."""
    if len(cone) == 0:
        return grid
    r, c = cone.rows, cone.cols
    G = grid.relevance[r, c]
    C = grid.confidence[r, c]
    v, k = cone.values, cone.confidence
    tot = C + k
    upd = tot > 0
    safe = np.where(upd, tot, 1.0)
    newG = np.where(upd, (G * C + v * k) / safe, G)
    newC = np.where(upd, (C * C + k * k) / safe, C)
    grid.relevance[r, c] = newG
    grid.confidence[r, c] = newC
    return grid


def update_occupancy(grid: GridMap, rows, cols, states) -> GridMap:
    """Write observed cell states; an Obstacle observation is never downgraded."""
    rows = np.asarray(rows, dtype=int)
    cols = np.asarray(cols, dtype=int)
    states = np.asarray(states, dtype=np.uint8)
    current = grid.occupancy[rows, cols]
    new = np.where(current == OBSTACLE, OBSTACLE, states)
    grid.occupancy[rows, cols] = new
    return grid


_EIGHT = np.ones((3, 3), dtype=bool)


def frontier_cells(occupancy: np.ndarray) -> np.ndarray:
    unknown = occupancy == UNKNOWN
    near_unknown = ndimage.binary_dilation(unknown, structure=_EIGHT)
    return (occupancy == FREE) & near_unknown


def extract_frontiers(grid: GridMap, min_cluster: int = 5) -> list[Frontier]:
    """Free cells 8-adjacent to Unknown, clustered by 8-connectivity."""
    mask = frontier_cells(grid.occupancy)
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    w = grid.shape[1]
    out = []
    idx = ndimage.value_indices(labels, ignore_value=0)
    for lab in range(1, n + 1):
        rr, cc = idx[lab]
        if rr.size < min_cluster:
            continue
        cells = np.stack([rr, cc], axis=1)
        cy = grid.origin[1] + (rr.mean() + 0.5) * grid.cell_size
        cx = grid.origin[0] + (cc.mean() + 0.5) * grid.cell_size
        key = int(np.min(rr * w + cc))
        out.append(Frontier(cells=cells, centroid=(float(cx), float(cy)), key=key))
    out.sort(key=lambda f: f.key)
    return out


def _write_pgm(path: Path, img: np.ndarray):
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        # PGM rows run top to bottom; flip so +y is up in viewers
        fh.write(np.ascontiguousarray(img[::-1]).astype(np.uint8).tobytes())


def to_gray(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    v = np.asarray(values, dtype=float)
    finite = np.isfinite(v)
    if not finite.any():
        return np.zeros(v.shape, np.uint8), 0.0, 0.0
    lo, hi = float(v[finite].min()), float(v[finite].max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = np.where(finite, (v - lo) * scale, 255.0)
    return np.clip(np.round(img), 0, 255).astype(np.uint8), lo, hi


def export_snapshot(channels: dict, out_dir, stem: str, cell_size: float, origin=(0.0, 0.0)) -> dict:
    """Dump each 2D channel as an 8-bit PGM plus one JSON sidecar with the value ranges."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"origin": list(origin), "cell_size": cell_size, "channels": {}}
    for name, arr in channels.items():
        img, lo, hi = to_gray(arr)
        fname = f"{stem}_{name}.pgm"
        _write_pgm(out / fname, img)
        meta["channels"][name] = {"file": fname, "min": lo, "max": hi, "shape": list(img.shape)}
    (out / f"{stem}.json").write_text(json.dumps(meta, indent=2))
    return meta


def grid_snapshot(grid: GridMap, out_dir, stem: str = "map") -> dict:
    occ = grid.occupancy.astype(float)
    occ_img = np.select([occ == FREE, occ == OBSTACLE], [1.0, 0.0], 0.5)
    return export_snapshot({"occupancy": occ_img, "relevance": grid.relevance,
                            "confidence": grid.confidence}, out_dir, stem, grid.cell_size, grid.origin)


def frontier_world(f: Frontier, grid: GridMap):
    return [cell_to_world(r, c, grid.cell_size, grid.origin) for r, c in f.cells]
