"""Closed 2D gridworlds: ASCII maps and a seeded procedural room generator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..grid import FREE, OBSTACLE


@dataclass(eq=False)
class GridWorld:
    """Ground-truth occupancy (Free/Obstacle only). Row 0 is the southern edge (y = 0)."""

    occupancy: np.ndarray
    cell_size: float = 0.05
    name: str = "world"
    origin: tuple[float, float] = (0.0, 0.0)
    _clearance: np.ndarray | None = field(default=None, repr=False)
    _vis_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=np.uint8)
        if occ.ndim != 2 or min(occ.shape) < 3:
            raise ValueError("world must be a 2D grid of at least 3x3 cells")
        if np.any((occ != FREE) & (occ != OBSTACLE)):
            raise ValueError("world cells must be Free or Obstacle")
        # closed world: the border is always wall
        occ = occ.copy()
        occ[0, :] = occ[-1, :] = OBSTACLE
        occ[:, 0] = occ[:, -1] = OBSTACLE
        if not np.any(occ == FREE):
            raise ValueError("world has no free cells")
        self.occupancy = occ
        self.origin = tuple(float(v) for v in self.origin)

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupancy.shape

    @property
    def extent(self) -> tuple[float, float]:
        return self.shape[1] * self.cell_size, self.shape[0] * self.cell_size

    @property
    def clearance(self) -> np.ndarray:
        """Distance (m) from each cell centre to the nearest obstacle cell centre."""
        if self._clearance is None:
            free = self.occupancy != OBSTACLE
            self._clearance = ndimage.distance_transform_edt(free) * self.cell_size
        return self._clearance

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (int(math.floor((y - self.origin[1]) / self.cell_size)),
                int(math.floor((x - self.origin[0]) / self.cell_size)))

    def contains(self, x: float, y: float) -> bool:
        r, c = self.cell_of(x, y)
        return 0 <= r < self.shape[0] and 0 <= c < self.shape[1]

    def is_free(self, x: float, y: float) -> bool:
        if not self.contains(x, y):
            return False
        r, c = self.cell_of(x, y)
        return self.occupancy[r, c] == FREE

    def to_ascii(self) -> str:
        rows = ["".join("#" if v == OBSTACLE else "." for v in row) for row in self.occupancy[::-1]]
        return "\n".join(rows) + "\n"


def parse_ascii(text: str, cell_size: float = 0.05, name: str = "ascii") -> GridWorld:
    """'#' is Obstacle and '.' Free; the first text line is the northern (top) edge."""
    lines = [ln.rstrip("\r") for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty map")
    width = max(len(ln) for ln in lines)
    occ = np.full((len(lines), width), OBSTACLE, dtype=np.uint8)
    for i, ln in enumerate(lines):
        for j, ch in enumerate(ln):
            if ch == ".":
                occ[i, j] = FREE
            elif ch != "#":
                raise ValueError(f"unexpected map character {ch!r} at line {i + 1}")
    return GridWorld(occ[::-1].copy(), cell_size, name)


def load_ascii(path, cell_size: float = 0.05) -> GridWorld:
    p = Path(path)
    return parse_ascii(p.read_text(), cell_size, p.stem)


@dataclass(frozen=True)
class WorldSpec:
    width: float = 7.0            # metres
    height: float = 7.0
    rooms_x: int = 2
    rooms_y: int = 2
    wall: float = 0.10
    door_width: float = 0.9
    corridor_width: float = 1.0   # 0 disables the corridor strip
    furniture: int = 2            # blocks per room
    slits: int = 2                # gaps too narrow for the agent
    slit_width: float = 0.25
    cell_size: float = 0.05


def _m2c(v: float, cs: float) -> int:
    return int(round(v / cs))


def generate_world(seed: int, spec: WorldSpec = WorldSpec(), name: str | None = None) -> GridWorld:
    """Rooms on a jittered grid joined by doors, an optional corridor strip along the south side,
    furniture blocks, and narrow slits the agent body cannot pass."""
    rng = np.random.default_rng(seed)
    cs = spec.cell_size
    H, W = _m2c(spec.height, cs), _m2c(spec.width, cs)
    wt = max(1, _m2c(spec.wall, cs))
    occ = np.zeros((H, W), dtype=np.uint8)
    occ[:wt, :] = occ[-wt:, :] = OBSTACLE
    occ[:, :wt] = occ[:, -wt:] = OBSTACLE

    y0 = wt
    if spec.corridor_width > 0:
        cw = _m2c(spec.corridor_width, cs)
        y0 = wt + cw
        occ[y0:y0 + wt, :] = OBSTACLE
        y0 += wt

    def splits(lo, hi, n):
        if n <= 1:
            return [lo, hi]
        base = np.linspace(lo, hi, n + 1)
        span = (hi - lo) / n
        inner = [int(round(b + rng.uniform(-0.15, 0.15) * span)) for b in base[1:-1]]
        return [lo] + inner + [hi]

    xs = splits(wt, W - wt, spec.rooms_x)
    ys = splits(y0, H - wt, spec.rooms_y)
    for x in xs[1:-1]:
        occ[y0:H - wt, x:x + wt] = OBSTACLE
    for y in ys[1:-1]:
        occ[y:y + wt, wt:W - wt] = OBSTACLE

    dw = _m2c(spec.door_width, cs)
    rooms = [(i, j) for i in range(spec.rooms_y) for j in range(spec.rooms_x)]

    def room_box(i, j):
        return ys[i] + (wt if i > 0 else 0), ys[i + 1], xs[j] + (wt if j > 0 else 0), xs[j + 1]

    def door_between(a, b):
        (i0, j0), (i1, j1) = a, b
        if i0 == i1:  # side by side: door in vertical wall
            x = xs[max(j0, j1)]
            r0, r1, _, _ = room_box(i0, min(j0, j1))
            lo, hi = r0 + 2, r1 - dw - 2
            y = int(rng.integers(lo, max(lo + 1, hi)))
            occ[y:y + dw, x:x + wt] = FREE
        else:
            y = ys[max(i0, i1)]
            _, _, c0, c1 = room_box(min(i0, i1), j0)
            lo, hi = c0 + 2, c1 - dw - 2
            x = int(rng.integers(lo, max(lo + 1, hi)))
            occ[y:y + wt, x:x + dw] = FREE

    # random spanning tree over the room lattice plus one extra edge
    edges = []
    for i, j in rooms:
        if j + 1 < spec.rooms_x:
            edges.append(((i, j), (i, j + 1)))
        if i + 1 < spec.rooms_y:
            edges.append(((i, j), (i + 1, j)))
    order = rng.permutation(len(edges))
    parent = {r: r for r in rooms}

    def find(r):
        while parent[r] != r:
            parent[r] = parent[parent[r]]
            r = parent[r]
        return r

    unused = []
    for k in order:
        a, b = edges[k]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            door_between(a, b)
        else:
            unused.append(edges[k])
    if unused:
        door_between(*unused[int(rng.integers(len(unused)))])

    if spec.corridor_width > 0:
        # every bottom-row room opens onto the corridor
        for j in range(spec.rooms_x):
            _, _, c0, c1 = room_box(0, j)
            lo, hi = c0 + 2, c1 - dw - 2
            x = int(rng.integers(lo, max(lo + 1, hi)))
            occ[y0 - wt:y0, x:x + dw] = FREE

    # furniture: axis-aligned blocks kept off the walls so rooms stay connected
    for i, j in rooms:
        r0, r1, c0, c1 = room_box(i, j)
        for _ in range(spec.furniture):
            bh = int(rng.integers(_m2c(0.3, cs), _m2c(0.8, cs)))
            bw = int(rng.integers(_m2c(0.3, cs), _m2c(0.8, cs)))
            margin = _m2c(0.6, cs)
            if r1 - r0 - bh - 2 * margin <= 0 or c1 - c0 - bw - 2 * margin <= 0:
                continue
            rr = int(rng.integers(r0 + margin, r1 - bh - margin))
            cc = int(rng.integers(c0 + margin, c1 - bw - margin))
            occ[rr:rr + bh, cc:cc + bw] = OBSTACLE

    # slits: narrow openings in interior walls, visible through but not passable
    sw = max(1, _m2c(spec.slit_width, cs))
    walls = [("v", x) for x in xs[1:-1]] + [("h", y) for y in ys[1:-1]]
    for _ in range(spec.slits if walls else 0):
        kind, pos = walls[int(rng.integers(len(walls)))]
        if kind == "v":
            y = int(rng.integers(y0 + 4, H - wt - sw - 4))
            occ[y:y + sw, pos:pos + wt] = FREE
        else:
            x = int(rng.integers(wt + 4, W - wt - sw - 4))
            occ[pos:pos + wt, x:x + sw] = FREE
    return GridWorld(occ, cs, name or f"proc-{seed}")
