"""Episode records and seeded suite generation."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..geometry import Pose2D
from ..grid import FREE
from ..planner import fmm_distance
from .world import GridWorld


@dataclass(frozen=True)
class EpisodeConstraints:
    min_geodesic: float = 1.0
    max_geodesic: float = math.inf
    max_steps: int = 500
    success_radius: float = 1.0
    r_agent: float = 0.18
    # extra clearance demanded at start and goal beyond the agent radius
    placement_margin: float = 0.07
    max_tries: int = 2000


@dataclass
class Episode:
    episode_id: str
    world: GridWorld
    start: Pose2D
    goal: Pose2D
    max_steps: int = 500
    seed: int = 0
    success_radius: float = 1.0
    geodesic: float = math.nan    # shortest safe path length on the true map

    def to_dict(self) -> dict:
        return {"episode_id": self.episode_id, "world": self.world.name,
                "start": self.start.to_dict(), "goal": self.goal.to_dict(),
                "max_steps": self.max_steps, "seed": self.seed,
                "success_radius": self.success_radius, "geodesic": self.geodesic}

    @classmethod
    def from_dict(cls, d: dict, worlds: dict[str, GridWorld]) -> "Episode":
        return cls(d["episode_id"], worlds[d["world"]], Pose2D.from_dict(d["start"]),
                   Pose2D.from_dict(d["goal"]), int(d["max_steps"]), int(d["seed"]),
                   float(d["success_radius"]), float(d.get("geodesic", math.nan)))


def safe_cells(world: GridWorld, clearance_needed: float) -> np.ndarray:
    return (world.occupancy == FREE) & (world.clearance >= clearance_needed)


def geodesic_field(world: GridWorld, xy, r_agent: float) -> np.ndarray:
    """Shortest path lengths (m) from ``xy`` through cells the agent body fits in."""
    trav = safe_cells(world, r_agent)
    return fmm_distance(world, [world.cell_of(*xy)], traversable=trav).values


def _sample_pose(world: GridWorld, rng: np.random.Generator, ok: np.ndarray) -> Pose2D:
    rr, cc = np.nonzero(ok)
    k = int(rng.integers(len(rr)))
    cs = world.cell_size
    x = world.origin[0] + (cc[k] + rng.uniform(0.1, 0.9)) * cs
    y = world.origin[1] + (rr[k] + rng.uniform(0.1, 0.9)) * cs
    return Pose2D(x, y, float(rng.uniform(0.0, 360.0)))


def generate_episode_suite(worlds: list[GridWorld], count: int, seed: int,
                           constraints: EpisodeConstraints = EpisodeConstraints()) -> list[Episode]:
    """Rejection-sample start/goal pairs; episode i uses world ``i mod len(worlds)``."""
    if count <= 0:
        return []
    if not worlds:
        raise ValueError("need at least one world")
    root = np.random.SeedSequence(seed)
    seeds = root.spawn(count)
    need = constraints.r_agent + constraints.placement_margin
    ok = {id(w): safe_cells(w, need) for w in worlds}
    out = []
    for i in range(count):
        world = worlds[i % len(worlds)]
        rng = np.random.default_rng(seeds[i])
        ep_seed = int(rng.integers(2**31 - 1))
        for _ in range(constraints.max_tries):
            start = _sample_pose(world, rng, ok[id(world)])
            goal = _sample_pose(world, rng, ok[id(world)])
            field = geodesic_field(world, goal.xy, constraints.r_agent)
            geo = float(field[world.cell_of(start.x, start.y)])
            if constraints.min_geodesic <= geo <= constraints.max_geodesic:
                break
        else:
            raise RuntimeError(f"could not place episode {i} in {world.name}")
        out.append(Episode(f"{world.name}-{i:04d}", world, start, goal, constraints.max_steps,
                           ep_seed, constraints.success_radius, geo))
    return out


def save_suite(episodes: list[Episode], path) -> None:
    Path(path).write_text(json.dumps([e.to_dict() for e in episodes], indent=1))


def load_suite(path, worlds: dict[str, GridWorld]) -> list[Episode]:
    return [Episode.from_dict(d, worlds) for d in json.loads(Path(path).read_text())]


__all__ = ["Episode", "EpisodeConstraints", "generate_episode_suite", "geodesic_field",
           "save_suite", "load_suite", "safe_cells"]
