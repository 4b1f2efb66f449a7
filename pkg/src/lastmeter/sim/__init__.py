"""Deterministic 2D gridworld simulator."""
from .episodes import Episode, EpisodeConstraints, generate_episode_suite, load_suite, save_suite
from .kinematics import MoveResult, apply_action
from .sensors import raycast_depth, scan, visible_mask
from .world import GridWorld, WorldSpec, generate_world, load_ascii, parse_ascii

__all__ = [
    "Episode", "EpisodeConstraints", "GridWorld", "MoveResult", "WorldSpec", "apply_action",
    "generate_episode_suite", "generate_world", "load_ascii", "load_suite", "parse_ascii",
    "raycast_depth", "run_episode", "save_suite", "scan", "visible_mask",
]


def __getattr__(name):
    # the runner pulls in providers and cascade, which themselves import this package
    if name in ("run_episode", "EpisodeResult", "SystemConfig"):
        from . import runner
        return getattr(runner, name)
    raise AttributeError(name)
