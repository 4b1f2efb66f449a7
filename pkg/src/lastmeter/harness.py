"""Suite execution, aggregate metrics, failure classification and ablation matrices."""
from __future__ import annotations

import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .bev import ProjectionParams, grid_snapshot
from .cascade import CascadeParams
from .errors import ConfigError
from .frontier import FrontierWeights
from .planner import PlannerParams
from .providers import RegistrationProviderSpec, RelevanceProviderSpec
from .sim.episodes import Episode, EpisodeConstraints, generate_episode_suite, load_suite
from .sim.runner import SystemConfig, run_episode, trace_jsonl
from .sim.world import GridWorld, WorldSpec, generate_world, load_ascii

SCHEMA_VERSION = 1
FAILURE_MODES = ("WrongPose", "GoalNotFound", "Stuck", "PrematureAccept", "CorrectRejected")
FOLD_MODES = ("mod180", "mod360")

PREMATURE_OVERLAP = 0.1
STUCK_WINDOW = 20
STUCK_EVENTS = 10

FAILURE_RULES = {
    "PrematureAccept": f"some accepted verification had true goal overlap < {PREMATURE_OVERLAP}",
    "WrongPose": "stopped on a committed goal farther than the success radius",
    "Stuck": f">= {STUCK_EVENTS} collisions or waypoint failures within {STUCK_WINDOW} steps",
    "CorrectRejected": "was inside the success radius during a verification that did not accept",
    "GoalNotFound": "step budget exhausted otherwise (including never leaving exploration)",
    "precedence": "PrematureAccept > WrongPose > Stuck > CorrectRejected > GoalNotFound",
}


# --- configuration ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProceduralSource:
    world_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    world: WorldSpec = WorldSpec()
    count: int = 200
    constraints: EpisodeConstraints = EpisodeConstraints()


@dataclass(frozen=True)
class FileSource:
    suite: str = ""
    maps: tuple[str, ...] = ()


@dataclass(frozen=True)
class SuiteConfig:
    episodes: ProceduralSource | FileSource = ProceduralSource()
    system: SystemConfig = SystemConfig()
    seed: int = 0
    parallel: int = 1
    out_dir: str = "out"
    fold_mode: str = "mod180"
    # which per-episode traces to write next to episodes.jsonl: none, failures or all
    traces: str = "failures"

    def __post_init__(self):
        if self.parallel < 1:
            raise ConfigError("parallel must be >= 1")
        if self.fold_mode not in FOLD_MODES:
            raise ConfigError(f"fold_mode must be one of {FOLD_MODES}")
        if self.traces not in ("none", "failures", "all"):
            raise ConfigError("traces must be none, failures or all")


_NESTED = {
    (ProceduralSource, "world"): WorldSpec,
    (ProceduralSource, "constraints"): EpisodeConstraints,
    (SystemConfig, "projection"): ProjectionParams,
    (SystemConfig, "frontier"): FrontierWeights,
    (SystemConfig, "planner"): PlannerParams,
    (SystemConfig, "cascade"): CascadeParams,
    (SystemConfig, "relevance"): RelevanceProviderSpec,
    (SystemConfig, "registration"): RegistrationProviderSpec,
}


def _build(cls, data: Any, where: str, base=None):
    """Instantiate dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get((cls, key))
        if sub is not None:
            value = _build(sub, value, f"{where}.{key}",
                           getattr(base, key) if base is not None else None)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return replace(base, **kwargs) if base is not None else cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: Mapping, base_dir: Path | None = None) -> SuiteConfig:
    data = dict(data)
    version = data.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    allowed = {"episodes", "system", "seed", "parallel", "out_dir", "fold_mode", "traces"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys {unknown}")
    kwargs: dict[str, Any] = {k: v for k, v in data.items() if k not in ("episodes", "system")}
    if "system" in data:
        kwargs["system"] = _build(SystemConfig, data["system"], "system")
    if "episodes" in data:
        src = data["episodes"]
        if not isinstance(src, Mapping) or len(src) != 1:
            raise ConfigError("episodes: give exactly one of 'procedural' or 'file'")
        (kind, body), = src.items()
        if kind == "procedural":
            kwargs["episodes"] = _build(ProceduralSource, body, "episodes.procedural")
        elif kind == "file":
            fs = _build(FileSource, body, "episodes.file")
            root = base_dir or Path(".")
            paths = [fs.suite, *fs.maps]
            missing = [p for p in paths if not (root / p).is_file()]
            if missing:
                raise ConfigError(f"episodes.file: missing files {missing}")
            kwargs["episodes"] = FileSource(str(root / fs.suite),
                                            tuple(str(root / m) for m in fs.maps))
        else:
            raise ConfigError(f"episodes: unknown source {kind!r}")
    try:
        return SuiteConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> SuiteConfig:
    path = Path(path)
    return config_from_dict(json.loads(path.read_text()), path.parent)


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def config_to_dict(cfg: SuiteConfig) -> dict:
    src = cfg.episodes
    kind = "procedural" if isinstance(src, ProceduralSource) else "file"
    out = {"schema_version": SCHEMA_VERSION, "episodes": {kind: _plain(src)},
           "system": _plain(cfg.system)}
    out.update({k: getattr(cfg, k) for k in ("seed", "parallel", "out_dir", "fold_mode", "traces")})
    if kind == "procedural":
        c = out["episodes"]["procedural"]["constraints"]
        if c["max_geodesic"] == "inf":
            del c["max_geodesic"]
    return out


# --- episodes --------------------------------------------------------------------------------

def build_episodes(cfg: SuiteConfig) -> list[Episode]:
    src = cfg.episodes
    if isinstance(src, ProceduralSource):
        worlds = [generate_world(s, src.world) for s in src.world_seeds]
        return generate_episode_suite(worlds, src.count, cfg.seed, src.constraints)
    worlds: dict[str, GridWorld] = {}
    for path in src.maps:
        w = load_ascii(path)
        worlds[w.name] = w
    return load_suite(src.suite, worlds)


# --- metrics ---------------------------------------------------------------------------------

def _get(r, key):
    return r[key] if isinstance(r, Mapping) else getattr(r, key)


def compute_spl(results: Iterable) -> float:
    """Mean over episodes of success * l / max(p, l), with l the shortest safe path length."""
    terms = []
    for r in results:
        l = float(_get(r, "geodesic"))
        if not l > 0:
            raise ValueError("shortest-path length must be positive")
        p = float(_get(r, "path_length"))
        terms.append(l / max(p, l) if _get(r, "success") else 0.0)
    return float(np.mean(terms)) if terms else 0.0


def classify_failure(trace: list[dict], success_radius: float = 1.0,
                     success: bool = False) -> str | None:
    """Failure mode of an episode from its step trace (None for a success)."""
    if success:
        return None
    for row in trace:
        if row.get("accepted") and row.get("true_overlap") is not None \
                and row["true_overlap"] < PREMATURE_OVERLAP:
            return "PrematureAccept"
    last = trace[-1] if trace else {}
    if last.get("action") == "Stop" and (last.get("dist_to_goal") or 0.0) > success_radius:
        return "WrongPose"
    events = [bool(r.get("collision")) or bool(r.get("no_waypoint")) for r in trace]
    for i in range(max(0, len(events) - STUCK_WINDOW) + 1):
        if sum(events[i:i + STUCK_WINDOW]) >= STUCK_EVENTS:
            return "Stuck"
    for row in trace:
        if row.get("mode") == "Verify" and row.get("verified") and not row.get("accepted") \
                and (row.get("dist_to_goal") or math.inf) <= success_radius:
            return "CorrectRejected"
    return "GoalNotFound"


def _mean(values) -> float | None:
    v = [x for x in values if x is not None]
    return float(np.mean(v)) if v else None


def aggregate(records: list[dict], fold_mode: str = "mod180") -> dict:
    """SR, SPL, mean pose errors (all episodes and successes only) and failure counts."""
    if fold_mode not in FOLD_MODES:
        raise ConfigError(f"fold_mode must be one of {FOLD_MODES}")
    head = "eps_head" if fold_mode == "mod180" else "eps_head_mod360"
    ok = [r for r in records if r["success"]]
    counts = {m: 0 for m in FAILURE_MODES}
    for r in records:
        if r.get("failure_mode"):
            counts[r["failure_mode"]] += 1
    return {
        "n": len(records),
        "SR": float(np.mean([r["success"] for r in records])) if records else 0.0,
        "SPL": compute_spl(records),
        "fold_mode": fold_mode,
        "mean_eps_pos": _mean([r["eps_pos"] for r in records]),
        "mean_eps_head": _mean([r[head] for r in records]),
        "success_only": {"n": len(ok), "mean_eps_pos": _mean([r["eps_pos"] for r in ok]),
                         "mean_eps_head": _mean([r[head] for r in ok])},
        "failures": counts,
        "collisions": int(sum(r["collisions"] for r in records)),
        "min_clearance": min((r["min_clearance"] for r in records), default=None),
    }


@dataclass
class SuiteReport:
    records: list[dict]
    aggregates: dict
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"aggregates": self.aggregates, "failure_rules": FAILURE_RULES,
                "config": self.config}


# --- execution -------------------------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(cfg: SuiteConfig, episodes: list[Episode] | None = None):
    _WORKER["cfg"] = cfg
    _WORKER["episodes"] = build_episodes(cfg) if episodes is None else episodes


def _run_one(index: int) -> tuple[dict, str | None]:
    cfg: SuiteConfig = _WORKER["cfg"]
    ep = _WORKER["episodes"][index]
    res = run_episode(ep, cfg.system, record_trace=True)
    rec = res.record()
    rec["world"] = ep.world.name
    rec["failure_mode"] = classify_failure(res.trace, ep.success_radius, res.success)
    dump = cfg.traces == "all" or (cfg.traces == "failures" and not res.success)
    if dump:
        rec["trace_path"] = f"traces/{ep.episode_id}.jsonl"
    return rec, trace_jsonl(res) if dump else None


def _records_jsonl(records: list[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def run_suite(cfg: SuiteConfig, write: bool = True) -> SuiteReport:
    """Run every episode, then write episodes.jsonl, report.json and any trace dumps.

    Records come back in suite order whatever the degree of parallelism.
    """
    episodes = build_episodes(cfg)
    n = len(episodes)
    if cfg.parallel > 1 and n > 1:
        # workers rebuild the suite themselves rather than unpickling every world
        with ProcessPoolExecutor(cfg.parallel, initializer=_init_worker, initargs=(cfg,)) as ex:
            results = list(ex.map(_run_one, range(n), chunksize=max(1, n // (4 * cfg.parallel))))
    else:
        _init_worker(cfg, episodes)
        try:
            results = [_run_one(i) for i in range(n)]
        finally:
            _WORKER.clear()
    records = [r for r, _ in results]
    report = SuiteReport(records, aggregate(records, cfg.fold_mode), config_to_dict(cfg))
    if write:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "episodes.jsonl").write_text(_records_jsonl(records))
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
        for rec, text in results:
            if text is not None:
                path = out / rec["trace_path"]
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(text)
    return report


def read_records(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def report_from_jsonl(path, fold_mode: str = "mod180") -> dict:
    return aggregate(read_records(path), fold_mode)


def run_single(cfg: SuiteConfig, episode_id: str, out_dir=None, dump_fields: bool = True):
    """Run one episode of the suite by id, writing its trace and final map channels."""
    episodes = {e.episode_id: e for e in build_episodes(cfg)}
    if episode_id not in episodes:
        raise KeyError(f"no episode {episode_id!r} in the suite")
    ep = episodes[episode_id]
    res = run_episode(ep, cfg.system, record_trace=True)
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{episode_id}.trace.jsonl").write_text(trace_jsonl(res))
    if dump_fields and res.final_grid is not None:
        grid_snapshot(res.final_grid, out, episode_id)
    rec = res.record()
    rec["failure_mode"] = classify_failure(res.trace, ep.success_radius, res.success)
    return rec


# --- ablation --------------------------------------------------------------------------------

DEFAULT_AXES: dict[str, list] = {
    "theta": [2 * CascadeParams().theta],
    "tau": [0.05, 0.2],
    "m": [3, 6],
    "refinement": [False],
    "scoring": ["s_only", "d_only", "e_only"],
    "planner": ["plain"],
}


def apply_override(system: SystemConfig, axis: str, value) -> SystemConfig:
    c = system.cascade
    if axis == "theta":
        return replace(system, cascade=replace(c, theta=float(value)))
    if axis == "tau":
        return replace(system, cascade=replace(c, tau=float(value)))
    if axis == "m":
        return replace(system, cascade=replace(c, m=int(value)))
    if axis == "refinement":
        return replace(system, cascade=replace(c, refinement=bool(value)))
    if axis == "scoring":
        return replace(system, frontier=replace(system.frontier, variant=str(value)))
    if axis == "planner":
        if value not in ("plain", "safe"):
            raise ConfigError("planner axis takes 'plain' or 'safe'")
        return replace(system, planner=replace(system.planner, safe=value == "safe"))
    raise ConfigError(f"unknown ablation axis {axis!r}")


def ablation_variants(base: SuiteConfig, axes: Mapping[str, list] | None = None) -> dict:
    """The baseline plus one variant per single-axis override value."""
    axes = DEFAULT_AXES if axes is None else axes
    out = {"baseline": base}
    for axis, values in axes.items():
        for v in values:
            name = f"{axis}={json.dumps(v)}"
            out[name] = replace(base, system=apply_override(base.system, axis, v),
                                out_dir=str(Path(base.out_dir) / _slug(name)))
    return out


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "._-" else "_" for ch in name)


def run_ablation(base: SuiteConfig, axes: Mapping[str, list] | None = None,
                 write: bool = True) -> dict[str, SuiteReport]:
    variants = ablation_variants(base, axes)
    variants["baseline"] = replace(base, out_dir=str(Path(base.out_dir) / "baseline"))
    reports = {name: run_suite(cfg, write) for name, cfg in variants.items()}
    if write:
        summary = {name: rep.aggregates for name, rep in reports.items()}
        Path(base.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(base.out_dir) / "ablation.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True))
    return reports


def load_axes(path) -> dict[str, list]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, Mapping):
        raise ConfigError("axes file must hold an object of axis -> list of values")
    for k, v in data.items():
        if k not in DEFAULT_AXES:
            raise ConfigError(f"unknown ablation axis {k!r}")
        if not isinstance(v, list) or not v:
            raise ConfigError(f"axis {k!r} needs a non-empty list of values")
    return dict(data)
