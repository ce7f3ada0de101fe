"""Episode runner, policy variants, metrics, batch execution and reports."""

import csv
import dataclasses
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import config
from .agent import Agent
from .equilibrium import (
    NO_MATCH,
    EquilibriumConfig,
    expected_agreement,
    init_policies,
    run_equilibrium,
    select_target,
    write_trace_csv,
)
from .errors import BatchError, ConfigError, EmptyBatch, NavError
from .exploration import ExplorationConfig
from .mapping import MappingConfig, dump_maps
from .oracles import (
    CandidatePack,
    PackedCandidate,
    RemoteOracle,
    RemoteOracleConfig,
    SyntheticOracle,
    SyntheticOracleConfig,
    build_pack,
    estimate_distribution,
    truth_scores,
    with_truth,
)
from .planning import geodesic_distance
from .suite import suite_episodes
from .utils import EpisodeProgress, format_duration, format_rate, stable_seed
from .world import Episode, Goal, Query, SensorNoise, distance_to_goal, load_episode

log = logging.getLogger(__name__)

TERMINATIONS = ("stopped_success", "stopped_wrong", "step_limit", "no_frontier")
CSV_COLUMNS = ("episode_id", "variant", "seed", "success", "steps", "l_i", "p_i",
               "dtg", "termination", "wall_ms")


# ── Configuration ─────────────────────────────────────────────────

@dataclass
class RunConfig:
    episodes: list = field(default_factory=list)
    suite: Optional[dict] = None
    variant: str = config.DEFAULT_VARIANT
    seed: int = 0
    parallel: int = config.DEFAULT_PARALLEL
    out_dir: str = config.DEFAULT_OUT_DIR
    oracle: str = "synthetic"
    oracle_samples: int = config.ORACLE_SAMPLES
    synthetic_oracle: SyntheticOracleConfig = field(default_factory=SyntheticOracleConfig)
    remote_oracle: RemoteOracleConfig = field(default_factory=RemoteOracleConfig)
    exploration: ExplorationConfig = field(default_factory=ExplorationConfig)
    equilibrium: EquilibriumConfig = field(default_factory=EquilibriumConfig)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    noise_angle_per_m: float = config.NOISE_ANGLE_PER_M
    fov: float = config.FOV_DEG
    sensor_range: float = config.SENSOR_RANGE
    max_steps: Optional[int] = None
    deterministic: bool = True
    record_timing: bool = False

    def __post_init__(self):
        if self.variant not in config.VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r} (choose from {', '.join(config.VARIANTS)})")
        if self.oracle not in ("synthetic", "remote"):
            raise ConfigError(f"unknown oracle {self.oracle!r}")
        if self.oracle == "remote" and self.deterministic:
            raise ConfigError("the remote oracle cannot be used in a deterministic run")
        if self.oracle == "remote" and self.oracle_samples < 1:
            raise ConfigError("the remote oracle needs oracle_samples >= 1")
        if self.variant == "ranking" and self.oracle_samples < 2:
            raise ConfigError("the ranking variant needs oracle_samples >= 2")
        if self.oracle_samples < 0:
            raise ConfigError("oracle_samples must be >= 0")
        if self.parallel < 1:
            raise ConfigError("parallel must be >= 1")
        if self.max_steps is not None and not 1 <= self.max_steps <= config.MAX_STEPS:
            raise ConfigError(f"max_steps must be in [1, {config.MAX_STEPS}]")
        if self.noise_angle_per_m < 0:
            raise ConfigError("noise_angle_per_m must be >= 0")


_NESTED = {
    "synthetic_oracle": SyntheticOracleConfig,
    "remote_oracle": RemoteOracleConfig,
    "exploration": ExplorationConfig,
    "equilibrium": EquilibriumConfig,
    "mapping": MappingConfig,
}
_SENSOR_KEYS = {"angle_per_m": "noise_angle_per_m", "fov": "fov", "range": "sensor_range"}


def run_config_from_dict(doc: dict, base_dir: str = ".") -> RunConfig:
    """Build a RunConfig from its JSON document; episode paths resolve against ``base_dir``."""
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    doc = dict(doc)
    known = {f.name for f in dataclasses.fields(RunConfig)}
    kwargs = {}
    for key, cls in _NESTED.items():
        if key in doc:
            try:
                kwargs[key] = cls(**doc.pop(key))
            except TypeError as exc:
                raise ConfigError(f"bad '{key}' section: {exc}") from exc
    for key, value in (doc.pop("sensor", None) or {}).items():
        if key not in _SENSOR_KEYS:
            raise ConfigError(f"unknown sensor key {key!r}")
        kwargs[_SENSOR_KEYS[key]] = value
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    kwargs.update(doc)
    kwargs["episodes"] = [p if os.path.isabs(p) else os.path.join(base_dir, p)
                          for p in kwargs.get("episodes", [])]
    if not kwargs["episodes"] and not kwargs.get("suite"):
        raise ConfigError("config needs 'episodes' or 'suite'")
    return RunConfig(**kwargs)


def load_run_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r") as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = run_config_from_dict(doc, os.path.dirname(os.path.abspath(path)))
    log.info("Loaded run config %s (variant %s, seed %d)", path, cfg.variant, cfg.seed)
    return cfg


def resolve_episodes(cfg: RunConfig) -> list[Episode]:
    """Load (or generate) every episode up front; any problem aborts before output."""
    missing = [p for p in cfg.episodes if not os.path.exists(p)]
    if missing:
        raise ConfigError(f"episode file(s) not found: {', '.join(missing)}")
    episodes = [load_episode(p) for p in cfg.episodes]
    if cfg.suite:
        suite = dict(cfg.suite)
        episodes += suite_episodes(int(suite.get("episodes", 10)), int(suite.get("seed", cfg.seed)),
                                   suite.get("distractors", (2, 3)))
    if cfg.max_steps is not None:
        episodes = [dataclasses.replace(ep, max_steps=cfg.max_steps) for ep in episodes]
    if not episodes:
        raise ConfigError("no episodes to run")
    return episodes


# ── Results ───────────────────────────────────────────────────────

@dataclass
class EpisodeResult:
    episode_id: str
    variant: str
    seed: int
    success: int
    steps: int
    l_i: float
    p_i: float
    dtg: float
    termination: str
    wall_ms: int = 0
    first_candidate_step: int = -1

    def to_row(self) -> list[str]:
        return [
            self.episode_id, self.variant, str(self.seed), str(self.success), str(self.steps),
            f"{self.l_i:.6f}", f"{self.p_i:.6f}",
            "nan" if math.isnan(self.dtg) else f"{self.dtg:.6f}",
            self.termination, str(self.wall_ms),
        ]

    @classmethod
    def from_row(cls, row: dict) -> "EpisodeResult":
        return cls(
            episode_id=row["episode_id"],
            variant=row["variant"],
            seed=int(row["seed"]),
            success=int(row["success"]),
            steps=int(row["steps"]),
            l_i=float(row["l_i"]),
            p_i=float(row["p_i"]),
            dtg=float(row["dtg"]),
            termination=row["termination"],
            wall_ms=int(row["wall_ms"]),
        )


@dataclass
class MetricsSummary:
    variant: str
    n: int
    sr: float
    spl: float
    dtg_mean: float
    per_variant: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v
        return {"variant": self.variant, "n": self.n, "sr": clean(self.sr),
                "spl": clean(self.spl), "dtg_mean": clean(self.dtg_mean)}


def spl_term(result: EpisodeResult) -> float:
    if not result.success:
        return 0.0
    return result.l_i / max(result.l_i, result.p_i)


def _aggregate(results, variant: str) -> MetricsSummary:
    dtgs = np.array([r.dtg for r in results], dtype=float)
    dtg_mean = float(np.nanmean(dtgs)) if np.isfinite(dtgs).any() else float("nan")
    return MetricsSummary(
        variant=variant,
        n=len(results),
        sr=float(np.mean([r.success for r in results])),
        spl=float(np.mean([spl_term(r) for r in results])),
        dtg_mean=dtg_mean,
    )


def compute_metrics(results) -> MetricsSummary:
    """SR, SPL and mean DTG, plus a per-variant breakdown."""
    results = list(results)
    if not results:
        raise EmptyBatch("no episode results")
    variants = sorted({r.variant for r in results})
    summary = _aggregate(results, variants[0] if len(variants) == 1 else "mixed")
    summary.per_variant = {v: _aggregate([r for r in results if r.variant == v], v) for v in variants}
    return summary


def write_results_csv(results, path: str):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in results:
            writer.writerow(r.to_row())


def read_results_csv(path: str) -> list[EpisodeResult]:
    if not os.path.exists(path):
        raise ConfigError(f"results file not found: {path}")
    with open(path, "r", newline="") as f:
        reader = csv.DictReader(f)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"{path}: missing columns {', '.join(sorted(missing))}")
        return [EpisodeResult.from_row(row) for row in reader]


def write_summary_json(summary: MetricsSummary, path: str):
    with open(path, "w") as f:
        json.dump(summary.to_dict(), f, indent=2)
        f.write("\n")


# ── Identification variants ───────────────────────────────────────

def _oracle_weights(oracle, pack: CandidatePack, channel: str, samples: int, rng) -> np.ndarray:
    if samples == 0:
        return oracle.generative(pack) if channel == "generative" else oracle.discriminative(pack)
    return estimate_distribution(oracle, pack, samples, rng, channel)


def identify_with_variant(variant: str, pack: CandidatePack, oracle, eq_cfg: EquilibriumConfig = None,
                          rng=None, samples: int = config.ORACLE_SAMPLES):
    """Pick a candidate index of ``pack`` (or NO_MATCH) with one policy variant."""
    eq_cfg = eq_cfg or EquilibriumConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    if variant == "clip_only":
        return max(pack.candidates, key=lambda c: (c.similarity, -c.index)).index
    if variant == "ranking":
        counts = estimate_distribution(oracle, pack, max(samples, 2), rng, "generative")
        if counts.sum() == 0:
            return NO_MATCH
        r = int(np.argmax(counts))
        return NO_MATCH if r == pack.no_match_index else r

    gen = _oracle_weights(oracle, pack, "generative", samples, rng)
    if variant == "generator_only":
        pi_g, _ = init_policies(gen, gen, eq_cfg.bias)
        r = int(np.argmax(pi_g.probs))
        return NO_MATCH if r == pack.no_match_index else r
    if variant == "game":
        disc = _oracle_weights(oracle, pack, "discriminative", samples, rng)
        result = run_equilibrium(init_policies(gen, disc, eq_cfg.bias), eq_cfg)
        return select_target(result.pi_g, result.pi_d)
    raise ConfigError(f"unknown variant {variant!r}")


def build_oracle(cfg: RunConfig, seed: int):
    if cfg.oracle == "remote":
        return RemoteOracle(cfg.remote_oracle)
    return SyntheticOracle(dataclasses.replace(cfg.synthetic_oracle,
                                               seed=stable_seed(cfg.synthetic_oracle.seed, seed)))


def make_identifier(cfg: RunConfig, oracle, episode: Episode, rng):
    scene = episode.scene

    def identify(pending, agent):
        pack = build_pack(episode.query, pending, agent.objmap, scene.vocabulary, scene.cell_size)
        pack = with_truth(pack, truth_scores(pack, agent.objmap, scene))
        choice = identify_with_variant(cfg.variant, pack, oracle, cfg.equilibrium, rng,
                                       cfg.oracle_samples)
        return NO_MATCH if choice is NO_MATCH else pack.candidates[choice].map_id

    return identify


# ── Episodes ──────────────────────────────────────────────────────

def shortest_length(episode: Episode) -> float:
    """Ground-truth geodesic to the nearest goal footprint minus the success radius, floored at one cell."""
    scene = episode.scene
    cs = scene.cell_size
    goal_cells = set()
    for oid in episode.query.goal_object_ids:
        goal_cells |= scene.object_by_id(oid).footprint
    if not goal_cells:
        return cs
    start = scene.cell_of(episode.start_pose.x, episode.start_pose.y)
    d = geodesic_distance(scene.occupancy, start, goal_cells, cs)
    if not math.isfinite(d):
        log.warning("Episode %s: goal unreachable on the ground-truth map", episode.episode_id)
        d = distance_to_goal(episode.start_pose, scene, episode.query.goal_object_ids)
    return max(cs, d - episode.success_radius)


def run_episode(cfg: RunConfig, episode: Episode, seed: int, oracle=None, on_step=None) -> EpisodeResult:
    """Perceive, map, select a goal, plan and act until the episode terminates."""
    started = time.perf_counter()
    oracle = oracle if oracle is not None else build_oracle(cfg, seed)
    rng = np.random.default_rng(seed)
    agent = Agent(
        episode,
        make_identifier(cfg, oracle, episode, rng),
        mapping=cfg.mapping,
        exploration=cfg.exploration,
        noise=SensorNoise(cfg.noise_angle_per_m, seed),
        fov=cfg.fov,
        sensor_range=cfg.sensor_range,
        on_step=on_step,
    )
    log.info("Episode %s start (variant %s, seed %d)", episode.episode_id, cfg.variant, seed)
    termination = agent.run()
    dtg = distance_to_goal(agent.pose, episode.scene, episode.query.goal_object_ids)
    wall_ms = int(round((time.perf_counter() - started) * 1000)) if cfg.record_timing else 0
    result = EpisodeResult(
        episode_id=episode.episode_id,
        variant=cfg.variant,
        seed=seed,
        success=int(termination == "stopped_success"),
        steps=agent.steps,
        l_i=shortest_length(episode),
        p_i=agent.path_length,
        dtg=dtg if math.isfinite(dtg) else float("nan"),
        termination=termination,
        wall_ms=wall_ms,
        first_candidate_step=agent.candidate_search_steps,
    )
    log.info("Episode %s end: %s after %d steps in %s (%d identification rounds, frontier branches %s)",
             episode.episode_id, termination, agent.steps,
             format_duration((time.perf_counter() - started) * 1000),
             agent.identifications, dict(sorted(agent.branches.items())))
    return result


def episode_seed(master: int, index: int) -> int:
    return master ^ index


def run_episodes(cfg: RunConfig, episodes, progress: bool = False):
    """Run episodes on up to ``cfg.parallel`` threads; returns (results, failures) in index order."""
    shared = RemoteOracle(cfg.remote_oracle) if cfg.oracle == "remote" else None
    results = [None] * len(episodes)
    failures = {}
    bar = EpisodeProgress(len(episodes), desc=cfg.variant) if progress else None
    try:
        with ThreadPoolExecutor(max_workers=cfg.parallel) as pool:
            futures = {
                pool.submit(run_episode, cfg, ep, episode_seed(cfg.seed, i), shared): i
                for i, ep in enumerate(episodes)
            }
            for future in as_completed(futures):
                i = futures[future]
                try:
                    results[i] = future.result()
                except NavError as exc:
                    log.error("Episode %s aborted: %s", episodes[i].episode_id, exc)
                    failures[episodes[i].episode_id] = str(exc)
                if bar is not None:
                    bar.record(results[i].success if results[i] is not None else None)
    finally:
        if bar is not None:
            bar.close()
    return [r for r in results if r is not None], failures


def run_batch(cfg: RunConfig, progress: bool = False) -> tuple[MetricsSummary, list[EpisodeResult]]:
    """Run every episode, write the results CSV and summary JSON."""
    episodes = resolve_episodes(cfg)
    results, failures = run_episodes(cfg, episodes, progress)
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_results_csv(results, os.path.join(cfg.out_dir, config.RESULTS_CSV))
    summary = None
    if results:
        summary = compute_metrics(results)
        write_summary_json(summary, os.path.join(cfg.out_dir, config.SUMMARY_JSON))
        log.info("Batch done: n=%d SR=%s SPL=%.3f DTG=%.2f m", summary.n, format_rate(summary.sr),
                 summary.spl, summary.dtg_mean)
    if failures:
        raise BatchError(failures)
    return summary, results


def trace_episode(cfg: RunConfig, episode_id: str, out_dir: str) -> EpisodeResult:
    """Run one episode and dump the agent's maps after every step."""
    episodes = resolve_episodes(cfg)
    index = next((i for i, ep in enumerate(episodes) if ep.episode_id == episode_id), None)
    if index is None:
        raise ConfigError(f"no episode with id {episode_id!r}")
    os.makedirs(out_dir, exist_ok=True)

    def snapshot(agent, action):
        text, objects = dump_maps(agent.expl, agent.objmap, agent.cell, cfg.mapping.obstacle_dilation)
        stem = os.path.join(out_dir, f"step_{agent.steps:04d}")
        with open(stem + ".txt", "w") as f:
            f.write(f"# action={action} pose=({agent.pose.x:.3f}, {agent.pose.y:.3f}, {agent.pose.heading})\n")
            f.write(text)
        with open(stem + ".json", "w") as f:
            json.dump(objects, f, indent=1)

    result = run_episode(cfg, episodes[index], episode_seed(cfg.seed, index), on_step=snapshot)
    log.info("Trace of %s written to %s", episode_id, out_dir)
    return result


# ── Experiments ───────────────────────────────────────────────────

def _random_game_pack(rng, n_candidates: int) -> CandidatePack:
    dim = config.EMBEDDING_DIM
    candidates = []
    for i in range(n_candidates):
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        candidates.append(PackedCandidate(i, i, v, v.copy()))
    truth = [float(rng.choice([0.0, 0.25, 1.0 / 3.0])) for _ in range(n_candidates)]
    truth[int(rng.integers(n_candidates))] = 1.0
    return CandidatePack(Query("target", Goal("target")), tuple(candidates), truth=tuple(truth))


def consensus_experiment(games: int = 500, seed: int = 0, noise: float = 0.5, bias: float = 1.0,
                         gain: float = 2.0, eq_cfg: EquilibriumConfig = None, samples: int = 0,
                         trace_dir: str = None) -> dict:
    """Seeded games with decorrelated miscalibration: agreement gain and accuracy per variant.

    With ``trace_dir`` every game also leaves its equilibrium trace as
    ``game_NNNN.csv``.
    """
    eq_cfg = eq_cfg or EquilibriumConfig()
    if trace_dir:
        os.makedirs(trace_dir, exist_ok=True)
    agreement_ok = game_hits = gen_hits = 0
    for g in range(games):
        rng = np.random.default_rng(stable_seed("consensus", seed, g))
        pack = _random_game_pack(rng, int(rng.integers(2, 5)))
        oracle = SyntheticOracle(SyntheticOracleConfig(
            seed=stable_seed(seed, g), gen_noise=noise, disc_noise=noise,
            gen_bias=bias, disc_bias=bias, gain=gain))
        truth_index = int(np.argmax(pack.truth))
        gen = _oracle_weights(oracle, pack, "generative", samples, rng)
        disc = _oracle_weights(oracle, pack, "discriminative", samples, rng)
        initial = init_policies(gen, disc, eq_cfg.bias)
        result = run_equilibrium(initial, eq_cfg)
        if trace_dir:
            write_trace_csv(result, os.path.join(trace_dir, f"game_{g:04d}.csv"))
        if expected_agreement(result.pair) >= expected_agreement(initial) - 1e-9:
            agreement_ok += 1
        game_hits += int(select_target(result.pi_g, result.pi_d) == truth_index)
        gen_hits += int(int(np.argmax(initial[0].probs)) == truth_index)
    return {
        "games": games,
        "agreement_non_decreasing": agreement_ok / games,
        "game_accuracy": game_hits / games,
        "generator_accuracy": gen_hits / games,
    }


def _median_first_candidate(results, max_steps: int) -> float:
    steps = [r.first_candidate_step if r.first_candidate_step >= 0 else max_steps + 1 for r in results]
    return float(np.median(steps))


def compare_exploration(cfg: RunConfig, episodes=None) -> dict:
    """Game vs clip_only success, and semantic vs nearest-frontier time to first candidate."""
    episodes = episodes if episodes is not None else resolve_episodes(cfg)
    runs = {
        "game": dataclasses.replace(cfg, variant="game"),
        "clip_only": dataclasses.replace(cfg, variant="clip_only"),
        "nearest": dataclasses.replace(cfg, variant="game",
                                       exploration=dataclasses.replace(cfg.exploration, mode="nearest")),
    }
    out = {}
    for name, run_cfg in runs.items():
        results, failures = run_episodes(run_cfg, episodes)
        if failures:
            raise BatchError(failures)
        out[name] = results
    max_steps = max(ep.max_steps for ep in episodes)
    return {
        "sr": {name: compute_metrics(out[name]).sr for name in ("game", "clip_only")},
        "median_first_candidate": {
            "full": _median_first_candidate(out["game"], max_steps),
            "nearest": _median_first_candidate(out["nearest"], max_steps),
        },
    }
