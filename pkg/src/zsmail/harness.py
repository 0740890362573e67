"""Seed sweeps, checkpoint CSVs, aggregation and replication presets."""

from __future__ import annotations

import concurrent.futures
import dataclasses
import functools
import hashlib
import json
import math
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .environments import (
    ExpertMixSpec,
    LowerBoundSpec,
    build_lower_bound_expert,
    build_lower_bound_game,
    build_random_zero_sum,
)
from .equilibrium import nash_gap, shapley_value_iteration
from .expert_data import ExpertOracle, behavior_cloning, collect_dataset
from .game import PolicyPair, ZeroSumGame
from .mail_bro import run_mail_bro
from .murmail import run_murmail
from .records import CSV_HEADER, RunRecord
from .rng import make_rng, split

ALGORITHMS = ("bc", "mail_bro", "murmail")


@dataclass(frozen=True)
class RandomGameSpec:
    n_states: int = 10
    n_actions_max: int = 3
    n_actions_min: int = 3
    discount: float = 0.9
    game_seed: int = 0


@dataclass(frozen=True)
class EnvironmentConfig:
    kind: str  # "lower_bound" or "random"
    lower_bound: LowerBoundSpec | None = None
    mix: ExpertMixSpec | None = None
    random: RandomGameSpec | None = None

    def __post_init__(self):
        if self.kind == "lower_bound":
            if self.lower_bound is None or self.mix is None:
                raise ValueError("lower_bound environments need a spec and an expert mix")
        elif self.kind == "random":
            if self.random is None:
                raise ValueError("random environments need a game spec")
        else:
            raise ValueError(f"unknown environment kind {self.kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "lower_bound":
            return {"kind": self.kind, "lower_bound": self.lower_bound.to_dict(), "mix": dataclasses.asdict(self.mix)}
        return {"kind": self.kind, "random": dataclasses.asdict(self.random)}

    @classmethod
    def from_dict(cls, data: dict) -> "EnvironmentConfig":
        if data["kind"] == "lower_bound":
            return cls("lower_bound", LowerBoundSpec.from_dict(data["lower_bound"]), ExpertMixSpec(**data["mix"]))
        return cls(data["kind"], random=RandomGameSpec(**data["random"]))


@dataclass(frozen=True)
class Hyperparameters:
    K: int = 2000
    T: int = 200
    eta: str | float = "sqrt"
    delta: float = 0.1
    dataset_sizes: tuple[int, ...] = (100, 1000, 10000)
    warm_start_trajectories: int = 0
    recycle: bool = False
    bonus_scale: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    environment: EnvironmentConfig
    algorithm: str
    hyperparameters: Hyperparameters = Hyperparameters()
    seeds: tuple[int, ...] = (0,)
    eval_schedule: tuple[int, ...] = ()
    output: str | None = None
    workers: int = 1
    record_timing: bool = True

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        sched = list(self.eval_schedule)
        if any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValueError("eval schedule must be strictly increasing")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "eval_schedule", tuple(int(c) for c in sched))

    def experiment_dict(self) -> dict:
        """Everything that determines the records of one seed."""
        hp = dataclasses.asdict(self.hyperparameters)
        hp["dataset_sizes"] = list(hp["dataset_sizes"])
        return {
            "environment": self.environment.to_dict(),
            "algorithm": self.algorithm,
            "hyperparameters": hp,
            "eval_schedule": list(self.eval_schedule),
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.experiment_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]

    def to_dict(self) -> dict:
        d = self.experiment_dict()
        d.update(seeds=list(self.seeds), output=self.output, workers=self.workers, record_timing=self.record_timing)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        hp = dict(data.get("hyperparameters", {}))
        if "dataset_sizes" in hp:
            hp["dataset_sizes"] = tuple(hp["dataset_sizes"])
        return cls(
            environment=EnvironmentConfig.from_dict(data["environment"]),
            algorithm=data["algorithm"],
            hyperparameters=Hyperparameters(**hp),
            seeds=tuple(data.get("seeds", (0,))),
            eval_schedule=tuple(data.get("eval_schedule", ())),
            output=data.get("output"),
            workers=int(data.get("workers", 1)),
            record_timing=bool(data.get("record_timing", True)),
        )


@functools.lru_cache(maxsize=16)
def _environment_cached(env_json: str) -> tuple[ZeroSumGame, PolicyPair]:
    env = EnvironmentConfig.from_dict(json.loads(env_json))
    if env.kind == "lower_bound":
        return build_lower_bound_game(env.lower_bound), build_lower_bound_expert(env.lower_bound, env.mix)
    spec = env.random
    game = build_random_zero_sum(spec.n_states, spec.n_actions_max, spec.n_actions_min, spec.discount, spec.game_seed)
    result = shapley_value_iteration(game, tolerance=1e-10)
    if not result.converged:
        raise RuntimeError("could not solve the random game for an expert")
    return game, result.pair


def build_environment(env: EnvironmentConfig) -> tuple[ZeroSumGame, PolicyPair]:
    """Game and expert equilibrium pair for an environment config."""
    return _environment_cached(json.dumps(env.to_dict(), sort_keys=True))


def run_seed(config: ExperimentConfig, seed: int) -> list[RunRecord]:
    game, expert = build_environment(config.environment)
    hp = config.hyperparameters
    tag = config.config_hash()
    data_rng, learn_rng = split(make_rng(seed), 2)
    oracle = ExpertOracle(expert)
    t0 = time.perf_counter()

    def stamp(queries: int, gap: float, wall_ms: int | None = None) -> RunRecord:
        if wall_ms is None:
            wall_ms = int((time.perf_counter() - t0) * 1000)
        return RunRecord(config.algorithm, seed, int(queries), float(gap), wall_ms if config.record_timing else 0, tag)

    if config.algorithm == "bc":
        sizes = sorted(hp.dataset_sizes)
        full = collect_dataset(game, oracle, sizes[-1], data_rng)
        records = []
        for n in sizes:
            data = full.prefix(n)
            pair = behavior_cloning(data, game.n_actions_max, game.n_actions_min)
            records.append(stamp(2 * data.total_steps, nash_gap(game, pair).gap))
        return records

    warm = None
    if hp.warm_start_trajectories > 0:
        warm = collect_dataset(game, oracle, hp.warm_start_trajectories, data_rng)
    offset = oracle.queries
    if config.algorithm == "mail_bro":
        result = run_mail_bro(game, oracle, hp.K, hp.eta, learn_rng, config.eval_schedule)
    else:
        result = run_murmail(
            game, oracle, hp.K, hp.T, hp.eta, hp.delta, learn_rng, config.eval_schedule,
            warm_start=warm, recycle=hp.recycle, bonus_scale=hp.bonus_scale, track_gaps=False,
        )
    records = [stamp(r.queries + offset, r.nash_gap, r.wall_ms) for r in result.checkpoint_records]
    if not config.eval_schedule:
        records.append(stamp(oracle.queries, nash_gap(game, result.output_pair).gap))
    return records


@dataclass
class ExperimentResult:
    records: list[RunRecord]
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _run_seed_safe(config: ExperimentConfig, seed: int):
    try:
        return seed, run_seed(config, seed), None
    except Exception:  # recorded per seed, the sweep carries on
        return seed, [], traceback.format_exc()


def sort_records(records) -> list[RunRecord]:
    return sorted(records, key=lambda r: (r.algo, r.seed, r.queries, r.config_hash))


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run every seed; failures are collected rather than raised."""
    if config.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(config.workers) as pool:
            outcomes = list(pool.map(_run_seed_safe, [config] * len(config.seeds), config.seeds))
    else:
        outcomes = [_run_seed_safe(config, s) for s in config.seeds]
    records = [r for _, recs, _ in outcomes for r in recs]
    failures = sorted((seed, err) for seed, _, err in outcomes if err is not None)
    return ExperimentResult(sort_records(records), failures)


def records_csv_text(records) -> str:
    lines = [",".join(CSV_HEADER)] + [r.csv_row() for r in sort_records(records)]
    return "\n".join(lines) + "\n"


def write_records_csv(records, path: str | Path) -> None:
    Path(path).write_text(records_csv_text(records))


def read_records_csv(path: str | Path) -> list[RunRecord]:
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split(",")) != CSV_HEADER:
        raise ValueError(f"{path}: missing header {','.join(CSV_HEADER)}")
    return [RunRecord.from_csv_row(line) for line in lines[1:] if line.strip()]


@dataclass(frozen=True)
class AggregateRow:
    algo: str
    config_hash: str
    checkpoint: int  # position of the record within its seed's run
    n: int
    queries_mean: float
    gap_mean: float
    gap_se: float


AGGREGATE_HEADER = ("algo", "config_hash", "checkpoint", "n", "queries_mean", "gap_mean", "gap_se")


def aggregate(records) -> list[AggregateRow]:
    """Mean and standard error over seeds, per algorithm and checkpoint.

    Checkpoints are matched by their order within each seed's run. An algorithm
    may not appear under two config hashes, since such runs are not comparable.
    """
    records = list(records)
    if not records:
        raise ValueError("nothing to aggregate")
    hashes: dict[str, set[str]] = {}
    for r in records:
        hashes.setdefault(r.algo, set()).add(r.config_hash)
    mixed = [a for a, h in hashes.items() if len(h) > 1]
    if mixed:
        raise ValueError(f"records for {mixed} come from different configurations")

    runs: dict[tuple[str, str, int], list[RunRecord]] = {}
    for r in records:
        runs.setdefault((r.algo, r.config_hash, r.seed), []).append(r)
    groups: dict[tuple[str, str, int], list[RunRecord]] = {}
    for (algo, h, _), run in runs.items():
        for i, r in enumerate(sorted(run, key=lambda x: x.queries)):
            groups.setdefault((algo, h, i), []).append(r)

    rows = []
    for (algo, h, i), group in sorted(groups.items()):
        gaps = np.array([r.nash_gap for r in group])
        se = float(np.std(gaps, ddof=1) / math.sqrt(len(gaps))) if len(gaps) > 1 else 0.0
        rows.append(
            AggregateRow(algo, h, i, len(group), float(np.mean([r.queries for r in group])), float(gaps.mean()), se)
        )
    return rows


def aggregate_csv_text(rows) -> str:
    lines = [",".join(AGGREGATE_HEADER)]
    lines += [
        f"{r.algo},{r.config_hash},{r.checkpoint},{r.n},{r.queries_mean!r},{r.gap_mean!r},{r.gap_se!r}" for r in rows
    ]
    return "\n".join(lines) + "\n"


def write_aggregate_csv(rows, path: str | Path) -> None:
    Path(path).write_text(aggregate_csv_text(rows))


LB_CASES = {"a": 0.5, "b": 0.999, "c": 0.9999, "d": 1.0}
PRESET_NAMES = tuple(f"lb-case-{c}" for c in LB_CASES) + ("random10",)
DEFAULT_SEEDS = 50
QUERY_CHECKPOINTS = (100, 300, 1000, 3000, 10_000, 30_000, 100_000, 300_000, 1_000_000, 1_604_000)


def preset(name: str, algorithm: str, seeds=None) -> ExperimentConfig:
    """Replication configuration for one algorithm."""
    if name.startswith("lb-case-") and name[-1] in LB_CASES:
        env = EnvironmentConfig("lower_bound", LowerBoundSpec(), ExpertMixSpec(LB_CASES[name[-1]]))
    elif name == "random10":
        env = EnvironmentConfig("random", random=RandomGameSpec())
    else:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    hp = Hyperparameters(K=10_000 if algorithm == "mail_bro" else 2000)
    schedule = () if algorithm == "bc" else QUERY_CHECKPOINTS
    if algorithm == "mail_bro":
        schedule = tuple(c for c in QUERY_CHECKPOINTS if c <= 2 * hp.K)
    seeds = tuple(range(DEFAULT_SEEDS)) if seeds is None else tuple(seeds)
    return ExperimentConfig(env, algorithm, hp, seeds, schedule)
