"""Command-line entry point: ``zsmail <command> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .environments import ExpertMixSpec, LowerBoundSpec, build_lower_bound_expert, build_lower_bound_game
from .equilibrium import nash_gap, shapley_value_iteration
from .expert_data import ExpertOracle, collect_dataset, save_dataset
from .game import PolicyPair, load_game, save_game
from .harness import (
    ALGORITHMS,
    PRESET_NAMES,
    ExperimentConfig,
    aggregate,
    build_environment,
    preset,
    aggregate_csv_text,
    read_records_csv,
    records_csv_text,
    run_experiment,
    write_aggregate_csv,
    write_records_csv,
)
from .rng import make_rng

log = logging.getLogger("zsmail")

RUN_NAMES = {"bc": "bc", "mailbro": "mail_bro", "murmail": "murmail"}


def parse_seeds(text: str) -> list[int]:
    """``n`` means seeds 0..n-1; anything else is a file of whitespace or comma separated seeds."""
    if text.isdigit():
        return list(range(int(text)))
    tokens = Path(text).read_text().replace(",", " ").split()
    return [int(t) for t in tokens]


def _load_config(args, algorithm: str | None) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.from_dict(json.loads(Path(args.config).read_text()))
        if algorithm is not None and config.algorithm != algorithm:
            config = dataclasses.replace(config, algorithm=algorithm)
    elif args.preset:
        config = preset(args.preset, algorithm or "murmail")
    else:
        raise SystemExit("either --config or --preset is required")
    return _override(config, args)


def _finish(results, out: str | None) -> int:
    records = [r for res in results for r in res.records]
    if out:
        write_records_csv(records, out)
    else:
        sys.stdout.write(records_csv_text(records))
    failures = [(seed, err) for res in results for seed, err in res.failures]
    for seed, err in failures:
        log.error("seed %d failed:\n%s", seed, err)
    if failures:
        print(f"{len(failures)} seed(s) failed: {[s for s, _ in failures]}", file=sys.stderr)
    return 0 if not failures else 1


def cmd_env_build(args) -> int:
    if args.preset:
        config = preset(args.preset, "bc")
        game, _ = build_environment(config.environment)
    else:
        spec = LowerBoundSpec.from_dict(json.loads(Path(args.spec).read_text()))
        game = build_lower_bound_game(spec)
    save_game(game, args.out)
    return 0


def cmd_expert_solve(args) -> int:
    if args.preset:
        _, pair = build_environment(preset(args.preset, "bc").environment)
    elif args.spec and args.mix:
        spec = LowerBoundSpec.from_dict(json.loads(Path(args.spec).read_text()))
        mix = ExpertMixSpec(**json.loads(Path(args.mix).read_text()))
        pair = build_lower_bound_expert(spec, mix)
    else:
        game = load_game(args.game)
        result = shapley_value_iteration(game, args.tolerance, args.max_iters)
        if not result.converged:
            print("Shapley iteration did not converge", file=sys.stderr)
            return 1
        pair = result.pair
    Path(args.out).write_text(json.dumps(pair.to_dict()))
    return 0


def cmd_data_collect(args) -> int:
    game = load_game(args.game)
    expert = PolicyPair.from_dict(json.loads(Path(args.expert).read_text()))
    oracle = ExpertOracle(expert)
    data = collect_dataset(game, oracle, args.n, make_rng(args.seed))
    save_dataset(data, args.out)
    print(f"{len(data)} trajectories, {data.total_steps} steps, {oracle.queries} expert queries", file=sys.stderr)
    return 0


def cmd_run(args) -> int:
    config = _load_config(args, RUN_NAMES[args.algorithm])
    return _finish([run_experiment(config)], args.out)


def cmd_sweep(args) -> int:
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        algorithms = raw.pop("algorithms", None) or [raw["algorithm"]]
        base = ExperimentConfig.from_dict({**raw, "algorithm": algorithms[0]})
        configs = [_override(dataclasses.replace(base, algorithm=a), args) for a in algorithms]
    elif args.preset:
        configs = [_override(preset(args.preset, a), args) for a in ALGORITHMS]
    else:
        raise SystemExit("either --config or --preset is required")
    return _finish([run_experiment(c) for c in configs], args.out)


def _override(config: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.seeds:
        changes["seeds"] = tuple(parse_seeds(args.seeds))
    if args.workers:
        changes["workers"] = args.workers
    if args.no_timing:
        changes["record_timing"] = False
    if args.out:
        changes["output"] = args.out
    return dataclasses.replace(config, **changes)


def cmd_eval_nashgap(args) -> int:
    game = load_game(args.game)
    pair = PolicyPair.from_dict(json.loads(Path(args.policy).read_text()))
    print(json.dumps(nash_gap(game, pair).to_dict()))
    return 0


def cmd_aggregate(args) -> int:
    rows = aggregate(read_records_csv(args.input))
    if args.out:
        write_aggregate_csv(rows, args.out)
    else:
        sys.stdout.write(aggregate_csv_text(rows))
    return 0


def _experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--preset", choices=PRESET_NAMES)
    p.add_argument("--seeds", help="seed count n (seeds 0..n-1) or a file of seeds")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--no-timing", action="store_true", help="write wall_ms=0 so reruns are byte-identical")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zsmail", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    env = sub.add_parser("env", help="environment files").add_subparsers(dest="action", required=True)
    p = env.add_parser("build", help="write a game JSON")
    p.add_argument("--preset", choices=PRESET_NAMES)
    p.add_argument("--spec", help="hard-instance spec JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_env_build)

    expert = sub.add_parser("expert", help="expert policies").add_subparsers(dest="action", required=True)
    p = expert.add_parser("solve", help="write an expert policy pair JSON")
    p.add_argument("--game", help="game JSON to solve by Shapley iteration")
    p.add_argument("--preset", choices=PRESET_NAMES)
    p.add_argument("--spec", help="hard-instance spec JSON")
    p.add_argument("--mix", help="expert mix JSON (with --spec)")
    p.add_argument("--tolerance", type=float, default=1e-8)
    p.add_argument("--max-iters", type=int, default=10_000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_expert_solve)

    data = sub.add_parser("data", help="expert datasets").add_subparsers(dest="action", required=True)
    p = data.add_parser("collect", help="write traj_id,t,s,a,b records")
    p.add_argument("--game", required=True)
    p.add_argument("--expert", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_data_collect)

    p = sub.add_parser("run", help="run one learner over seeds")
    p.add_argument("algorithm", choices=sorted(RUN_NAMES))
    _experiment_flags(p)
    p.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="evaluation").add_subparsers(dest="action", required=True)
    p = ev.add_parser("nashgap", help="exact Nash gap of a policy pair")
    p.add_argument("--game", required=True)
    p.add_argument("--policy", required=True)
    p.set_defaults(func=cmd_eval_nashgap)

    p = sub.add_parser("sweep", help="run every learner of a preset or config")
    _experiment_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("aggregate", help="per-checkpoint mean and standard error")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_aggregate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
