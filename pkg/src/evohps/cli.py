"""Command-line front end: run searches, replay saved models, compare runs,
and benchmark worker scaling.

Output root resolution: ``--out`` flag, else the ``EVOHPS_OUT`` environment
variable, else the current directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import ConfigError, apply_overrides, load_config, parse_config
from .envs import make_env
from .evo import compute_fitness
from .net import ModelParseError, load_model
from .orchestrator import (CONFIG_FILE, RESULTS_LOG, OrchestratorError,
                           benchmark_timing, msg_from_json, run_search, write_bench)
from .rlalgos import TrainingError, evaluate_policy, greedy_policy
from .report import render_bench, render_comparison

COMPARISON_FILE = "comparison.csv"


def _out_root(args) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(os.environ.get("EVOHPS_OUT", "."))


def _load_effective_config(args):
    text = Path(args.config).read_text(encoding="utf-8")
    text = apply_overrides(text, args.set or [])
    config = parse_config(text)
    if getattr(args, "seed", None) is not None:
        text = apply_overrides(text, [f"master_seed={args.seed}"])
        config = parse_config(text)
    if getattr(args, "workers", None) is not None:
        text = apply_overrides(text, [f"workers={args.workers}"])
        config = parse_config(text)
    return config


def cmd_search(args) -> int:
    try:
        config = _load_effective_config(args)
        result = run_search(config, _out_root(args))
    except (ConfigError, OrchestratorError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    best = result.best
    if best is None:
        print("search finished without a single successful evaluation",
              file=sys.stderr)
        return 1
    print(f"run directory: {result.run_dir}")
    print(f"best fitness:  {best.record.fitness!r}")
    print("best gene:")
    for name, value in best.gene_values.items():
        print(f"  {name} = {value}")
    return 0 if result.ok_count >= 1 else 1


def cmd_evaluate(args) -> int:
    try:
        model = load_model(args.model)
    except (ModelParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        env = make_env(args.env, trace_path=args.trace)
        policy = greedy_policy(model, env)
        trace = evaluate_policy(policy, env, args.episodes,
                                step_cap=args.step_cap, seed=args.seed)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for episode, reward in enumerate(trace.episode_rewards):
        print(f"episode {episode}: reward {reward!r}")
    fitness = compute_fitness(trace.n, trace.reward_sum, args.loss_sum)
    print(f"reward_sum = {trace.reward_sum!r}")
    print(f"fitness    = {fitness!r}  (n={trace.n}, loss_sum={args.loss_sum!r})")
    return 0


def _read_run(run_dir: Path):
    log_path = run_dir / RESULTS_LOG
    config_path = run_dir / CONFIG_FILE
    if not config_path.exists() or not log_path.exists():
        raise OrchestratorError(
            f"{run_dir} is not a run directory (missing {CONFIG_FILE!r} or {RESULTS_LOG!r})"
        )
    config = load_config(config_path)
    msgs = []
    with open(log_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                msgs.append(msg_from_json(line))
    if not msgs:
        raise OrchestratorError(f"{run_dir} has an empty {RESULTS_LOG!r}")
    return config, msgs


def cmd_compare(args) -> int:
    try:
        runs = [_read_run(Path(d)) for d in args.run_dirs]
    except OrchestratorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    keys = {(c.algorithm, c.env_id) for c, _ in runs}
    if len(keys) != 1:
        print(f"error: runs mix (algorithm, env) pairs: {sorted(keys)}", file=sys.stderr)
        return 2

    out_dir = _out_root(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["method,cumulative_episodes,best_fitness_so_far"]
    summary = []
    for config, msgs in runs:
        cumulative = 0
        best = None
        best_at = 0
        for msg in msgs:
            cumulative += msg.episodes_trained
            if best is None or msg.record.fitness > best:
                best = msg.record.fitness
                best_at = cumulative
            lines.append(f"{config.method},{cumulative},{best!r}")
        summary.append((config.run_id, config.method, best_at, best))

    merged = out_dir / COMPARISON_FILE
    merged.write_text("\n".join(lines) + "\n", encoding="utf-8")
    render_comparison(merged, out_dir / "comparison.png")

    print(f"merged curves: {merged}")
    print(f"{'run':24s} {'method':8s} {'episodes_to_best':>18s} {'best_fitness':>16s}")
    for run_id, method, best_at, best in sorted(summary, key=lambda s: s[2]):
        print(f"{run_id:24s} {method:8s} {best_at:>18d} {best!r:>16s}")
    return 0


def cmd_bench(args) -> int:
    try:
        worker_counts = [int(tok) for tok in args.workers.split(",") if tok.strip()]
        if not worker_counts:
            raise ValueError("empty worker list")
    except ValueError as exc:
        print(f"error: --workers expects a comma list of ints: {exc}", file=sys.stderr)
        return 2
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        config = parse_config(apply_overrides(text, args.set or []))
        rows = benchmark_timing(config, worker_counts, _out_root(args))
    except (ConfigError, OrchestratorError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    bench_dir = _out_root(args) / config.run_id
    bench_dir.mkdir(parents=True, exist_ok=True)
    write_bench(rows, bench_dir / "bench.csv")
    render_bench(bench_dir / "bench.csv", bench_dir / "bench.png")
    print(f"bench table: {bench_dir / 'bench.csv'}")
    print(f"{'workers':>8s} {'total_seconds':>14s}")
    for row in rows:
        if row["generation"] == "total":
            print(f"{row['workers']:>8d} {row['seconds']:>14.3f}")
    return 0


def cmd_resume(args) -> int:
    run_dir = Path(args.run_dir)
    config_path = run_dir / CONFIG_FILE
    if not config_path.exists():
        print(f"error: no {CONFIG_FILE!r} file in {run_dir}", file=sys.stderr)
        return 2
    try:
        config = load_config(config_path)
        result = run_search(config, run_dir.parent,
                            worker_count=args.workers)
    except (ConfigError, OrchestratorError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    best = result.best
    if best is None:
        print("resume finished without a single successful evaluation",
              file=sys.stderr)
        return 1
    print(f"run directory: {result.run_dir}")
    print(f"best fitness:  {best.record.fitness!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evohps",
        description="Hyperparameter search for small RL agents: genetic "
                    "algorithm, Bayesian optimization, and random baselines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    search = sub.add_parser("search", help="run a configured search")
    search.add_argument("--config", required=True, help="experiment config file")
    search.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    search.add_argument("--seed", type=int, help="override master_seed")
    search.add_argument("--workers", type=int, help="override worker count")
    search.add_argument("--out", help="output root (default $EVOHPS_OUT or .)")
    search.set_defaults(func=cmd_search)

    evaluate = sub.add_parser("evaluate", help="replay a saved model greedily")
    evaluate.add_argument("model", help="saved model file")
    evaluate.add_argument("env", help="environment id (cartpole, lander, laser)")
    evaluate.add_argument("--episodes", type=int, default=10)
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument("--step-cap", type=int, default=100)
    evaluate.add_argument("--loss-sum", type=float, default=0.0,
                          help="loss total used in the printed fitness")
    evaluate.add_argument("--trace", help="append (state, action, reward) lines here")
    evaluate.set_defaults(func=cmd_evaluate)

    compare = sub.add_parser("compare", help="merge best-so-far curves of runs")
    compare.add_argument("run_dirs", nargs="+", help="two or more run directories")
    compare.add_argument("--out", help="output root for comparison files")
    compare.set_defaults(func=cmd_compare)

    bench = sub.add_parser("bench", help="time the same search at several worker counts")
    bench.add_argument("--config", required=True)
    bench.add_argument("--workers", required=True, help="comma list, e.g. 1,2,4")
    bench.add_argument("--set", action="append", metavar="KEY=VALUE")
    bench.add_argument("--out", help="output root")
    bench.set_defaults(func=cmd_bench)

    resume = sub.add_parser("resume", help="continue a partially completed run")
    resume.add_argument("run_dir")
    resume.add_argument("--workers", type=int, help="override worker count")
    resume.set_defaults(func=cmd_resume)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "command", None) == "compare" and len(args.run_dirs) < 2:
        print("error: compare needs at least two run directories", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
