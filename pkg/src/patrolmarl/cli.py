"""Command-line entry point: ``patrolmarl <command> ...``.

Exit codes: 0 success, 1 runtime error (JSON object on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import dump_json, load_config
from .grid import MapError, generate_map, load_map, render_map, sample_map_path
from .harness import STRATEGIES, compare_table, run_experiment, write_results


def resolve_map(spec: str):
    """A map file path, or the name of a map shipped with the package."""
    path = Path(spec)
    if not path.exists() and sample_map_path(spec).exists():
        path = sample_map_path(spec)
    return load_map(path)


def _common(p: argparse.ArgumentParser, agents_default=None):
    p.add_argument("--map", required=True, help="map file or shipped map name (scene6, sample8, sample10)")
    p.add_argument("--config", help="JSON config with sections env, rewards, strategy, train, eval")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")


def _eval_opts(p: argparse.ArgumentParser):
    p.add_argument("--agents", type=int, help="number of agents (default: eval.n_agents)")
    p.add_argument("--episodes", type=int, help="episodes (default: eval.episodes)")
    p.add_argument("--horizon", type=int, help="steps per episode (default: eval.horizon)")
    p.add_argument("--burnin", type=int, help="steps excluded from idleness averages")
    p.add_argument("--require-success", action="store_true", default=None,
                   help="discard episodes with a battery failure and draw replacements")
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patrolmarl", description="Multi-agent patrolling with battery swaps.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one strategy for N episodes")
    _common(p)
    _eval_opts(p)
    p.add_argument("--strategy", required=True, choices=STRATEGIES)
    p.add_argument("--checkpoint", help="policy checkpoint (strategy rl)")
    p.add_argument("--events", action="store_true", help="also write per-step events.jsonl")
    p.add_argument("--csv", action="store_true", help="also write per-step idleness.csv")

    p = sub.add_parser("train", help="train a policy with MAPPO")
    _common(p)
    p.add_argument("--episodes", type=int, help="training iterations (default: train.episodes)")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint")
    _common(p)
    _eval_opts(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("compare", help="table of several strategies and agent counts")
    _common(p)
    _eval_opts(p)
    p.add_argument("--strategies", default="cr,part,sebs", help="comma-separated list")
    p.add_argument("--agent-counts", help="comma-separated agent counts (default: --agents)")
    p.add_argument("--checkpoint", help="policy checkpoint when 'rl' is listed")

    p = sub.add_parser("map", help="map utilities")
    msub = p.add_subparsers(dest="map_command", required=True)
    v = msub.add_parser("validate", help="check a map file")
    v.add_argument("path")
    g = msub.add_parser("generate", help="write a random valid map")
    g.add_argument("--height", type=int, required=True)
    g.add_argument("--width", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--obstacle-density", type=float, default=0.15)
    g.add_argument("--stations", type=int, default=1)
    g.add_argument("--priority-density", type=float, default=0.1)
    g.add_argument("--out", help="write here instead of stdout")
    return parser


def _experiment(args, cfg, grid, strategy, n_agents, checkpoint=None):
    return run_experiment(
        strategy, grid, cfg, n_agents, args.episodes or cfg.eval.episodes, args.seed,
        horizon=args.horizon, burnin=args.burnin, require_success=args.require_success,
        checkpoint=checkpoint, record_events=getattr(args, "events", False) or getattr(args, "csv", False),
        workers=args.workers,
    )


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    grid = resolve_map(args.map)
    if args.strategy == "rl" and not args.checkpoint:
        raise ValueError("strategy rl needs --checkpoint")
    result = _experiment(args, cfg, grid, args.strategy, args.agents or cfg.eval.n_agents, args.checkpoint)
    out = Path(args.out)
    write_results(out, result, events=args.events, csv_path=out / "idleness.csv" if args.csv else None)
    print(json.dumps(result.aggregate, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    grid = resolve_map(args.map)
    result = _experiment(args, cfg, grid, "rl", args.agents or cfg.eval.n_agents, args.checkpoint)
    write_results(Path(args.out), result)
    print(json.dumps(result.aggregate, sort_keys=True))
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    grid = resolve_map(args.map)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    for s in strategies:
        if s not in STRATEGIES:
            raise ValueError(f"unknown strategy {s!r}")
    if args.agent_counts:
        counts = [int(c) for c in args.agent_counts.split(",")]
    else:
        counts = [args.agents or cfg.eval.n_agents]
    rows = []
    for n in counts:
        for s in strategies:
            rows.append(_experiment(args, cfg, grid, s, n, args.checkpoint if s == "rl" else None).aggregate)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_json({"rows": rows}, out / "metrics.json")
    table = compare_table(rows)
    (out / "report.md").write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def cmd_train(args) -> int:
    from .mappo import Trainer

    cfg = load_config(args.config)
    grid = resolve_map(args.map)
    trainer = Trainer(grid, cfg, args.seed, run_dir=args.out)
    history = trainer.train(args.episodes)
    last = history[-1] if history else {}
    print(json.dumps({"episodes": len(history), "final_reward": last.get("reward")}, sort_keys=True))
    return 0


def cmd_map(args) -> int:
    if args.map_command == "validate":
        grid = load_map(args.path)
        print(json.dumps({
            "valid": True,
            "height": grid.height,
            "width": grid.width,
            "vertices": len(grid.vertices),
            "stations": [list(s) for s in grid.stations],
        }, sort_keys=True))
        return 0
    grid = generate_map(args.height, args.width, args.seed, args.obstacle_density, args.stations,
                        args.priority_density)
    text = render_map(grid)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate,
            "compare": cmd_compare, "map": cmd_map}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - every runtime failure becomes exit 1
        err = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, MapError) and exc.row is not None:
            err.update(row=exc.row, col=exc.col)
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
