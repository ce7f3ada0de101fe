"""Argparse CLI: subcommand definitions and dispatch."""

import argparse
import dataclasses
import json
import os
import sys

from . import __version__, config
from .harness import (
    compare_exploration,
    compute_metrics,
    consensus_experiment,
    load_run_config,
    read_results_csv,
    run_batch,
    trace_episode,
)
from .suite import write_suite
from .utils import format_rate, setup_logging


def _load_config(args):
    """Run config from file with command-line overrides applied."""
    cfg = load_run_config(args.config)
    overrides = {}
    for name in ("variant", "seed", "parallel"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _print_summary(summary):
    print(f"Variant: {summary.variant}")
    print(f"Episodes: {summary.n}")
    print(f"SR:  {format_rate(summary.sr)}")
    print(f"SPL: {summary.spl:.3f}")
    print(f"DTG: {summary.dtg_mean:.2f} m")
    if len(summary.per_variant) > 1:
        for name, part in summary.per_variant.items():
            print(f"  {name:<15s} n={part.n:<4d} SR={format_rate(part.sr):>6s}  SPL={part.spl:.3f}")


# ── Subcommand handlers ──────────────────────────────────────────

def cmd_run(args):
    cfg = _load_config(args)
    summary, _ = run_batch(cfg, progress=not args.quiet)
    _print_summary(summary)
    print(f"Results: {os.path.join(cfg.out_dir, config.RESULTS_CSV)}")


def cmd_eval(args):
    summary = compute_metrics(read_results_csv(args.results))
    _print_summary(summary)


def cmd_trace(args):
    cfg = _load_config(args)
    out = args.out or os.path.join(cfg.out_dir, f"trace_{args.episode}")
    result = trace_episode(cfg, args.episode, out)
    print(f"{result.episode_id}: {result.termination} after {result.steps} steps")
    print(f"Snapshots: {out}")


def cmd_generate(args):
    paths = write_suite(args.out, args.episodes, args.seed)
    print(f"Wrote {len(paths)} episodes to {args.out}")


def cmd_consensus(args):
    report = consensus_experiment(games=args.games, seed=args.seed, noise=args.noise, bias=args.bias,
                                  trace_dir=args.trace_dir)
    print(json.dumps(report, indent=2))


def cmd_compare(args):
    cfg = _load_config(args)
    print(json.dumps(compare_exploration(cfg), indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="consensusnav",
        description="Zero-shot visual-target navigation in a gridworld",
    )
    parser.add_argument("-V", "--version", action="version", version=f"consensusnav {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable debug logging")

    sub = parser.add_subparsers(dest="command", help="Available commands")

    def run_options(p):
        p.add_argument("--config", required=True, help="Run config JSON")
        p.add_argument("--variant", choices=config.VARIANTS, help="Policy variant")
        p.add_argument("--seed", type=int, help="Master seed")
        p.add_argument("--out", help="Output directory")

    # run
    p = sub.add_parser("run", help="Run a batch of episodes")
    run_options(p)
    p.add_argument("--parallel", type=int,
                   help=f"Episodes run concurrently (default: {config.DEFAULT_PARALLEL})")
    p.add_argument("-q", "--quiet", action="store_true", help="No progress bar")
    p.set_defaults(func=cmd_run)

    # eval
    p = sub.add_parser("eval", help="Recompute metrics from a results CSV")
    p.add_argument("--results", required=True, help="Results CSV")
    p.set_defaults(func=cmd_eval)

    # trace
    p = sub.add_parser("trace", help="Dump per-step map snapshots of one episode")
    run_options(p)
    p.add_argument("--episode", required=True, help="Episode id")
    p.set_defaults(func=cmd_trace)

    # generate
    p = sub.add_parser("generate", help="Write a synthetic episode suite")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    # consensus
    p = sub.add_parser("consensus", help="Seeded agreement experiment on synthetic games")
    p.add_argument("--games", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--bias", type=float, default=1.0)
    p.add_argument("--trace-dir", help="Write each game's equilibrium trace CSV here")
    p.set_defaults(func=cmd_consensus)

    # compare
    p = sub.add_parser("compare", help="Game vs clip_only and semantic vs nearest exploration")
    run_options(p)
    p.add_argument("--parallel", type=int)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)

    setup_logging(verbose=getattr(args, "verbose", False))

    if not args.command:
        parser.print_help()
        sys.exit(1)

    try:
        args.func(args)
    except KeyboardInterrupt:
        print("\nInterrupted.")
        sys.exit(130)
    except Exception as exc:
        print(f"Error: {exc}", file=sys.stderr)
        if getattr(args, "verbose", False):
            import traceback
            traceback.print_exc()
        sys.exit(1)
