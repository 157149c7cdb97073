"""
Command-line interface.

Usage:
    python run-experiment.py gen-data --preset paper-shape
    python run-experiment.py finetune --method ssil --alpha 0.5 --seeds 1,2,3
    python run-experiment.py sweep --alpha 0,0.1,0.5,1.0 --seeds 1,2,3
    python run-experiment.py gradcheck
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

from pydantic import ValidationError

from .config import (
    ExperimentConfig,
    FinetuneConfig,
    SweepConfig,
    available_presets,
    expand_runs,
    load_config,
    load_preset,
    output_root,
)
from .errors import ConfigError, DriftLabError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3

METHODS = ["gumbel", "s2p", "sil", "ssil", "mixdata"]
SWEEP_FIELDS = {
    "alpha": float, "beta": float, "k1": int, "k2": int, "k2_prime": int, "tau": float,
}


def print_header(text: str):
    """Print a section header."""
    print(f"\n{'=' * 60}")
    print(f" {text}")
    print('=' * 60)


def print_record(record) -> None:
    print(f"\n   Step:       {record.step}")
    print(f"   BLEU tgt:   {record.bleu_tgt:.2f}")
    print(f"   BLEU pvt:   {record.bleu_pvt:.2f}")
    print(f"   NLL:        {record.nll:.4f}")
    print(f"   RealNLL:    {record.real_nll:.4f}")
    if record.grad_cos_ma100 is not None:
        print(f"   Grad cos:   {record.grad_cos_ma100:+.3f}")


def _list_of(kind: Callable) -> Callable[[str], list]:
    def parse(text: str) -> list:
        try:
            return [kind(item) for item in text.split(",") if item.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got '{text}'")
    return parse


# --------------------------------------------------------------------------- #
# Config resolution
# --------------------------------------------------------------------------- #
def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """
    Preset or config file, then command-line overrides.

    Method-specific overrides that do not apply to the chosen method fail
    validation instead of being dropped.
    """
    if getattr(args, "config", None):
        config = load_config(args.config)
    elif getattr(args, "preset", None):
        config = load_preset(args.preset)
    else:
        config = ExperimentConfig()

    data = config.model_dump()
    if getattr(args, "seeds", None):
        data["seeds"] = args.seeds
    if getattr(args, "workers", None):
        data["workers"] = args.workers

    overrides = {}
    for name in SWEEP_FIELDS:
        value = getattr(args, name, None)
        if value is not None and not isinstance(value, list):
            overrides[name] = value
    if getattr(args, "steps", None) is not None:
        overrides["total_steps"] = args.steps
    if getattr(args, "eval_interval", None) is not None:
        overrides["eval_interval"] = args.eval_interval
    if getattr(args, "progress", False):
        overrides["progress"] = True
    method = getattr(args, "method", None)
    if isinstance(method, str) or overrides:
        rebased = config.finetune.for_method(method if isinstance(method, str) else config.finetune.method)
        data["finetune"] = FinetuneConfig.model_validate({**rebased.model_dump(), **overrides}).model_dump()
    return ExperimentConfig.model_validate(data)


def _root(args: argparse.Namespace, config: ExperimentConfig) -> Path:
    return output_root(config, getattr(args, "out", None))


# --------------------------------------------------------------------------- #
# Subcommands
# --------------------------------------------------------------------------- #
def cmd_gen_data(args: argparse.Namespace) -> int:
    from .runner import build_game_data, write_game_data

    config = resolve_config(args)
    directory = _root(args, config) / "game"
    print_header("Generating Game Data")
    data = build_game_data(config.game)
    written = write_game_data(data, directory)
    print(f"\n   Vocabulary:   {data.game.vocab_size} concepts")
    print(f"   Pretraining:  {len(data.pretrain_sender_pairs)} src→pvt, {len(data.pretrain_receiver_pairs)} pvt→tgt")
    print(f"   Task:         {len(data.task_pairs)} src→tgt, {len(data.eval_set)} evaluation sources")
    print(f"\n✅ Wrote {len(written)} files to {directory}")
    return EXIT_OK


def cmd_pretrain(args: argparse.Namespace) -> int:
    from .metrics import eval_pipeline
    from .runner import build_game_data, pretrain_agents

    config = resolve_config(args)
    root = _root(args, config)
    print_header("Pretraining Agents")
    data = build_game_data(config.game)
    for seed in config.seeds:
        agents = pretrain_agents(config, data, seed, root, progress=args.progress)
        record = eval_pipeline(agents.sender, agents.receiver, data.eval_set, agents.lm)
        print(f"\n   Seed {seed}: sender NLL {agents.summary['sender_nll']:.4f}, "
              f"receiver NLL {agents.summary['receiver_nll']:.4f}")
        print_record(record)
    print(f"\n✅ Pretrained agents cached under {root / 'pretrain'}")
    return EXIT_OK


def _run_and_report(config: ExperimentConfig, args: argparse.Namespace, title: str) -> int:
    from .runner import run_experiment

    root = _root(args, config)
    runs = expand_runs(config)
    print_header(title)
    print(f"\n   Experiment: {config.name}")
    print(f"   Runs:       {len(runs)} ({len({r.tag for r in runs})} configurations × {len(config.seeds)} seeds)")
    print(f"   Output:     {root}")
    results = run_experiment(config, root, workers=args.workers, progress=args.progress)
    for result in results:
        final = result.records[-1]
        print(f"   {result.tag:<28} seed {result.seed:<4} bleu_tgt {final.bleu_tgt:6.2f}  "
              f"bleu_pvt {final.bleu_pvt:6.2f}  real_nll {final.real_nll:.3f}")
    print(f"\n✅ {len(results)} runs written to {root / 'run'}; summary in {root / 'summary.json'}")
    return EXIT_OK


def cmd_finetune(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    config = config.model_copy(update={"sweep": None})
    return _run_and_report(config, args, f"Finetuning ({config.finetune.method})")


def cmd_sweep(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    lists = {name: getattr(args, name) for name in ["method", *SWEEP_FIELDS] if isinstance(getattr(args, name), list)}
    if lists:
        base = config.sweep.model_dump() if config.sweep else {}
        config = config.model_copy(update={"sweep": SweepConfig.model_validate({**base, **lists})})
    return _run_and_report(config, args, "Sweep")


def cmd_eval(args: argparse.Namespace) -> int:
    from .runner import evaluate_checkpoint

    config = resolve_config(args)
    print_header("Evaluating Checkpoint")
    print(f"\n   Checkpoint: {args.checkpoint}")
    record = evaluate_checkpoint(config, args.checkpoint, _root(args, config))
    print_record(record)
    print("\n✅ Evaluation complete")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    from .gradcheck import run_gradcheck

    print_header("Gradient Check")
    report = run_gradcheck(seed=args.seed, probes=args.probes, gumbel_rows=args.gumbel_rows)
    for result in report.results:
        mark = "✅" if result.max_rel_error < report.tolerance else "❌"
        print(f"   {mark} {result.name:<20} {result.max_rel_error:.2e}")
    print(f"\n   max relative error {report.max_rel_error:.3e} ({report.seconds:.1f}s)")
    if not report.passed:
        print(f"\n❌ Gradient check failed (tolerance {report.tolerance:g})")
        return EXIT_FAILURE
    print("\n✅ Gradient check passed")
    return EXIT_OK


def cmd_plot(args: argparse.Namespace) -> int:
    from .plotting import PANELS, plot_svg

    print_header("Plotting Metrics")
    metrics = args.metrics or list(PANELS)
    written = plot_svg(args.csv, args.out or "plots", metrics=metrics, title=args.title)
    for path in written:
        print(f"   {path}")
    print(f"\n✅ Wrote {len(written)} figures")
    return EXIT_OK


# --------------------------------------------------------------------------- #
# Parser
# --------------------------------------------------------------------------- #
def _add_config_args(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--config", "-c", help="Experiment config file (YAML or JSON)")
    source.add_argument("--preset", "-p", help=f"Named preset ({', '.join(available_presets())})")
    parser.add_argument("--out", "-o", help="Output root (default: $DRIFTLAB_OUT or the config's output_dir)")
    parser.add_argument("--seeds", type=_list_of(int), help="Comma-separated seeds, e.g. 1,2,3")
    parser.add_argument("--progress", action="store_true", help="Show progress bars")


def _add_run_args(parser: argparse.ArgumentParser, listed: bool) -> None:
    kind = _list_of if listed else (lambda t: t)
    suffix = " (comma-separated list)" if listed else ""
    if listed:
        parser.add_argument("--method", type=_list_of(str), help=f"Methods to sweep{suffix}")
    else:
        parser.add_argument("--method", choices=METHODS, help="Finetuning method")
    parser.add_argument("--alpha", type=kind(float), help=f"Supervised weight for s2p/ssil{suffix}")
    parser.add_argument("--beta", type=kind(float), help=f"MixData pretraining fraction{suffix}")
    parser.add_argument("--k1", type=kind(int), help=f"Teacher interactive steps per iteration{suffix}")
    parser.add_argument("--k2", type=kind(int), help=f"Student sender imitation steps{suffix}")
    parser.add_argument("--k2-prime", dest="k2_prime", type=kind(int), help=f"Student receiver imitation steps{suffix}")
    parser.add_argument("--tau", type=kind(float), help=f"Gumbel temperature{suffix}")
    parser.add_argument("--steps", type=int, help="Total interactive steps")
    parser.add_argument("--eval-interval", dest="eval_interval", type=int, help="Steps between evaluations")
    parser.add_argument("--workers", type=int, help="Parallel run slots")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftlab",
        description="Language drift lab: pretrain, finetune and evaluate pivot-translation agents",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
    python run-experiment.py gen-data --preset smoke
    python run-experiment.py pretrain --seeds 1,2,3
    python run-experiment.py finetune --method ssil --alpha 0.5
    python run-experiment.py sweep --preset paper-shape --workers 4
    python run-experiment.py sweep --alpha 0,0.1,0.5,1.0 --seeds 1,2,3
    python run-experiment.py eval runs/run/ssil/1/ckpt/step-012000.ckpt
    python run-experiment.py plot runs/run/*/*/metrics.csv --out figures
    python run-experiment.py gradcheck

Exit codes: 0 success, 1 failure, 2 usage error, 3 invalid config
""",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="Build the game and write its corpora")
    _add_config_args(p)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("pretrain", help="Pretrain (and cache) agents for each seed")
    _add_config_args(p)
    p.set_defaults(handler=cmd_pretrain)

    p = sub.add_parser("finetune", help="Finetune with one method for each seed")
    _add_config_args(p)
    _add_run_args(p, listed=False)
    p.set_defaults(handler=cmd_finetune)

    p = sub.add_parser("sweep", help="Cartesian product over listed hyperparameters × seeds")
    _add_config_args(p)
    _add_run_args(p, listed=True)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("eval", help="Evaluate a saved agents checkpoint")
    p.add_argument("checkpoint", help="Checkpoint file")
    _add_config_args(p)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("gradcheck", help="Finite-difference check of the autodiff engine")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probes", type=int, default=20, help="Coordinates probed per check")
    p.add_argument("--gumbel-rows", dest="gumbel_rows", type=int, default=3,
                   help="Logit vectors in the straight-through check")
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("plot", help="Draw SVG figures from metrics CSVs")
    p.add_argument("csv", nargs="+", help="metrics.csv files")
    p.add_argument("--out", "-o", help="Output directory (default: plots)")
    p.add_argument("--metrics", type=_list_of(str), help="Metrics to draw")
    p.add_argument("--title", help="Figure title prefix")
    p.set_defaults(handler=cmd_plot)
    return parser


def cli(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s - %(levelname)s - %(message)s",
    )
    try:
        return args.handler(args)
    except (ConfigError, ValidationError) as e:
        first = str(e).splitlines()
        print(f"❌ Invalid config: {' '.join(first[:3])}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        code = EXIT_CONFIG if getattr(args, "config", None) and str(args.config) in str(e) else EXIT_FAILURE
        print(f"❌ {e}", file=sys.stderr)
        return code
    except (DriftLabError, OSError, ValueError, ArithmeticError) as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
