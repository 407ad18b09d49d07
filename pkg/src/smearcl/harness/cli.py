"""Command line: ``generate``, ``run`` and ``report``.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Set
``SMEARCL_VERBOSITY`` (debug, info, warning, error) to change log output.
"""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..detector.estimator import TrainConfig
from ..strategies.runners import STRATEGIES, StrategyConfig, normalize_strategy
from ..synthgen import default_profiles, directional_profiles, generate_stream
from .config import ExperimentConfig
from .dataset_io import write_dataset
from .experiment import ExperimentError, ExperimentRecord, run_experiment
from .report import ReportError, write_report

log = logging.getLogger("smearcl")

VERBOSITY_ENV = "SMEARCL_VERBOSITY"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
REGULARIZED = ("ewc", "lwf")
PRESETS = ("clinical", "directional")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _strategy_list(text: str) -> tuple[str, ...]:
    if text.strip().lower() == "all":
        return STRATEGIES
    try:
        return tuple(normalize_strategy(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{text} must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smearcl", description="Continual learning for malaria smear cell detection.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="render a synthetic multi-site dataset")
    g.add_argument("--sites", type=_positive_int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--preset", choices=PRESETS, default="clinical",
                   help="clinical: five sites scaled from the clinical counts; "
                        "directional: three strongly shifted sites")
    g.add_argument("--scale", type=float, default=4.0, help="divide clinical counts by this")
    g.add_argument("--image-size", type=int, default=256)
    g.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")

    r = sub.add_parser("run", help="cross-validate strategies on a dataset")
    r.add_argument("--data", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--strategy", type=_strategy_list, default=("replay_conf",),
                   help=f"one of {{{'|'.join(s.replace('_', '-') for s in STRATEGIES)}}}, "
                        "a comma list, or 'all'")
    r.add_argument("--folds", type=int, default=3)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--epochs", type=_positive_int, default=50)
    r.add_argument("--patience", type=int, default=10)
    r.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="regularization strength for ewc (default 10) or lwf (default 1)")
    r.add_argument("--buffer-cap", type=int, default=125)
    r.add_argument("--buffer-pos-frac", type=_fraction, default=0.8)
    r.add_argument("--buffer-site-frac", type=_fraction, default=0.5)
    r.add_argument("--iou-tau", type=_fraction, default=0.5)
    r.add_argument("--conf-threshold", type=float, default=0.25)
    r.add_argument("--val-fraction", type=float, default=0.1)
    r.add_argument("--random-runs", type=_positive_int, default=3,
                   help="random-weight pipelines averaged for the forward-transfer reference")
    r.add_argument("--resume", action="store_true", help="continue an interrupted run in --out")
    r.add_argument("--force", action="store_true", help="discard an existing run in --out")
    r.add_argument("--no-report", action="store_true")

    s = sub.add_parser("report", help="tables and curves from one or more runs")
    s.add_argument("records", nargs="+", help="run output directories")
    s.add_argument("--out", required=True)
    s.add_argument("--no-plots", action="store_true")
    return p


def _configure_logging() -> None:
    level = os.environ.get(VERBOSITY_ENV, "info").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        level = "INFO"
    logging.basicConfig(level=getattr(logging, level), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


def cmd_generate(args) -> Path:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        if not args.force:
            raise ExperimentError(f"output directory {out} is not empty (use --force)")
        shutil.rmtree(out)
    if args.preset == "directional":
        profiles = directional_profiles(seed=args.seed, image_size=args.image_size)[: args.sites]
    else:
        profiles = default_profiles(scale=args.scale, seed=args.seed, image_size=args.image_size)[: args.sites]
    if len(profiles) < args.sites:
        raise UsageError(f"preset {args.preset!r} defines {len(profiles)} sites, {args.sites} requested")
    stream, _ = generate_stream(profiles)
    write_dataset(stream, out, profiles)
    log.info("wrote %d sites to %s", stream.T, out)
    return out


def config_from_args(args) -> ExperimentConfig:
    strategies = args.strategy
    ewc_lambda, lwf_lambda = StrategyConfig.ewc_lambda, StrategyConfig.lwf_lambda
    if args.lam is not None:
        targets = [s for s in strategies if s in REGULARIZED]
        if len(targets) > 1:
            raise UsageError("--lambda is ambiguous when both ewc and lwf are selected; run them separately")
        ignored = [s for s in strategies if s not in REGULARIZED]
        if ignored:
            log.warning("--lambda ignored for %s (only ewc and lwf use it)",
                        ", ".join(s.replace("_", "-") for s in ignored))
        if targets == ["ewc"]:
            ewc_lambda = args.lam
        elif targets == ["lwf"]:
            lwf_lambda = args.lam
    train = TrainConfig(epochs=args.epochs, patience=args.patience, conf_threshold=args.conf_threshold,
                        seed=args.seed)
    strategy = StrategyConfig(train=train, ewc_lambda=ewc_lambda, lwf_lambda=lwf_lambda,
                              buffer_cap=args.buffer_cap, buffer_pos_frac=args.buffer_pos_frac,
                              buffer_site_frac=args.buffer_site_frac, iou_tau=args.iou_tau)
    return ExperimentConfig(data=str(args.data), strategies=strategies, folds=args.folds, seed=args.seed,
                            val_fraction=args.val_fraction, random_baseline_runs=args.random_runs,
                            strategy=strategy)


def cmd_run(args) -> ExperimentRecord:
    try:
        config = config_from_args(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    record = run_experiment(config, args.out, resume=args.resume, force=args.force)
    if not args.no_report:
        write_report([record], Path(args.out) / "report")
    return record


def cmd_report(args) -> list[Path]:
    records = [ExperimentRecord.load(r) for r in args.records]
    return write_report(records, args.out, plots=not args.no_plots)


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"generate": cmd_generate, "run": cmd_run, "report": cmd_report}
    try:
        handlers[args.command](args)
    except UsageError as exc:
        print(f"smearcl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ExperimentError, ReportError, OSError, ValueError, FloatingPointError) as exc:
        print(f"smearcl: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK
