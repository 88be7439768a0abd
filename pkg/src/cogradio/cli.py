"""``cogradio`` command-line entry point.

Exit codes: 0 on success, 2 for configuration or usage errors, 3 for
numeric failures (non-convergent special functions, undefined sensing
time, diverging training).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, harness
from .config import ConfigError, merged

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("cogradio")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="scenario JSON or a manifest.json to replay")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--paper-literal", action="store_true", default=None, help="use the as-printed formulas")


def _init_spec(text: str) -> tuple[str, float]:
    mode, _, scale = text.partition(":")
    try:
        value = float(scale) if scale else 0.5
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad scale in {text!r}") from None
    if mode not in ("uniform", "constant"):
        raise argparse.ArgumentTypeError(f"init mode must be uniform or constant, got {mode!r}")
    return mode, value


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cogradio", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("roc", help="analytic vs Monte-Carlo detector ROC")
    _common(p)
    p.add_argument("--trials", type=int, help=f"Monte-Carlo trials per hypothesis (>= {harness.MIN_TRIALS})")
    p.add_argument("--plot", action="store_true", help="also write roc.svg")

    p = sub.add_parser("sense-plan", help="sensing time, control time and channels per user")
    _common(p)

    p = sub.add_parser("simulate", help="run the slotted MAC simulation")
    _common(p)

    p = sub.add_parser("sweep", help="throughput against secondary-user density")
    _common(p)
    p.add_argument("--densities", type=float, nargs="+", help="users per km^2, ascending")
    p.add_argument("--jobs", type=int, default=None, help="worker processes across densities")
    p.add_argument("--plot", action="store_true", help="also write sweep.svg")

    p = sub.add_parser("train", help="train the occupancy predictor")
    _common(p)
    p.add_argument("--model-format", choices=("bin", "json"), default=None)
    p.add_argument("--init", type=_init_spec, help="weight init as MODE:SCALE, e.g. constant:0.5 or uniform:0.5")

    p = sub.add_parser("report", help="summarize and verify run manifests")
    p.add_argument("dirs", nargs="+", help="run directories or manifest files")
    p.add_argument("--out", help="also write report.json here")
    return ap


def _pick(cli_value, replay: dict | None, key: str, default):
    if cli_value is not None:
        return cli_value
    if replay is not None and key in replay:
        return replay[key]
    return default


def run(args: argparse.Namespace) -> int:
    if args.command == "report":
        entries, text = harness.cmd_report(args.dirs, args.out)
        print(text)
        bad = any(v != "ok" for e in entries for v in e["files"].values())
        return EXIT_CONFIG if bad or not entries else EXIT_OK

    cfg, replay = harness.load_run_config(args.config)
    if replay is not None and replay["command"] != args.command:
        raise ConfigError("command", f"manifest was written by {replay['command']!r}, not {args.command!r}")
    margs = replay["args"] if replay else None
    cfg = merged(cfg, seed=args.seed, paper_literal=args.paper_literal)
    if cfg.seed < 0:
        raise ConfigError("seed", "must be nonnegative")
    out = args.out or cfg.output_dir or str(Path("runs") / args.command)

    if args.command == "roc":
        trials = _pick(args.trials, margs, "trials", 10_000)
        res = harness.cmd_roc(cfg, out, trials, plot=args.plot)
    elif args.command == "sense-plan":
        _, table = harness.cmd_sense_plan(cfg, args.out)
        print(table)
        return EXIT_OK
    elif args.command == "simulate":
        res = harness.cmd_simulate(cfg, out)
        print(json.dumps(res.data["summary"], indent=2, sort_keys=True))
    elif args.command == "sweep":
        dens = _pick(args.densities, margs, "densities", None)
        res = harness.cmd_sweep(cfg, out, dens, jobs=args.jobs or 1, plot=args.plot)
    elif args.command == "train":
        if args.init is not None:
            rnn = replace(cfg.predictor.rnn, init_mode=args.init[0], init_weight=args.init[1])
            cfg.predictor = replace(cfg.predictor, rnn=rnn)
        fmt = _pick(args.model_format, margs, "model_format", "bin")
        res = harness.cmd_train(cfg, out, fmt)
        m = res.data["metrics"]
        for key in ("rmse_train", "rmse_validation_test", "mse", "psnr_db", "snr_db"):
            print(f"{key:<22} {harness.fmt(m[key])}")
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError("command", f"unknown command {args.command!r}")
    print(f"wrote {', '.join(sorted(res.files))} to {res.out_dir}", file=sys.stderr)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return run(args)
    except ArithmeticError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:  # ConfigError and module precondition errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
