"""Command-line interface: ``locstat <command> [--config PATH] [--seed N] ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .errors import LocStatError
from .harness import COMMANDS, PRESETS, ExperimentConfig, emit_report, run_ensemble

FORMATS = ("csv", "json", "svg")


def _formats(text: str) -> tuple[str, ...]:
    out = tuple(f.strip() for f in text.split(",") if f.strip())
    bad = set(out) - set(FORMATS)
    if bad:
        raise argparse.ArgumentTypeError(f"unknown format(s) {sorted(bad)}; choose from {FORMATS}")
    return out


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="locstat", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, help=f"run the {name} experiment")
        s.add_argument("--config", help="JSON config; keys override the command preset")
        s.add_argument("--seed", type=_u64, help="master seed")
        s.add_argument("--trials", type=int, help="trials per system size")
        s.add_argument("--threads", type=int, default=1, help="worker processes")
        s.add_argument("--out", help="output directory")
        s.add_argument("--format", type=_formats, default=("csv", "json"),
                       help="comma-separated subset of csv,json,svg")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(command: str, path: str | None, seed=None, trials=None, out=None) -> ExperimentConfig:
    d = {"command": command, **PRESETS[command]}
    if path:
        with open(path) as fh:
            user = json.load(fh)
        if user.get("command", command) != command:
            raise LocStatError(f"config is for {user['command']!r}, not {command!r}")
        d.update(user)
    if seed is not None:
        d["seed"] = seed
    if trials is not None:
        d["trials"] = trials
    if out is not None:
        d["out"] = out
    return ExperimentConfig.from_dict(d)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.command, args.config, args.seed, args.trials, args.out)
        report = run_ensemble(cfg, threads=max(1, args.threads))
        if cfg.out:
            for path in emit_report(report, cfg.out, args.format):
                print(f"wrote {path}", file=sys.stderr)
    except (LocStatError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    failed = False
    for t in report.tests:
        stat = "n/a" if t.statistic is None else f"{t.statistic:.6g}"
        p = "" if t.p_value is None else f" p={t.p_value:.4g}"
        print(f"{t.verdict:9s} {t.name}: statistic={stat}{p} n={t.sample_size}")
        failed |= t.passed is False
    if report.exclusions:
        print(f"excluded trials: {report.exclusions}")
    return 1 if failed else 0


if __name__ == "__main__":
    raise SystemExit(main())
