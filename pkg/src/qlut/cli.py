"""Command line entry point: ``qlut run | sweep | build-lut | inspect-lut``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .config import ConfigError, load_config
from .lut import load_lut, read_lut_header


def _overrides(args) -> dict:
    o: dict = {}
    if getattr(args, "seed", None) is not None:
        o["seed"] = args.seed
    if getattr(args, "estimator", None):
        o.setdefault("estimator", {})["kinds"] = [args.estimator]
    if getattr(args, "no_dither", False):
        o["dither"] = False
    if getattr(args, "materialize", False):
        o.setdefault("estimator", {})["table_mode"] = "materialized"
    if getattr(args, "workers", None) is not None:
        o["workers"] = args.workers
    return o


def _common(p, need_out=True):
    p.add_argument("--config", required=True, metavar="PATH", help="YAML run configuration")
    p.add_argument("--seed", type=int, metavar="U64", help="override the master seed")
    p.add_argument("--out", required=need_out, metavar="DIR", help="output directory")
    p.add_argument("--workers", type=int, metavar="K", help="parallel sweep points")
    p.add_argument("--estimator", choices=("mmse", "ml", "map", "lmmse"),
                   help="use this estimator only")
    p.add_argument("--no-dither", action="store_true", help="requantize without dither")
    p.add_argument("--materialize", action="store_true",
                   help="precompute every table entry (needs bits*N <= 24)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qlut", description="Look-up table correction of low-resolution ADC output.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="run one scenario"))
    _common(sub.add_parser("sweep", help="run the configured sweep"))
    _common(sub.add_parser("build-lut", help="build and save the correction table(s)"))
    p = sub.add_parser("inspect-lut", help="print a table file's header and summary")
    p.add_argument("path")
    return ap


def _summary(report) -> str:
    lines = []
    for p in report.points:
        tag = " ".join(f"{k}={v:.6g}" for k, v in p.label.items())
        if p.error:
            lines.append(f"[{tag}] error: {p.error}")
            continue
        for name, st in p.stages.items():
            vals = [f"{m}={getattr(st, m):.2f}" for m in ("mse_db", "sfdr_dbc", "evm_rms_db", "cfo_ratio_db")
                    if getattr(st, m) is not None]
            lines.append(f"{('[' + tag + '] ') if tag else ''}{name:<20} " + " ".join(vals))
    return "\n".join(lines)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import runner

    try:
        if args.command == "inspect-lut":
            header = read_lut_header(args.path)
            table = load_lut(args.path)
            _, vals, fb = table.items()
            print(json.dumps(header, indent=1, sort_keys=True))
            if vals.size:
                print(f"estimates: min {vals.min():.6g} max {vals.max():.6g} mean {vals.mean():.6g}")
            print(f"fallback entries: {int(np.sum(fb))}")
            return 0
        cfg = load_config(args.config, _overrides(args))
        if args.command == "run":
            tables: dict = {}
            report = runner.run_scenario(cfg, tables=tables if cfg.save_table else None)
            runner.emit_outputs(report, args.out, tables)
        elif args.command == "sweep":
            report = runner.sweep(cfg)
            runner.emit_outputs(report, args.out)
        else:  # build-lut: fill from the configured stream, then save
            tables = {}
            report = runner.run_scenario(cfg, tables=tables)
            if not tables:
                raise ConfigError("estimator.window: build-lut needs N >= 1")
            runner.emit_outputs(report, args.out, tables)
        print(_summary(report))
    except (ConfigError, OSError, ValueError) as exc:
        print(f"qlut: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
