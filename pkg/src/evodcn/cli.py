"""Command-line entry points: stream generation and config-driven runs."""

from __future__ import annotations

import argparse
import json
import sys

from .harness import ExperimentConfig, run_from_config, write_report
from .streams import gen_hyperplane, gen_sea, save_csv

USAGE_ERROR = 2


def _parse_override(text: str):
    """key.path=value with JSON-decoded values (bare words stay strings)."""
    if "=" not in text:
        raise ValueError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _apply_override(cfg_dict: dict, key: str, value):
    parts = key.split(".")
    node = cfg_dict
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value


def cmd_gen(args) -> int:
    if args.generator == "sea":
        x, y = gen_sea(args.n, args.noise, args.seed)
    else:
        x, y = gen_hyperplane(args.n, args.u, args.drift_rate, args.seed)
    save_csv(args.out, x, y)
    print(f"wrote {x.shape[0]} samples x {x.shape[1]} features to {args.out}")
    return 0


def cmd_run(args) -> int:
    try:
        with open(args.config) as fh:
            cfg_dict = json.load(fh)
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except json.JSONDecodeError as exc:
        print(f"config is not valid JSON: {exc}", file=sys.stderr)
        return USAGE_ERROR

    for ov in args.override or []:
        try:
            key, value = _parse_override(ov)
        except ValueError as exc:
            print(str(exc), file=sys.stderr)
            return USAGE_ERROR
        _apply_override(cfg_dict, key, value)
    if args.ablate_lcl:
        cfg_dict["enable_lcl"] = False
    if args.outdir:
        cfg_dict["outdir"] = args.outdir

    try:
        cfg = ExperimentConfig.from_dict(cfg_dict)
    except TypeError as exc:
        print(f"bad config field: {exc}", file=sys.stderr)
        return USAGE_ERROR

    report = run_from_config(cfg)
    outdir = cfg.outdir or "run_output"
    write_report(outdir, cfg, report)
    print(f"prequential accuracy: {report.preq_mean:.4f}")
    if report.transfer_defined:
        print(f"task accuracy: {report.task_acc:.4f}  "
              f"bwt: {report.bwt:+.2f}  fwt: {report.fwt:+.2f}")
    print(f"outputs in {outdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evodcn",
                                description="Evolving deep clustering for data streams")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic stream as CSV")
    g.add_argument("generator", choices=["sea", "hyperplane"])
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", type=float, default=0.1,
                   help="label flip fraction (sea)")
    g.add_argument("--u", type=int, default=4, help="feature count (hyperplane)")
    g.add_argument("--drift-rate", type=float, default=0.001,
                   help="weight drift per sample (hyperplane)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--override", action="append", metavar="KEY=VALUE",
                   help="override a config entry (dotted path, JSON value)")
    r.add_argument("--ablate-lcl", action="store_true",
                   help="disable the continual-learning regularizer")
    r.add_argument("--outdir", help="output directory (default from config)")
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
