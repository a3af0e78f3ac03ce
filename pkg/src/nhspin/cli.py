"""Command line: ``nhspin run|preset|list-presets|validate|show-preset``."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import ConfigError, parse_config, preset, scenario_presets, serialize
from .runner import OUT_ENV, run_experiment, write_error

EXIT_OK, EXIT_RUN, EXIT_CONFIG = 0, 1, 2


def _out_dir(args, name):
    if args.out:
        return args.out
    return os.path.join(os.environ.get(OUT_ENV, "nhspin_out"), name)


def _execute(spec, args, name):
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    out = _out_dir(args, name)
    try:
        meta = run_experiment(spec, out, threads=args.threads, name=name)
    except Exception as exc:  # reported as a machine-readable error document
        doc = write_error(out, exc, name)
        print(json.dumps(doc), file=sys.stderr)
        return EXIT_RUN
    print(f"{name}: wrote {', '.join(meta['files'])} to {out} ({meta['wall_time_s']:.2f} s)")
    return EXIT_OK


def _config_error(exc, out=None, name=None):
    doc = write_error(out, exc, name)
    print(json.dumps(doc), file=sys.stderr)
    return EXIT_CONFIG


def cmd_run(args):
    name = os.path.splitext(os.path.basename(args.config))[0]
    try:
        spec = parse_config(args.config)
    except (ConfigError, OSError) as exc:
        return _config_error(exc, args.out, name)
    return _execute(spec, args, name)


def cmd_preset(args):
    try:
        spec = preset(args.name)
    except ConfigError as exc:
        return _config_error(exc, args.out, args.name)
    return _execute(spec, args, args.name)


def cmd_list(_args):
    for name, spec in scenario_presets().items():
        print(f"{name:18s} {spec.scenario}")
    return EXIT_OK


def cmd_validate(args):
    try:
        spec = parse_config(args.config)
    except (ConfigError, OSError) as exc:
        return _config_error(exc)
    print(f"ok: scenario {spec.scenario}")
    return EXIT_OK


def cmd_show(args):
    try:
        print(serialize(preset(args.name)), end="")
    except ConfigError as exc:
        return _config_error(exc)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nhspin", description="Pumped electron/nuclear spin transport simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp):
        sp.add_argument("--seed", type=int, default=None, help="override master_seed")
        sp.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV}/<name> or ./nhspin_out/<name>)")
        sp.add_argument("--threads", type=int, default=1, help="trajectory threads (results do not depend on it)")

    r = sub.add_parser("run", help="run a YAML config")
    r.add_argument("config")
    run_flags(r)
    r.set_defaults(func=cmd_run)

    pr = sub.add_parser("preset", help="run a named preset")
    pr.add_argument("name")
    run_flags(pr)
    pr.set_defaults(func=cmd_preset)

    sub.add_parser("list-presets", help="list preset names").set_defaults(func=cmd_list)

    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("show-preset", help="print a preset as YAML")
    s.add_argument("name")
    s.set_defaults(func=cmd_show)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
