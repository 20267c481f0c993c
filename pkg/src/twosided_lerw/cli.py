"""Command line: run / list / describe / validate registered experiments."""
from __future__ import annotations

import argparse
import sys

import yaml

from .experiments import REGISTRY, ConfigError, from_dict, get_experiment, load_config, run, validate


def _config(args):
    exp = get_experiment(args.experiment)
    if args.config:
        cfg = load_config(args.config)
        if cfg.experiment != args.experiment:
            raise ConfigError([f"experiment: config names {cfg.experiment!r}"])
    else:
        cfg = exp.config()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out = args.out
    return cfg


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="twosided-lerw", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("--experiment", required=True)
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    sub.add_parser("list", help="list experiment ids")
    d = sub.add_parser("describe", help="show an experiment's defaults and property")
    d.add_argument("experiment")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("--experiment")
    v.add_argument("--config", required=True)
    args = p.parse_args(argv)
    try:
        if args.cmd == "list":
            for e in sorted(REGISTRY.values(), key=lambda e: e.criterion):
                print(f"{e.id:28s} {e.title}")
            return 0
        if args.cmd == "describe":
            e = get_experiment(args.experiment)
            print(f"id: {e.id}\ncriterion: {e.criterion}\ntitle: {e.title}\nanchor: {e.anchor}")
            print(f"property: {e.statement}")
            print(yaml.safe_dump({"defaults": e.defaults}, sort_keys=True).rstrip())
            return 0
        if args.cmd == "validate":
            cfg = load_config(args.config)
            if args.experiment and args.experiment != cfg.experiment:
                raise ConfigError([f"experiment: config names {cfg.experiment!r}"])
            problems = validate(cfg)
            for msg in problems:
                print(f"guard: {msg}")
            if not problems:
                print(f"ok {cfg.experiment} {cfg.hash()}")
            return 1 if problems else 0
        cfg = _config(args)
        rec = run(cfg, cfg.out)
        print(rec.summary_line())
        return 0 if rec.passed else 1
    except (ConfigError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
