"""Command-line entry point: ``vrsdwmoe run`` and ``vrsdwmoe sweep``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

import yaml

from .experiment import (EXPERIMENT_GRIDS, load_config, parse_assignment, resolve_config,
                         run_experiment, sweep)

log = logging.getLogger("vrsdwmoe")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML experiment configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. --set model.n_e=8 (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--sample-users", type=int, help="keep a random subset of N users")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vrsdwmoe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one prequential experiment")
    _common(run)
    sw = sub.add_parser("sweep", help="run an experiment per point of a parameter grid")
    _common(sw)
    sw.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2,...",
                    help="grid axis (repeatable); values parsed as YAML scalars")
    sw.add_argument("--preset", choices=sorted(EXPERIMENT_GRIDS),
                    help="one of the built-in experiment designs")
    sw.add_argument("--jobs", type=int, default=1, help="parallel processes")
    return parser


def _config_from_args(args) -> dict:
    base = load_config(args.config) if args.config else {}
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(("seed", args.seed))
    if args.out is not None:
        overrides.append(("output", args.out))
    if args.sample_users is not None:
        overrides.append(("dataset.sample_users", args.sample_users))
    return base, overrides


def _parse_grid(items) -> dict:
    grid = {}
    for item in items:
        key, _ = parse_assignment(item)
        raw = item.split("=", 1)[1]
        grid[key] = [yaml.safe_load(v) for v in raw.split(",") if v.strip()]
    return grid


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        base, overrides = _config_from_args(args)
        if args.command == "run":
            cfg = resolve_config(base, overrides)
            summary = run_experiment(cfg)
            print(json.dumps(summary, sort_keys=True))
            return 0

        grid = {}
        if args.preset:
            preset_cfg, preset_grid = EXPERIMENT_GRIDS[args.preset]
            grid = dict(preset_grid)
            base = resolve_config(_deep_update(preset_cfg, base), overrides)
        else:
            base = resolve_config(base, overrides)
        grid.update(_parse_grid(args.grid))
        results = sweep(base, grid, base["output"], jobs=args.jobs)
        for r in results:
            line = {"tag": r["tag"], "status": r["status"]}
            if r["status"] == "ok":
                line.update(hr=r["summary"]["hr"], ndcg=r["summary"]["ndcg"])
            print(json.dumps(line, sort_keys=True))
        return 0 if all(r["status"] == "ok" for r in results) else 1
    except (ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _deep_update(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_update(out[k], v)
        else:
            out[k] = v
    return out


if __name__ == "__main__":
    sys.exit(main())
