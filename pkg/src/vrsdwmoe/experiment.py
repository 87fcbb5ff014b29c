"""Configuration-driven experiment runs and grid sweeps.

A configuration is a nested mapping (read from YAML) whose defaults mirror
the reference setting: batch size 256, learning rate 0.001, gate-loss weight
0.01, a 10000-interaction reservoir and four negatives per positive.
"""
from __future__ import annotations

import copy
import itertools
import json
import logging
import os
import traceback
from pathlib import Path

import numpy as np
import yaml

from .dwmoe import DwmoeModel, ModelConfig
from .evaluation import EvaluationConfig, PairIndex, prequential_run
from .ingest import (ConfigError, RatingLog, StreamConfig, chronological_split, dump_mapping,
                     load_dataset)
from .sampling import SamplerConfig
from .synthetic import BlockSpec, make_block_stream
from .train import StreamingTrainer, TrainConfig

log = logging.getLogger(__name__)

DEFAULTS: dict = {
    "dataset": {
        "path": None,
        "format": "csv",  # "movielens" implies the "::" delimiter
        "delimiter": None,
        "skip_header": False,
        "min_count": 10,
        "sample_users": None,
        "dump_mapping": False,
        "synthetic": None,
    },
    "stream": {"train_fraction": 0.9, "s_p": 256, "s_r": 256},
    "sampler": {"strategy": "VRS", "delta": 0.5, "lambda_res": 1.01, "lambda_new": 1.01,
                "capacity": 10000},
    "model": {"n_e": 8, "dim": 32, "widths": [32, 16], "expert_activation": "relu",
              "expert_output_activation": "identity", "gate_activation": "relu",
              "output_activation": "sigmoid", "inter_dim": None, "init_scale": 0.05,
              "id_space": "dataset", "id_headroom": 0},
    "train": {"learning_rate": 0.001, "gamma": 0.01, "n_negative": 4, "l2": 1e-6,
              "epochs_per_batch": 1, "gate_loss": "example"},
    "eval": {"k": 10, "n_negatives": 99, "tie_policy": "random"},
    "seed": 0,
    "output": "runs/default",
}

# sections whose contents are free-form mappings
_OPEN_KEYS = {("dataset", "synthetic")}


def _merge(base: dict, override: dict, path: tuple = ()) -> dict:
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        where = path + (key,)
        if key not in base:
            raise ConfigError(f"unknown config key {'.'.join(where)!r}")
        if isinstance(base[key], dict) and where not in _OPEN_KEYS:
            if not isinstance(value, dict):
                raise ConfigError(f"{'.'.join(where)} must be a mapping")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def set_dotted(config: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = config
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node = node[k]
        if node is None:
            raise ConfigError(f"cannot set {dotted!r}: parent is empty")
    if not isinstance(node, dict) or (keys[-1] not in node and not _is_open(keys[:-1])):
        raise ConfigError(f"unknown config key {dotted!r}")
    node[keys[-1]] = value


def _is_open(prefix: list[str]) -> bool:
    return any(tuple(prefix[:len(k)]) == k for k in _OPEN_KEYS)


def parse_assignment(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def resolve_config(config: dict | None = None, overrides=()) -> dict:
    """Defaults <- `config` <- ``key=value`` overrides, validated."""
    resolved = _merge(DEFAULTS, config or {})
    for item in overrides:
        key, value = parse_assignment(item) if isinstance(item, str) else item
        set_dotted(resolved, key, value)
    build_components(resolved, n_users=1, n_items=1)  # validation only
    return resolved


def load_config(path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def build_components(cfg: dict, n_users: int, n_items: int):
    m = dict(cfg["model"])
    id_space, headroom = m.pop("id_space"), int(m.pop("id_headroom"))
    if id_space not in ("dataset", "train"):
        raise ConfigError("model.id_space must be 'dataset' or 'train'")
    if headroom < 0:
        raise ConfigError("model.id_headroom must be >= 0")
    stream = StreamConfig(**cfg["stream"])
    model_cfg = ModelConfig(n_users=n_users + headroom, n_items=n_items + headroom,
                            **{**m, "widths": tuple(m["widths"])})
    sampler = SamplerConfig(batch_size=stream.s_p, **cfg["sampler"])
    train = TrainConfig(batch_size=stream.s_p, seed=int(cfg["seed"]), **cfg["train"])
    ev = cfg["eval"]
    if ev["tie_policy"] not in ("random", "optimistic", "pessimistic"):
        raise ConfigError(f"unknown tie policy {ev['tie_policy']!r}")
    evaluation = EvaluationConfig(k=int(ev["k"]), n_negatives=int(ev["n_negatives"]),
                                  tie_policy=ev["tie_policy"], seed=int(cfg["seed"]))
    return stream, model_cfg, sampler, train, evaluation


def load_log(cfg: dict) -> RatingLog:
    ds = cfg["dataset"]
    if ds["synthetic"] is not None:
        spec = dict(ds["synthetic"])
        spec.setdefault("seed", cfg["seed"])
        return make_block_stream(BlockSpec(**spec)).log
    if not ds["path"]:
        raise ConfigError("dataset.path or dataset.synthetic must be set")
    if not os.path.exists(ds["path"]):
        raise FileNotFoundError(ds["path"])
    delim = ds["delimiter"] or ("::" if ds["format"] == "movielens" else ",")
    return load_dataset(ds["path"], delim, int(ds["min_count"]), ds["sample_users"],
                        int(cfg["seed"]), bool(ds["skip_header"]))


def prequential_from_config(cfg: dict, rlog: RatingLog | None = None, on_record=None):
    """Build model and trainer from a resolved config and run the prequential protocol.

    Returns ``(PrequentialResult, parts)`` where `parts` holds the split and
    the component configs.
    """
    rlog = rlog if rlog is not None else load_log(cfg)
    inter = rlog.interactions
    stream_cfg = StreamConfig(**cfg["stream"])
    train, test = chronological_split(inter, stream_cfg.train_fraction)
    if cfg["model"]["id_space"] == "train":
        n_users = int(train.user.max()) + 1 if len(train) else 0
        n_items = int(train.item.max()) + 1 if len(train) else 0
    else:
        n_users, n_items = rlog.n_users, rlog.n_items
    _, model_cfg, sampler, train_cfg, eval_cfg = build_components(cfg, n_users, n_items)

    seeds = np.random.SeedSequence(int(cfg["seed"])).generate_state(2)
    model = DwmoeModel(model_cfg, seed=int(seeds[0]))
    trainer = StreamingTrainer(model, sampler, train_cfg)
    known = PairIndex.from_interactions(inter, model_cfg.n_items)
    log.info("dataset: %d users, %d items, %d interactions (%d train / %d test); scenario %s",
             rlog.n_users, rlog.n_items, len(inter), len(train), len(test), stream_cfg.scenario)
    result = prequential_run(trainer, train, test, stream_cfg.s_r, known, eval_cfg, on_record)
    parts = dict(stream=stream_cfg, model=model_cfg, sampler=sampler, train_config=train_cfg,
                 eval=eval_cfg, train=train, test=test, trainer=trainer)
    return result, parts


def run_experiment(config: dict, out_dir=None) -> dict:
    """Ingest, run prequential evaluation and write the report files.

    Writes ``metrics.jsonl`` (one record per chunk), ``summary.json`` and
    ``resolved_config.yaml`` into the output directory; returns the summary.
    """
    cfg = resolve_config(config)
    out = Path(out_dir if out_dir is not None else cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "resolved_config.yaml", "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)

    rlog = load_log(cfg)
    if cfg["dataset"]["dump_mapping"]:
        dump_mapping(rlog.user_ids, out / "users.tsv")
        dump_mapping(rlog.item_ids, out / "items.tsv")

    with open(out / "metrics.jsonl", "w") as fh:
        def write(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        result, parts = prequential_from_config(cfg, rlog, write)
        write({"phase": "final", **result.summary.as_dict()})
    summary = {
        "hr": result.summary.hr_at_k,
        "ndcg": result.summary.ndcg_at_k,
        "k": parts["eval"].k,
        "n_evaluated": result.summary.n_evaluated,
        "n_skipped": result.summary.n_skipped,
        "n_users": rlog.n_users,
        "n_items": rlog.n_items,
        "n_interactions": len(rlog.interactions),
        "n_train": len(parts["train"]),
        "n_test": len(parts["test"]),
        "scenario": parts["stream"].scenario,
        "strategy": parts["sampler"].strategy,
        "n_e": parts["model"].n_e,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def _tag(point: dict) -> str:
    return "__".join(f"{k}={v}" for k, v in point.items()) or "base"


def sweep(template: dict, grid: dict | None, out_dir, jobs: int = 1) -> list[dict]:
    """Run `template` once per point of the cartesian `grid` (key -> values).

    Failures are recorded and the sweep carries on.  An empty grid is a single
    run of the template.
    """
    grid = grid or {}
    base = resolve_config(template)
    probe = copy.deepcopy(base)
    for key, values in grid.items():
        set_dotted(probe, key, values[0] if values else None)  # unknown keys fail early
    keys = list(grid)
    points = [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]
    out_dir = Path(out_dir)
    tasks = []
    for point in points:
        cfg = copy.deepcopy(base)
        for k, v in point.items():
            set_dotted(cfg, k, v)
        tasks.append((point, cfg, out_dir / _tag(point)))

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_run_point, tasks))
    else:
        results = [_run_point(t) for t in tasks]

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.json", "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True, default=str)
    return results


def _run_point(task) -> dict:
    point, cfg, out = task
    try:
        summary = run_experiment(cfg, out)
        return {"tag": _tag(point), "point": point, "status": "ok", "summary": summary,
                "dir": str(out)}
    except Exception as exc:  # a failed grid point must not stop the sweep
        log.error("sweep point %s failed: %s", _tag(point), exc)
        return {"tag": _tag(point), "point": point, "status": "failed", "error": repr(exc),
                "traceback": traceback.format_exc(), "dir": str(out)}


EXPERIMENT_GRIDS = {
    # VRS with eight experts across receiving speeds
    "speeds": ({"sampler": {"strategy": "VRS"}, "model": {"n_e": 8}},
               {"stream.s_r": [128, 256, 512]}),
    # sampling strategies in the underload scenario
    "sampling": ({"stream": {"s_r": 128}}, {"sampler.strategy": ["VRS", "NDO", "RR", "SW"]}),
    # number of experts in the overload scenario
    "experts": ({"stream": {"s_r": 512}}, {"model.n_e": [2, 4, 6, 8]}),
}
