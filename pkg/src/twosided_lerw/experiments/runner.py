"""Run registered experiments and persist CSV + JSON summaries."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .registry import REGISTRY, Outcome, Row

CSV_FIELDS = ("experiment", "scale", "quantity", "value", "stderr", "n_samples", "seed", "backend")


@dataclass
class ResultRecord:
    experiment: str
    criterion: int
    config_hash: str
    config: dict
    rows: list
    checks: dict
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(self.checks.values())

    def summary_line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        failed = [k for k, v in self.checks.items() if not v]
        tail = f" (failed: {'; '.join(failed)})" if failed else ""
        return f"[{status}] criterion {self.criterion} {self.experiment}{tail}"


def get_experiment(name: str):
    if name not in REGISTRY:
        raise KeyError(f"unknown experiment id {name!r}; known: {', '.join(sorted(REGISTRY))}")
    return REGISTRY[name]


def validate(cfg: ExperimentConfig) -> list[str]:
    """Dry-run checks: known id and module guards. Returns the problems."""
    if cfg.experiment not in REGISTRY:
        return [f"unknown experiment id {cfg.experiment!r}"]
    exp = REGISTRY[cfg.experiment]
    return list(exp.guard(exp.complete(cfg)))


def run(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> ResultRecord:
    exp = get_experiment(cfg.experiment)
    cfg = exp.complete(cfg)
    problems = validate(cfg)
    if problems:
        raise ConfigError(problems)
    t0 = time.time()
    outcome: Outcome = exp.runner(cfg)
    rec = ResultRecord(cfg.experiment, exp.criterion, cfg.hash(), cfg.to_dict(), outcome.rows,
                       {k: bool(v) for k, v in outcome.checks.items()}, outcome.details,
                       time.time() - t0)
    if out_dir is not None:
        write_outputs(rec, out_dir)
    return rec


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def write_outputs(rec: ResultRecord, out_dir) -> tuple[Path, Path]:
    """<out>/<id>-<hash>.csv and .json; the JSON embeds the config verbatim."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{rec.experiment}-{rec.config_hash}"
    csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for r in rec.rows:
            d = asdict(r)
            w.writerow([d[k] if d[k] is not None else "" for k in CSV_FIELDS])
    summary = {"experiment": rec.experiment, "criterion": rec.criterion,
               "config_hash": rec.config_hash, "config": rec.config, "passed": rec.passed,
               "checks": rec.checks, "details": rec.details, "seconds": rec.seconds,
               "n_rows": len(rec.rows)}
    with open(json_path, "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
    return csv_path, json_path
