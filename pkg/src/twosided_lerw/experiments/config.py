"""Experiment configuration: YAML files, validation, hashing, seed streams."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

FIELDS = ("experiment", "d", "scales", "budgets", "seed", "backend", "out", "params")


class ConfigError(ValueError):
    """Raised with the list of offending fields."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid config: " + "; ".join(problems))


@dataclass
class ExperimentConfig:
    experiment: str
    d: list = field(default_factory=lambda: [2])
    scales: list = field(default_factory=list)
    budgets: dict = field(default_factory=dict)
    seed: int = 0
    backend: str = "auto"
    out: str = "results"
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """sha256 of the canonical JSON form (the output path excluded)."""
        body = {k: v for k, v in self.to_dict().items() if k != "out"}
        blob = json.dumps(body, sort_keys=True, default=float)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def stream(self, i: int) -> np.random.Generator:
        """Worker stream i: SeedSequence(seed, spawn_key=(i,)). Streams do not
        depend on how many workers run, so results are order-free."""
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(i,)))

    def budget(self, key: str, default: int) -> int:
        return int(self.budgets.get(key, default))

    def param(self, key: str, default=None):
        return self.params.get(key, default)


def from_dict(raw: dict) -> ExperimentConfig:
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a mapping"])
    unknown = sorted(set(raw) - set(FIELDS))
    if unknown:
        problems.append(f"unknown fields: {', '.join(unknown)}")
    if "experiment" not in raw or not isinstance(raw.get("experiment"), str):
        problems.append("experiment: required string")
    d = raw.get("d", [2])
    d = [d] if isinstance(d, int) else d
    if not isinstance(d, list) or any(x not in (2, 3) for x in d):
        problems.append("d: must be 2, 3 or a list of them")
    scales = raw.get("scales", [])
    if not isinstance(scales, list) or any(not isinstance(s, (int, float)) or s <= 0 for s in scales):
        problems.append("scales: list of positive numbers")
    budgets = raw.get("budgets", {})
    if not isinstance(budgets, dict) or any(not isinstance(v, int) or v <= 0 for v in budgets.values()):
        problems.append("budgets: mapping to positive integers")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        problems.append("seed: nonnegative integer")
    for key, typ in (("backend", str), ("out", str), ("params", dict)):
        if key in raw and not isinstance(raw[key], typ):
            problems.append(f"{key}: expected {typ.__name__}")
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(raw["experiment"], list(d), [float(s) for s in scales],
                            dict(budgets), seed, raw.get("backend", "auto"),
                            raw.get("out", "results"), dict(raw.get("params", {})))


def load_config(path) -> ExperimentConfig:
    with open(Path(path)) as fh:
        return from_dict(yaml.safe_load(fh) or {})
