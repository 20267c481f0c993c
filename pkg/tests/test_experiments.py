import csv
import json
from importlib import resources

import numpy as np
import pytest
import yaml

from twosided_lerw.cli import main
from twosided_lerw.experiments import (
    REGISTRY,
    ConfigError,
    from_dict,
    load_config,
    run,
    validate,
)
from twosided_lerw.experiments.runner import CSV_FIELDS


def test_registry_covers_twelve_criteria():
    assert len(REGISTRY) == 12
    assert sorted(e.criterion for e in REGISTRY.values()) == list(range(1, 13))
    for e in REGISTRY.values():
        assert e.statement and e.title


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_bundled_configs_match_defaults(name):
    path = resources.files("twosided_lerw") / "configs" / f"{name}.yaml"
    cfg = load_config(path)
    assert cfg.experiment == name
    assert validate(cfg) == []
    assert cfg.hash() == REGISTRY[name].config().hash()


@pytest.mark.parametrize("raw,field", [
    ({"d": [2]}, "experiment"),
    ({"experiment": "x", "d": [4]}, "d"),
    ({"experiment": "x", "scales": [-1.0]}, "scales"),
    ({"experiment": "x", "budgets": {"walks": 0}}, "budgets"),
    ({"experiment": "x", "seed": -3}, "seed"),
    ({"experiment": "x", "colour": "red"}, "unknown"),
])
def test_config_errors_name_the_field(raw, field):
    with pytest.raises(ConfigError) as exc:
        from_dict(raw)
    assert any(p.startswith(field) for p in exc.value.problems)


def test_config_hash_and_streams():
    a = from_dict({"experiment": "measure-identity", "seed": 5, "out": "a"})
    b = from_dict({"experiment": "measure-identity", "seed": 5, "out": "b"})
    c = from_dict({"experiment": "measure-identity", "seed": 6})
    assert a.hash() == b.hash() != c.hash()
    assert a.stream(3).random() == b.stream(3).random()
    assert a.stream(0).random() != a.stream(1).random()


def test_guard_rejects_large_exact_scale():
    cfg = REGISTRY["measure-identity"].config(scales=[2.0, 5.0])
    assert validate(cfg)
    with pytest.raises(ConfigError):
        run(cfg)


def test_exact_run_writes_outputs(tmp_path):
    cfg = REGISTRY["disconnecting-universality"].config(scales=[1.5, 2.0])
    rec = run(cfg, tmp_path)
    assert rec.passed
    stem = f"disconnecting-universality-{cfg.hash()}"
    with open(tmp_path / f"{stem}.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_FIELDS and len(rows) > 1
    summary = json.loads((tmp_path / f"{stem}.json").read_text())
    assert summary["config"]["scales"] == [1.5, 2.0]
    assert summary["passed"] is True


def test_monte_carlo_run_is_reproducible():
    cfg = REGISTRY["sampler-equivalence"].config(budgets={"samples": 2000})
    r1, r2 = run(cfg), run(cfg)
    assert [(r.quantity, r.value) for r in r1.rows] == [(r.quantity, r.value) for r in r2.rows]
    cfg.seed += 1
    r3 = run(cfg)
    assert [r.value for r in r3.rows] != [r.value for r in r1.rows]


def test_cli_commands(tmp_path, capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    assert all(name in out for name in REGISTRY)
    assert main(["describe", "theorem-ladder"]) == 0
    assert "criterion: 7" in capsys.readouterr().out
    assert main(["describe", "nope"]) == 2
    good = tmp_path / "good.yaml"
    good.write_text(yaml.safe_dump({"experiment": "disconnecting-universality",
                                    "scales": [1.5, 2.0], "out": str(tmp_path / "res")}))
    assert main(["validate", "--config", str(good)]) == 0
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"experiment": "measure-identity", "scales": [9.0]}))
    assert main(["validate", "--config", str(bad)]) == 1
    broken = tmp_path / "broken.yaml"
    broken.write_text("experiment: 3\nseed: -1\n")
    assert main(["validate", "--config", str(broken)]) == 2
    assert main(["run", "--experiment", "disconnecting-universality", "--config", str(good)]) == 0
    assert "[PASS] criterion 6" in capsys.readouterr().out
    assert len(list((tmp_path / "res").glob("*.csv"))) == 1
