import math
from collections import Counter

import numpy as np
import pytest

from twosided_lerw.lattice import enumerate_saws, norm2
from twosided_lerw.lerw import (
    ConditionedWalkSpec,
    extend,
    extension_law,
    in_W,
    laplacian_step_law,
    log_F_punctured,
    mu_nm_exact,
    mu_nm_weight_bounds,
    mu_weight,
    sample_conditioned_walk,
    sample_mu_cw,
    sample_mu_exact,
    sample_mu_truncated,
    saw_table,
)


def tv(counts: Counter, law: dict, n: int) -> float:
    keys = set(counts) | set(law)
    return 0.5 * sum(abs(counts.get(k, 0) / n - law.get(k, 0.0)) for k in keys)


@pytest.mark.parametrize("radius,d", [(1.0, 2), (2.0, 2), (2.3, 2), (1.5, 3)])
def test_mu_sums_to_one(radius, d):
    assert saw_table(radius, d).weights.sum() == pytest.approx(1.0, abs=1e-9)


def test_in_W():
    assert in_W([(0, 0), (1, 0), (2, 0)], 2.0)
    assert not in_W([(0, 0), (1, 0)], 2.0)
    assert not in_W([(0, 0), (1, 0), (0, 0), (-1, 0), (-2, 0)], 2.0)
    with pytest.raises(ValueError):
        mu_weight([(0, 0), (1, 0)], radius=2.0)


def test_log_F_rejects_origin():
    assert log_F_punctured([], 2) == 0.0
    with pytest.raises(ValueError):
        log_F_punctured([(0, 0)], 2)


def test_laplacian_chain_rule_reproduces_weights():
    tab = saw_table(2.0, 2)
    for eta, w in zip(tab.paths[:40], tab.weights[:40]):
        p = 1.0
        for k in range(1, len(eta)):
            sites, probs = laplacian_step_law(eta[:k])
            assert probs.sum() == pytest.approx(1.0, abs=1e-10)
            p *= probs[sites.index(eta[k])]
        assert p == pytest.approx(w, rel=1e-8)


@pytest.mark.parametrize("sampler", ["laplacian", "conditioned"])
def test_samplers_match_exact_law(sampler):
    rng = np.random.default_rng(3)
    tab = saw_table(2.0, 2)
    n = 40000
    if sampler == "laplacian":
        s = sample_mu_exact(2.0, rng, n)
    else:
        s = sample_mu_cw(2.0, rng, n)
    assert tv(Counter(s), dict(zip(tab.paths, tab.weights)), n) < 0.03


def test_conditioned_sampler_d3():
    rng = np.random.default_rng(4)
    tab = saw_table(1.5, 3)
    n = 40000
    s = sample_mu_cw(1.5, rng, n, d=3)
    assert tv(Counter(s), dict(zip(tab.paths, tab.weights)), n) < 0.04


def test_extension_marginalises_to_smaller_measure():
    small = saw_table(1.5, 2)
    big = saw_table(2.3, 2)
    marg = Counter()
    for p, w in zip(big.paths, big.weights):
        k = next(i for i, x in enumerate(p) if norm2(x) >= 1.5 ** 2)
        marg[p[:k + 1]] += w
    for p, w in zip(small.paths, small.weights):
        assert marg[p] == pytest.approx(w, abs=1e-10)


def test_extend_sampler_matches_extension_law():
    rng = np.random.default_rng(6)
    eta = ((0, 0), (1, 0), (1, 1))
    law = extension_law(eta, 2.3)
    assert sum(law.values()) == pytest.approx(1.0)
    n = 20000
    s = extend(eta, 2.3, rng, n)
    assert all(p[:3] == eta for p in s)
    assert tv(Counter(s), law, n) < 0.03


def test_truncated_sampler_guard_and_support():
    rng = np.random.default_rng(7)
    with pytest.raises(ValueError):
        sample_mu_truncated(2.0, 0.5, rng)
    W = set(enumerate_saws(2.0, 2))
    assert all(p in W for p in sample_mu_truncated(2.0, 1.0, rng, 500))


def test_mu_nm_is_probability_and_bounds_ordered():
    law = mu_nm_exact(1.0, 3.0)
    assert sum(law.values()) == pytest.approx(1.0, abs=1e-9)
    eta = next(iter(law))
    lo, hi = mu_nm_weight_bounds(eta, 0.5)
    assert 0 < lo <= hi


def test_conditioned_walk_avoids_set():
    rng = np.random.default_rng(8)
    spec = ConditionedWalkSpec(avoided=[(0, 0), (1, 0)], start=(1, 0))
    for _ in range(20):
        walk, capped = sample_conditioned_walk(spec, rng, stop_radius=6.0)
        assert not capped
        assert all(x not in spec.avoided for x in walk[1:])
        assert norm2(walk[-1]) >= 36
