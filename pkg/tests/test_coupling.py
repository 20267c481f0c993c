import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twosided_lerw.coupling import (
    CouplingTrace,
    PairChain,
    SingleChain,
    couple_pair,
    maximal_coupling,
    maximal_coupling_law,
    one_sided_couple,
    tail_exponent,
    write_traces,
)
from twosided_lerw.twosided import PathPair, pair_classes

weights = st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3).filter(lambda w: sum(w) > 1e-3)


@given(weights, weights)
@settings(max_examples=100, deadline=None)
def test_maximal_coupling_law_marginals_and_overlap(a, b):
    p = {k: v / sum(a) for k, v in enumerate(a)}
    q = {k: v / sum(b) for k, v in enumerate(b)}
    law = maximal_coupling_law(p, q)
    for k in range(3):
        assert sum(w for (x, _), w in law.items() if x == k) == pytest.approx(p[k], abs=1e-12)
        assert sum(w for (_, y), w in law.items() if y == k) == pytest.approx(q[k], abs=1e-12)
    agree = sum(w for (x, y), w in law.items() if x == y)
    assert agree == pytest.approx(sum(min(p[k], q[k]) for k in range(3)), abs=1e-12)


def test_maximal_coupling_sampler_matches_law():
    rng = np.random.default_rng(0)
    p, q = {0: 0.5, 1: 0.3, 2: 0.2}, {0: 0.1, 1: 0.3, 3: 0.6}
    law = maximal_coupling_law(p, q)
    n = 40000
    counts = {}
    for _ in range(n):
        k = maximal_coupling(p, q, rng)
        counts[k] = counts.get(k, 0) + 1
    for k, w in law.items():
        assert abs(counts.get(k, 0) / n - w) < 4 * np.sqrt(w * (1 - w) / n) + 1e-4


@pytest.fixture(scope="module")
def single():
    return SingleChain((1.0, 1.2, 2.0, 2.3))


def test_single_chain_rows_are_stochastic(single):
    for l in range(single.n_levels - 1):
        for s in single.children[l]:
            _, p = single.row(l, s)
            assert p.sum() == pytest.approx(1.0, abs=1e-10)


def test_single_coupled_law_has_exact_marginals():
    single = SingleChain((1.0, 1.2, 2.0))
    a, b = 0, 1
    joint = single.coupled_law(a, b)
    ma, mb = single.marginal_law(a), single.marginal_law(b)
    for s, w in ma.items():
        assert sum(v for (x, _), v in joint.items() if x == s) == pytest.approx(w, abs=1e-12)
    for s, w in mb.items():
        assert sum(v for (_, y), v in joint.items() if y == s) == pytest.approx(w, abs=1e-12)


def test_one_sided_traces(single):
    rng = np.random.default_rng(1)
    eta, eta_t = single.tables[0].paths[:2]
    out = one_sided_couple(eta, eta_t, 200, rng, chain=single)
    for tr, x, y in out:
        assert tr.validate()
        assert x[: len(eta)] == eta and y[: len(eta_t)] == eta_t
        assert tr.n_steps == single.n_levels - 1


@pytest.fixture(scope="module")
def pairs():
    return PairChain(2.0, (1.0, 1.2))


def test_pair_chain_rows_and_harmonic_density(pairs):
    lad = pairs.ladder
    for i, j in zip(*np.nonzero(lad.Lam[0])):
        assert pairs.row_sum_error(0, (int(i), int(j))) < 1e-10
    assert pairs.density_residual(max_states=None) < 1e-9


def test_pair_coupled_law_marginals(pairs):
    c = pair_classes(1.0)
    s1, s2 = pairs.state_of(c[0]), pairs.state_of(c[1])
    joint = pairs.coupled_law(s1, s2)
    m1 = pairs.marginal_law(s1)
    for s, w in m1.items():
        assert sum(v for (x, _), v in joint.items() if x == s) == pytest.approx(w, abs=1e-12)
    traces = couple_pair(c[0], c[1], 50, np.random.default_rng(2), chain=pairs)
    assert all(t.validate() for t in traces)


def test_trace_io_and_tail(tmp_path):
    rng = np.random.default_rng(3)
    traces = []
    for _ in range(400):
        g = int(rng.geometric(0.5)) - 1
        J = list(range(0, 6 - g)) if g < 6 else [0] * 6
        J = [0] * (6 - len(J)) + J
        traces.append(CouplingTrace(list(range(6)), J, [False] * 6))
    assert all(t.validate() for t in traces)
    est = tail_exponent(traces)
    assert est.mean > 0
    with pytest.raises(ValueError):
        tail_exponent(traces, "other")
    path = tmp_path / "traces.tsv"
    write_traces(path, traces[:2])
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# radius") and len(lines) == 1 + 2 * 7
