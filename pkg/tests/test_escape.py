import math

import numpy as np
import pytest

from twosided_lerw.escape import (
    GENERATORS,
    AdversarialScenario,
    connected_to_origin,
    escape_experiment,
    exact_escape,
    lower_bound,
    make_scenario,
    verify_corollaries,
    verify_escape,
)
from twosided_lerw.lattice import ball
from twosided_lerw.potential import green_domain
from twosided_lerw.stats import Estimate


def test_scenario_validation():
    with pytest.raises(ValueError):
        AdversarialScenario(2, 4.0, 1, frozenset(), (1, 0), 2.0, "x")
    with pytest.raises(ValueError):
        AdversarialScenario(2, 4.0, 2, frozenset(), (3, 0), 2.5, "x")
    with pytest.raises(ValueError):
        AdversarialScenario(2, 4.0, 3, frozenset(), (4, 0), 2.0, "x")
    sc = AdversarialScenario(2, 4.0, 1, frozenset({(3, 0)}), (4, 0), 2.0, "x")
    assert sc.A == {(3, 0), (4, 0)}


@pytest.mark.parametrize("tag", GENERATORS)
@pytest.mark.parametrize("part", [1, 2])
@pytest.mark.parametrize("d", [2, 3])
def test_generators_produce_valid_scenarios(tag, part, d):
    rng = np.random.default_rng(hash((tag, part, d)) % 2**32)
    sc = make_scenario(tag, 8.0 if d == 2 else 6.0, part, d, rng)
    assert sc.tag == tag and sc.part == part
    p_esc, p_suc = exact_escape(sc)
    assert 0 < p_esc <= 1 and 0 <= p_suc <= 1


@pytest.mark.parametrize("part", [1, 2])
def test_monte_carlo_matches_exact_solve(part):
    rng = np.random.default_rng(part)
    sc = make_scenario("comb", 10.0, part, 2, rng)
    est = verify_escape(sc, 20000, rng)
    _, exact = exact_escape(sc)
    assert abs(est.mean - exact) < 4 * est.stderr


@pytest.mark.parametrize("r", [2.0, 3.5])
def test_single_point_escape_is_inverse_green(r):
    sc = AdversarialScenario(2, 6.0, 1, frozenset(), (6, 0), r, "point")
    p_esc, _ = exact_escape(sc)
    B = ball(d=2, radius=r)
    G = green_domain(B).matrix[B.index[(0, 0)], B.index[(0, 0)]]
    assert p_esc == pytest.approx(1.0 / G, abs=1e-12)


def test_clopper_pearson_lower_bound():
    est = Estimate(0.5, 0.05, 100, 0)
    lb = lower_bound(est, 0.95)
    assert 0.4 < lb < 0.5
    assert lower_bound(Estimate(0.0, 0.0, 10, 0)) == 0.0


def test_connected_to_origin():
    A = frozenset({(1, 0), (2, 0), (3, 0)})
    assert connected_to_origin(A, (3, 0), 3.0)
    assert not connected_to_origin(A - {(2, 0)}, (3, 0), 3.0)


def test_escape_experiment_small():
    rng = np.random.default_rng(4)
    rep = escape_experiment(2, [8.0], 1, 2000, rng)
    assert len(rep.estimates) == 2 * len(GENERATORS)
    assert 0 < rep.min_lower_bound < 1
    assert rep.mc_exact_max_z < 5


def test_corollaries_decay_and_negative_control():
    rng = np.random.default_rng(5)
    rep = verify_corollaries(2, 20.0, [0.5, 1.0, 1.5, 2.0], 4, rng)
    assert rep.identical_ratio == pytest.approx(1.0)
    assert rep.spread[0] > rep.spread[-1]
    neg = verify_corollaries(2, 20.0, [1.0], 4, np.random.default_rng(5), negative_control=True)
    assert neg.n_skipped == 4
    filt = verify_corollaries(3, 6.0, [0.5, 2.0], 2, np.random.default_rng(6))
    assert filt.j == [0.5]
