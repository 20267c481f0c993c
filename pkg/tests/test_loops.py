import math
from fractions import Fraction

import numpy as np
import pytest

from twosided_lerw.lattice import Domain, ball, ball_sites, disconnects
from twosided_lerw.loops import (
    canonical_rotation,
    crossing_mass,
    crossing_mass_exact,
    disconnecting_mass,
    disconnecting_universality,
    enumerate_loops,
    enumerated_loop_mass,
    exact_site_set_masses,
    f_mass,
    log_det_green,
    loop_tail_bound,
    pair_mass,
    rooted_weight,
    sample_loop_soup,
    soup_mass,
    unrooted,
)
from twosided_lerw.potential import green_domain

SQUARE = Domain.from_sites([(0, 0), (1, 0), (1, 1), (0, 1)], 2)


def test_rooted_weight_and_unrooted_class():
    assert rooted_weight(2, 2) == Fraction(1, 32)
    with pytest.raises(ValueError):
        rooted_weight(3, 2)
    back_forth = unrooted([(0, 0), (1, 0)])
    assert back_forth.multiplicity == 2 and back_forth.mass == Fraction(1, 16)
    doubled = unrooted([(0, 0), (1, 0), (0, 0), (1, 0)])
    assert doubled.multiplicity == 2
    assert canonical_rotation([(1, 0), (0, 0)]) == ((0, 0), (1, 0))


def test_f_mass_is_order_free_and_matches_logdet():
    A = ball(d=2, radius=2.3)
    B = [(0, 0), (1, 0), (1, 1), (-1, 0)]
    G = green_domain(A).matrix
    idx = [A.index[b] for b in B]
    ref = log_det_green(G[np.ix_(idx, idx)])
    for perm in ([0, 1, 2, 3], [3, 1, 0, 2], [2, 3, 1, 0]):
        assert f_mass(B, A, order=[B[i] for i in perm]).value == pytest.approx(ref, abs=1e-12)


def test_f_mass_whole_domain_is_total_loop_mass():
    P = SQUARE.transition_matrix().toarray()
    total = -np.linalg.slogdet(np.eye(4) - P)[1]
    assert f_mass(SQUARE.sites, SQUARE).value == pytest.approx(total, abs=1e-13)


def test_enumerated_mass_converges_to_f_mass():
    A = ball(d=2, radius=1.5)
    B = [(1, 0)]
    exact = f_mass(B, A).value
    en = enumerated_loop_mass(B, A, max_len=14)
    assert en.provenance == "enumerated"
    assert 0 <= exact - en.value <= en.tail_bound + 1e-15


def test_enumerate_loops_masses_add_up():
    loops = enumerate_loops(SQUARE, max_len=10)
    ref = enumerated_loop_mass(SQUARE.sites, SQUARE, max_len=10).extra["exact"]
    assert sum(l.mass for l in loops) == ref


def test_tail_bound_decreases():
    A = ball(d=2, radius=2.0)
    assert loop_tail_bound(A, 10) > loop_tail_bound(A, 20) > 0


def test_pair_mass_inclusion_exclusion():
    A = ball(d=2, radius=2.3)
    g1, g2 = [(0, 0), (1, 0)], [(-1, 1), (-1, 0)]
    v = pair_mass(g1, g2, A).value
    assert v > 0
    assert pair_mass(g1, g2, A).value == pytest.approx(pair_mass(g2, g1, A).value, abs=1e-14)
    assert pair_mass(g1, [], A).value == 0.0


def test_site_set_masses_sum_to_total():
    order, masses = exact_site_set_masses(SQUARE)
    P = SQUARE.transition_matrix().toarray()
    assert masses.sum() == pytest.approx(-np.linalg.slogdet(np.eye(4) - P)[1], abs=1e-12)
    assert masses[0] == 0.0
    singles = [masses[1 << i] for i in range(4)]
    assert np.allclose(singles, 0.0, atol=1e-15)


def test_soup_no_hit_matches_exp_minus_mass():
    rng = np.random.default_rng(0)
    A = ball(d=2, radius=2.0)
    B = [(1, 1), (0, 1)]
    lm = soup_mass(B, A, 40000, rng)
    assert abs(lm.value - f_mass(B, A).value) < 4 * lm.stderr


def test_sampled_soup_loops_stay_in_domain():
    rng = np.random.default_rng(1)
    A = ball(d=2, radius=2.0)
    for _ in range(50):
        for l in sample_loop_soup(A, rng):
            assert l.sites <= A.sites
            assert l.length % 2 == 0


def test_crossing_mass_exact_decreases_in_r():
    vals = [crossing_mass_exact(1.0, r, d=3).value for r in (0.5, 1.0, 1.5)]
    assert vals[0] > vals[1] > vals[2] > 0


def test_crossing_mass_sampler_matches_exact_punctured_2d():
    rng = np.random.default_rng(5)
    mc = crossing_mass(1.0, 0.7, d=2, n_loops=20000, rng=rng)
    ex = crossing_mass_exact(1.0, 0.7, d=2, punctured=True)
    assert abs(mc.value - ex.value) < 4 * mc.stderr + 1e-3
    assert mc.extra["soup_probability"] == pytest.approx(-math.expm1(-mc.value))
    with pytest.raises(ValueError):
        crossing_mass_exact(1.0, 0.5, d=2)


def test_disconnecting_mass_inversion_vs_enumeration():
    ex = disconnecting_mass(math.log(2.0), method="exact")
    A = Domain.from_sites([x for x in ball_sites(2.0, 2) if any(x)], 2)
    loops = enumerate_loops(A, max_len=16)
    en = float(sum(l.mass for l in loops if disconnects(l.sites, radius=2.0, d=2)))
    assert 0 < en <= ex.value <= en + loop_tail_bound(A, 16)


@pytest.mark.parametrize("radius", [1.5, 2.0, 2.3])
def test_disconnecting_loops_meet_every_path(radius):
    out = disconnecting_universality(radius, max_len=12)
    assert out["exceptions"] == 0
    assert out["n_path_site_sets"] > 0
