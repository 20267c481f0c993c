import math

import numpy as np
import pytest

from twosided_lerw.lattice import ball_sites, symmetry_group
from twosided_lerw.loops import pair_mass
from twosided_lerw.twosided import (
    ISLadder,
    PathPair,
    convergence_fit,
    enumerate_pairs,
    exact_ladder,
    in_sep,
    lambda_exact,
    lambda_is,
    lambda_own,
    p_hat,
    pair_classes,
    pair_orbit,
    q_tilt,
    tilt_geometry,
)
from twosided_lerw.lattice import Domain

STRAIGHT = PathPair(((0, 0), (1, 0), (2, 0)), ((0, 0), (-1, 0), (-2, 0)))


@pytest.mark.parametrize("radius,n_pairs,n_classes", [(1.0, 12, 2), (1.2, 100, 9)])
def test_pair_counts(radius, n_pairs, n_classes):
    assert len(enumerate_pairs(radius)) == n_pairs
    assert len(pair_classes(radius)) == n_classes
    assert sum(len(pair_orbit(c)) for c in pair_classes(radius)) == n_pairs


def test_tilt_is_symmetric():
    pairs = enumerate_pairs(1.5)[:30]
    for pr in pairs:
        q = q_tilt(pr, 1.5)
        assert 0 < q <= 1
        assert q_tilt(pr.swap(), 1.5) == pytest.approx(q, rel=1e-12)
        for g in symmetry_group(2)[:4]:
            assert lambda_own(pr.transform(g), 1.5) == pytest.approx(lambda_own(pr, 1.5), rel=1e-10)


def test_tilt_matches_loop_module():
    geo = tilt_geometry(2.0)
    L = geo.L_all(STRAIGHT.eta1, STRAIGHT.eta2)
    A = Domain.from_sites([x for x in ball_sites(2.0, 2) if any(x)], 2)
    ref = pair_mass(STRAIGHT.eta1[1:], STRAIGHT.eta2[1:], A).value
    assert L == pytest.approx(ref, abs=1e-12)


def test_q_tilt_zero_off_A():
    bad = PathPair(((0, 0), (1, 0), (2, 0)), ((0, 0), (1, 0), (2, 0)))
    assert q_tilt(bad, 2.0) == 0.0
    with pytest.raises(ValueError):
        q_tilt(STRAIGHT, 2.0, convention="other")


@pytest.mark.parametrize("radius", [1.5, 2.0])
def test_exact_total_matches_direct_sum(radius):
    direct = sum(lambda_own(p, radius) for p in enumerate_pairs(radius))
    assert lambda_exact(radius).value == pytest.approx(direct, rel=1e-10)


def test_exact_prefix_sums_are_distribution():
    lad = exact_ladder(2.3, (1.2,))
    tot = sum(lad.p_hat(p, 1.2) for p in enumerate_pairs(1.2))
    assert tot == pytest.approx(1.0, abs=1e-10)
    assert p_hat(STRAIGHT.truncate(1.2), 2.3, 1.2).mean == pytest.approx(
        lad.p_hat(STRAIGHT.truncate(1.2), 1.2))


def test_exact_guard():
    with pytest.raises(ValueError):
        exact_ladder(4.0)


def test_lambda_is_agrees_with_exact():
    rng = np.random.default_rng(0)
    est = lambda_is(2.0, 20000, rng)
    assert abs(est.value - lambda_exact(2.0).value) < 4 * est.stderr


def test_is_ladder_p_hat_agrees_with_exact():
    rng = np.random.default_rng(1)
    lad = ISLadder([1.5, 2.0, 2.3], 1.2, 40000, rng)
    pr = pair_classes(1.2)[0]
    est, cov = lad.p_hat(pr)
    for k, r in enumerate([1.5, 2.0, 2.3]):
        exact = exact_ladder(r, (1.2,)).p_hat(pr, 1.2)
        assert abs(est[k] - exact) < 4 * math.sqrt(cov[k, k]) + 1e-9


def test_sep_cone_condition():
    up = ((0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (2, 3))
    down = tuple((-a, -b) for a, b in up)
    pr = PathPair(up, down)
    assert in_sep(pr, 3.0)
    assert not in_sep(pr.swap(), 3.0)


def test_convergence_fit_recovers_geometric_rate():
    radii = np.exp(np.arange(1.0, 6.0, 0.5))
    alpha = 0.7
    p = 0.3 - 0.2 * np.exp(-alpha * np.log(radii))
    fit = convergence_fit(radii, p)
    assert fit.alpha == pytest.approx(alpha, abs=1e-9)
    assert fit.p_limit == pytest.approx(0.3, abs=1e-6)
    assert "inconclusive" not in fit.flags
    with pytest.raises(ValueError):
        convergence_fit(radii[:3], p[:3])
