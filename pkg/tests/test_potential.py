import math

import numpy as np
import pytest

from twosided_lerw.lattice import Domain, ball, neighbors, punctured_ball
from twosided_lerw.potential import (
    G0,
    SetPotential,
    boundary_poisson,
    capacity,
    escape_probability,
    green_domain,
    green_domain_columns,
    green_infinite,
    hitting_distribution,
    k0,
    poisson_kernel,
    potential_kernel,
    potential_kernel_quad,
    punctured_green,
    watson_green_origin,
)


@pytest.mark.parametrize("x,value", [((0, 0), 0.0), ((1, 0), 1.0), ((1, 1), 4 / math.pi),
                                     ((2, 0), 4 - 8 / math.pi)])
def test_potential_kernel_closed_forms(x, value):
    assert potential_kernel(x) == pytest.approx(value, abs=1e-12)


@pytest.mark.parametrize("x", [(3, 2), (5, 1), (7, 7), (20, 3)])
def test_potential_kernel_table_vs_quadrature(x):
    assert potential_kernel(x) == pytest.approx(potential_kernel_quad(x), abs=1e-9)


def test_potential_kernel_harmonic_off_origin():
    for x in [(1, 0), (3, 4), (10, -2)]:
        avg = np.mean([potential_kernel(y) for y in neighbors(x)])
        assert avg == pytest.approx(potential_kernel(x), abs=1e-10)
    assert np.mean([potential_kernel(y) for y in neighbors((0, 0))]) == pytest.approx(1.0)


def test_potential_kernel_asymptotics():
    k = (2 * np.euler_gamma + math.log(8)) / math.pi
    assert k0() == pytest.approx(k, abs=1e-10)
    x = (60, 25)
    r = math.hypot(*x)
    assert potential_kernel(x) == pytest.approx(2 / math.pi * math.log(r) + k, abs=1e-4)


def test_green_3d_watson_and_harmonicity():
    assert watson_green_origin() == pytest.approx(1.516386059151978, abs=1e-12)
    assert green_infinite((0, 0, 0)) == pytest.approx(G0(3), abs=1e-10)
    assert green_infinite((1, 0, 0)) == pytest.approx(G0(3) - 1, abs=1e-10)
    x = (2, 1, 0)
    avg = np.mean([green_infinite(y) for y in neighbors(x)])
    assert avg == pytest.approx(green_infinite(x), abs=1e-9)


def test_green_domain_solves_killed_equation():
    A = ball(d=2, radius=3.0)
    G = green_domain(A)
    P = A.transition_matrix().toarray()
    assert np.allclose(G.matrix - P @ G.matrix, np.eye(len(A)), atol=1e-12)
    cols = green_domain_columns(A, [(0, 0), (1, 1)])
    assert np.allclose(cols[:, 0], G.matrix[:, A.index[(0, 0)]], atol=1e-12)


def test_poisson_kernel_sums_to_one():
    A = ball(d=2, radius=2.3)
    G = green_domain(A)
    tot = sum(poisson_kernel(A, (0, 0), z, G) for z in A.boundary)
    assert tot == pytest.approx(1.0, abs=1e-12)
    z, w = sorted(A.boundary)[:2]
    assert boundary_poisson(A, w, z, G) == pytest.approx(boundary_poisson(A, z, w, G), abs=1e-13)


@pytest.mark.parametrize("d", [2, 3])
def test_set_potential_profile_harmonic_and_escape(d):
    B = [(0,) * d, (1,) + (0,) * (d - 1), (1, 1) + (0,) * (d - 2)]
    sp = SetPotential(B, d)
    x = (3, -1) + (0,) * (d - 2)
    h = sp.profile(np.array([x]))[0]
    avg = sp.profile(np.array(neighbors(x))).mean()
    assert avg == pytest.approx(h, abs=1e-10)
    for b in B:
        assert sp.escape(b) == pytest.approx(sp.escape_from_neighbors(b), abs=1e-10)
    assert np.all(sp.profile(np.array(B)) == 0)


def test_single_point_escape():
    assert SetPotential([(0, 0)]).escape((0, 0)) == pytest.approx(1.0)
    assert SetPotential([(0, 0, 0)]).escape((0, 0, 0)) == pytest.approx(1 / G0(3))


def test_hitting_distribution_is_probability_in_2d():
    B = [(0, 0), (1, 0), (2, 0), (2, 1)]
    for x in [(5, 5), (-3, 1)]:
        H = hitting_distribution(B, x)
        assert sum(H.values()) == pytest.approx(1.0, abs=1e-10)
        assert min(H.values()) >= -1e-12


def test_set_green_symmetric_and_matches_punctured_formula():
    X = np.array([(1, 0), (2, 3), (-1, 2)])
    sp = SetPotential([(0, 0)])
    G = sp.green(X, X)
    assert np.allclose(G, G.T, atol=1e-10)
    assert np.allclose(G, punctured_green(X, X, 2), atol=1e-10)
    X3 = np.array([(1, 0, 0), (2, 1, 0)])
    assert np.allclose(SetPotential([(0, 0, 0)]).green(X3, X3), punctured_green(X3, X3, 3),
                       atol=1e-9)


def test_escape_probability_of_path_tip():
    eta = [(0, 0), (1, 0), (2, 0)]
    e = escape_probability(eta)
    assert 0 < e < 1
    with pytest.raises(ValueError):
        escape_probability(eta, (5, 5))


def test_capacity_of_point_and_segment():
    c_pt, _ = capacity([(0, 0)])
    assert c_pt == pytest.approx(0.0, abs=1e-3)
    c_seg, _ = capacity([(k, 0) for k in range(5)])
    assert c_seg > c_pt
