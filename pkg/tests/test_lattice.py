import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twosided_lerw.lattice import (
    BallScale,
    Domain,
    ball,
    ball_sites,
    concat,
    conforming_walk,
    decompose,
    disconnects,
    enumerate_saws,
    erasure_stable,
    first_exit_index,
    is_saw,
    loop_erase,
    neighbors,
    nonreturn_ok,
    norm2,
    pair_to_saw,
    punctured_ball,
    saw_to_pair,
    symmetry_group,
    transform_path,
    truncate,
)


def walk_from_steps(steps, d):
    x = (0,) * d
    w = [x]
    for k in steps:
        x = list(x)
        x[k // 2] += 1 if k % 2 == 0 else -1
        x = tuple(x)
        w.append(x)
    return tuple(w)


def sigma_erasure(w):
    """Last-exit recursion: sigma_0 = last visit to w[0], sigma_j = last
    visit to w[sigma_{j-1} + 1]."""
    out = []
    i = max(k for k, x in enumerate(w) if x == w[0])
    out.append(w[i])
    while i < len(w) - 1:
        y = w[i + 1]
        i = max(k for k, x in enumerate(w) if x == y)
        out.append(w[i])
    return tuple(out)


steps2 = st.lists(st.integers(0, 3), max_size=60)
steps3 = st.lists(st.integers(0, 5), max_size=60)


@given(steps2)
@settings(max_examples=300, deadline=None)
def test_loop_erase_matches_last_exit_recursion_d2(steps):
    w = walk_from_steps(steps, 2)
    assert loop_erase(w) == sigma_erasure(w)


@given(steps3)
@settings(max_examples=300, deadline=None)
def test_loop_erase_matches_last_exit_recursion_d3(steps):
    w = walk_from_steps(steps, 3)
    assert loop_erase(w) == sigma_erasure(w)


@given(steps2)
@settings(max_examples=200, deadline=None)
def test_loop_erase_idempotent_and_self_avoiding(steps):
    w = walk_from_steps(steps, 2)
    e = loop_erase(w)
    assert is_saw(e)
    assert loop_erase(e) == e
    assert e[0] == w[0] and e[-1] == w[-1]


def test_loop_erase_examples():
    w = ((0, 0), (1, 0), (1, 1), (0, 1), (0, 0), (-1, 0))
    assert loop_erase(w) == ((0, 0), (-1, 0))
    assert loop_erase(((0, 0),)) == ((0, 0),)


def test_random_walks_agree_with_recursion():
    rng = np.random.default_rng(0)
    for d in (2, 3):
        for _ in range(2000):
            w = walk_from_steps(rng.integers(0, 2 * d, int(rng.integers(0, 120))), d)
            assert loop_erase(w) == sigma_erasure(w)


@pytest.mark.parametrize("radius,count", [(1.0, 1), (1.5, 9), (2.0, 9), (2.3, 21), (3.0, 25)])
def test_ball_sizes(radius, count):
    assert len(ball_sites(radius, 2)) == count


def test_ball_scale_and_boundaries():
    C = ball(BallScale(math.log(2.0)), d=2)
    assert len(C) == 9
    assert (2, 0) in C.boundary and (1, 1) in C.inner_boundary
    assert (0, 0) not in C.inner_boundary
    assert C.closure == C.sites | C.boundary
    assert (0, 0) not in punctured_ball(2.0, 2)
    with pytest.raises(ValueError):
        ball(d=2, radius=0.5)


def test_domain_transition_matrix_rows():
    A = ball(d=3, radius=2.0)
    P = A.transition_matrix().toarray()
    assert np.all(P.sum(1) <= 1 + 1e-15)
    assert P[A.index[(0, 0, 0)]].sum() == pytest.approx(1.0)


def test_truncate_and_first_exit():
    eta = tuple((k, 0) for k in range(6))
    assert first_exit_index(eta, 2.5) == 3
    assert truncate(eta, 2.5) == eta[:4]
    with pytest.raises(ValueError):
        truncate(eta[:2], 2.5)


def test_decompose_round_trip():
    rng = np.random.default_rng(1)
    n_ok = 0
    for _ in range(300):
        w = conforming_walk((0, 0), 2.0, 4.0, 9.0, rng, extra_steps=3)
        eta = loop_erase(w)
        try:
            a, b, c = decompose(eta, BallScale.of_radius(2.0), BallScale.of_radius(5.0))
        except ValueError:
            continue
        n_ok += 1
        assert concat(concat(a, b, shared_endpoint=True), c, shared_endpoint=True) == eta
    assert n_ok > 50


def test_pair_saw_bijection():
    e1 = ((0, 0), (1, 0), (2, 0))
    e2 = ((0, 0), (0, 1), (-1, 1))
    s = pair_to_saw(e1, e2)
    assert s == ((2, 0), (1, 0), (0, 0), (0, 1), (-1, 1))
    assert saw_to_pair(s) == (e1, e2)
    with pytest.raises(ValueError):
        pair_to_saw(e1, ((0, 0), (1, 0)))


def test_enumerate_saws_counts_and_symmetry():
    W = list(enumerate_saws(1.0, 2))
    assert len(W) == 4
    W2 = set(enumerate_saws(2.0, 2))
    assert all(is_saw(p) and norm2(p[-1]) >= 4 and all(norm2(x) < 4 for x in p[:-1]) for p in W2)
    for g in symmetry_group(2):
        assert {transform_path(g, p) for p in W2} == W2
    assert len(symmetry_group(3)) == 48


def test_disconnects_ring_and_gap():
    ring = [x for x in ball_sites(2.3, 2) if norm2(x) in (4, 5)]
    assert disconnects(ring, radius=3.0, d=2)
    assert not disconnects(ring[1:], radius=3.0, d=2)
    assert not disconnects([(1, 0)], radius=3.0, d=2)


def brute_disconnects(S, radius):
    r2 = radius * radius
    seen = {(0, 0)}
    todo = [(0, 0)]
    while todo:
        x = todo.pop()
        for y in neighbors(x):
            if y in S or y in seen:
                continue
            if norm2(y) >= r2:
                return False
            seen.add(y)
            todo.append(y)
    return True


def test_disconnects_against_bfs():
    rng = np.random.default_rng(2)
    sites = [x for x in ball_sites(3.0, 2) if any(x)]
    for _ in range(500):
        k = int(rng.integers(1, 14))
        S = {sites[i] for i in rng.choice(len(sites), k, replace=False)}
        assert disconnects(S, radius=3.0, d=2) == brute_disconnects(S, 3.0)


@pytest.mark.parametrize("d", [2, 3])
def test_erasure_stable_under_nonreturn(d):
    rng = np.random.default_rng(d)
    for _ in range(500):
        w = conforming_walk((0,) * d, 1.5, 3.0, 5.0, rng, extra_steps=int(rng.integers(1, 40)))
        assert nonreturn_ok(w, 1.5, 3.0, 5.0)
        stop = int(rng.integers(first_exit_index(w, 5.0), len(w)))
        assert erasure_stable(w, stop, 1.5)


def test_erasure_can_change_without_nonreturn():
    w = ((0, 0), (1, 0), (2, 0), (3, 0), (3, 1), (2, 1), (1, 1), (0, 1), (0, 0), (-1, 0))
    assert not nonreturn_ok(w, 1.5, 2.5, 2.9)
    assert not erasure_stable(w, 3, 1.5)
