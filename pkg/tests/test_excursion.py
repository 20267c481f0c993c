import numpy as np
import pytest

from twosided_lerw.excursion import (
    ExcursionSpec,
    as_single,
    domain_from_spec,
    domain_markov_check,
    excursion_law,
    inner_radius,
    is_simply_connected,
    sample_excursion_pair,
    shape_spec,
    truncated_law,
    weighted_law,
)

SQUARE3 = {"rect": {"lo": [-1, -1], "hi": [1, 1]}}


@pytest.fixture(scope="module")
def spec():
    A = domain_from_spec({"rect": {"lo": [-2, -1], "hi": [2, 1]}})
    return ExcursionSpec(A, (3, 0), (0, 2))


def test_domain_from_spec_nodes():
    assert len(domain_from_spec(SQUARE3)) == 9
    assert len(domain_from_spec({"ball": {"radius": 2.0}})) == 9
    u = domain_from_spec({"union": [SQUARE3, {"sites": [[2, 0]]}]})
    assert len(u) == 10
    m = domain_from_spec({"minus": [SQUARE3, {"sites": [[1, 1]]}]})
    assert (1, 1) not in m and len(m) == 8
    with pytest.raises(ValueError):
        domain_from_spec({"blob": {}})


def test_simple_connectivity():
    assert is_simply_connected(domain_from_spec(SQUARE3))
    ring = domain_from_spec({"minus": [{"rect": {"lo": [-2, -2], "hi": [2, 2]}}, SQUARE3]})
    assert not is_simply_connected(ring)
    apart = domain_from_spec({"sites": [[0, 0], [2, 0]]})
    assert not is_simply_connected(apart)


def test_spec_validation():
    A = domain_from_spec(SQUARE3)
    with pytest.raises(ValueError):
        ExcursionSpec(A, (2, 0), (2, 0))
    with pytest.raises(ValueError):
        ExcursionSpec(A, (1, 0), (0, 2))
    with pytest.raises(ValueError):
        ExcursionSpec(domain_from_spec({"rect": {"lo": [1, 1], "hi": [2, 2]}}), (3, 1), (1, 3))


def test_weight_routes_agree(spec):
    law = excursion_law(spec)
    assert sum(law.values()) == pytest.approx(1.0, abs=1e-12)
    for pr in list(law)[:200]:
        assert spec.log_weight(pr) == pytest.approx(spec.log_weight_product(pr), abs=1e-10)
        eta = as_single(pr)
        assert eta[0] == spec.x and eta[-1] == spec.y


@pytest.mark.parametrize("px,py", [
    (((3, 0), (2, 0)), ((0, 2), (0, 1))),
    (((3, 0), (2, 0), (2, 1)), ((0, 2),)),
])
def test_domain_markov_property(spec, px, py):
    rep = domain_markov_check(spec, px, py)
    assert rep.max_deviation < 1e-12
    assert rep.n_completions > 0


def test_sampler_matches_exact_law(spec):
    rng = np.random.default_rng(0)
    law = excursion_law(spec)
    pairs, w = sample_excursion_pair(spec, rng, 40000)
    emp = weighted_law(pairs, w)
    keys = set(law) | set(emp)
    tv = 0.5 * sum(abs(law.get(k, 0.0) - emp.get(k, 0.0)) for k in keys)
    assert tv < 0.05


def test_truncated_law_mass(spec):
    t = truncated_law(excursion_law(spec), 1.0)
    assert sum(t.values()) == pytest.approx(1.0, abs=1e-12)
    assert all(pr.in_A(1.0) for pr in t)


@pytest.mark.parametrize("shape", ["ball", "square", "L"])
def test_shape_specs(shape):
    sp = shape_spec(shape, 3)
    assert sp.x in sp.A.boundary and sp.y in sp.A.boundary
    assert inner_radius(sp) >= 3
    with pytest.raises(ValueError):
        shape_spec("ball", 3, placement="diagonal")
