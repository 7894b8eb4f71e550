import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diracdyn.brackets import (BracketStructure, ConfigurationError, MissingHessian,
                               PhaseFunction, PhasePoint, bracket_matrix, bracket_value,
                               lift_constraint, structure_matrix)
from diracdyn.models import ChainSpec, constraints, hamiltonian
from diracdyn.verify import random_quadratic


def coord(k, dim):
    return PhaseFunction.coordinate(k, dim)


def test_phase_point_shapes():
    x = PhasePoint([1.0, 2.0], [3.0, 4.0])
    assert x.n == 2
    np.testing.assert_array_equal(x.x, [1, 2, 3, 4])
    with pytest.raises(ValueError):
        PhasePoint([1.0], [1.0, 2.0])


@pytest.mark.parametrize("n", [1, 2])
def test_canonical_structure_matrix(n):
    J = structure_matrix(BracketStructure.canonical(), np.zeros(2 * n))
    expected = np.block([[np.zeros((n, n)), np.eye(n)], [-np.eye(n), np.zeros((n, n))]])
    np.testing.assert_array_equal(J, expected)


def test_metric_structure_matrix():
    J = structure_matrix(BracketStructure.metric([3.0, 5.0]), np.zeros(4))
    np.testing.assert_array_equal(J, np.diag([0, 0, 3, 5]))


def test_metriplectic_keeps_parts_separate():
    Jp, Jm = structure_matrix(BracketStructure.metriplectic([1.0]), np.zeros(2))
    np.testing.assert_array_equal(Jp, [[0, 1], [-1, 0]])
    np.testing.assert_array_equal(Jm, [[0, 0], [0, 1]])


def test_metric_requires_lambda():
    with pytest.raises(ConfigurationError):
        BracketStructure("diagonal_metric")
    with pytest.raises(ConfigurationError):
        BracketStructure.metric([-1.0])


def test_coordinate_brackets():
    s = BracketStructure.canonical()
    x = np.array([0.3, -0.2, 1.1, 0.7])
    assert bracket_value(s, coord(0, 4), coord(2, 4), x) == 1.0
    assert bracket_value(s, coord(0, 4), coord(1, 4), x) == 0.0
    m = BracketStructure.metric([4.0, 1.0])
    assert bracket_value(m, coord(2, 4), coord(2, 4), x) == 4.0


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        bracket_value(BracketStructure.canonical(), coord(0, 2), coord(0, 4), np.zeros(4))


def test_lift_of_simple_constraint():
    l, m = 1.3, 2.0
    phi = PhaseFunction.quadratic(np.diag([1.0, 0.0]), np.zeros(2), -0.5 * l * l)
    H = PhaseFunction.quadratic(np.diag([0.0, 1.0 / m]), np.zeros(2))
    lifted = lift_constraint(phi, H)
    x = np.array([0.7, -0.4])
    assert lifted(x) == pytest.approx(0.7 * -0.4 / m)
    fd = PhaseFunction.finite_difference(lifted.value)
    np.testing.assert_allclose(lifted.grad(x), fd.grad(x), rtol=1e-8, atol=1e-10)


def test_lift_of_constant_vanishes():
    H = PhaseFunction.quadratic(np.eye(2), np.zeros(2))
    lifted = lift_constraint(PhaseFunction.constant(2.0, 2), H)
    x = np.array([0.3, 0.9])
    assert lifted(x) == 0.0
    np.testing.assert_array_equal(lifted.grad(x), 0.0)


def test_lift_needs_hessian():
    phi = PhaseFunction(lambda x: x[0] ** 2, lambda x: np.array([2 * x[0], 0.0]))
    H = PhaseFunction.quadratic(np.eye(2), np.zeros(2))
    with pytest.raises(MissingHessian):
        lift_constraint(phi, H).grad(np.ones(2))


def test_pendulum_lift_is_r_dot_v():
    spec = ChainSpec(N=1, d=2, masses=[2.0], lengths=[1.5], pinned=True)
    cs = constraints(spec, hamiltonian(spec))
    x = np.array([0.4, -1.1, 0.6, 0.2])
    assert cs.phitildes[0](x) == pytest.approx(0.4 * 0.3 + -1.1 * 0.1)


def test_bracket_matrix_examples():
    s = BracketStructure.canonical()
    bm = bracket_matrix(s, [coord(0, 2), coord(1, 2)], np.zeros(2))
    np.testing.assert_array_equal(bm.entries, [[0, 1], [-1, 0]])
    assert bm.kind == "skew"
    bm = bracket_matrix(s, [coord(0, 4), coord(1, 4)], np.zeros(4))
    np.testing.assert_array_equal(bm.entries, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        bracket_matrix(s, [], np.zeros(2))


def test_pendulum_constraint_table():
    # phi = (|r|^2 - l^2)/2, phi~ = r.v ; {phi, phi~} = |r|^2/m
    l, m, rho = 1.5, 2.0, 0.8
    spec = ChainSpec(N=1, d=2, masses=[m], lengths=[l], pinned=True)
    cs = constraints(spec, hamiltonian(spec))
    x = np.array([l, 0.0, 0.0, rho])
    bm = bracket_matrix(BracketStructure.canonical(), cs.functions, x)
    assert bm.entries[0, 1] == pytest.approx(l * l / m)
    assert bm.entries[1, 0] == pytest.approx(-l * l / m)
    assert bm.entries[1, 1] == 0.0


quad_seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)


@settings(max_examples=60, deadline=None)
@given(quad_seeds, st.integers(1, 4))
def test_antisymmetry_exact(seed, n):
    rng = np.random.default_rng(seed)
    f, g = random_quadratic(rng, 2 * n), random_quadratic(rng, 2 * n)
    x = rng.normal(size=2 * n)
    s = BracketStructure.canonical()
    assert bracket_value(s, f, g, x) == -bracket_value(s, g, f, x)
    bm = bracket_matrix(s, [f, g, f], x)
    assert np.all(np.diag(bm.entries) == 0.0)
    np.testing.assert_array_equal(bm.entries, -bm.entries.T)


@settings(max_examples=60, deadline=None)
@given(quad_seeds, st.integers(1, 4))
def test_metric_matrix_is_psd(seed, n):
    rng = np.random.default_rng(seed)
    lam = rng.uniform(0, 3, n) * (rng.random(n) > 0.3)
    fs = [random_quadratic(rng, 2 * n) for _ in range(5)]
    bm = bracket_matrix(BracketStructure.metric(lam), fs, rng.normal(size=2 * n))
    np.testing.assert_array_equal(bm.entries, bm.entries.T)
    ev = np.linalg.eigvalsh(bm.entries)
    assert ev.min() >= -1e-12 * max(np.abs(bm.entries).max(), 1.0)


@settings(max_examples=60, deadline=None)
@given(quad_seeds, st.integers(1, 3))
def test_leibniz(seed, n):
    rng = np.random.default_rng(seed)
    f, g, h = (random_quadratic(rng, 2 * n) for _ in range(3))
    x = rng.normal(size=2 * n)
    s = BracketStructure.canonical()
    lhs = bracket_value(s, f, g * h, x)
    rhs = bracket_value(s, f, g, x) * h(x) + g(x) * bracket_value(s, f, h, x)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


@settings(max_examples=30, deadline=None)
@given(quad_seeds)
def test_product_hessian_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    f, g = random_quadratic(rng, 4), random_quadratic(rng, 4)
    p = f * g - f + 2.0 * g
    x = rng.normal(size=4)
    fd = PhaseFunction.finite_difference(p.value)
    np.testing.assert_allclose(p.grad(x), fd.grad(x), rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(p.hess(x), p.hess(x).T, atol=0)


def test_model_derivatives_match_finite_differences():
    from diracdyn.models import PairPotential, random_state
    rng = np.random.default_rng(5)
    spec = ChainSpec(N=4, d=3, masses=[1.0, 2.0, 1.5, 0.7], lengths=[1.0, 0.8, 1.2],
                     gravity=9.81, pair_potential=PairPotential([1, -1, 0.5, 2], 0.2, 0.6))
    x = random_state(spec, rng)
    H = hamiltonian(spec)
    cs = constraints(spec, H)
    h = 1e-5
    for f in [H] + list(cs.functions):
        g = f.grad(x)
        fd = np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(x.size)])
        assert np.max(np.abs(g - fd)) <= 1e-6 * max(np.max(np.abs(g)), 1.0)
    for f in [H] + list(cs.phis):
        Hs = f.hess(x)
        fd = np.array([(f.grad(x + h * e) - f.grad(x - h * e)) / (2 * h) for e in np.eye(x.size)])
        assert np.max(np.abs(Hs - fd)) <= 1e-6 * max(np.max(np.abs(Hs)), 1.0)
