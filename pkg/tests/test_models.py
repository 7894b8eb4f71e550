import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diracdyn.models import (ChainModel, ChainSpec, PairPotential, SingularPotential,
                             closed_form_tables, constraints, generic_tables, hamiltonian,
                             initial_state, lagrangian_data, pendulum4_random, project_state,
                             random_state, straight_chain)
from diracdyn.verify import random_chain, table_equivalence


def test_spec_validation():
    with pytest.raises(ValueError):
        ChainSpec(N=2, d=4, masses=[1.0], lengths=[1.0])
    with pytest.raises(ValueError):
        ChainSpec(N=1, d=2, masses=[1.0], lengths=[1.0])
    with pytest.raises(ValueError):
        ChainSpec(N=3, d=2, masses=[1.0, -1.0, 1.0], lengths=[1.0])
    with pytest.raises(ValueError):
        ChainSpec(N=3, d=2, masses=[1.0], lengths=[1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        ChainSpec(N=3, d=2, masses=[1.0], lengths=[1.0], friction=[-0.1])
    with pytest.raises(ValueError):
        ChainSpec(N=3, d=2, masses=[1.0], lengths=[1.0], pair_potential=PairPotential([1.0, 2.0]))


def test_spec_broadcast_and_immutable():
    spec = ChainSpec(N=3, d=3, masses=[2.0], lengths=[0.5], friction=[0.1])
    assert spec.K == 2 and spec.n == 9
    np.testing.assert_array_equal(spec.masses, [2, 2, 2])
    np.testing.assert_array_equal(spec.coordinate_friction, np.full(9, 0.1))
    assert spec.dissipative
    with pytest.raises(ValueError):
        spec.masses[0] = 1.0


def test_pinned_pendulum_hamiltonian():
    m, g = 2.0, 9.81
    spec = ChainSpec(N=1, d=2, masses=[m], lengths=[1.0], gravity=g, pinned=True)
    H = hamiltonian(spec)
    x = np.array([0.6, -0.8, 1.5, -0.4])
    assert H(x) == pytest.approx((1.5 ** 2 + 0.4 ** 2) / (2 * m) + g * m * -0.8)


def test_zero_hamiltonian():
    spec = ChainSpec(N=3, d=3, masses=[1.0, 2.0, 3.0], lengths=[1.0, 1.0])
    x = np.zeros(18)
    x[:9] = straight_chain(spec).ravel()
    assert hamiltonian(spec)(x) == 0.0


def test_lj_cancels_at_sigma():
    # N=3 free chain: only particles 1 and 3 are non-bonded
    q1, q3, a, sigma = 1.5, -2.0, 0.7, 1.2
    pp = PairPotential([q1, 0.0, q3], epsilon=5.0, sigma=sigma, prefactor=a)
    spec = ChainSpec(N=3, d=2, masses=[1.0], lengths=[1.0], pair_potential=pp)
    model = ChainModel(spec)
    q = np.array([0.0, 0.0, 0.6, 0.5, sigma, 0.0])
    assert model.potential(q) == pytest.approx(a * q1 * q3 / sigma)


def test_pair_potential_only_non_bonded():
    pp = PairPotential([1.0, 1.0], epsilon=1.0, sigma=0.5)
    spec = ChainSpec(N=2, d=2, masses=[1.0], lengths=[1.0], pair_potential=pp)
    assert ChainModel(spec).potential(np.array([0.0, 0.0, 1.0, 0.0])) == 0.0


def test_singular_potential():
    pp = PairPotential([1.0, 1.0, 1.0])
    spec = ChainSpec(N=3, d=2, masses=[1.0], lengths=[1.0], pair_potential=pp)
    q = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
    with pytest.raises(SingularPotential):
        ChainModel(spec).potential(q)


def test_free_chain_single_constraint():
    spec = ChainSpec(N=2, d=2, masses=[1.0], lengths=[2.0])
    cs = constraints(spec)
    assert cs.K == 1 and len(cs) == 2
    x = np.array([0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    assert cs.phis[0](x) == pytest.approx(0.5 * (2.0 - 4.0))


def test_on_surface_constraints_vanish():
    spec, x = random_chain(np.random.default_rng(0), pinned=False)
    model = ChainModel(spec)
    assert np.max(np.abs(model.phi(x))) <= 1e-14 * max(1.0, np.max(spec.lengths) ** 2)
    assert np.max(np.abs(model.phitilde(x))) <= 1e-12
    cs = constraints(spec)
    np.testing.assert_allclose([c(x) for c in cs.phis], model.phi(x), atol=1e-15)
    np.testing.assert_allclose([c(x) for c in cs.phitildes], model.phitilde(x), atol=1e-15)


def test_pinned_s_single_entry():
    l, m = 1.3, 0.7
    spec = ChainSpec(N=1, d=3, masses=[m], lengths=[l], pinned=True)
    x = random_state(spec, np.random.default_rng(1))
    cf = closed_form_tables(spec, x)
    assert cf.S.c[0] == pytest.approx(l * l / m, rel=1e-14)
    assert cf.S.b.size == 0
    S, A, _ = generic_tables(spec, x)
    assert S[0, 0] == pytest.approx(l * l / m, rel=1e-14)
    assert A[0, 0] == 0.0


def test_homogeneous_chain_formulas():
    l, m = 0.8, 1.7
    spec = ChainSpec(N=5, d=3, masses=[m], lengths=[l])
    x = random_state(spec, np.random.default_rng(2))
    cf = closed_form_tables(spec, x)
    np.testing.assert_allclose(cf.S.c, 2 * l * l / m, rtol=1e-13)
    np.testing.assert_allclose(cf.S.b, (l * l / m) * cf.cos_alpha, rtol=1e-12, atol=1e-14)


def test_straight_chain_offdiagonal():
    l, m = 1.1, 2.0
    spec = ChainSpec(N=4, d=2, masses=[m], lengths=[l])
    x = np.concatenate([straight_chain(spec).ravel(), np.zeros(8)])
    cf = closed_form_tables(spec, x)
    np.testing.assert_allclose(cf.cos_alpha, -1.0)
    np.testing.assert_allclose(cf.S.b, -l * l / m, rtol=1e-15)


def test_lagrangian_data_example():
    l, v = 1.4, 0.9
    spec = ChainSpec(N=1, d=2, masses=[1.0], lengths=[l], pinned=True)
    M, B, G, F = lagrangian_data(spec, ([l, 0.0], [0.0, v]))
    np.testing.assert_allclose(B[:, 0], [l, 0.0])
    assert G[0] == pytest.approx(v * v)
    np.testing.assert_array_equal(M, np.eye(2))
    np.testing.assert_array_equal(F, [0.0, 0.0])
    _, _, G, _ = lagrangian_data(spec, ([l, 0.0], [0.0, 0.0]))
    assert G[0] == 0.0


def test_gravity_force_direction():
    spec = ChainSpec(N=2, d=3, masses=[1.0, 2.0], lengths=[1.0], gravity=3.0)
    _, _, _, F = lagrangian_data(spec, (np.arange(6.0), np.zeros(6)))
    np.testing.assert_allclose(F, [0, 0, -3.0, 0, 0, -6.0])


def test_projection_lands_on_surface():
    spec = ChainSpec(N=4, d=3, masses=[1.0, 2.0, 0.5, 1.0], lengths=[1.0, 0.5, 1.5, 1.0],
                     pinned=True)
    rng = np.random.default_rng(3)
    pos = straight_chain(spec) + 0.05 * rng.normal(size=(4, 3))
    x = initial_state(spec, pos, rng.normal(size=(4, 3)))
    model = ChainModel(spec)
    assert np.max(np.abs(model.phi(x))) <= 1e-12
    assert np.max(np.abs(model.phitilde(x))) <= 1e-12
    np.testing.assert_allclose(project_state(spec, x), x, atol=1e-13)


def test_initial_state_needs_rng_for_random_velocities():
    spec = ChainSpec(N=2, d=2, masses=[1.0], lengths=[1.0])
    with pytest.raises(ValueError):
        initial_state(spec)


def test_pendulum4_random():
    spec, x = pendulum4_random(7)
    _, y = pendulum4_random(7)
    np.testing.assert_array_equal(x, y)
    assert not np.array_equal(x, pendulum4_random(8)[1])
    np.testing.assert_allclose(x[:8].reshape(4, 2), [[1, 0], [2, 0], [3, 0], [4, 0]], atol=1e-15)
    assert ChainModel(spec).residual(x) <= 1e-12
    assert spec.K == 4 and spec.pinned


seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_tables_match_bracket_assembly(seed):
    spec, x = random_chain(np.random.default_rng(seed))
    te = table_equivalence(spec, x)
    assert te["S"] <= 1e-12
    assert te["A"] <= 1e-12
    assert te["SD"] <= 1e-12
    assert te["BtMB"] <= 1e-12
    assert te["band"] <= 1e-14
    assert te["A_skew"] == 0.0


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_tables_match_off_surface(seed):
    rng = np.random.default_rng(seed)
    spec, x = random_chain(rng)
    x = x + 0.1 * rng.normal(size=x.size)
    te = table_equivalence(spec, x)
    assert max(te["S"], te["A"], te["SD"]) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_vectorized_energy_matches_closure(seed):
    rng = np.random.default_rng(seed)
    spec, x = random_chain(rng, pairs=True)
    model = ChainModel(spec)
    H = hamiltonian(spec)
    assert model.energy(x) == pytest.approx(H(x), rel=1e-13, abs=1e-13)
    q = x[:spec.n]
    h = 1e-6
    fd = np.array([(model.potential(q + h * e) - model.potential(q - h * e)) / (2 * h)
                   for e in np.eye(spec.n)])
    g = model.grad_potential(q).ravel()
    assert np.max(np.abs(g - fd)) <= 1e-6 * max(1.0, np.max(np.abs(g)))
