import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_density, random_hermitian
from nhspin.spin_core import (
    LayoutError, QuantumState, SpaceLayout, SpinOperator, embed, embed_many, expectation, identity,
    partial_trace, spin_matrices,
)

TWO = SpaceLayout((("a", 2), ("b", 2)))
CELL = SpaceLayout((("I", 2), ("S", 3), ("Sp", 2)))


def test_spin_half_z():
    assert np.allclose(spin_matrices(0.5)["z"], np.diag([0.5, -0.5]))


def test_spin_one_ladder():
    m = spin_matrices(1)
    assert np.allclose(m["z"], np.diag([1, 0, -1]))
    assert np.allclose(m["plus"], np.sqrt(2) * np.diag([1, 1], 1))
    assert np.all(m["plus"].real >= 0)


@pytest.mark.parametrize("s", [0.5, 1])
def test_commutators(s):
    m = spin_matrices(s)
    z, p, mi = m["z"], m["plus"], m["minus"]
    assert np.allclose(z @ p - p @ z, p)
    assert np.allclose(z @ mi - mi @ z, -mi)
    assert np.allclose(p @ mi - mi @ p, 2 * z)


@pytest.mark.parametrize("s", [0, 1.5, 2, "x"])
def test_unsupported_spin(s):
    with pytest.raises((ValueError, TypeError)):
        spin_matrices(s)


def test_layout_dims_and_labels():
    assert CELL.total_dim == 12
    with pytest.raises(LayoutError):
        SpaceLayout((("a", 2), ("a", 3)))
    with pytest.raises(LayoutError):
        SpaceLayout((("a", 1),))


def test_embed_identity_is_global_identity():
    for label, d in CELL.factors:
        assert np.allclose(embed(np.eye(d), label, CELL).dense(), np.eye(12))


def test_embed_first_factor():
    op = embed(spin_matrices(0.5)["z"], "a", TWO)
    assert np.allclose(op.dense(), np.diag([0.5, 0.5, -0.5, -0.5]))


def test_embed_trace_multiplicativity(rng):
    local = random_hermitian(rng, 3)
    op = embed(local, "S", CELL)
    assert np.isclose(np.trace(op.dense()), np.trace(local) * 12 / 3)


def test_embed_errors():
    with pytest.raises(LayoutError):
        embed(np.eye(2), "nope", CELL)
    with pytest.raises(LayoutError):
        embed(np.eye(2), "S", CELL)


def test_hermitian_flag_is_checked():
    with pytest.raises(ValueError):
        SpinOperator(TWO, np.triu(np.ones((4, 4))), hermitian=True)


def test_expectation_examples():
    up = QuantumState.product(SpaceLayout((("a", 2),)), (0,))
    z2 = embed(2 * spin_matrices(0.5)["z"], "a", up.layout).as_hermitian()
    assert np.isclose(expectation(up, z2), 1.0)
    assert np.isclose(expectation(up, identity(up.layout)), 1.0)
    mixed = QuantumState.maximally_mixed(CELL)
    assert abs(expectation(mixed, embed(spin_matrices(1)["x"], "S", CELL))) < 1e-15


def test_expectation_layout_mismatch():
    with pytest.raises(LayoutError):
        expectation(QuantumState.maximally_mixed(TWO), identity(CELL))


def test_state_invariants():
    with pytest.raises(ValueError):
        QuantumState.pure(TWO, [1, 1, 0, 0])
    with pytest.raises(ValueError):
        QuantumState.density(TWO, np.eye(4))
    with pytest.raises(ValueError):
        QuantumState.density(TWO, np.diag([1.5, -0.5, 0, 0]))


def test_partial_trace_nothing_traced(rng):
    rho = QuantumState.density(TWO, random_density(rng, 4))
    assert np.allclose(partial_trace(rho, ["a", "b"]).data, rho.data)


def test_partial_trace_product_state(rng):
    ra, rb = random_density(rng, 2), random_density(rng, 2)
    rho = QuantumState.density(TWO, np.kron(ra, rb))
    assert np.allclose(partial_trace(rho, ["a"]).data, ra, atol=1e-14)
    assert np.allclose(partial_trace(rho, ["b"]).data, rb, atol=1e-14)


def test_partial_trace_bell_state():
    bell = QuantumState.pure(TWO, np.array([1, 0, 0, 1]) / np.sqrt(2)).to_density()
    assert np.allclose(partial_trace(bell, ["b"]).data, np.eye(2) / 2)


def test_partial_trace_rejects_pure():
    with pytest.raises(ValueError):
        partial_trace(QuantumState.product(TWO, (0, 0)), ["a"])
    with pytest.raises(LayoutError):
        partial_trace(QuantumState.maximally_mixed(TWO), ["c"])


def test_diagonal_state_partial_trace_matches_dense(rng):
    w = rng.random(12)
    w /= w.sum()
    diag = QuantumState.diagonal(CELL, w)
    a = partial_trace(diag, ["S"])
    b = partial_trace(diag.to_density(), ["S"])
    assert np.allclose(np.diag(b.data), a.data)


# ---------------------------------------------------------------- properties

seeds = st.integers(0, 2**32 - 1)


@given(seeds, st.floats(-3, 3), st.floats(-3, 3))
def test_embed_is_linear(seed, x, y):
    r = np.random.default_rng(seed)
    a, b = random_hermitian(r, 3), random_hermitian(r, 3)
    lhs = embed(x * a + y * b, "S", CELL).dense()
    rhs = x * embed(a, "S", CELL).dense() + y * embed(b, "S", CELL).dense()
    assert np.allclose(lhs, rhs, atol=1e-12)


@given(seeds, st.sampled_from([("I", "S"), ("S", "Sp"), ("I", "Sp")]))
def test_distinct_sites_commute(seed, pair):
    r = np.random.default_rng(seed)
    la, lb = pair
    A = embed(r.normal(size=(CELL.dim(la),) * 2) + 0j, la, CELL).dense()
    B = embed(r.normal(size=(CELL.dim(lb),) * 2) + 0j, lb, CELL).dense()
    assert np.max(np.abs(A @ B - B @ A)) < 1e-12


@given(seeds)
def test_embed_many_is_product_of_embeds(seed):
    r = np.random.default_rng(seed)
    a, b = random_hermitian(r, 2), random_hermitian(r, 3)
    joint = embed_many({"I": a, "S": b}, CELL).dense()
    assert np.allclose(joint, embed(a, "I", CELL).dense() @ embed(b, "S", CELL).dense())


@given(seeds, st.floats(0, 1))
def test_expectation_is_bilinear(seed, lam):
    r = np.random.default_rng(seed)
    r1, r2 = random_density(r, 12), random_density(r, 12)
    m1, m2 = random_hermitian(r, 12), random_hermitian(r, 12)
    O1, O2 = SpinOperator(CELL, m1, True), SpinOperator(CELL, m2, True)
    mix = QuantumState.density(CELL, lam * r1 + (1 - lam) * r2)
    s1, s2 = QuantumState.density(CELL, r1), QuantumState.density(CELL, r2)
    assert np.isclose(expectation(mix, O1), lam * expectation(s1, O1) + (1 - lam) * expectation(s2, O1))
    assert np.isclose(expectation(s1, O1 + O2), expectation(s1, O1) + expectation(s1, O2))


@given(seeds, st.sets(st.sampled_from(["I", "S", "Sp"]), min_size=1))
def test_partial_trace_preserves_trace_and_positivity(seed, keep):
    r = np.random.default_rng(seed)
    rho = QuantumState.density(CELL, random_density(r, 12, rank=2))
    red = partial_trace(rho, sorted(keep))
    assert abs(np.trace(red.data) - 1) < 1e-10
    assert np.linalg.eigvalsh(red.data)[0] > -1e-10


@given(seeds)
def test_pure_and_density_expectations_agree(seed):
    r = np.random.default_rng(seed)
    v = r.normal(size=12) + 1j * r.normal(size=12)
    psi = QuantumState.pure(CELL, v, normalize=True)
    O = SpinOperator(CELL, random_hermitian(r, 12), True)
    assert np.isclose(expectation(psi, O), expectation(psi.to_density(), O))
