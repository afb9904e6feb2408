import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coldamp import fock
from conftest import random_density


def test_annihilation_small():
    assert np.array_equal(fock.annihilation(2), np.array([[0, 1], [0, 0]], dtype=complex))
    assert fock.annihilation(4)[2, 3] == pytest.approx(math.sqrt(3))


def test_number_eigenstate():
    ket = np.zeros(40)
    ket[5] = 1.0
    a = fock.annihilation(40)
    assert np.allclose(a.conj().T @ a @ ket, 5 * ket)


def test_quadratures_dim2():
    z, p = fock.quadratures(2)
    assert np.array_equal(z, np.array([[0, 1], [1, 0]], dtype=complex))
    assert np.allclose(p, np.array([[0, -1j], [1j, 0]]))


@pytest.mark.parametrize("dim", [2, 3, 10, 41])
def test_canonical_commutator_below_edge(dim):
    z, p = fock.quadratures(dim)
    c = fock.commutator(z, p)
    assert np.allclose(np.diag(c)[: dim - 1], 2j)


@given(st.integers(2, 60))
def test_ladder_identity(dim):
    a = fock.annihilation(dim)
    diff = a.conj().T @ a - a @ a.conj().T
    assert np.allclose(np.diag(diff)[: dim - 1], -1.0)
    off = diff - np.diag(np.diag(diff))
    assert np.abs(off).max() == 0


def test_operators_are_read_only():
    a = fock.annihilation(5)
    with pytest.raises(ValueError):
        a[0, 1] = 3.0


@pytest.mark.parametrize("dim", [0, 1, 2.5, -3])
def test_invalid_dimension(dim):
    with pytest.raises(fock.InvalidDimension):
        fock.annihilation(dim)


def test_thermal_zero_mean_z():
    # dim 30 at N = 2 is below the tail rule, so build the state by hand
    q = 2 / 3
    pops = q ** np.arange(30)
    rho = fock.DensityMatrix(np.diag(pops / pops.sum()))
    z, _ = fock.quadratures(30)
    assert abs(fock.expect(z, rho)) < 1e-14


def test_thermal_n17_mean():
    rho = fock.thermal_state(17, 256)
    assert 16.99 <= rho.mean_number() <= 17.01


def test_thermal_boltzmann_ratio():
    pops = np.diag(fock.thermal_state(2, 40).op).real
    assert pops[1] / pops[0] == pytest.approx(2 / 3)


def test_thermal_ground_state():
    rho = fock.thermal_state(0, 5).op
    assert rho[0, 0] == 1 and np.count_nonzero(rho) == 1


def test_truncation_too_small():
    with pytest.raises(fock.TruncationTooSmall):
        fock.thermal_state(2, 24)


@pytest.mark.parametrize("n", [0.5, 2, 4, 17])
def test_default_dim_meets_tail(n):
    d = fock.default_dim(n)
    assert d >= math.ceil(12 * (n + 1))
    assert (n / (n + 1)) ** d < fock.TAIL_TOL
    assert abs(fock.thermal_state(n).mean_number() - n) <= 1e-4 * n


def test_dissipator_traceless_on_thermal():
    rho = fock.thermal_state(3, 60)
    assert abs(np.trace(fock.dissipator_apply(fock.annihilation(60), rho))) < 1e-10


def test_dissipator_decay_rate():
    # D[a] on |1><1| drains one quantum at unit rate
    d = fock.dissipator_apply(fock.annihilation(6), fock.fock_state(1, 6))
    assert np.real(np.trace(fock.number(6) @ d)) == pytest.approx(-1.0)


@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_dissipator_trace_and_hermiticity(dim, seed):
    rng = np.random.default_rng(seed)
    rho = random_density(dim, rng)
    c = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    d = fock.dissipator_apply(c, rho)
    assert abs(np.trace(d)) < 1e-10 * (1 + np.abs(c).max() ** 2)
    assert np.allclose(d, d.conj().T)


def test_dissipator_dimension_mismatch():
    with pytest.raises(fock.DimensionMismatch):
        fock.dissipator_apply(fock.annihilation(3), np.eye(4))


@given(st.floats(0, 2), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_displaced_thermal_moments(n, re, im):
    dim = 60
    rho = fock.displaced_thermal_state(n, complex(re, im), dim)
    z, p = fock.quadratures(dim)
    assert fock.expect(z, rho).real == pytest.approx(2 * re, abs=1e-6)
    assert fock.expect(p, rho).real == pytest.approx(2 * im, abs=1e-6)
    assert rho.mean_number() == pytest.approx(n + re**2 + im**2, abs=1e-5)


def test_density_matrix_normalize_and_copy():
    rng = np.random.default_rng(0)
    rho = fock.DensityMatrix(3.0 * random_density(5, rng))
    rho.normalize()
    rho.check()
    c = rho.copy()
    c.op[0, 0] += 1
    assert rho.trace() == pytest.approx(1.0)


def test_density_matrix_rejects_non_square():
    with pytest.raises(fock.DimensionMismatch):
        fock.DensityMatrix(np.zeros((2, 3)))


def test_fock_state_out_of_range():
    with pytest.raises(fock.InvalidDimension):
        fock.fock_state(5, 5)
