"""Truncated Fock-space operators for a single motional mode.

Operators are dense complex ``(dim, dim)`` numpy arrays. Density matrices are
wrapped in :class:`DensityMatrix`, which carries the validity checks used by the
trajectory engines.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

log = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-12
TAIL_TOL = 1e-6


class FockError(ValueError):
    """Base class for Fock-space construction errors."""


class InvalidDimension(FockError):
    pass


class DimensionMismatch(FockError):
    pass


class TruncationTooSmall(FockError):
    pass


def _check_dim(dim: int) -> int:
    if int(dim) != dim or dim < 2:
        raise InvalidDimension(f"Fock dimension must be an integer >= 2, got {dim!r}")
    return int(dim)


def annihilation(dim: int) -> np.ndarray:
    """Ladder operator ``a`` with ``a[n-1, n] = sqrt(n)``."""
    dim = _check_dim(dim)
    a = np.zeros((dim, dim), dtype=complex)
    n = np.arange(1, dim)
    a[n - 1, n] = np.sqrt(n)
    a.setflags(write=False)
    return a


def creation(dim: int) -> np.ndarray:
    a_dag = annihilation(dim).conj().T.copy()
    a_dag.setflags(write=False)
    return a_dag


def number(dim: int) -> np.ndarray:
    dim = _check_dim(dim)
    n = np.diag(np.arange(dim, dtype=complex))
    n.setflags(write=False)
    return n


def quadratures(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Position and momentum quadratures ``z = a + a^dag``, ``p = i(a^dag - a)``.

    With this normalisation ``[z, p] = 2i`` away from the truncation edge.
    """
    a = annihilation(dim)
    ad = a.conj().T
    z = a + ad
    p = 1j * (ad - a)
    for op in (z, p):
        if np.max(np.abs(op - op.conj().T)) > HERMITIAN_TOL:
            raise FockError("quadrature lost hermiticity")
        op.setflags(write=False)
    return z, p


def commutator(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return x @ y - y @ x


def anticommutator(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return x @ y + y @ x


def expect(op: np.ndarray, rho: np.ndarray | "DensityMatrix") -> complex:
    """``Tr(op rho)``."""
    r = rho.op if isinstance(rho, DensityMatrix) else rho
    return complex(np.einsum("ij,ji->", op, r))


def dissipator_apply(c: np.ndarray, rho: np.ndarray | "DensityMatrix") -> np.ndarray:
    """Lindblad dissipator ``c rho c^dag - (c^dag c rho + rho c^dag c) / 2``."""
    r = rho.op if isinstance(rho, DensityMatrix) else np.asarray(rho)
    if c.shape != r.shape:
        raise DimensionMismatch(f"operator {c.shape} vs state {r.shape}")
    cd = c.conj().T
    cdc = cd @ c
    return c @ r @ cd - 0.5 * (cdc @ r + r @ cdc)


def default_dim(n_mean: float) -> int:
    """Truncation used when none is given.

    ``ceil(12 (n + 1))``, raised where needed so the thermal tail stays below
    ``TAIL_TOL``.
    """
    dim = int(math.ceil(12.0 * (n_mean + 1.0)))
    if n_mean > 0:
        q = n_mean / (n_mean + 1.0)
        dim = max(dim, int(math.floor(math.log(TAIL_TOL) / math.log(q))) + 1)
    return dim


def thermal_populations(n_mean: float, dim: int) -> np.ndarray:
    """Boltzmann populations renormalised on ``dim`` levels.

    Raises :class:`TruncationTooSmall` if the discarded tail of the untruncated
    distribution exceeds ``1e-6``.
    """
    dim = _check_dim(dim)
    if n_mean < 0:
        raise FockError(f"mean occupation must be >= 0, got {n_mean}")
    if n_mean == 0:
        pops = np.zeros(dim)
        pops[0] = 1.0
        return pops
    q = n_mean / (n_mean + 1.0)
    tail = q**dim
    if tail >= TAIL_TOL:
        raise TruncationTooSmall(
            f"thermal tail beyond dim={dim} is {tail:.2e} for N={n_mean}; "
            f"use dim >= {default_dim(n_mean)}"
        )
    pops = q ** np.arange(dim)
    return pops / pops.sum()


@dataclass
class DensityMatrix:
    """Hermitian, unit-trace state on a truncated Fock space."""

    op: np.ndarray
    trace_tol: float = 1e-9

    def __post_init__(self):
        self.op = np.asarray(self.op, dtype=complex)
        if self.op.ndim != 2 or self.op.shape[0] != self.op.shape[1]:
            raise DimensionMismatch(f"density matrix must be square, got {self.op.shape}")
        _check_dim(self.op.shape[0])

    @property
    def dim(self) -> int:
        return self.op.shape[0]

    def trace(self) -> float:
        return float(np.trace(self.op).real)

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.op - self.op.conj().T)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.op + self.op.conj().T))[0])

    def top_population(self) -> float:
        return float(self.op[-1, -1].real)

    def mean_number(self) -> float:
        return float(np.dot(np.arange(self.dim), np.diag(self.op).real))

    def normalize(self) -> "DensityMatrix":
        """Symmetrise and rescale to unit trace in place."""
        self.op = 0.5 * (self.op + self.op.conj().T)
        self.op /= np.trace(self.op).real
        return self

    def check(self, neg_tol: float = 1e-8) -> None:
        if abs(self.trace() - 1.0) > self.trace_tol:
            raise FockError(f"trace {self.trace()} differs from 1")
        if self.hermiticity_error() > HERMITIAN_TOL:
            raise FockError("density matrix is not hermitian")
        lam = self.min_eigenvalue()
        if lam < -neg_tol:
            log.warning("density matrix has negative eigenvalue %.3e", lam)

    def copy(self) -> "DensityMatrix":
        return DensityMatrix(self.op.copy(), self.trace_tol)


def thermal_state(n_mean: float, dim: int | None = None) -> DensityMatrix:
    if dim is None:
        dim = default_dim(n_mean)
    return DensityMatrix(np.diag(thermal_populations(n_mean, dim)).astype(complex))


def fock_state(n: int, dim: int) -> DensityMatrix:
    dim = _check_dim(dim)
    if not 0 <= n < dim:
        raise InvalidDimension(f"level {n} outside truncation {dim}")
    rho = np.zeros((dim, dim), dtype=complex)
    rho[n, n] = 1.0
    return DensityMatrix(rho)


def displaced_thermal_state(n_mean: float, alpha: complex, dim: int) -> DensityMatrix:
    """Thermal state displaced by ``alpha`` (so ``<z> = 2 Re alpha``)."""
    a = annihilation(dim)
    gen = alpha * a.conj().T - np.conj(alpha) * a
    disp = expm(gen)
    rho = disp @ thermal_state(n_mean, dim).op @ disp.conj().T
    return DensityMatrix(rho).normalize()
