"""Conditional Gaussian engine.

The Hamiltonian is quadratic, the measurement is linear in ``z`` and the
feedback is a c-number force, so a Gaussian conditional state stays Gaussian.
It is then fully described by the means ``m = (<z>, <p>)`` and the covariance
``V`` of the central second moments:

    dm = A m dt + 2 kappa V e dW - (0, 2 theta)
    dV = (A V + V A^T + Gamma (2N+1) I - 4 kappa^2 V e e^T V) dt

with ``A = [[-Gamma/2, nu], [-nu, -Gamma/2]]``, ``e = (1, 0)``,
``kappa = sqrt(2 gamma eta^2)`` for the total rate of both detectors and
``theta = G_tilde I_fb dt``. The rotation part of ``A`` is applied exactly;
the rest uses the same splitting as the density-matrix engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .circuit import FeedbackConfig
from .params import LoopTimebase, ValidatedParams
from .sme import CovarianceBreach, TrajectoryRecord, drive

DET_TOL = 1e-6


@dataclass
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(2)
        self.cov = np.asarray(self.cov, dtype=float).reshape(2, 2)
        if not np.allclose(self.cov, self.cov.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")

    @classmethod
    def thermal(cls, N: float) -> "GaussianState":
        return cls(np.zeros(2), (2 * N + 1) * np.eye(2))

    @property
    def n_mean(self) -> float:
        return 0.25 * (np.trace(self.cov) + self.mean @ self.mean - 2.0)

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.cov))

    def check(self) -> None:
        if self.cov[0, 0] <= 0 or self.cov[1, 1] <= 0 or self.det < 1 - DET_TOL:
            raise CovarianceBreach(f"covariance determinant {self.det:.6f} < 1", t=self.t)


def gaussian_step(g: GaussianState, dW: float, I_fb: float, p: ValidatedParams, G_tilde: float,
                  dt: float) -> GaussianState:
    """Advance the conditional moments by ``dt``; ``dW`` is the combined increment."""
    m = g.mean.copy()
    V = np.array([g.cov[0, 0], g.cov[0, 1], g.cov[1, 1]])
    kappa = math.sqrt(2 * p.gamma * p.eta**2)
    K.gaussian_step(m, V, math.cos(p.nu * dt), math.sin(p.nu * dt), p.Gamma, p.N, kappa, dW,
                    G_tilde * I_fb * dt, dt)
    out = GaussianState(m, np.array([[V[0], V[1]], [V[1], V[2]]]), g.t + dt)
    out.check()
    return out


def stationary_covariance(p: ValidatedParams) -> np.ndarray:
    """Rotating-wave fixed point of the Riccati flow, ``V = v I``.

    Averaging ``e e^T`` over a trap period gives ``I/2``, so
    ``2 kappa^2 v^2 + Gamma v - Gamma (2N+1) = 0``.
    """
    k2 = 2 * p.gamma * p.eta**2
    if k2 == 0:
        return (2 * p.N + 1) * np.eye(2)
    v = (-p.Gamma + math.sqrt(p.Gamma**2 + 8 * k2 * p.Gamma * (2 * p.N + 1))) / (4 * k2)
    return v * np.eye(2)


def run_trajectory_gaussian(p: ValidatedParams, fb: FeedbackConfig, tb: LoopTimebase, seed: int,
                            traj: int = 0, **kw) -> TrajectoryRecord:
    """Closed-loop trajectory of the Gaussian engine; same record as the SME engine."""
    return drive("gaussian", p, fb, tb, seed, traj, **kw)
