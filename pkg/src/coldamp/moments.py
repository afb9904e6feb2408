"""Record-averaged feedback master equation and its steady state.

Works in the frame rotating at the trap frequency, where the averaged
equation has no ``nu`` term:

    dmu/dt = L0 mu - i (G gamma eta / 4) [z, q mu + mu q] - (G^2 gamma / 16) [z, [z, mu]]

with ``q = z cos(phase) - p sin(phase)``; ``phase = -pi/2`` gives ``q = p``
(cold damping), ``phase = pi`` gives ``q = -z`` (pure frequency pull).
``gamma`` is always the in-loop measurement rate ``p.gamma_in``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
from scipy.optimize import brentq

from . import fock
from .params import ValidatedParams

log = logging.getLogger(__name__)

PHASE_DAMPING = -math.pi / 2
PHASE_SHIFT = math.pi


class MomentsError(ValueError):
    pass


class CalibrationInfeasible(MomentsError):
    pass


class IntegrationUnstable(MomentsError):
    pass


def _x(p: ValidatedParams, G_tilde: float) -> float:
    """Dimensionless gain ``eta gamma G / Gamma``."""
    return p.eta * p.gamma_in * G_tilde / p.Gamma


def n_ss(p: ValidatedParams, G_tilde: float) -> float:
    """Closed-form steady-state occupation for the cold-damping phase."""
    if G_tilde < 0:
        raise MomentsError(f"negative gain {G_tilde} is outside the modelled regime")
    g, G, eta, N = p.gamma_in, p.Gamma, p.eta, p.N
    num = N + eta * g * G_tilde * (2 * N - 1) / (2 * G) + g * G_tilde**2 / (8 * G)
    den = 1 + 2 * eta * g * G_tilde / G
    return num / den


def n_ss_shift(p: ValidatedParams, G_tilde: float) -> float:
    """Steady-state occupation for the pi-phase loop.

    Obtained from the closed second-moment equations of the averaged master
    equation with ``q = -z``; the position variance stays thermal while the
    momentum picks up both the sheared position noise and the injected noise.
    """
    if G_tilde < 0:
        raise MomentsError(f"negative gain {G_tilde} is outside the modelled regime")
    g, G, eta, N = p.gamma_in, p.Gamma, p.eta, p.N
    return N + G_tilde**2 * g * (g * eta**2 * (2 * N + 1) / (2 * G**2) + 1 / (8 * G))


def frequency_shift(p: ValidatedParams, G_tilde: float) -> float:
    """Sideband pull ``G gamma eta / 2`` (rad/s) for the pi-phase loop."""
    return G_tilde * p.gamma_in * p.eta / 2.0


def optimal_gain(p: ValidatedParams) -> tuple[float, float]:
    """Gain minimising :func:`n_ss` and the minimum itself.

    Setting the derivative of the closed form to zero gives a quadratic in
    ``x = eta gamma G / Gamma``:  ``2 s x^2 + 2 s x - (N + 1/2) = 0`` with
    ``s = Gamma / (8 eta^2 gamma)``.
    """
    if p.eta == 0 or p.gamma_in == 0:
        return 0.0, p.N
    s = p.Gamma / (8 * p.eta**2 * p.gamma_in)
    x = 0.5 * (-1.0 + math.sqrt(1.0 + (2 * p.N + 1) / s))
    G_opt = x * p.Gamma / (p.eta * p.gamma_in)
    if G_opt <= 0:
        return 0.0, p.N
    return G_opt, n_ss(p, G_opt)


def cooling_floor(p: ValidatedParams) -> float:
    """Infinite-measurement-rate limit of the minimum, ``(2N - 1) / 4``."""
    return (2 * p.N - 1) / 4


@dataclass(frozen=True)
class SteadyStatePrediction:
    n_ss: float
    gain: float
    regime: str
    freq_shift_rad: float


def predict(p: ValidatedParams, G_tilde: float, phase: float = PHASE_DAMPING) -> SteadyStatePrediction:
    if math.isclose(phase, PHASE_DAMPING):
        return SteadyStatePrediction(n_ss(p, G_tilde), G_tilde, "damping", 0.0)
    if math.isclose(abs(phase), PHASE_SHIFT):
        return SteadyStatePrediction(
            n_ss_shift(p, G_tilde), G_tilde, "shift", frequency_shift(p, G_tilde)
        )
    raise MomentsError(f"no closed form for phase {phase}")


# -- averaged master equation ---------------------------------------------


def _lmul(a):
    return sps.kron(a, sps.identity(a.shape[0]), format="csr")


def _rmul(a):
    return sps.kron(sps.identity(a.shape[0]), a.T, format="csr")


def feedback_liouvillian(
    p: ValidatedParams, G_tilde: float, dim: int, phase: float = PHASE_DAMPING
) -> sps.csr_matrix:
    """Sparse generator acting on row-major ``vec(mu)``."""
    a = sps.csr_matrix(fock.annihilation(dim))
    ad = a.conj().T.tocsr()
    z = a + ad
    pm = 1j * (ad - a)
    q = math.cos(phase) * z - math.sin(phase) * pm

    def dissipator(c):
        cd = c.conj().T.tocsr()
        cdc = cd @ c
        return _lmul(c) @ _rmul(cd) - 0.5 * (_lmul(cdc) + _rmul(cdc))

    L = p.Gamma * (p.N + 1) * dissipator(a) + p.Gamma * p.N * dissipator(ad)
    if G_tilde:
        k = G_tilde * p.gamma_in * p.eta / 4
        d = G_tilde**2 * p.gamma_in / 16
        zq = z @ q
        qz = q @ z
        # -i k (z q mu + z mu q - q mu z - mu q z)
        L = L - 1j * k * (_lmul(zq) + _lmul(z) @ _rmul(q) - _lmul(q) @ _rmul(z) - _rmul(qz))
        zz = z @ z
        # -d (z z mu - 2 z mu z + mu z z)
        L = L - d * (_lmul(zz) - 2 * _lmul(z) @ _rmul(z) + _rmul(zz))
    return L.tocsr()


@dataclass
class MeqResult:
    times: np.ndarray
    n: np.ndarray
    rho: fock.DensityMatrix
    dt: float

    @property
    def n_final(self) -> float:
        return float(self.n[-1])


def integrate_feedback_meq(
    p: ValidatedParams,
    G_tilde: float,
    t_max: float | None = None,
    dim: int | None = None,
    phase: float = PHASE_DAMPING,
    rho0: fock.DensityMatrix | None = None,
    n_records: int = 200,
    max_halvings: int = 3,
) -> MeqResult:
    """RK4 integration of the averaged feedback master equation.

    The step starts at ``min(0.01/Gamma_eff, 0.1/(G gamma))`` and is halved
    (up to ``max_halvings`` times) if the run goes unstable.
    """
    if G_tilde < 0:
        raise MomentsError("negative gain")
    if dim is None:
        dim = fock.default_dim(max(p.N, n_ss(p, G_tilde) if phase == PHASE_DAMPING else p.N))
    if rho0 is None:
        rho0 = fock.thermal_state(p.N, dim)
    elif rho0.dim != dim:
        raise fock.DimensionMismatch("initial state does not match dim")
    if t_max is None:
        t_max = 20.0 / p.Gamma

    L = feedback_liouvillian(p, G_tilde, dim, phase)
    gamma_eff = p.Gamma + 2 * G_tilde * p.gamma_in * p.eta
    dt = 0.01 / gamma_eff
    if G_tilde:
        dt = min(dt, 0.1 / (G_tilde * p.gamma_in))
    diag_n = np.arange(dim)
    diag_idx = np.arange(dim) * (dim + 1)

    for attempt in range(max_halvings + 1):
        try:
            return _rk4(L, rho0.op.ravel().copy(), dt, t_max, dim, diag_n, diag_idx, n_records)
        except IntegrationUnstable:
            if attempt == max_halvings:
                raise
            log.info("RK4 unstable at dt=%.3e, halving", dt)
            dt /= 2
    raise AssertionError("unreachable")


def _rk4(L, v, dt, t_max, dim, diag_n, diag_idx, n_records) -> MeqResult:
    n_steps = int(math.ceil(t_max / dt))
    dt = t_max / n_steps
    every = max(1, n_steps // n_records)
    times, ns = [0.0], [float(np.dot(diag_n, v[diag_idx].real))]
    n0 = ns[0]
    for k in range(1, n_steps + 1):
        k1 = L @ v
        k2 = L @ (v + 0.5 * dt * k1)
        k3 = L @ (v + 0.5 * dt * k2)
        k4 = L @ (v + dt * k3)
        v = v + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if k % every == 0 or k == n_steps:
            tr = v[diag_idx].sum().real
            nk = float(np.dot(diag_n, v[diag_idx].real))
            if not np.isfinite(nk) or abs(tr - 1.0) > 1e-6 or nk > 100 * (n0 + dim):
                raise IntegrationUnstable(f"diverged at t={k * dt:.3e}")
            times.append(k * dt)
            ns.append(nk)
    rho = fock.DensityMatrix(v.reshape(dim, dim)).normalize()
    top = rho.top_population()
    if top > 1e-4:
        raise fock.TruncationTooSmall(f"top-level population {top:.2e} at dim={dim}")
    return MeqResult(np.array(times), np.array(ns), rho, dt)


# -- calibration ----------------------------------------------------------


@dataclass(frozen=True)
class GammaCalibration:
    gamma_in: float
    ratio: float
    G_opt: float
    n_min: float
    n_min_scaled: float
    scale: float


def calibrate_gamma(
    p: ValidatedParams, n_to: float, scale: float = 15.0, rtol: float = 1e-10
) -> GammaCalibration:
    """Solve for the in-loop rate whose optimal-gain occupation equals ``n_to``.

    ``p.gamma`` is ignored. Also reports the minimum reached with the rate
    multiplied by ``scale`` (a larger mirror solid angle).
    """
    floor = cooling_floor(p)
    if n_to >= p.N:
        if math.isclose(n_to, p.N):
            return GammaCalibration(0.0, 0.0, 0.0, p.N, p.N, scale)
        raise CalibrationInfeasible(f"target {n_to} is above the Doppler limit {p.N}")
    if n_to <= floor:
        raise CalibrationInfeasible(
            f"target {n_to} is at or below the strong-measurement floor {floor}"
        )

    def resid(log_r):
        q = p.with_in_loop_gamma(math.exp(log_r) * p.Gamma)
        return optimal_gain(q)[1] - n_to

    lo, hi = -30.0, 30.0
    if resid(lo) * resid(hi) > 0:
        raise CalibrationInfeasible("no sign change in bracket")
    log_r = brentq(resid, lo, hi, xtol=1e-14, rtol=rtol, maxiter=500)
    ratio = math.exp(log_r)
    q = p.with_in_loop_gamma(ratio * p.Gamma)
    g_opt, n_min = optimal_gain(q)
    n_scaled = optimal_gain(p.with_in_loop_gamma(scale * ratio * p.Gamma))[1]
    return GammaCalibration(ratio * p.Gamma, ratio, g_opt, n_min, n_scaled, scale)


def sweep_table(p: ValidatedParams, gains, phase: float = PHASE_DAMPING, with_meq: bool = False,
                dim: int | None = None) -> list[dict]:
    """Rows of ``gain, n_ss_analytic, n_ss_meq, freq_shift_hz``."""
    rows = []
    for g in gains:
        pred = predict(p, g, phase)
        n_meq = float("nan")
        if with_meq:
            n_meq = integrate_feedback_meq(p, g, dim=dim, phase=phase).n_final
        rows.append(
            {
                "gain": g,
                "n_ss_analytic": pred.n_ss,
                "n_ss_meq": n_meq,
                "freq_shift_hz": pred.freq_shift_rad / (2 * math.pi),
            }
        )
    return rows
