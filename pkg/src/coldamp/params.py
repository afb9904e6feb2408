"""Physical parameters, unit handling and loop timebase.

Inputs are given in plain Hz (as quoted for spectra); everything downstream of
:func:`validate` works in angular units (rad/s).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

TWO_PI = 2.0 * math.pi

# mirror-mode solid-angle fraction at which ``gamma_mirror_hz`` is quoted
EPSILON_REF = 0.01

LAMB_DICKE_WARN = 0.5
LAMB_DICKE_MAX = 1.0
MIN_SEPARATION = 20.0
STEPS_PER_RADIAN = 50.0


class ParamsError(ValueError):
    pass


class LambDickeViolation(ParamsError):
    pass


class NonPositiveRate(ParamsError):
    pass


class PhysicsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PhysicalParams:
    """User-facing parameter set; rates in Hz.

    ``gamma_mirror_hz`` is the total scattering rate into the mirror mode,
    quoted at ``epsilon = EPSILON_REF``. When ``epsilon`` is given the rate is
    rescaled linearly. ``split`` is the fraction of the detected light sent to
    the in-loop detector.
    """

    nu_hz: float
    gamma_cool_hz: float
    n_doppler: float
    gamma_mirror_hz: float
    eta: float
    epsilon: float | None = None
    split: float = 0.5


@dataclass(frozen=True)
class ValidatedParams:
    """Angular-unit parameters used by every engine."""

    nu: float
    Gamma: float
    N: float
    gamma: float
    eta: float
    split: float = 0.5
    epsilon: float | None = None

    @property
    def gamma_in(self) -> float:
        return self.split * self.gamma

    @property
    def gamma_out(self) -> float:
        return (1.0 - self.split) * self.gamma

    @property
    def Gamma_over_nu(self) -> float:
        return self.Gamma / self.nu

    @property
    def gamma_over_Gamma(self) -> float:
        return self.gamma_in / self.Gamma

    @property
    def lamb_dicke(self) -> float:
        return self.eta * math.sqrt(self.N + 1.0)

    @property
    def period(self) -> float:
        return TWO_PI / self.nu

    def to_hz(self) -> PhysicalParams:
        gamma_hz = self.gamma / TWO_PI
        if self.epsilon is not None:
            gamma_hz *= EPSILON_REF / self.epsilon
        return PhysicalParams(
            nu_hz=self.nu / TWO_PI,
            gamma_cool_hz=self.Gamma / TWO_PI,
            n_doppler=self.N,
            gamma_mirror_hz=gamma_hz,
            eta=self.eta,
            epsilon=self.epsilon,
            split=self.split,
        )

    def with_in_loop_gamma(self, gamma_in: float) -> "ValidatedParams":
        """Copy with the in-loop measurement rate set to ``gamma_in`` (rad/s)."""
        return replace(self, gamma=gamma_in / self.split)


def validate(p: PhysicalParams, spectral: bool = False) -> ValidatedParams:
    """Check a parameter set and convert it to angular units.

    Parameters
    ----------
    p : PhysicalParams
        Rates in Hz.
    spectral : bool
        Also enforce the trap/cooling timescale separation needed for a
        resolved sideband (warns below ``nu >= 20 Gamma``).

    Raises
    ------
    NonPositiveRate
        Any rate <= 0, ``N < 0``, or ``epsilon``/``split`` out of range.
    LambDickeViolation
        ``eta sqrt(N+1) >= 1`` or ``eta`` outside ``(0, 1)``.
    """
    for name in ("nu_hz", "gamma_cool_hz", "gamma_mirror_hz"):
        val = getattr(p, name)
        if not val > 0 or not math.isfinite(val):
            raise NonPositiveRate(f"{name} must be positive and finite, got {val}")
    if p.n_doppler < 0:
        raise NonPositiveRate(f"n_doppler must be >= 0, got {p.n_doppler}")
    if p.epsilon is not None and not 0 < p.epsilon <= 1:
        raise NonPositiveRate(f"epsilon must lie in (0, 1], got {p.epsilon}")
    if not 0 < p.split < 1:
        raise NonPositiveRate(f"split must lie in (0, 1), got {p.split}")
    if not 0 < p.eta < 1:
        raise LambDickeViolation(f"eta must lie in (0, 1), got {p.eta}")

    ld = p.eta * math.sqrt(p.n_doppler + 1.0)
    if ld >= LAMB_DICKE_MAX:
        raise LambDickeViolation(f"eta*sqrt(N+1) = {ld:.3f} >= {LAMB_DICKE_MAX}")
    if ld >= LAMB_DICKE_WARN:
        warnings.warn(f"weak Lamb-Dicke regime: eta*sqrt(N+1) = {ld:.3f}", PhysicsWarning)
    if spectral and p.nu_hz < MIN_SEPARATION * p.gamma_cool_hz:
        warnings.warn(
            f"nu/Gamma = {p.nu_hz / p.gamma_cool_hz:.1f} < {MIN_SEPARATION}; "
            "sideband not well resolved",
            PhysicsWarning,
        )

    gamma = TWO_PI * p.gamma_mirror_hz
    if p.epsilon is not None:
        gamma *= p.epsilon / EPSILON_REF
    return ValidatedParams(
        nu=TWO_PI * p.nu_hz,
        Gamma=TWO_PI * p.gamma_cool_hz,
        N=float(p.n_doppler),
        gamma=gamma,
        eta=p.eta,
        split=p.split,
        epsilon=p.epsilon,
    )


def scale_for_desk(p: ValidatedParams, ratio_nu_Gamma: float) -> ValidatedParams:
    """Shrink the trap frequency so that ``nu / Gamma == ratio_nu_Gamma``.

    ``N``, ``eta``, ``gamma/Gamma`` and the detector split are untouched, so
    every steady-state prediction (which depends only on those groups and the
    feedback gain) is unchanged while a trajectory needs proportionally fewer
    steps per cooling time.
    """
    if ratio_nu_Gamma < MIN_SEPARATION:
        raise ParamsError(f"nu/Gamma ratio must be >= {MIN_SEPARATION}, got {ratio_nu_Gamma}")
    if math.isclose(ratio_nu_Gamma, p.nu / p.Gamma, rel_tol=1e-12):
        return p
    return replace(p, nu=ratio_nu_Gamma * p.Gamma)


@dataclass(frozen=True)
class LoopTimebase:
    """Integrator step, detector sampling interval and run length (seconds).

    ``substeps`` integrator steps make up one sample and ``samples_per_period``
    samples make up one trap period, so that demodulation windows line up with
    the trap oscillation.
    """

    dt_sme: float
    substeps: int
    samples_per_period: int
    t_total: float

    @property
    def dt_sample(self) -> float:
        return self.dt_sme * self.substeps

    @property
    def n_samples(self) -> int:
        return int(round(self.t_total / self.dt_sample))

    @property
    def n_steps(self) -> int:
        return self.n_samples * self.substeps

    @classmethod
    def build(
        cls,
        p: ValidatedParams,
        t_total: float,
        samples_per_period: int = 5,
        dt_sme_max: float | None = None,
    ) -> "LoopTimebase":
        """Pick the coarsest commensurate step not exceeding ``1/(50 nu)``."""
        limit = 1.0 / (STEPS_PER_RADIAN * p.nu)
        if dt_sme_max is not None:
            limit = min(limit, dt_sme_max)
        substeps = math.ceil(p.period / (samples_per_period * limit) - 1e-9)
        dt = p.period / (samples_per_period * substeps)
        return cls(dt_sme=dt, substeps=substeps, samples_per_period=samples_per_period,
                   t_total=t_total)

    def check(self, p: ValidatedParams, steady: bool = False) -> None:
        if self.substeps < 1 or self.samples_per_period < 2:
            raise ParamsError("need substeps >= 1 and samples_per_period >= 2")
        if self.dt_sme > (1.0 + 1e-9) / (STEPS_PER_RADIAN * p.nu):
            raise ParamsError(
                f"dt_sme = {self.dt_sme:.3e} s exceeds 1/(50 nu) = {1 / (50 * p.nu):.3e} s"
            )
        if steady and self.t_total < 10.0 / p.Gamma:
            raise ParamsError(
                f"t_total = {self.t_total:.3e} s is shorter than 10/Gamma = {10 / p.Gamma:.3e} s"
            )


# Experimental values: 1 MHz sideband, 400 Hz linewidth, Doppler limit N ~ 17, eta ~ 0.07.
LAB_NU_HZ = 1.0e6
LAB_GAMMA_HZ = 400.0
LAB_N = 17.0
LAB_ETA = 0.07

# In-loop gamma/Gamma for which the minimum of the steady-state occupation
# is 12 at N = 17 (frozen output of moments.calibrate_gamma).
CALIBRATED_GAMMA_RATIO = 9.070294784580499


def lab_params(gamma_ratio: float = CALIBRATED_GAMMA_RATIO, split: float = 0.5) -> ValidatedParams:
    """Lab-scale set with the in-loop rate ``gamma_in = gamma_ratio * Gamma``."""
    return validate(
        PhysicalParams(
            nu_hz=LAB_NU_HZ,
            gamma_cool_hz=LAB_GAMMA_HZ,
            n_doppler=LAB_N,
            gamma_mirror_hz=gamma_ratio * LAB_GAMMA_HZ / split,
            eta=LAB_ETA,
            split=split,
        ),
        spectral=True,
    )


DESK_RATIO = 100.0
DESK_N = 2.0
DESK_GAMMA_RATIO = 10.0
# Demodulation bandwidth for desk runs: 25 cooling linewidths, a quarter of nu.
DESK_BANDWIDTH_HZ = 10e3


def desk_params(
    n: float = DESK_N,
    gamma_ratio: float = DESK_GAMMA_RATIO,
    ratio_nu_Gamma: float = DESK_RATIO,
    split: float = 0.5,
) -> ValidatedParams:
    """Reduced-separation set for full density-matrix runs."""
    return validate(
        PhysicalParams(
            nu_hz=ratio_nu_Gamma * LAB_GAMMA_HZ,
            gamma_cool_hz=LAB_GAMMA_HZ,
            n_doppler=n,
            gamma_mirror_hz=gamma_ratio * LAB_GAMMA_HZ / split,
            eta=LAB_ETA,
            split=split,
        ),
        spectral=True,
    )
