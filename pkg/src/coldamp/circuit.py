"""Feedback electronics: bandpass, phase shifter, gain and loop delay.

Two loop models share one interface:

``filter``
    the detector current is sampled, passed through a second-order bandpass
    centred on the trap frequency, rotated in phase, amplified and held for
    one sample interval after ``delay_samples`` samples.
``ideal``
    the analytic demodulated current ``(gamma eta <q>_rot + sqrt(gamma/2) Xi) cos(nu t)``
    with ``Xi`` the in-loop detector noise averaged over a window of whole
    trap periods (about ``1/B`` long).

Phase convention: a tone ``cos(nu t + a)`` leaves the shifter as
``cos(nu t + a - phase)``. ``phase = -pi/2`` therefore feeds back the
momentum quadrature (cold damping) and ``phase = pi`` feeds back ``-z``.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from . import _kernels as K
from .params import LoopTimebase, PhysicsWarning, ValidatedParams

MODES = ("filter", "ideal")


class CircuitError(ValueError):
    pass


class SampleRateTooLow(CircuitError):
    pass


class MissingReference(CircuitError):
    pass


@dataclass(frozen=True)
class FilterCoefficients:
    b: np.ndarray
    a: np.ndarray
    fs: float

    def response(self, f_hz) -> np.ndarray:
        """Complex transfer function at ``f_hz``."""
        _, h = signal.freqz(self.b, self.a, worN=np.atleast_1d(f_hz), fs=self.fs)
        return h


@dataclass(frozen=True)
class FeedbackConfig:
    """Loop settings.

    Parameters
    ----------
    gain_electronic : float
        Amplifier setting ``G``; the theory gain is ``calibration * G``.
    phase : float
        Phase-shifter setting in radians.
    bandwidth_hz : float
        Bandpass width ``B`` (filter mode) or inverse demodulation window
        (ideal mode).
    delay_samples : int
        Loop latency in detector samples, at least 1.
    mode : str
        ``"filter"`` or ``"ideal"``.
    calibration : float
        Multiplier ``G_tilde / G``. The ideal loop is written in theory
        units and applies ``G_tilde``; in filter mode the circuit output is
        the drive and the calibration only labels it (see
        :func:`calibrate_gain`).
    """

    gain_electronic: float = 0.0
    phase: float = -math.pi / 2
    bandwidth_hz: float = 30e3
    delay_samples: int = 1
    mode: str = "ideal"
    calibration: float = 1.0

    def __post_init__(self):
        if not self.bandwidth_hz > 0:
            raise CircuitError(f"bandwidth_hz must be positive, got {self.bandwidth_hz}")
        if int(self.delay_samples) != self.delay_samples or self.delay_samples < 1:
            raise CircuitError(f"delay_samples must be an integer >= 1, got {self.delay_samples}")
        if self.mode not in MODES:
            raise CircuitError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.gain_electronic < 0:
            raise CircuitError("gain_electronic must be >= 0 (use the phase to flip sign)")
        if not self.calibration > 0:
            raise CircuitError("calibration must be positive")

    @property
    def G_tilde(self) -> float:
        return self.calibration * self.gain_electronic

    def check_bandwidth(self, p: ValidatedParams) -> None:
        """Warn unless ``Gamma << 2 pi B << nu``."""
        w = 2 * math.pi * self.bandwidth_hz
        if not (w > 3 * p.Gamma and w < p.nu / 3):
            warnings.warn(
                f"bandwidth {self.bandwidth_hz:.3g} Hz is outside Gamma << 2 pi B << nu",
                PhysicsWarning,
            )


def design_bandpass(center_hz: float, bandwidth_hz: float, sample_rate_hz: float) -> FilterCoefficients:
    """Second-order bandpass, unit gain and zero phase at ``center_hz``."""
    if sample_rate_hz <= 4 * center_hz:
        raise SampleRateTooLow(
            f"sample rate {sample_rate_hz} Hz must exceed 4 x centre {center_hz} Hz"
        )
    if not 0 < bandwidth_hz < center_hz:
        raise CircuitError("bandwidth must lie in (0, center)")
    b, a = signal.iirpeak(center_hz, center_hz / bandwidth_hz, fs=sample_rate_hz)
    return FilterCoefficients(b, a, sample_rate_hz)


def half_power_points(coef: FilterCoefficients, center_hz: float, bandwidth_hz: float
                      ) -> tuple[float, float]:
    """Frequencies either side of the centre where ``|H| = 1/sqrt(2)``."""
    from scipy.optimize import brentq

    def f(x):
        return abs(coef.response(x)[0]) - 1 / math.sqrt(2)

    lo = brentq(f, center_hz - 5 * bandwidth_hz, center_hz)
    hi = brentq(f, center_hz, min(center_hz + 5 * bandwidth_hz, 0.499 * coef.fs))
    return lo, hi


def shifter_phase(cfg: FeedbackConfig, nu_hz: float, fs: float) -> float:
    """Rotation programmed into the shifter so that the delayed loop lands on ``cfg.phase``.

    The sample delay of ``D`` samples is removed exactly at ``nu``. The
    integrate-and-dump front end and the hold on the output each lag by half
    a sample, and the two cancel when the output is referenced to the centre
    of its hold interval.
    """
    w = 2 * math.pi * nu_hz / fs
    return cfg.phase - w * cfg.delay_samples


def loop_response(cfg: FeedbackConfig, nu_hz: float, fs: float, f_hz=None) -> np.ndarray:
    """Sampled transfer function bandpass -> shifter -> delay (without gain)."""
    if f_hz is None:
        f_hz = nu_hz
    w0 = 2 * math.pi * nu_hz / fs
    ph = shifter_phase(cfg, nu_hz, fs)
    coef = design_bandpass(nu_hz, cfg.bandwidth_hz, fs)
    f = np.atleast_1d(np.asarray(f_hz, dtype=float))
    zinv = np.exp(-2j * np.pi * f / fs)
    rot = math.cos(ph) + math.sin(ph) * (zinv - math.cos(w0)) / math.sin(w0)
    return coef.response(f) * rot * zinv**cfg.delay_samples


def loop_phase(cfg: FeedbackConfig, nu_hz: float, fs: float) -> float:
    """Effective phase setting at ``nu``: output tone is ``cos(nu t + a - loop_phase)``."""
    if cfg.mode == "ideal":
        return cfg.phase
    h = loop_response(cfg, nu_hz, fs)[0]
    return math.remainder(-math.atan2(h.imag, h.real), 2 * math.pi)


@dataclass
class FilterState:
    """Per-stream registers for :func:`process_sample`."""

    delay_samples: int = 1
    s1: float = 0.0
    s2: float = 0.0
    y_prev: float = 0.0
    line: deque = field(default_factory=deque)

    def __post_init__(self):
        self.reset()

    def reset(self) -> None:
        self.s1 = self.s2 = self.y_prev = 0.0
        self.line = deque([0.0] * self.delay_samples, maxlen=self.delay_samples)


@dataclass(frozen=True)
class Circuit:
    """Precomputed coefficients of the filter-mode chain at one sample rate."""

    cfg: FeedbackConfig
    coef: FilterCoefficients
    nu_hz: float

    @classmethod
    def build(cls, cfg: FeedbackConfig, nu_hz: float, fs: float) -> "Circuit":
        return cls(cfg, design_bandpass(nu_hz, cfg.bandwidth_hz, fs), nu_hz)

    def new_state(self) -> FilterState:
        return FilterState(self.cfg.delay_samples)

    def rotation(self) -> tuple[float, float, float, float]:
        w = 2 * math.pi * self.nu_hz / self.coef.fs
        ph = shifter_phase(self.cfg, self.nu_hz, self.coef.fs)
        return math.cos(ph), math.sin(ph), math.cos(w), math.sin(w)


def process_sample(circ: Circuit, state: FilterState, x: float) -> float:
    """Push input sample ``k``; return the output held during interval ``k``.

    The returned value depends only on inputs up to ``k - delay_samples``.
    """
    b, a = circ.coef.b, circ.coef.a
    regs = np.array([0.0, state.s1, state.s2])
    y = K.biquad_tick(b[0], b[1], b[2], a[1], a[2], regs, 1, 2, float(x))
    state.s1, state.s2 = float(regs[1]), float(regs[2])
    rc, rs, cw, sw = circ.rotation()
    r = K.rotate_tick(y, state.y_prev, rc, rs, cw, sw)
    state.y_prev = y
    out = state.line[0]
    state.line.append(circ.cfg.gain_electronic * r)
    return out


def process_stream(circ: Circuit, x: np.ndarray, state: FilterState | None = None) -> np.ndarray:
    """Vectorised :func:`process_sample` over a whole record."""
    if state is None:
        state = circ.new_state()
    return np.array([process_sample(circ, state, v) for v in np.asarray(x, dtype=float)])


def ideal_demod_feedback(pmean: float, Xi: float, p: ValidatedParams, t: float) -> float:
    """Demodulated-and-remodulated feedback current for the damping phase."""
    g = p.gamma_in
    return (g * p.eta * pmean + math.sqrt(g / 2.0) * Xi) * math.cos(p.nu * t)


def demod_periods(cfg: FeedbackConfig, nu_hz: float) -> int:
    """Whole trap periods in the ideal-mode noise window (about ``1/B``)."""
    return max(1, int(round(nu_hz / cfg.bandwidth_hz)))


@dataclass
class LoopBuffers:
    """Arrays handed to the compiled chunk kernels."""

    lp: np.ndarray
    fs: np.ndarray
    ring: np.ndarray
    delay: np.ndarray
    ring_pos: int = 0
    delay_pos: int = 0


def build_loop(cfg: FeedbackConfig, p: ValidatedParams, tb: LoopTimebase) -> LoopBuffers:
    lp = np.zeros(K.LP_SIZE)
    lp[K.LP_GAMMA_IN] = p.gamma_in
    lp[K.LP_ETA] = p.eta
    lp[K.LP_PHASE] = cfg.phase
    lp[K.LP_GAIN] = cfg.gain_electronic
    nu_hz = p.nu / (2 * math.pi)
    if cfg.mode == "ideal":
        lp[K.LP_MODE] = 0.0
        lp[K.LP_KICK] = cfg.G_tilde
        lw = demod_periods(cfg, nu_hz) * tb.samples_per_period
        lp[K.LP_WINDOW] = lw * tb.dt_sample
    else:
        lp[K.LP_MODE] = 1.0
        lp[K.LP_KICK] = 1.0
        circ = Circuit.build(cfg, nu_hz, 1.0 / tb.dt_sample)
        b, a = circ.coef.b, circ.coef.a
        lp[K.LP_B0], lp[K.LP_B1], lp[K.LP_B2] = b
        lp[K.LP_A1], lp[K.LP_A2] = a[1], a[2]
        lp[K.LP_ROT_C], lp[K.LP_ROT_S], lp[K.LP_COS_W], lp[K.LP_SIN_W] = circ.rotation()
        lw = 1
    return LoopBuffers(
        lp=lp,
        fs=np.zeros(K.LS_SIZE),
        ring=np.zeros((3, lw)),
        delay=np.zeros(cfg.delay_samples),
    )


def calibrate_gain(cfg: FeedbackConfig, p: ValidatedParams, reference: dict | None) -> float:
    """Multiplier ``G_tilde / G`` from a measured sideband broadening.

    ``reference`` holds ``gain`` (electronic) and ``fwhm_rad`` (fitted
    sideband width in rad/s at that gain), and optionally ``fwhm0_rad``, the
    width fitted without feedback on the same noise; ``p.Gamma`` is used when
    it is absent. The averaged loop broadens the sideband by
    ``G_tilde gamma eta``, so ``calibration = (fwhm - fwhm0) / (gamma eta G_ref)``.
    """
    if not reference or "gain" not in reference or "fwhm_rad" not in reference:
        raise MissingReference("calibrate_gain needs a reference sweep point (gain, fwhm_rad)")
    g_ref = float(reference["gain"])
    if g_ref <= 0:
        raise MissingReference("reference gain must be positive")
    dG = float(reference["fwhm_rad"]) - float(reference.get("fwhm0_rad", p.Gamma))
    return dG / (p.gamma_in * p.eta * g_ref)
