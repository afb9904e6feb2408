import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import signal

from coldamp import circuit as C
from coldamp import params as P

NU, B, FS = 1.0e6, 30e3, 5.0e6


def tone_phase(y, w, k):
    """Phase ``phi`` and amplitude of ``y = A cos(w k - phi)`` by least squares."""
    A = np.column_stack([np.cos(w * k), np.sin(w * k)])
    (c, s), *_ = np.linalg.lstsq(A, y, rcond=None)
    return math.atan2(s, c), math.hypot(c, s)


def test_bandpass_unit_gain_at_center():
    coef = C.design_bandpass(NU, B, 50e6)
    h = coef.response([NU])[0]
    assert abs(abs(h) - 1) < 1e-3
    assert abs(np.angle(h)) < 1e-9


def test_bandpass_zeros_at_dc_and_nyquist():
    coef = C.design_bandpass(NU, B, 50e6)
    assert np.all(np.abs(coef.response([0.0, 25e6])) < 1e-6)


def test_half_power_at_edges():
    coef = C.design_bandpass(NU, B, 50e6)
    for f in (NU - B / 2, NU + B / 2):
        assert abs(abs(coef.response([f])[0]) - 1 / math.sqrt(2)) < 0.02 / math.sqrt(2)
    lo, hi = C.half_power_points(coef, NU, B)
    assert hi - lo == pytest.approx(B, rel=1e-6)


def test_sample_rate_too_low():
    with pytest.raises(C.SampleRateTooLow):
        C.design_bandpass(NU, B, 4 * NU)


def test_config_invariants():
    for bad in (dict(bandwidth_hz=0.0), dict(delay_samples=0), dict(mode="x"),
                dict(gain_electronic=-1.0), dict(calibration=0.0)):
        with pytest.raises(C.CircuitError):
            C.FeedbackConfig(**bad)
    assert C.FeedbackConfig(0.0, calibration=2.0).G_tilde == 0.0
    assert C.FeedbackConfig(1.5, calibration=2.0).G_tilde == 3.0


def test_bandwidth_warning():
    p = P.lab_params()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        C.FeedbackConfig(bandwidth_hz=30e3).check_bandwidth(p)
    for bw in (100.0, 500e3):
        with pytest.warns(P.PhysicsWarning):
            C.FeedbackConfig(bandwidth_hz=bw).check_bandwidth(p)


def circuit(phase=-math.pi / 2, gain=1.0, delay=1, fs=FS, bw=B):
    cfg = C.FeedbackConfig(gain, phase=phase, bandwidth_hz=bw, delay_samples=delay, mode="filter")
    return C.Circuit.build(cfg, NU, fs)


def test_zero_in_zero_out():
    assert not np.any(C.process_stream(circuit(), np.zeros(500)))


@pytest.mark.parametrize("delay", [1, 2, 5])
def test_quarter_period_advance_at_damping_phase(delay):
    # a tone cos(w k) leaves as cos(w k + pi/2), i.e. a quarter period early
    circ = circuit(gain=2.5, delay=delay)
    w = 2 * math.pi * NU / FS
    k = np.arange(6000)
    y = C.process_stream(circ, np.cos(w * k))
    ph, amp = tone_phase(y[3000:], w, k[3000:])
    assert math.remainder(ph + math.pi / 2, 2 * math.pi) == pytest.approx(0, abs=1e-6)
    assert amp == pytest.approx(2.5, rel=0.01)
    assert np.max(np.abs(y[3000:] - 2.5 * np.cos(w * k[3000:] + math.pi / 2))) < 0.025


@given(st.floats(-math.pi, math.pi), st.integers(1, 4))
def test_loop_phase_matches_setting(phase, delay):
    circ = circuit(phase=phase, delay=delay)
    w = 2 * math.pi * NU / FS
    k = np.arange(4000)
    y = C.process_stream(circ, np.cos(w * k))
    ph, _ = tone_phase(y[2000:], w, k[2000:])
    assert abs(math.remainder(ph - phase, 2 * math.pi)) < 1e-6
    assert abs(math.remainder(C.loop_phase(circ.cfg, NU, FS) - phase, 2 * math.pi)) < 1e-9


def test_ideal_mode_loop_phase_is_setting():
    cfg = C.FeedbackConfig(1.0, phase=0.3, mode="ideal")
    assert C.loop_phase(cfg, NU, FS) == 0.3


@given(st.integers(1, 6), st.integers(0, 200))
def test_causality(delay, k0):
    x = np.zeros(300)
    x[k0] = 1.0
    y = C.process_stream(circuit(delay=delay, phase=0.4), x)
    assert np.all(y[: k0 + delay] == 0.0)
    assert y[k0 + delay] != 0.0


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 400))
    circ = circuit(phase=1.1, delay=2)
    lhs = C.process_stream(circ, a * x + b * y)
    rhs = a * C.process_stream(circ, x) + b * C.process_stream(circ, y)
    assert np.max(np.abs(lhs - rhs)) < 1e-9 * (1 + abs(a) + abs(b))


def test_state_reset():
    circ = circuit()
    st_ = circ.new_state()
    C.process_stream(circ, np.ones(50), st_)
    st_.reset()
    assert (st_.s1, st_.s2, st_.y_prev) == (0.0, 0.0, 0.0) and set(st_.line) == {0.0}


def test_white_noise_shaped_by_response():
    fs, nu, bw = 2.0e5, 4.0e4, 4e3
    cfg = C.FeedbackConfig(1.7, phase=0.5, bandwidth_hz=bw, delay_samples=1, mode="filter")
    circ = C.Circuit.build(cfg, nu, fs)
    x = np.random.default_rng(7).standard_normal(2**17)
    y = C.process_stream(circ, x)
    f, pxx = signal.welch(x, fs, nperseg=1024)
    _, pyy = signal.welch(y, fs, nperseg=1024)
    h2 = 1.7**2 * np.abs(C.loop_response(cfg, nu, fs, f)) ** 2
    band = np.abs(f - nu) < bw
    ratio = pyy[band].sum() / (h2[band] * pxx[band]).sum()
    assert ratio == pytest.approx(1.0, abs=0.03)


def test_ideal_demod_feedback_values(desk):
    assert C.ideal_demod_feedback(0.0, 0.0, desk, 0.3) == 0.0
    assert C.ideal_demod_feedback(1.0, 0.0, desk, 0.0) == pytest.approx(desk.gamma_in * desk.eta)
    t = 0.25 * desk.period
    assert abs(C.ideal_demod_feedback(1.0, 2.0, desk, t)) < 1e-9 * desk.gamma_in


def test_demod_window():
    assert C.demod_periods(C.FeedbackConfig(bandwidth_hz=10e3), 4e4) == 4
    assert C.demod_periods(C.FeedbackConfig(bandwidth_hz=1e6), 4e4) == 1


def test_calibrate_gain_linear_in_broadening(lab):
    cfg = C.FeedbackConfig(1.0, mode="filter")
    base = 2 * math.pi * 400
    for c in (0.5, 2.0):
        for g in (0.5, 1.0):
            ref = {"gain": g, "fwhm_rad": base + c * g * lab.gamma_in * lab.eta, "fwhm0_rad": base}
            assert C.calibrate_gain(cfg, lab, ref) == pytest.approx(c)
    # default zero-gain width is Gamma itself
    ref = {"gain": 1.0, "fwhm_rad": lab.Gamma + lab.gamma_in * lab.eta}
    assert C.calibrate_gain(cfg, lab, ref) == pytest.approx(1.0)


@pytest.mark.parametrize("ref", [None, {}, {"gain": 1.0}, {"gain": 0.0, "fwhm_rad": 1.0}])
def test_calibrate_gain_missing_reference(lab, ref):
    with pytest.raises(C.MissingReference):
        C.calibrate_gain(C.FeedbackConfig(), lab, ref)


def test_build_loop_layouts(desk):
    tb = P.LoopTimebase.build(desk, 1e-3)
    ideal = C.build_loop(C.FeedbackConfig(1.0, bandwidth_hz=10e3), desk, tb)
    assert ideal.ring.shape == (3, 4 * tb.samples_per_period)
    filt = C.build_loop(C.FeedbackConfig(1.0, bandwidth_hz=4e3, mode="filter", delay_samples=3),
                        desk, tb)
    assert filt.delay.shape == (3,)
