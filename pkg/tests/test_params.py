import math
import warnings

import pytest
from hypothesis import given
from hypothesis import strategies as st

from coldamp import moments as M
from coldamp import params as P


def phys(**kw):
    base = dict(nu_hz=1e6, gamma_cool_hz=400.0, n_doppler=17.0, gamma_mirror_hz=7000.0, eta=0.07)
    base.update(kw)
    return P.PhysicalParams(**base)


def test_lab_set_valid_and_lamb_dicke_value():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        v = P.validate(phys())
    assert v.lamb_dicke == pytest.approx(0.07 * math.sqrt(18))
    assert v.lamb_dicke == pytest.approx(0.297, abs=1e-3)
    assert v.nu == pytest.approx(2 * math.pi * 1e6)
    assert v.Gamma_over_nu == pytest.approx(4e-4)


def test_ground_state_limit_valid():
    assert P.validate(phys(n_doppler=0.0)).N == 0.0


def test_lamb_dicke_hard_error():
    with pytest.raises(P.LambDickeViolation):
        P.validate(phys(eta=0.5))


def test_lamb_dicke_warning():
    with pytest.warns(P.PhysicsWarning):
        P.validate(phys(eta=0.15))


@pytest.mark.parametrize("field,value", [("nu_hz", 0.0), ("gamma_cool_hz", -1.0),
                                         ("gamma_mirror_hz", float("nan")), ("n_doppler", -0.1),
                                         ("epsilon", 1.5), ("split", 1.0)])
def test_nonpositive_rates(field, value):
    with pytest.raises(P.NonPositiveRate):
        P.validate(phys(**{field: value}))


def test_separation_warning_only_for_spectral():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        P.validate(phys(nu_hz=4000.0))
    with pytest.warns(P.PhysicsWarning):
        P.validate(phys(nu_hz=4000.0), spectral=True)


@given(st.floats(1e3, 1e8), st.floats(1.0, 1e4), st.floats(0, 20), st.floats(1.0, 1e6),
       st.floats(0.01, 0.2), st.floats(0.05, 0.95))
def test_round_trip(nu, G, N, g, eta, split):
    p = P.PhysicalParams(nu, G, N, g, eta, split=split)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            back = P.validate(p).to_hz()
        except P.LambDickeViolation:
            return
    for a, b in ((back.nu_hz, nu), (back.gamma_cool_hz, G), (back.gamma_mirror_hz, g)):
        assert a == pytest.approx(b, rel=1e-12)
    assert back.n_doppler == N and back.eta == eta and back.split == split


def test_epsilon_scales_gamma_linearly():
    a = P.validate(phys(epsilon=0.01))
    b = P.validate(phys(epsilon=0.15))
    assert b.gamma / a.gamma == pytest.approx(15.0)
    assert P.validate(phys(epsilon=0.15)).to_hz().gamma_mirror_hz == pytest.approx(7000.0)


def test_split_rates():
    v = P.validate(phys(split=0.25))
    assert v.gamma_in + v.gamma_out == pytest.approx(v.gamma)
    assert v.gamma_in == pytest.approx(0.25 * v.gamma)


@given(st.floats(20, 5000))
def test_scale_for_desk_preserves_groups(ratio):
    lab = P.lab_params()
    desk = P.scale_for_desk(lab, ratio)
    assert desk.nu / desk.Gamma == pytest.approx(ratio)
    assert (desk.N, desk.eta, desk.gamma_over_Gamma) == (lab.N, lab.eta, lab.gamma_over_Gamma)
    for g in (0.0, 0.5, 2.0):
        assert M.n_ss(desk, g) == M.n_ss(lab, g)


def test_scale_for_desk_identity():
    lab = P.lab_params()
    assert P.scale_for_desk(lab, lab.nu / lab.Gamma) == lab


def test_scale_for_desk_rejects_small_ratio():
    with pytest.raises(P.ParamsError):
        P.scale_for_desk(P.lab_params(), 10.0)


def test_desk_needs_25x_fewer_steps_per_cooling_time():
    lab = P.lab_params()
    desk = P.scale_for_desk(lab, 100.0)
    steps = [P.LoopTimebase.build(q, 10.0 / q.Gamma).n_steps for q in (lab, desk)]
    assert steps[0] / steps[1] == pytest.approx(25.0, rel=0.01)


def test_timebase_invariants(desk):
    tb = P.LoopTimebase.build(desk, 1e-3)
    tb.check(desk)
    assert tb.dt_sme <= 1 / (50 * desk.nu) * (1 + 1e-12)
    assert tb.dt_sample == pytest.approx(tb.substeps * tb.dt_sme)
    assert tb.samples_per_period * tb.dt_sample == pytest.approx(desk.period)


def test_timebase_respects_max_step(desk):
    tb = P.LoopTimebase.build(desk, 1e-3, dt_sme_max=1e-8)
    assert tb.dt_sme <= 1e-8


def test_timebase_steady_length(desk):
    with pytest.raises(P.ParamsError):
        P.LoopTimebase.build(desk, 1.0 / desk.Gamma).check(desk, steady=True)
    bad = P.LoopTimebase(dt_sme=1e-6, substeps=1, samples_per_period=5, t_total=1.0)
    with pytest.raises(P.ParamsError):
        bad.check(desk)


def test_calibrated_ratio_is_frozen_calibration():
    cal = M.calibrate_gamma(P.lab_params(), 12.0)
    assert cal.ratio == pytest.approx(P.CALIBRATED_GAMMA_RATIO, rel=1e-9)
