"""Acceptance suite A1 to A9.

Each criterion is a function returning a :class:`CriterionResult`; the CLI
``validate`` scenario and the acceptance tests both call :func:`run_suite`.
Sizes live in :class:`SuiteSettings` so that tests can run scaled-down
copies of the slow criteria.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import circuit as C
from . import moments as M
from . import spectra as S
from .params import (
    DESK_BANDWIDTH_HZ,
    LAB_N,
    LoopTimebase,
    ValidatedParams,
    desk_params,
    lab_params,
    scale_for_desk,
)
from .sme import drive, run_ensemble

log = logging.getLogger(__name__)

TWO_PI = 2 * math.pi


@dataclass
class CriterionResult:
    name: str
    title: str
    passed: bool
    measured: str
    tolerance: str
    runtime_s: float = 0.0
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"{self.name} {tag}  {self.title}: {self.measured}  "
                f"[tol {self.tolerance}]  ({self.runtime_s:.1f} s)")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "title": self.title,
            "passed": bool(self.passed),
            "measured": self.measured,
            "tolerance": self.tolerance,
            "runtime_s": self.runtime_s,
            "details": self.details,
        }


@dataclass(frozen=True)
class SuiteSettings:
    """Ensemble sizes and run lengths; defaults are the acceptance sizes."""

    seed: int = 1
    damping_phase: float = M.PHASE_DAMPING
    # conditioned states wander further up the ladder than the thermal state,
    # so density-matrix runs get headroom over the default truncation
    sme_dim: int = 44
    # A1
    a1_n_values: tuple = (2.0, 4.0)
    a1_gain_multiples: tuple = (0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0)
    # A2
    a2_n_traj: int = 200
    a2_t_gamma: float = 6.0
    # A3
    a3_n_traj: int = 40
    a3_t_gamma: float = 23.0
    a3_burn_gamma: float = 3.0
    a3_gain_multiples: tuple = (0.3, 1.0, 3.0)
    # A4
    a4_seeds: int = 6
    a4_t_total: float = 1.0
    a4_damp_multiples: tuple = (0.0, 0.5, 1.0, 2.0, 4.0, 8.0)
    a4_shift_multiples: tuple = (0.0, 0.25, 0.5, 1.0)
    # A6, A7 (lab scale, Gaussian engine)
    lab_t_total: float = 1.5
    a6_gain_multiples: tuple = (0.0, 1.0, 3.0, 10.0)
    a7_width_seeds: int = 4
    a7_shift_seeds: int = 2
    a7_gain: float = 0.5  # electronic gain of the filter-mode loop
    # A8
    a8_n_sme: int = 100
    a8_n_gauss: int = 400
    a8_t_gamma: float = 5.0
    a8_checkpoints: int = 10

    def quick(self) -> "SuiteSettings":
        """Small sizes for smoke tests; results are not meaningful."""
        return replace(self, a1_n_values=(2.0,), a1_gain_multiples=(0.0, 1.0), a2_n_traj=4,
                       a2_t_gamma=1.0, a3_n_traj=2, a3_t_gamma=2.0, a3_burn_gamma=1.0,
                       a4_seeds=2, a4_t_total=0.2, lab_t_total=0.1, a7_width_seeds=1,
                       a7_shift_seeds=1, a8_n_sme=3, a8_n_gauss=6, a8_t_gamma=1.0)


def _sub_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _timed(fn):
    def wrapper(settings: SuiteSettings, *a, **kw) -> CriterionResult:
        t0 = time.perf_counter()
        res = fn(settings, *a, **kw)
        res.runtime_s = time.perf_counter() - t0
        log.info(res.line())
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def desk_feedback(G_tilde: float, phase: float = M.PHASE_DAMPING) -> C.FeedbackConfig:
    return C.FeedbackConfig(G_tilde, phase=phase, bandwidth_hz=DESK_BANDWIDTH_HZ)


# -- A1 -------------------------------------------------------------------


@_timed
def a1_meq_vs_closed_form(s: SuiteSettings) -> CriterionResult:
    """Averaged master equation (RK4) against the closed-form occupation."""
    worst = 0.0
    rows = []
    for N in s.a1_n_values:
        p = desk_params(n=N)
        g_opt, _ = M.optimal_gain(p)
        for m in s.a1_gain_multiples:
            g = m * g_opt
            t_max = 25.0 / (p.Gamma + 2 * g * p.gamma_in * p.eta)
            n_meq = M.integrate_feedback_meq(p, g, t_max=t_max).n_final
            n_th = M.n_ss(p, g)
            err = abs(n_meq - n_th) / n_th
            worst = max(worst, err)
            rows.append({"N": N, "gain": g, "n_meq": n_meq, "n_ss": n_th, "rel_err": err})
    return CriterionResult("A1", "feedback master equation vs closed form",
                           worst <= 1e-3, f"max rel err {worst:.2e}", "<= 1e-3", details={"rows": rows})


# -- A2 -------------------------------------------------------------------


@_timed
def a2_laser_cooling_fixed_point(s: SuiteSettings) -> CriterionResult:
    """Zero-gain ensemble sits at the Doppler occupation."""
    p = desk_params()
    tb = LoopTimebase.build(p, s.a2_t_gamma / p.Gamma)
    ens = run_ensemble("sme", p, desk_feedback(0.0), tb, _sub_seed(s.seed, 2), s.a2_n_traj,
                       dim=s.sme_dim)
    mean, se = ens.window_average(0.0)
    z = abs(mean - p.N) / se
    return CriterionResult("A2", "laser-cooling fixed point", z <= 3.0,
                           f"<n> = {mean:.4f} +- {se:.4f} vs N = {p.N:g} ({z:.2f} SE)", "<= 3 SE",
                           details={"mean": mean, "se": se, "N": p.N, "n_traj": s.a2_n_traj})


# -- A3 -------------------------------------------------------------------


@_timed
def a3_feedback_cooling(s: SuiteSettings) -> CriterionResult:
    """Closed-loop SME ensembles below, at and above the optimal gain."""
    p = desk_params()
    g_opt, _ = M.optimal_gain(p)
    tb = LoopTimebase.build(p, s.a3_t_gamma / p.Gamma)
    rows = []
    for k, m in enumerate(s.a3_gain_multiples):
        g = m * g_opt
        ens = run_ensemble("sme", p, desk_feedback(g, s.damping_phase), tb,
                           _sub_seed(s.seed, 30 + k), s.a3_n_traj, dim=s.sme_dim)
        mean, se = ens.window_average(s.a3_burn_gamma / p.Gamma)
        th = M.n_ss(p, g)
        rows.append({"gain": g, "n_mean": mean, "se": se, "n_ss": th, "rel_err": (mean - th) / th})
    worst = max(abs(r["rel_err"]) for r in rows)
    meas = ", ".join(f"{r['n_mean']:.3f}/{r['n_ss']:.3f}" for r in rows)
    return CriterionResult("A3", "SME feedback cooling vs closed form", worst <= 0.05,
                           f"sim/theory {meas}; max rel err {worst:.3f}", "<= 5% relative",
                           details={"rows": rows})


# -- A4 -------------------------------------------------------------------


def a4_params() -> ValidatedParams:
    """Lab dimensionless rates at the desk trap-to-linewidth ratio."""
    return scale_for_desk(lab_params(), 100.0)


def sideband_window(p: ValidatedParams, half_width_hz: float) -> tuple[float, float]:
    nu = p.nu / TWO_PI
    return nu - half_width_hz, nu + half_width_hz


def out_loop_area(rec, p: ValidatedParams, segment_len: int = 2**13) -> float:
    s = S.welch_psd(rec.I_out, 1.0 / rec.dt_sample, segment_len)
    s = S.normalize_to_shotnoise(s, sideband_window(p, 25e3))
    return S.excess_area(s, sideband_window(p, 15e3))


def sweep_areas(p: ValidatedParams, gains, phase: float, t_total: float, seeds, engine="gaussian",
                bandwidth_hz: float = DESK_BANDWIDTH_HZ) -> np.ndarray:
    """Out-of-loop sideband area per (seed, gain); the same noise at every gain."""
    tb = LoopTimebase.build(p, t_total)
    out = np.empty((len(seeds), len(gains)))
    for i, seed in enumerate(seeds):
        for j, g in enumerate(gains):
            fb = C.FeedbackConfig(g, phase=phase, bandwidth_hz=bandwidth_hz)
            out[i, j] = out_loop_area(drive(engine, p, fb, tb, seed), p)
    return out


def step_signs(ratio: np.ndarray, k_sigma: float = 2.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean normalised area, and signs (+1, 0, -1) and t-values of its steps.

    ``ratio`` has one row per seed. Steps are paired across seeds, so the
    common noise cancels in the differences.
    """
    mean = ratio.mean(axis=0)
    d = np.diff(ratio, axis=1)
    se = d.std(axis=0, ddof=1) / math.sqrt(ratio.shape[0]) if ratio.shape[0] > 1 else np.full(d.shape[1], np.inf)
    t = d.mean(axis=0) / np.where(se > 0, se, np.inf)
    sign = np.where(t > k_sigma, 1, np.where(t < -k_sigma, -1, 0))
    return mean, sign, t


def single_interior_minimum(ratio: np.ndarray, k_sigma: float = 2.0) -> tuple[bool, dict]:
    mean, sign, t = step_signs(ratio, k_sigma)
    k = int(np.argmin(mean))
    n = ratio.shape[0]
    se_min = ratio[:, k].std(ddof=1) / math.sqrt(n) if n > 1 else np.inf
    rise = ratio[:, -1] - ratio[:, k]
    se_rise = rise.std(ddof=1) / math.sqrt(n) if n > 1 else np.inf
    ok = (
        0 < k < len(mean) - 1
        and 1 - mean[k] > 3 * se_min
        and not np.any(sign[:k] > 0)
        and not np.any(sign[k:] < 0)
        and np.any(sign[:k] < 0)
        and rise.mean() > k_sigma * se_rise
    )
    return bool(ok), {"area_norm": mean.tolist(), "step_sign": sign.tolist(), "step_t": t.tolist(),
                      "argmin": k}


def non_decreasing(ratio: np.ndarray, k_sigma: float = 2.0) -> tuple[bool, dict]:
    mean, sign, t = step_signs(ratio, k_sigma)
    return bool(not np.any(sign < 0)), {"area_norm": mean.tolist(), "step_sign": sign.tolist(),
                                        "step_t": t.tolist()}


@_timed
def a4_gain_curve_shape(s: SuiteSettings) -> CriterionResult:
    """Sign pattern of the sideband-area sweeps for both loop phases."""
    p = a4_params()
    g_opt, _ = M.optimal_gain(p)
    seeds = [_sub_seed(s.seed, 40 + i) for i in range(s.a4_seeds)]
    damp = sweep_areas(p, [m * g_opt for m in s.a4_damp_multiples], s.damping_phase,
                       s.a4_t_total, seeds)
    shift = sweep_areas(p, [m * g_opt for m in s.a4_shift_multiples], M.PHASE_SHIFT,
                        s.a4_t_total, seeds)
    ok_d, det_d = single_interior_minimum(damp / damp[:, :1])
    ok_s, det_s = non_decreasing(shift / shift[:, :1])
    meas = ("damping " + " ".join(f"{a:.3f}" for a in det_d["area_norm"])
            + "; shift " + " ".join(f"{a:.3f}" for a in det_s["area_norm"]))
    return CriterionResult("A4", "gain-curve shape", ok_d and ok_s, meas,
                           "single interior minimum < 1 / non-decreasing (2 sigma steps)",
                           details={"damping": det_d, "shift": det_s, "G_opt": g_opt,
                                    "damping_ok": ok_d, "shift_ok": ok_s})


# -- A5 -------------------------------------------------------------------


@_timed
def a5_sub_doppler(s: SuiteSettings) -> CriterionResult:
    """Calibrated minimum and the effect of a fifteen-fold measurement rate."""
    p = lab_params()
    cal = M.calibrate_gamma(p, 12.0, scale=15.0)
    ok1 = cal.n_min <= 0.71 * LAB_N
    ok2 = 2.5 <= cal.n_min_scaled <= 3.5
    return CriterionResult(
        "A5", "sub-Doppler minimum and rate scaling", ok1 and ok2,
        f"n_min = {cal.n_min:.3f} (<= {0.71 * LAB_N:.2f}: {ok1}); "
        f"x15 rate n_min = {cal.n_min_scaled:.3f} (in [2.5, 3.5]: {ok2}); "
        f"floor {M.cooling_floor(p):.2f}",
        "n_min <= 0.71 N and x15 in [2.5, 3.5]",
        details={"gamma_ratio": cal.ratio, "n_min": cal.n_min, "n_min_scaled": cal.n_min_scaled,
                 "floor": M.cooling_floor(p), "part1": ok1, "part2": ok2},
    )


# -- lab-scale spectra (A6, A7) -------------------------------------------

LAB_SEG_COARSE = 2**13
LAB_SEG_FINE = 2**18
_lab_cache: dict = {}


def lab_spectra(t_total: float, mode: str, gain: float, phase: float, seed: int,
                calibration: float = 1.0) -> dict:
    """Normalised in- and out-of-loop spectra of one lab-scale Gaussian run.

    Records are large, so only spectra are kept (memoised per argument set).
    Zero-gain runs do not depend on mode or phase and share one entry.
    """
    if gain == 0:
        mode, phase, calibration = "ideal", M.PHASE_DAMPING, 1.0
    key = (t_total, mode, gain, phase, seed, calibration)
    if key in _lab_cache:
        return _lab_cache[key]
    p = lab_params()
    tb = LoopTimebase.build(p, t_total)
    fb = C.FeedbackConfig(gain, phase=phase, mode=mode, calibration=calibration)
    rec = drive("gaussian", p, fb, tb, seed)
    fs = 1.0 / rec.dt_sample
    excl = sideband_window(p, 20e3)
    res = {"n_mean": float(rec.n_mean[rec.times > 20 / p.Gamma].mean())
           if t_total > 20 / p.Gamma else float(rec.n_mean.mean())}
    for ch in ("I_in", "I_out"):
        x = getattr(rec, ch)
        for tag, seg in (("coarse", LAB_SEG_COARSE), ("fine", LAB_SEG_FINE)):
            seg = min(seg, 2 ** int(math.log2(x.size // 8)))
            res[f"{ch}_{tag}"] = S.normalize_to_shotnoise(S.welch_psd(x, fs, seg), excl)
    del rec
    _lab_cache[key] = res
    return res


def clear_lab_cache() -> None:
    _lab_cache.clear()


def _avg(specs: list[S.SpectrumEstimate], p: ValidatedParams) -> S.SpectrumEstimate:
    return S.normalize_to_shotnoise(S.average(specs), sideband_window(p, 20e3))


@_timed
def a6_squashing(s: SuiteSettings) -> CriterionResult:
    """In-loop sub-shot-noise dip with an unsquashed out-of-loop channel."""
    p = lab_params()
    g_opt, _ = M.optimal_gain(p)
    seed = _sub_seed(s.seed, 60)
    rows = []
    for m in s.a6_gain_multiples:
        g = m * g_opt
        sp = lab_spectra(s.lab_t_total, "ideal", g, s.damping_phase, seed)
        fwhm_eff = (p.Gamma + g * p.gamma_in * p.eta) / TWO_PI
        q = S.squash_metric(sp["I_in_coarse"], sp["I_out_coarse"], sideband_window(p, fwhm_eff))
        rows.append({"gain": g, "min_in": q.min_in, "min_out": q.min_out,
                     "sigma_in": q.sigma_in, "sigma_out": q.sigma_out})
    top = rows[-1]
    dip = top["min_in"] < 1 - 3 * top["sigma_in"]
    clean = all(r["min_out"] >= 1 - 3 * r["sigma_out"] for r in rows)
    meas = (f"in-loop min {top['min_in']:.3f} (sigma {top['sigma_in']:.3f}) at {s.a6_gain_multiples[-1]:g} G_opt; "
            f"out-loop mins " + " ".join(f"{r['min_out']:.3f}" for r in rows))
    return CriterionResult("A6", "in-loop squashing", dip and clean, meas,
                           "in < 1 - 3 sigma at top gain, out >= 1 - 3 sigma at all gains",
                           details={"rows": rows})


def _fit(spec: S.SpectrumEstimate, p: ValidatedParams, half_width_hz: float) -> S.SidebandFit:
    return S.fit_lorentzian(spec, sideband_window(p, half_width_hz))


@_timed
def a7_width_and_shift(s: SuiteSettings) -> CriterionResult:
    """Zero-gain linewidth and the pi-phase frequency pull.

    The pull is measured with the filter-mode loop. Its gain calibration
    comes from the sideband broadening on the damping branch, fitted on the
    same noise realisations as the zero-gain reference.
    """
    p = lab_params()
    t = s.lab_t_total
    width_seeds = [_sub_seed(s.seed, 60)] + [_sub_seed(s.seed, 70 + i) for i in range(s.a7_width_seeds - 1)]
    zero = [lab_spectra(t, "ideal", 0.0, 0.0, sd) for sd in width_seeds]
    f0 = _fit(_avg([z[ch] for z in zero for ch in ("I_in_fine", "I_out_fine")], p), p, 4000.0)
    width_ok = abs(f0.fwhm_hz - 400.0) <= 40.0

    g = s.a7_gain
    shift_seeds = width_seeds[: s.a7_shift_seeds]
    base = _avg([zero[i]["I_out_fine"] for i in range(len(shift_seeds))], p)
    damp = _avg([lab_spectra(t, "filter", g, s.damping_phase, sd)["I_out_fine"] for sd in shift_seeds], p)
    fit_base = _fit(base, p, 4000.0)
    fit_damp = _fit(damp, p, 6000.0)
    fb = C.FeedbackConfig(g, phase=s.damping_phase, mode="filter")
    cal = C.calibrate_gain(fb, p, {"gain": g, "fwhm_rad": TWO_PI * fit_damp.fwhm_hz,
                                   "fwhm0_rad": TWO_PI * fit_base.fwhm_hz})
    pi_spec = _avg([lab_spectra(t, "filter", g, M.PHASE_SHIFT, sd)["I_out_fine"]
                    for sd in shift_seeds], p)
    fit_pi = _fit(pi_spec, p, 4000.0)
    shift = fit_pi.center_hz - fit_base.center_hz
    pred = M.frequency_shift(p, cal * g) / TWO_PI
    shift_ok = abs(abs(shift) - pred) <= 0.1 * pred
    meas = (f"FWHM(0) = {f0.fwhm_hz:.1f} Hz; pi pull {shift:+.1f} Hz vs {pred:.1f} Hz "
            f"(calibration {cal:.3f})")
    return CriterionResult("A7", "sideband width and pi-phase pull", width_ok and shift_ok, meas,
                           "FWHM 400 Hz +-10%, |pull| within 10%",
                           details={"fwhm0_hz": f0.fwhm_hz, "fwhm0_err_hz": f0.fwhm_err_hz,
                                    "shift_hz": shift, "predicted_hz": pred, "calibration": cal,
                                    "fwhm_damp_hz": fit_damp.fwhm_hz, "width_ok": width_ok,
                                    "shift_ok": shift_ok})


# -- A8 -------------------------------------------------------------------


@_timed
def a8_engine_equivalence(s: SuiteSettings) -> CriterionResult:
    """Gaussian and density-matrix ensembles agree along the cooling transient."""
    p = desk_params()
    g_opt, _ = M.optimal_gain(p)
    fb = desk_feedback(g_opt, s.damping_phase)
    tb = LoopTimebase.build(p, s.a8_t_gamma / p.Gamma)
    a = run_ensemble("sme", p, fb, tb, _sub_seed(s.seed, 80), s.a8_n_sme, dim=s.sme_dim)
    b = run_ensemble("gaussian", p, fb, tb, _sub_seed(s.seed, 81), s.a8_n_gauss)
    t_chk = np.arange(1, s.a8_checkpoints + 1) * tb.t_total / s.a8_checkpoints
    idx = np.minimum(np.searchsorted(a.times, t_chk - 1e-12), a.times.size - 1)
    diff = a.mean[idx] - b.mean[idx]
    se = np.sqrt(a.sem[idx] ** 2 + b.sem[idx] ** 2)
    z = np.abs(diff) / se
    return CriterionResult("A8", "Gaussian vs density-matrix engine", bool(np.all(z <= 3.0)),
                           f"max |diff|/SE = {z.max():.2f} over {z.size} checkpoints", "<= 3 SE each",
                           details={"t": t_chk.tolist(), "sme": a.mean[idx].tolist(),
                                    "gaussian": b.mean[idx].tolist(), "z": z.tolist()})


# -- A9 -------------------------------------------------------------------


def measured_loop_phase(cfg: C.FeedbackConfig, nu_hz: float, fs: float, periods: int = 4000) -> float:
    """Phase setting seen by a test tone pushed through the sample-level circuit."""
    circ = C.Circuit.build(replace(cfg, gain_electronic=1.0), nu_hz, fs)
    n = int(periods * fs / nu_hz)
    k = np.arange(n)
    w = TWO_PI * nu_hz / fs
    y = C.process_stream(circ, np.cos(w * k))
    tail = slice(n // 2, n)
    A = np.column_stack([np.cos(w * k[tail]), np.sin(w * k[tail])])
    (c, sn), *_ = np.linalg.lstsq(A, y[tail], rcond=None)
    # y = cos(w k - phase) = cos(phase) cos(w k) + sin(phase) sin(w k)
    return math.atan2(sn, c)


@_timed
def a9_filter_contract(s: SuiteSettings) -> CriterionResult:
    """Bandpass half-power points and the loop phase at the trap frequency."""
    # A second-order resonator is geometrically symmetric, so both edges sit
    # about B^2/(8 nu) low; this stays inside 2% of B/2 only for B < nu/12.
    cases = [(1.0e6, 30e3, 5.0e6), (4.0e4, 4e3, 2.0e5)]
    phases = (M.PHASE_DAMPING, M.PHASE_SHIFT, 0.0, 1.0)
    edge_err = 0.0
    phase_err = 0.0
    for nu, bw, fs in cases:
        lo, hi = C.half_power_points(C.design_bandpass(nu, bw, fs), nu, bw)
        edge_err = max(edge_err, abs(lo - (nu - bw / 2)) / (bw / 2), abs(hi - (nu + bw / 2)) / (bw / 2))
        for ph in phases:
            for d in (1, 3):
                cfg = C.FeedbackConfig(1.0, phase=ph, bandwidth_hz=bw, delay_samples=d, mode="filter")
                got = measured_loop_phase(cfg, nu, fs, periods=400 if nu > 1e5 else 4000)
                phase_err = max(phase_err, abs(math.remainder(got - ph, TWO_PI)))
    ok = edge_err <= 0.02 and phase_err <= 0.02
    return CriterionResult("A9", "bandpass and loop-phase contract", ok,
                           f"edge err {edge_err:.2e} of B/2, phase err {phase_err:.2e} rad",
                           "<= 2%, <= 0.02 rad",
                           details={"edge_err": edge_err, "phase_err": phase_err})


CRITERIA = {
    "A1": a1_meq_vs_closed_form,
    "A2": a2_laser_cooling_fixed_point,
    "A3": a3_feedback_cooling,
    "A4": a4_gain_curve_shape,
    "A5": a5_sub_doppler,
    "A6": a6_squashing,
    "A7": a7_width_and_shift,
    "A8": a8_engine_equivalence,
    "A9": a9_filter_contract,
}


def run_suite(settings: SuiteSettings | None = None, only=None) -> list[CriterionResult]:
    """Run the selected criteria in order; a crash counts as a failure."""
    settings = settings or SuiteSettings()
    names = list(CRITERIA) if not only else [n.upper() for n in only]
    out = []
    for name in names:
        if name not in CRITERIA:
            raise KeyError(f"unknown criterion {name}")
        try:
            out.append(CRITERIA[name](settings))
        except Exception as exc:  # reported, not short-circuited
            log.exception("criterion %s crashed", name)
            out.append(CriterionResult(name, "crashed", False, f"{type(exc).__name__}: {exc}", "-"))
    clear_lab_cache()
    return out
