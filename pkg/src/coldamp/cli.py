"""Command-line scenario runner.

    coldamp run <scenario> [--config FILE] [--seed S] [--engine sme|gaussian] [--out DIR]
    coldamp replay <manifest.json> [--out DIR]

Scenarios: ``fig2`` (spectra at a few gains), ``fig3a`` (damping-phase gain
sweep), ``fig3b`` (pi-phase sweep) and ``validate`` (acceptance suite).
Outputs are CSV and JSON; every run writes ``manifest.json``, failures
write ``error.json`` and exit non-zero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import moments as M
from . import spectra as S
from . import validation as V
from .circuit import CircuitError
from .config import ConfigError, RunConfig
from .fock import FockError
from .params import ParamsError, ValidatedParams
from .sme import SMEError, drive

log = logging.getLogger("coldamp")

SCENARIOS = ("fig2", "fig3a", "fig3b", "validate")
ENGINES = ("gaussian", "sme")
DEFAULT_GAINS = {
    "fig2": [0.0, 1.0, 6.0],
    "fig3a": [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
    "fig3b": [0.0, 0.25, 0.5, 1.0, 2.0],
}
EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 1, 2, 3


@dataclass
class RunManifest:
    scenario: str
    config: dict
    seed: int
    engine: str
    outputs: list = field(default_factory=list)
    wall_clock_s: float = 0.0
    steps: int = 0
    version: str = __version__
    options: dict = field(default_factory=dict)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


class Writer:
    """Single writer for every output file of a run."""

    def __init__(self, out: Path, manifest: RunManifest):
        self.out = out
        self.manifest = manifest
        out.mkdir(parents=True, exist_ok=True)

    def csv(self, name: str, header: list[str], rows) -> Path:
        path = self.out / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        self.manifest.outputs.append(name)
        return path

    def json(self, name: str, obj) -> Path:
        path = self.out / name
        path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
        self.manifest.outputs.append(name)
        return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    raise TypeError(f"not serialisable: {type(v).__name__}")


# -- shared pieces --------------------------------------------------------


def resolve_gains(cfg: RunConfig, scenario: str, p: ValidatedParams) -> list[float]:
    """Electronic gains; multiples of the optimum are converted with the calibration."""
    gains = list(cfg.gains) if cfg.gains is not None else list(DEFAULT_GAINS[scenario])
    if cfg.gains_in_units_of_optimum:
        g_opt, _ = M.optimal_gain(p)
        gains = [m * g_opt / cfg.fb_calibration for m in gains]
    return gains


def spectral_windows(p: ValidatedParams, G_max: float) -> tuple[tuple, tuple]:
    """(area window, floor exclusion band) around the sideband, in Hz."""
    nu = p.nu / (2 * math.pi)
    fwhm = (p.Gamma + G_max * p.gamma_in * p.eta) / (2 * math.pi)
    half = min(0.375 * nu, 40.0 * fwhm)
    excl = min(0.6 * nu, 1.6 * half)
    return (nu - half, nu + half), (nu - excl, nu + excl)


def auto_segment(n_samples: int, requested: int | None) -> int:
    if requested:
        return int(requested)
    return 2 ** int(math.floor(math.log2(max(n_samples // 16, 8))))


def steady_from(p: ValidatedParams, t_total: float) -> float:
    return min(0.5 * t_total, 10.0 / p.Gamma)


@dataclass
class GainPoint:
    gain: float
    G_tilde: float
    s_in: S.SpectrumEstimate
    s_out: S.SpectrumEstimate
    n_per_traj: np.ndarray
    area_per_traj: np.ndarray


def run_gain_point(cfg: RunConfig, p: ValidatedParams, engine: str, gain: float, phase: float,
                   windows, manifest: RunManifest) -> GainPoint:
    """Trajectories ``0 .. n_traj-1`` at one gain; the same noise at every gain."""
    fb = cfg.feedback(gain=gain, phase=phase)
    tb = cfg.timebase(p)
    area_win, excl = windows
    ins, outs, n_tr, a_tr = [], [], [], []
    for j in range(cfg.n_traj):
        kw = {"dim": cfg.dim} if engine == "sme" else {}
        rec = drive(engine, p, fb, tb, cfg.seed, j, **kw)
        manifest.steps += tb.n_steps
        fs = 1.0 / rec.dt_sample
        seg = auto_segment(rec.times.size, cfg.segment_len)
        si = S.welch_psd(rec.I_in, fs, seg)
        so = S.welch_psd(rec.I_out, fs, seg)
        ins.append(si)
        outs.append(so)
        a_tr.append(S.excess_area(S.normalize_to_shotnoise(so, excl), area_win))
        n_tr.append(float(rec.n_mean[rec.times >= steady_from(p, tb.t_total)].mean()))
        log.info("gain %.4g traj %d: n = %.3f", gain, j, n_tr[-1])
    return GainPoint(
        gain=gain,
        G_tilde=fb.G_tilde,
        s_in=S.normalize_to_shotnoise(S.average(ins), excl),
        s_out=S.normalize_to_shotnoise(S.average(outs), excl),
        n_per_traj=np.array(n_tr),
        area_per_traj=np.array(a_tr),
    )


def _theory(p: ValidatedParams, G_tilde: float, phase: float) -> float:
    try:
        return M.predict(p, G_tilde, phase).n_ss
    except M.MomentsError:
        return float("nan")


def _se(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")


# -- scenarios ------------------------------------------------------------


def cmd_spectrum(cfg: RunConfig, engine: str, w: Writer) -> int:
    """In- and out-of-loop normalised spectra per gain, plus a fit summary."""
    p = cfg.validated()
    gains = resolve_gains(cfg, "fig2", p)
    windows = spectral_windows(p, max(gains) * cfg.fb_calibration)
    rows = []
    for k, g in enumerate(gains):
        pt = run_gain_point(cfg, p, engine, g, cfg.fb_phase_rad, windows, w.manifest)
        fwhm_eff = (p.Gamma + pt.G_tilde * p.gamma_in * p.eta) / (2 * math.pi)
        nu = p.nu / (2 * math.pi)
        try:
            sq = S.squash_metric(pt.s_in, pt.s_out, (nu - fwhm_eff, nu + fwhm_eff))
            mins = {"in": sq.min_in, "out": sq.min_out}
        except S.SpectrumError:
            # record too short to resolve the sideband window
            mins = {"in": float("nan"), "out": float("nan")}
        for ch, s in (("in", pt.s_in), ("out", pt.s_out)):
            w.csv(f"spectrum_{ch}_g{k}.csv", ["freq_hz", "psd", "normalized"],
                  zip(s.freq_hz, s.psd, s.normalized))
            try:
                fit = S.fit_lorentzian(s, windows[0])
                fit_vals = (fit.center_hz, fit.fwhm_hz, fit.amplitude)
            except S.SpectrumError:
                fit_vals = (float("nan"),) * 3
            rows.append([k, g, pt.G_tilde, ch, S.excess_area(s, windows[0]), *fit_vals,
                         mins[ch],
                         s.estimator_sigma, float(pt.n_per_traj.mean())])
    w.csv("fig2_summary.csv",
          ["index", "gain", "G_tilde", "channel", "area_hz", "center_hz", "fwhm_hz", "amplitude",
           "min_in_window", "estimator_sigma", "n_mean"], rows)
    return 0


def cmd_sweep_gain(cfg: RunConfig, engine: str, w: Writer, scenario: str) -> int:
    """Out-of-loop sideband area and occupation across a gain grid."""
    phase = cfg.fb_phase_rad if scenario == "fig3a" else M.PHASE_SHIFT
    p = cfg.validated()
    gains = resolve_gains(cfg, scenario, p)
    if 0.0 not in gains:
        gains = [0.0] + gains  # normalisation anchor
    windows = spectral_windows(p, max(gains) * cfg.fb_calibration)
    points = [run_gain_point(cfg, p, engine, g, phase, windows, w.manifest) for g in gains]
    a0_tr = points[gains.index(0.0)].area_per_traj
    a0 = S.excess_area(points[gains.index(0.0)].s_out, windows[0])
    rows = []
    for pt in points:
        area = S.excess_area(pt.s_out, windows[0])
        ratio_tr = pt.area_per_traj / a0_tr
        rows.append([pt.gain, pt.G_tilde, area, area / a0, _se(ratio_tr),
                     float(pt.n_per_traj.mean()), _se(pt.n_per_traj), _theory(p, pt.G_tilde, phase)])
    w.csv(f"{scenario}_sweep.csv",
          ["gain", "G_tilde", "area_hz", "area_norm", "area_norm_se", "n_mean", "n_se",
           "n_ss_theory"], rows)
    return 0


def cmd_validate(cfg: RunConfig, w: Writer, only=None, quick: bool = False) -> int:
    """Acceptance suite; exit 0 iff every selected criterion passes."""
    settings = V.SuiteSettings(seed=cfg.seed, damping_phase=cfg.fb_phase_rad)
    if quick:
        settings = settings.quick()
    results = V.run_suite(settings, only=only)
    for r in results:
        print(r.line(), flush=True)
    w.csv("validation.csv", ["criterion", "passed", "measured", "tolerance", "runtime_s"],
          [[r.name, r.passed, r.measured, r.tolerance, r.runtime_s] for r in results])
    w.json("validation.json", [r.to_dict() for r in results])
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
          + (f"; failed: {', '.join(failed)}" if failed else ""))
    return EXIT_FAIL if failed else 0


# -- entry point ----------------------------------------------------------


def execute(manifest: RunManifest, out: Path) -> int:
    cfg = RunConfig.from_dict(manifest.config)
    w = Writer(out, manifest)
    t0 = time.perf_counter()
    if manifest.scenario == "fig2":
        code = cmd_spectrum(cfg, manifest.engine, w)
    elif manifest.scenario in ("fig3a", "fig3b"):
        code = cmd_sweep_gain(cfg, manifest.engine, w, manifest.scenario)
    elif manifest.scenario == "validate":
        code = cmd_validate(cfg, w, only=manifest.options.get("only"),
                            quick=manifest.options.get("quick", False))
    else:
        raise ConfigError(f"unknown scenario {manifest.scenario!r}")
    manifest.wall_clock_s = time.perf_counter() - t0
    manifest.write(out / "manifest.json")
    return code


def _error(out: Path | None, exc: BaseException, scenario: str | None) -> None:
    info = {"error": type(exc).__name__, "message": str(exc), "scenario": scenario}
    for attr in ("traj", "t"):
        if getattr(exc, attr, None) is not None:
            info[attr] = getattr(exc, attr)
    text = json.dumps(info, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="coldamp", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario")
    run.add_argument("scenario", choices=SCENARIOS)
    run.add_argument("--config", type=Path)
    run.add_argument("--seed", type=int)
    run.add_argument("--engine", choices=ENGINES, default="gaussian")
    run.add_argument("--out", type=Path, default=Path("coldamp_out"))
    run.add_argument("--only", nargs="+", metavar="AK", help="validate: criteria to run")
    run.add_argument("--quick", action="store_true", help="validate: small smoke-test sizes")
    rep = sub.add_parser("replay", help="re-run the scenario recorded in a manifest")
    rep.add_argument("manifest", type=Path)
    rep.add_argument("--out", type=Path, default=Path("coldamp_replay"))
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    scenario = getattr(args, "scenario", None)
    try:
        if args.command == "replay":
            manifest = RunManifest.read(args.manifest)
            manifest.outputs, manifest.steps, manifest.wall_clock_s = [], 0, 0.0
            scenario = manifest.scenario
        else:
            cfg = RunConfig.load(args.config)
            if args.seed is not None:
                cfg.seed = args.seed
            manifest = RunManifest(scenario=args.scenario, config=cfg.to_dict(), seed=cfg.seed,
                                   engine=args.engine,
                                   options={"only": args.only, "quick": args.quick})
        return execute(manifest, args.out)
    except (ConfigError, ParamsError, CircuitError, FockError, S.SpectrumError,
            json.JSONDecodeError) as exc:
        _error(args.out, exc, scenario)
        return EXIT_CONFIG
    except SMEError as exc:
        _error(args.out, exc, scenario)
        return EXIT_NUMERIC
    except Exception as exc:  # still leave an error.json behind
        _error(args.out, exc, scenario)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
