"""Conditional stochastic master equation with in-loop feedback.

The conditional state obeys

    d rho = (-i nu [n, rho] + L0 rho) dt + sqrt(2 gamma eta^2) H[z] rho dW
            - i G_tilde I_fb [z, rho] dt

with ``L0 = Gamma (N+1) D[a] + Gamma N D[a^dag]``. The detected light is
split between an in-loop and an out-of-loop detector with currents
``I_k = gamma_k eta <z> + sqrt(gamma_k/2) xi_k``. The state is conditioned on
both records, so the innovation above uses the total rate
``gamma = gamma_in + gamma_out`` and
``sqrt(gamma) dW = sqrt(gamma_in) dW_in + sqrt(gamma_out) dW_out``. Only the
in-loop current drives the feedback.

The numpy functions here are readable references. Production runs go
through the compiled kernels in :mod:`coldamp._kernels`, which the tests
check against these references.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from . import fock
from .circuit import FeedbackConfig, build_loop
from .params import LoopTimebase, ValidatedParams

log = logging.getLogger(__name__)

CHANNELS = ("I_in", "I_out", "V_fb", "z_mean", "p_mean", "n_mean")
POSITIVITY_TOL = 1e-4
TOP_POP_TOL = 1e-4
CHUNK_SAMPLES = 4096


class SMEError(RuntimeError):
    """Trajectory failure; carries the trajectory index and time."""

    def __init__(self, msg: str, traj: int | None = None, t: float | None = None):
        where = []
        if traj is not None:
            where.append(f"trajectory {traj}")
        if t is not None:
            where.append(f"t={t:.6e} s")
        super().__init__(f"{msg} ({', '.join(where)})" if where else msg)
        self.traj = traj
        self.t = t


class PositivityBreach(SMEError):
    pass


class TruncationBreach(SMEError):
    pass


class CovarianceBreach(SMEError):
    pass


class Divergence(SMEError):
    """Non-finite output, typically an anti-damping loop running away."""


@dataclass
class ConditionedState:
    rho: fock.DensityMatrix
    t: float = 0.0

    @property
    def top_pop(self) -> float:
        return self.rho.top_population()


@dataclass
class TrajectoryRecord:
    """Sampled channels of one run; all series share ``times``.

    ``V_fb`` is the mean over each sample of the coefficient multiplying
    ``-i [z, rho]`` (that is ``G_tilde I_fb``, rad/s).
    """

    times: np.ndarray
    I_in: np.ndarray
    I_out: np.ndarray
    V_fb: np.ndarray
    z_mean: np.ndarray
    p_mean: np.ndarray
    n_mean: np.ndarray
    meta: dict = field(default_factory=dict)
    noise: np.ndarray | None = None  # per-sample sum of in-loop dW, if kept

    def __post_init__(self):
        n = len(self.times)
        for name in CHANNELS:
            if len(getattr(self, name)) != n:
                raise ValueError(f"channel {name} has length {len(getattr(self, name))} != {n}")

    @property
    def dt_sample(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else float("nan")

    def __len__(self) -> int:
        return len(self.times)

    def equals(self, other: "TrajectoryRecord") -> bool:
        return all(
            np.array_equal(getattr(self, c), getattr(other, c)) for c in ("times",) + CHANNELS
        )

    def write(self, base: str | Path) -> tuple[Path, Path]:
        """Write ``<base>.csv`` and the ``<base>.json`` sidecar."""
        base = Path(base)
        base.parent.mkdir(parents=True, exist_ok=True)
        csv_path = base.with_suffix(".csv")
        table = np.column_stack([self.times] + [getattr(self, c) for c in CHANNELS])
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("t",) + CHANNELS)
            w.writerows(table.tolist())
        json_path = base.with_suffix(".json")
        json_path.write_text(json.dumps(self.meta, indent=2, sort_keys=True, default=str))
        return csv_path, json_path

    @classmethod
    def read(cls, base: str | Path) -> "TrajectoryRecord":
        base = Path(base)
        data = np.loadtxt(base.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
        meta_path = base.with_suffix(".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        cols = {c: data[:, i + 1] for i, c in enumerate(CHANNELS)}
        return cls(times=data[:, 0], meta=meta, **cols)


# -- reference terms (numpy) ----------------------------------------------


def _as_array(rho, dim_expected: int | None = None) -> np.ndarray:
    r = rho.op if isinstance(rho, fock.DensityMatrix) else np.asarray(rho, dtype=complex)
    if dim_expected is not None and r.shape != (dim_expected, dim_expected):
        raise fock.DimensionMismatch(f"state {r.shape} vs dim {dim_expected}")
    return r


def dissipative_term(rho, p: ValidatedParams) -> np.ndarray:
    """``Gamma (N+1) D[a] rho + Gamma N D[a^dag] rho``."""
    r = _as_array(rho)
    a = fock.annihilation(r.shape[0])
    return p.Gamma * (p.N + 1) * fock.dissipator_apply(a, r) + p.Gamma * p.N * fock.dissipator_apply(
        a.conj().T, r
    )


def drift_term(rho, p: ValidatedParams) -> np.ndarray:
    """Unobserved generator ``-i nu [n, rho] + L0 rho``."""
    r = _as_array(rho)
    n = fock.number(r.shape[0])
    return -1j * p.nu * fock.commutator(n, r) + dissipative_term(r, p)


def innovation_term(rho, p: ValidatedParams) -> np.ndarray:
    """``sqrt(2 gamma eta^2) (z rho + rho z - 2 <z> rho)`` with the total rate."""
    r = _as_array(rho)
    z, _ = fock.quadratures(r.shape[0])
    zc = fock.expect(z, r).real
    return math.sqrt(2 * p.gamma * p.eta**2) * (fock.anticommutator(z, r) - 2 * zc * r)


def feedback_term(rho, I_fb: float, G_tilde: float) -> np.ndarray:
    """``-i G_tilde I_fb [z, rho]``."""
    r = _as_array(rho)
    z, _ = fock.quadratures(r.shape[0])
    return -1j * G_tilde * I_fb * fock.commutator(z, r)


def step(state: ConditionedState, dW: float, I_fb: float, p: ValidatedParams, G_tilde: float,
         dt: float) -> ConditionedState:
    """One integrator step.

    ``dW`` is the combined innovation increment of both detectors.
    Euler-Maruyama for ``L0`` and the innovation; the feedback enters as the
    unitary ``exp(-i theta z)`` expanded to second order in
    ``theta = G_tilde I_fb dt``; the free rotation is applied exactly. The
    result is hermitised and renormalised.

    Raises
    ------
    PositivityBreach
        Smallest eigenvalue below ``-1e-4``.
    TruncationBreach
        Top Fock level population at or above ``1e-4``.
    """
    r = state.rho.op
    d = r.shape[0]
    z, _ = fock.quadratures(d)
    w = r + dt * dissipative_term(r, p) + dW * innovation_term(r, p)
    theta = G_tilde * I_fb * dt
    if theta:
        c = fock.commutator(z, w)
        w = w - 1j * theta * c - 0.5 * theta**2 * fock.commutator(z, c)
    k = np.arange(d)
    w = w * np.exp(-1j * p.nu * dt * (k[:, None] - k[None, :]))
    new = fock.DensityMatrix(w).normalize()
    out = ConditionedState(new, state.t + dt)
    if out.top_pop >= TOP_POP_TOL:
        raise TruncationBreach(f"top population {out.top_pop:.2e}", t=out.t)
    lam = new.min_eigenvalue()
    if lam < -POSITIVITY_TOL:
        raise PositivityBreach(f"eigenvalue {lam:.2e}", t=out.t)
    return out


def photocurrent_sample(state: ConditionedState, dW: float, dt: float, p: ValidatedParams) -> float:
    """In-loop current ``gamma eta <z> + sqrt(gamma/2) dW/dt``."""
    z, _ = fock.quadratures(state.rho.dim)
    g = p.gamma_in
    return g * p.eta * fock.expect(z, state.rho).real + math.sqrt(g / 2) * dW / dt


def out_loop_sample(state: ConditionedState, dW_out: float, dt: float, p: ValidatedParams,
                    split: float | None = None) -> float:
    """Out-of-loop current on the ``1 - split`` share of the light.

    ``dW_out`` is the out-of-loop innovation, which also enters the state
    update through the combined increment.
    """
    split = p.split if split is None else split
    if not 0 < split < 1:
        raise ValueError(f"split must lie in (0, 1), got {split}")
    g = (1 - split) * p.gamma
    z, _ = fock.quadratures(state.rho.dim)
    return g * p.eta * fock.expect(z, state.rho).real + math.sqrt(g / 2) * dW_out / dt


# -- driver shared with the Gaussian engine -------------------------------


def trajectory_rng(seed: int, traj: int) -> np.random.Generator:
    """Counter-based stream for trajectory ``traj`` of master seed ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(traj),))))


def _phase_tables(tb: LoopTimebase) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(tb.samples_per_period * tb.substeps)
    ph = 2 * np.pi * k / k.size
    return np.cos(ph), np.sin(ph)


def _meta(engine: str, p: ValidatedParams, fb: FeedbackConfig, tb: LoopTimebase, seed: int,
          traj: int, extra: dict | None) -> dict:
    m = {
        "engine": engine,
        "seed": int(seed),
        "trajectory": int(traj),
        "params": asdict(p),
        "params_hz": asdict(p.to_hz()),
        "feedback": asdict(fb),
        "timebase": asdict(tb),
        "created_unix": time.time(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    from . import __version__

    m["package_version"] = __version__
    if extra:
        m.update(extra)
    return m


def drive(
    engine: str,
    p: ValidatedParams,
    fb: FeedbackConfig,
    tb: LoopTimebase,
    seed: int,
    traj: int = 0,
    rho0: fock.DensityMatrix | None = None,
    dim: int | None = None,
    keep_noise: bool = False,
    check_every: int = 5,
    chunk: int = CHUNK_SAMPLES,
) -> TrajectoryRecord:
    """Run one closed-loop trajectory on either engine."""
    tb.check(p)
    n_total = tb.n_samples
    sub = tb.substeps
    dt = tb.dt_sme
    dts = tb.dt_sample
    rng = trajectory_rng(seed, traj)
    cos_tab, sin_tab = _phase_tables(tb)
    phys = np.array([p.nu, p.Gamma, p.N, p.gamma_in, p.gamma_out, p.eta,
                     math.sqrt(2 * p.gamma_in * p.eta**2), dt,
                     math.sqrt(2 * p.gamma_out * p.eta**2)])
    loop = build_loop(fb, p, tb)
    out = np.empty((6, n_total))
    noise = np.empty(n_total) if keep_noise else None

    if engine == "sme":
        if rho0 is None:
            rho0 = fock.thermal_state(p.N, dim)
        rho = np.ascontiguousarray(rho0.op, dtype=complex).copy()
        d = rho.shape[0]
        work = np.empty_like(rho)
        comm = np.empty_like(rho)
        comm2 = np.empty_like(rho)
        sq = np.sqrt(np.arange(d, dtype=float))
        offs = np.arange(-(d - 1), d)
        rot = np.exp(-1j * p.nu * dt * offs)
        extra = {"dim": d}
    elif engine == "gaussian":
        m = np.zeros(2)
        V = np.array([2 * p.N + 1, 0.0, 2 * p.N + 1])
        extra = {}
    else:
        raise ValueError(f"unknown engine {engine!r}")

    done = 0
    while done < n_total:
        n = min(chunk, n_total - done)
        dW_in = rng.standard_normal((n, sub)) * math.sqrt(dt)
        dW_out = rng.standard_normal((n, sub)) * math.sqrt(dt)
        zeta = rng.standard_normal(n) * math.sqrt(dts)
        if keep_noise:
            noise[done:done + n] = dW_in.sum(axis=1)
        if engine == "sme":
            status, s, loop.ring_pos, loop.delay_pos, val = K.sme_chunk(
                rho, work, comm, comm2, sq, rot, phys, loop.lp, loop.fs, loop.ring, loop.ring_pos,
                loop.delay, loop.delay_pos, cos_tab, sin_tab, done * sub, dW_in, dW_out, zeta,
                out, done, check_every,
            )
        else:
            status, s, loop.ring_pos, loop.delay_pos, val = K.gaussian_chunk(
                m, V, phys, loop.lp, loop.fs, loop.ring, loop.ring_pos, loop.delay,
                loop.delay_pos, cos_tab, sin_tab, done * sub, dW_in, dW_out, zeta, out, done,
            )
        if status != K.OK:
            t_fail = (done + s + 1) * dts
            if status == K.POSITIVITY_BREACH:
                raise PositivityBreach(f"density matrix eigenvalue {val:.2e}", traj, t_fail)
            if status == K.TRUNCATION_BREACH:
                raise TruncationBreach(f"top Fock population {val:.2e}; raise dim", traj, t_fail)
            if status == K.TRACE_BREACH:
                raise PositivityBreach(f"trace {val:.3e} before renormalisation; state diverged",
                                       traj, t_fail)
            raise CovarianceBreach(f"covariance determinant {val:.6f} < 1", traj, t_fail)
        block = out[:, done:done + n]
        if not np.isfinite(block).all():
            s_bad = int(np.argmin(np.isfinite(block).all(axis=0)))
            raise Divergence("non-finite trajectory output; loop unstable at this gain",
                             traj, (done + s_bad + 1) * dts)
        done += n

    times = (np.arange(n_total) + 1) * dts
    return TrajectoryRecord(
        times, *out, meta=_meta(engine, p, fb, tb, seed, traj, extra), noise=noise
    )


def run_trajectory(p: ValidatedParams, fb: FeedbackConfig, tb: LoopTimebase, seed: int,
                   traj: int = 0, **kw) -> TrajectoryRecord:
    """Full density-matrix trajectory; see :func:`drive` for options."""
    return drive("sme", p, fb, tb, seed, traj, **kw)


@dataclass
class EnsembleResult:
    times: np.ndarray
    n: np.ndarray  # (n_traj, n_samples)

    @property
    def mean(self) -> np.ndarray:
        return self.n.mean(axis=0)

    @property
    def sem(self) -> np.ndarray:
        return self.n.std(axis=0, ddof=1) / math.sqrt(self.n.shape[0])

    def window_average(self, t_from: float) -> tuple[float, float]:
        """Mean over ``t >= t_from`` and its standard error across trajectories."""
        sel = self.times >= t_from
        per = self.n[:, sel].mean(axis=1)
        return float(per.mean()), float(per.std(ddof=1) / math.sqrt(per.size))


def run_ensemble(engine: str, p: ValidatedParams, fb: FeedbackConfig, tb: LoopTimebase,
                 seed: int, n_traj: int, **kw) -> EnsembleResult:
    """Ordered fold of ``n_mean`` over trajectories ``0 .. n_traj-1``."""
    rows = []
    times = None
    for j in range(n_traj):
        rec = drive(engine, p, fb, tb, seed, j, **kw)
        times = rec.times
        rows.append(rec.n_mean)
    return EnsembleResult(times, np.array(rows))
