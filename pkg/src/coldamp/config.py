"""Run configuration: JSON file, environment overrides, typed accessors.

Every key can be overridden from the environment as ``COLDAMP_<KEY>`` (upper
case); values are parsed as JSON, falling back to the raw string.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .circuit import FeedbackConfig
from .params import (
    DESK_BANDWIDTH_HZ,
    DESK_GAMMA_RATIO,
    DESK_N,
    DESK_RATIO,
    LAB_ETA,
    LAB_GAMMA_HZ,
    LoopTimebase,
    PhysicalParams,
    ValidatedParams,
    validate,
)

ENV_PREFIX = "COLDAMP_"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # physics (Hz)
    nu_hz: float = DESK_RATIO * LAB_GAMMA_HZ
    gamma_cool_hz: float = LAB_GAMMA_HZ
    n_doppler: float = DESK_N
    gamma_mirror_hz: float = DESK_GAMMA_RATIO * LAB_GAMMA_HZ / 0.5
    eta: float = LAB_ETA
    epsilon: float | None = None
    split: float = 0.5
    # integration
    seed: int = 1
    dt_sme_s: float | None = None
    t_total_s: float = 0.25
    samples_per_period: int = 5
    dim: int | None = None
    n_traj: int = 4
    # feedback loop
    fb_gain: float = 0.0
    fb_phase_rad: float = -math.pi / 2
    fb_bandwidth_hz: float = DESK_BANDWIDTH_HZ
    fb_delay_samples: int = 1
    fb_mode: str = "ideal"
    fb_calibration: float = 1.0
    # scenarios
    gains: list[float] | None = None
    gains_in_units_of_optimum: bool = True
    segment_len: int | None = None
    extra: dict = field(default_factory=dict, repr=False)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.name != "extra"]

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = sorted(set(d) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**d)
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None = None, environ: dict | None = None) -> "RunConfig":
        data: dict = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError("config file must hold a JSON object")
        data.update(env_overrides(environ if environ is not None else os.environ))
        return cls.from_dict(data)

    def check(self) -> None:
        if self.t_total_s is None or not self.t_total_s > 0:
            raise ConfigError("t_total_s must be positive")
        if int(self.n_traj) != self.n_traj or self.n_traj < 1:
            raise ConfigError("n_traj must be a positive integer")
        if self.dt_sme_s is not None and not self.dt_sme_s > 0:
            raise ConfigError("dt_sme_s must be positive")
        if self.gains is not None and any(g < 0 for g in self.gains):
            raise ConfigError("gains must be >= 0")
        self.feedback()  # raises on bad loop settings

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        return d

    def physical(self) -> PhysicalParams:
        return PhysicalParams(
            nu_hz=self.nu_hz,
            gamma_cool_hz=self.gamma_cool_hz,
            n_doppler=self.n_doppler,
            gamma_mirror_hz=self.gamma_mirror_hz,
            eta=self.eta,
            epsilon=self.epsilon,
            split=self.split,
        )

    def validated(self) -> ValidatedParams:
        return validate(self.physical(), spectral=True)

    def feedback(self, gain: float | None = None, phase: float | None = None) -> FeedbackConfig:
        return FeedbackConfig(
            gain_electronic=self.fb_gain if gain is None else gain,
            phase=self.fb_phase_rad if phase is None else phase,
            bandwidth_hz=self.fb_bandwidth_hz,
            delay_samples=self.fb_delay_samples,
            mode=self.fb_mode,
            calibration=self.fb_calibration,
        )

    def timebase(self, p: ValidatedParams) -> LoopTimebase:
        tb = LoopTimebase.build(p, self.t_total_s, self.samples_per_period, self.dt_sme_s)
        tb.check(p)
        return tb


def _parse(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def env_overrides(environ) -> dict:
    """Config entries taken from ``COLDAMP_*`` variables."""
    known = {k.upper(): k for k in RunConfig.keys()}
    out = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):]
        if key not in known:
            raise ConfigError(f"environment variable {name} does not name a config key")
        out[known[key]] = _parse(raw)
    return out
