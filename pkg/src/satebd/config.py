"""Run configuration files.

A run is described by one JSON object::

    {
      "version": 1,
      "params": {"J": 1.0, "U_bb": "inf", "Omega": 1.0, "Delta": 0.0, "U_qb": 0.0, "U_bm": 0.0},
      "geometry": {"left_sites": 30, "right_sites": 30, "cutoff": 2},
      "N": 15,
      "chi": [50],
      "dt": 0.02,
      "t_total": 8.0,
      "sample_every": 5,
      "mode": "diffusive",            # or "kicked" with "p_k": [...]
      "p_k": [0.0],
      "code_path": "conserving",      # or "plain"
      "output_dir": "runs",
      "checkpoint_every": null,       # steps, multiple of sample_every
      "abort_eps": null,
      "ground": {"dts": [0.1, 0.03, 0.01], "tol": 1e-8, "max_sweeps": 50000, "chi": null},
      "sweep": {"axis": "Omega", "values": [0, 0.5, 1, 2]},
      "workers": 1
    }

``"inf"`` is accepted for ``U_bb`` (hard-core bosons). Loading and dumping
round-trips exactly.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .model import LatticeGeometry, ModelParams

__all__ = ["CONFIG_VERSION", "SWEEP_AXES", "RunConfig", "config_hash", "preset"]

CONFIG_VERSION = 1
SWEEP_AXES = ("Omega", "U", "n", "p_k")
_MODES = ("diffusive", "kicked")
_PATHS = ("conserving", "plain")


def _encode_float(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _decode_float(x, name):
    if isinstance(x, str):
        if x in ("inf", "+inf", "Infinity"):
            return math.inf
        raise ConfigError(f"{name}: expected a number, got {x!r}")
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"{name}: expected a number, got {x!r}")
    return float(x)


@dataclass
class RunConfig:
    params: dict = field(default_factory=lambda: {"U_bb": math.inf})
    geometry: dict = field(default_factory=lambda: {"left_sites": 30, "right_sites": 30, "cutoff": 2})
    N: int = 15
    chi: list = field(default_factory=lambda: [50])
    dt: float = 0.02
    t_total: float = 8.0
    sample_every: int = 5
    mode: str = "diffusive"
    p_k: list = field(default_factory=lambda: [0.0])
    code_path: str = "conserving"
    output_dir: str = "runs"
    checkpoint_every: int | None = None
    abort_eps: float | None = None
    ground: dict = field(default_factory=dict)
    sweep: dict | None = None
    workers: int = 1
    version: int = CONFIG_VERSION

    def __post_init__(self):
        self.validate()

    # -- derived objects ------------------------------------------------------
    def model_params(self) -> ModelParams:
        try:
            return ModelParams(**{k: _decode_float(v, f"params.{k}") for k, v in self.params.items()})
        except TypeError as exc:
            raise ConfigError(f"params: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"params: {exc}") from None

    def lattice(self) -> LatticeGeometry:
        try:
            return LatticeGeometry(**self.geometry)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"geometry: {exc}") from None

    @property
    def n_steps(self) -> int:
        return int(round(self.t_total / self.dt))

    @property
    def conserving(self) -> bool:
        return self.code_path == "conserving"

    def kicks(self) -> list:
        return list(self.p_k) if self.mode == "kicked" else [0.0]

    # -- validation -----------------------------------------------------------
    def validate(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}")
        p = self.model_params()
        g = self.lattice()
        if not g.impurity:
            raise ConfigError("geometry must include the impurity site")
        if p.hard_core and g.cutoff != 2:
            raise ConfigError("hard-core bosons need cutoff 2")
        if not isinstance(self.N, int) or not 0 <= self.N <= (g.cutoff - 1) * g.left_sites:
            raise ConfigError(f"N={self.N} does not fit the left region")
        if not self.chi or any(not isinstance(c, int) or c < 1 for c in self.chi):
            raise ConfigError("chi must be a non-empty list of positive integers")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.t_total < 0:
            raise ConfigError("t_total must be non-negative")
        if abs(self.n_steps * self.dt - self.t_total) > 1e-9 * max(1.0, self.t_total):
            raise ConfigError("t_total must be a multiple of dt")
        if not isinstance(self.sample_every, int) or self.sample_every < 1:
            raise ConfigError("sample_every must be a positive integer")
        if self.mode not in _MODES:
            raise ConfigError(f"mode must be one of {_MODES}")
        if self.mode == "kicked" and not self.p_k:
            raise ConfigError("kicked mode needs at least one p_k")
        if self.code_path not in _PATHS:
            raise ConfigError(f"code_path must be one of {_PATHS}")
        if self.checkpoint_every is not None and (
                self.checkpoint_every < 1 or self.checkpoint_every % self.sample_every):
            raise ConfigError("checkpoint_every must be a positive multiple of sample_every")
        if self.abort_eps is not None and not self.abort_eps > 0:
            raise ConfigError("abort_eps must be positive")
        unknown = set(self.ground) - {"dts", "tol", "max_sweeps", "chi"}
        if unknown:
            raise ConfigError(f"unknown ground keys {sorted(unknown)}")
        if self.sweep is not None:
            if self.sweep.get("axis") not in SWEEP_AXES:
                raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
            if not isinstance(self.sweep.get("values"), list):
                raise ConfigError("sweep values must be a list")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("workers must be a positive integer")

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = {k: _encode_float(v) for k, v in d["params"].items()}
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "version" not in d:
            raise ConfigError("config lacks a version field")
        return cls(**copy.deepcopy(d))

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(d)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps() + "\n")

    def with_overrides(self, **changes) -> "RunConfig":
        d = self.to_dict()
        for key, value in changes.items():
            target = d
            *head, last = key.split(".")
            for part in head:
                target = target.setdefault(part, {})
            target[last] = value
        return RunConfig.from_dict(d)


def config_hash(config: RunConfig) -> str:
    """sha256 of the canonical JSON encoding."""
    return hashlib.sha256(config.dumps().encode()).hexdigest()


def preset(name: str) -> RunConfig:
    """``"smoke"`` (10+1+10, quick) or ``"production"`` (30+1+30)."""
    if name == "smoke":
        return RunConfig(geometry={"left_sites": 10, "right_sites": 10, "cutoff": 2},
                         N=5, chi=[20], dt=0.02, t_total=4.0)
    if name == "production":
        return RunConfig()
    raise ConfigError(f"unknown preset {name!r}")
