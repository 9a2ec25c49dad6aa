"""Experiment configuration: one JSON document fully determines a run."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import ConfigError
from ..filtering import FilterConfig
from ..models import NSModel, SineModel, VorticityGrid, ou_model
from ..models.grf import GRFSpec
from ..smoothing import SmootherConfig

MODELS = ("sine", "ns", "ou")

# per-model defaults applied before user overrides
_DEFAULTS = {
    "sine": dict(n_windows=2500, truth_stride=20, x0=[0.0]),
    "ns": dict(n_windows=10, truth_stride=100, trace_columns=16, field_stride=50,
               x0_amplitude=0.3, proposal="enkf"),
    "ou": dict(n_windows=10, truth_stride=1, x0=[0.0]),
}


def _seed_triplet(root: int):
    children = np.random.SeedSequence(int(root)).spawn(3)
    return {name: int(c.generate_state(1, np.uint64)[0])
            for name, c in zip(("truth", "filter", "smoother"), children)}


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a twin experiment.

    ``seeds`` is filled from ``seed`` when absent; the resolved value is
    what gets echoed into the run directory, so the echo replays the run.
    ``n_windows`` observation intervals need ``n_windows + 1`` observations,
    the first at ``t = 0``.
    """

    model: str = "sine"
    model_params: dict = field(default_factory=dict)
    n_windows: Optional[int] = None
    filter: dict = field(default_factory=dict)
    smoother: dict = field(default_factory=dict)
    seed: int = 0
    seeds: Optional[dict] = None
    out: str = "runs/default"
    truth_stride: Optional[int] = None
    trace_columns: Optional[int] = None
    field_stride: Optional[int] = None
    support_windows: list = field(default_factory=list)
    init_spread: Optional[float] = None
    x0: Optional[list] = None
    x0_amplitude: Optional[float] = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {MODELS}")
        d = _DEFAULTS[self.model]
        for k in ("n_windows", "truth_stride", "trace_columns", "field_stride", "x0", "x0_amplitude"):
            if getattr(self, k) is None and k in d:
                setattr(self, k, d[k])
        if "proposal" in d:
            self.filter = {"proposal": d["proposal"], **self.filter}
        if self.seeds is None:
            self.seeds = _seed_triplet(self.seed)
        if set(self.seeds) != {"truth", "filter", "smoother"}:
            raise ConfigError("seeds must name exactly truth, filter and smoother")
        self.seeds = {k: int(v) for k, v in self.seeds.items()}
        if self.n_windows is None or self.n_windows < 1:
            raise ConfigError("n_windows must be a positive integer")
        if self.truth_stride is not None and self.truth_stride < 1:
            raise ConfigError("truth_stride must be >= 1")
        if self.init_spread is not None and not self.init_spread > 0:
            raise ConfigError("init_spread must be positive")
        # fail early on bad sections
        self.filter_config()
        self.smoother_config()
        self.model_spec()

    # ---- sections -------------------------------------------------------

    def filter_config(self) -> FilterConfig:
        return _build(FilterConfig, self.filter, "filter")

    def smoother_config(self) -> SmootherConfig:
        s = dict(self.smoother)
        if s.get("support_steps") is not None:
            s["support_steps"] = tuple(int(j) for j in s["support_steps"])
        return _build(SmootherConfig, s, "smoother")

    def model_spec(self):
        p = dict(self.model_params)
        try:
            if self.model == "sine":
                return SineModel(**p)
            if self.model == "ou":
                return _OUSpec(**p)
            grid = VorticityGrid(**p.pop("grid", {}))
            noise = GRFSpec(**p.pop("noise", {}))
            return NSModel(grid=grid, noise=noise, **p)
        except TypeError as exc:
            raise ConfigError(f"bad model_params for {self.model}: {exc}") from None

    def build_model(self):
        return self.model_spec().build()

    # ---- overrides and serialization -----------------------------------

    def with_overrides(self, *, seed=None, out=None, particles=None, bridges=None, grid=None):
        """Apply CLI flags. A new ``seed`` re-derives all three streams."""
        kw = {}
        if seed is not None:
            kw.update(seed=int(seed), seeds=None)
        if out is not None:
            kw["out"] = str(out)
        if particles is not None:
            kw["filter"] = {**self.filter, "n_particles": int(particles)}
        if bridges is not None:
            kw["smoother"] = {**self.smoother, "M": int(bridges)}
        if grid is not None:
            if self.model != "ns":
                raise ConfigError("--grid only applies to the ns model")
            if grid not in (32, 64):
                raise ConfigError("--grid must be 32 or 64")
            mp = dict(self.model_params)
            mp["grid"] = {**mp.get("grid", {}), "nx": grid, "ny": grid}
            kw["model_params"] = mp
        return replace(self, **kw) if kw else self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(d)


@dataclass(frozen=True)
class _OUSpec:
    theta: float = 1.0
    sigma2: float = 1.0
    obs_var: float = 0.1
    dt: float = 0.01
    stride: int = 20

    def build(self):
        return ou_model(self.theta, self.sigma2, self.obs_var, self.dt, self.stride)


def _build(cls, d, name):
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad {name} section: {exc}") from None
