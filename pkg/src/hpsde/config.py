"""Run configuration: nested dataclasses, JSON round-trip and per-env defaults."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .core import InvalidInputError
from .embed import EmbeddingConfig

__all__ = [
    "OptionUpdateConfig", "GatingConfig", "TransformConfig", "MixtureConfig",
    "GpConfig", "EmbeddingSettings", "HpsdeConfig",
    "default_config", "load_config",
]


@dataclass(frozen=True)
class TransformConfig:
    kind: str = "exponential"
    beta: float = 1.0
    # weight truncation multiplier (None: exact normalized weights); see
    # weighting.importance_weights
    clip: float | None = None


@dataclass(frozen=True)
class OptionUpdateConfig:
    method: str = "reps"       # "reps" or "rwr"
    epsilon: float = 0.8       # REPS KL bound
    beta: float = 1.0          # RWR exponential temperature
    ridge: float = 1e-6
    cov_floor: float = 1e-8    # minimum exploration variance per direction
    min_samples: int | None = None  # None: d_xi + 1

    def __post_init__(self):
        if self.method.lower() not in ("reps", "rwr"):
            raise InvalidInputError(f"unknown option update method {self.method!r}")


@dataclass(frozen=True)
class GatingConfig:
    mode: str = "ucb"          # "greedy", "ucb" or "softmax"
    kappa: float = 1.0
    temperature: float = 1.0

    def __post_init__(self):
        if self.mode.lower() not in ("greedy", "ucb", "softmax"):
            raise InvalidInputError(f"unknown gating mode {self.mode!r}")


@dataclass(frozen=True)
class MixtureConfig:
    alpha0: float = 1e-3
    beta0: float = 1.0
    nu0: float | None = None       # None: d + 2
    k0_scale: float | None = None  # None: from the weighted data covariance
    tol: float = 1e-5
    max_iter: int = 300
    prune_min_rel_mass: float = 0.02


@dataclass(frozen=True)
class GpConfig:
    n_max: int = 1000            # most recent samples the GP trains on
    hyper_opt_iters: int = 25
    hyper_opt_every: int = 1     # re-tune hypers every k iterations
    init_l: float = 1.0
    init_sigma_f: float = 1.0
    init_sigma_n: float = 0.1
    # floor on the kernel length scale, as a multiple of the median pairwise
    # distance of the standardized training inputs (None: unconstrained)
    l_min_scale: float | None = None


@dataclass(frozen=True)
class EmbeddingSettings:
    enabled: bool = False
    k_nn: int = 10
    heat_bandwidth: float | None = None
    out_dim: int = 2

    def to_embedding_config(self) -> EmbeddingConfig:
        return EmbeddingConfig(k_nn=self.k_nn, heat_bandwidth=self.heat_bandwidth,
                               out_dim=self.out_dim)


@dataclass(frozen=True)
class HpsdeConfig:
    env: str = "toy2"
    env_overrides: dict = field(default_factory=dict)
    seed: int = 0
    iterations: int = 30
    rollouts_per_iter: int = 200
    initial_rollouts: int | None = None   # None: rollouts_per_iter
    o_max: int = 10
    window: int | None = None             # None: weight/cluster on all data
    threads: int = 1
    record_wall_time: bool = True
    transform: TransformConfig = field(default_factory=TransformConfig)
    option_update: OptionUpdateConfig = field(default_factory=OptionUpdateConfig)
    gating: GatingConfig = field(default_factory=GatingConfig)
    mixture: MixtureConfig = field(default_factory=MixtureConfig)
    gp: GpConfig = field(default_factory=GpConfig)
    embedding: EmbeddingSettings = field(default_factory=EmbeddingSettings)

    def __post_init__(self):
        if self.o_max < 1:
            raise InvalidInputError("o_max must be >= 1")
        if self.iterations < 0:
            raise InvalidInputError("iterations must be >= 0")
        if self.rollouts_per_iter < 1:
            raise InvalidInputError("rollouts_per_iter must be >= 1")
        if self.seed < 0:
            raise InvalidInputError("seed must be non-negative")
        if self.threads < 1:
            raise InvalidInputError("threads must be >= 1")

    @property
    def n_initial(self) -> int:
        return self.rollouts_per_iter if self.initial_rollouts is None else self.initial_rollouts

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "HpsdeConfig":
        d = dict(data)
        sub = {
            "transform": TransformConfig,
            "option_update": OptionUpdateConfig,
            "gating": GatingConfig,
            "mixture": MixtureConfig,
            "gp": GpConfig,
            "embedding": EmbeddingSettings,
        }
        try:
            for key, typ in sub.items():
                if key in d and isinstance(d[key], dict):
                    d[key] = typ(**d[key])
            return cls(**d)
        except TypeError as e:
            raise InvalidInputError(f"bad configuration: {e}") from e


# Per-environment defaults; every constant here can be overridden from a
# config file. Budgets are sized for desk-scale runs.
_ENV_DEFAULTS: dict[str, dict] = {
    "toy2": dict(
        o_max=10, iterations=30, rollouts_per_iter=200, window=2500,
        transform=TransformConfig(beta=8.0),
        option_update=OptionUpdateConfig(method="reps", epsilon=0.8, beta=8.0),
        gating=GatingConfig(mode="ucb", kappa=0.5),
        mixture=MixtureConfig(tol=1e-3, max_iter=150),
        gp=GpConfig(n_max=300, hyper_opt_iters=20, hyper_opt_every=5),
    ),
    "toy3": dict(
        o_max=10, iterations=30, rollouts_per_iter=200, window=2500,
        transform=TransformConfig(beta=8.0),
        option_update=OptionUpdateConfig(method="reps", epsilon=0.8, beta=8.0),
        gating=GatingConfig(mode="ucb", kappa=0.5),
        mixture=MixtureConfig(tol=1e-3, max_iter=150),
        gp=GpConfig(n_max=300, hyper_opt_iters=20, hyper_opt_every=5),
    ),
    "puddle": dict(
        o_max=20, iterations=30, rollouts_per_iter=200, window=1000,
        initial_rollouts=1000,
        transform=TransformConfig(beta=3.0, clip=1.0),
        option_update=OptionUpdateConfig(method="reps", epsilon=1.2, beta=3.0,
                                         ridge=1e-3, cov_floor=16.0, min_samples=20),
        gating=GatingConfig(mode="ucb", kappa=0.3),
        mixture=MixtureConfig(tol=1e-3, max_iter=150, prune_min_rel_mass=0.04),
        gp=GpConfig(n_max=600, hyper_opt_iters=20, hyper_opt_every=5, l_min_scale=1.0),
    ),
    "arm": dict(
        o_max=10, iterations=20, rollouts_per_iter=150,
        transform=TransformConfig(beta=3.0),
        option_update=OptionUpdateConfig(method="reps", epsilon=0.8, beta=3.0),
        gating=GatingConfig(mode="ucb", kappa=1.0),
        gp=GpConfig(n_max=300, hyper_opt_iters=20, hyper_opt_every=5),
    ),
}


def default_config(env: str = "toy2", **updates) -> HpsdeConfig:
    """Recommended configuration for one environment, optionally updated."""
    if env not in _ENV_DEFAULTS:
        raise InvalidInputError(f"unknown environment {env!r}")
    cfg = HpsdeConfig(env=env, **_ENV_DEFAULTS[env])
    if updates:
        cfg = replace(cfg, **updates)
    return cfg


def load_config(path: str | Path, env: str | None = None, seed: int | None = None) -> HpsdeConfig:
    """Read a JSON config file and merge it over the per-environment defaults.

    The file may be partial; nested sections are merged key by key. ``env``
    and ``seed`` arguments override the file.
    """
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidInputError(f"cannot read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise InvalidInputError("config file must hold a JSON object")
    env_name = env or data.get("env", "toy2")
    base = default_config(env_name).to_dict()
    for key, value in data.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            base[key].update(value)
        else:
            base[key] = value
    base["env"] = env_name
    if seed is not None:
        base["seed"] = seed
    return HpsdeConfig.from_dict(base)
