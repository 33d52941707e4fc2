"""Shared domain types: rollout samples, datasets, feature maps, RNG streams."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "InvalidInputError",
    "NumericalError",
    "Sample",
    "Dataset",
    "dataset_append",
    "FeatureMap",
    "linear_features",
    "se_features",
    "features",
    "feature_matrix",
    "grid_feature_map",
    "RngStream",
]


class InvalidInputError(ValueError):
    """An argument violated a documented precondition."""


class NumericalError(RuntimeError):
    """A numerical routine failed beyond recovery (e.g. a factorization)."""


def _finite_vector(x, name):
    v = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if v.ndim != 1:
        raise InvalidInputError(f"{name} must be a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return v


@dataclass(frozen=True)
class Sample:
    """One episodic rollout: context, trajectory parameter and scalar return."""

    context: np.ndarray
    traj_param: np.ndarray
    ret: float

    def __post_init__(self):
        object.__setattr__(self, "context", _finite_vector(self.context, "context"))
        object.__setattr__(self, "traj_param", _finite_vector(self.traj_param, "traj_param"))
        r = float(self.ret)
        if not np.isfinite(r):
            raise InvalidInputError("return must be finite")
        object.__setattr__(self, "ret", r)


@dataclass(frozen=True)
class Dataset:
    """Immutable column store of rollout samples with fixed dimensions.

    Appending returns a new Dataset; existing instances are never mutated, so
    they can be shared freely across threads.
    """

    contexts: np.ndarray  # (n, d_s)
    params: np.ndarray    # (n, d_xi)
    returns: np.ndarray   # (n,)

    def __post_init__(self):
        c = np.asarray(self.contexts, dtype=np.float64)
        p = np.asarray(self.params, dtype=np.float64)
        r = np.asarray(self.returns, dtype=np.float64)
        if c.ndim != 2 or p.ndim != 2 or r.ndim != 1:
            raise InvalidInputError("contexts/params must be 2-D, returns 1-D")
        if not (len(c) == len(p) == len(r)):
            raise InvalidInputError("column lengths disagree")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(p)) and np.all(np.isfinite(r))):
            raise InvalidInputError("dataset contains non-finite entries")
        object.__setattr__(self, "contexts", c)
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "returns", r)

    @classmethod
    def empty(cls, d_s: int, d_xi: int) -> "Dataset":
        return cls(np.zeros((0, d_s)), np.zeros((0, d_xi)), np.zeros(0))

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], d_s=None, d_xi=None) -> "Dataset":
        if not samples:
            if d_s is None or d_xi is None:
                raise InvalidInputError("empty dataset needs explicit dimensions")
            return cls.empty(d_s, d_xi)
        c = np.stack([s.context for s in samples])
        p = np.stack([s.traj_param for s in samples])
        r = np.array([s.ret for s in samples])
        return cls(c, p, r)

    @property
    def d_s(self) -> int:
        return self.contexts.shape[1]

    @property
    def d_xi(self) -> int:
        return self.params.shape[1]

    def __len__(self) -> int:
        return len(self.returns)

    def sample(self, i: int) -> Sample:
        return Sample(self.contexts[i], self.params[i], self.returns[i])


def dataset_append(ds: Dataset, new: Sequence[Sample]) -> Dataset:
    """Return a dataset extended by ``new`` samples, original order preserved."""
    if not new:
        return ds
    for s in new:
        if s.context.shape != (ds.d_s,) or s.traj_param.shape != (ds.d_xi,):
            raise InvalidInputError(
                f"sample dims {s.context.shape}/{s.traj_param.shape} do not match "
                f"dataset ({ds.d_s},)/({ds.d_xi},)"
            )
    c = np.concatenate([ds.contexts, np.stack([s.context for s in new])])
    p = np.concatenate([ds.params, np.stack([s.traj_param for s in new])])
    r = np.concatenate([ds.returns, np.array([s.ret for s in new])])
    return Dataset(c, p, r)


@dataclass(frozen=True)
class FeatureMap:
    """Context feature map: either linear [s; 1] or squared-exponential bumps.

    For the squared-exponential kind, component i is
    exp(-(s - c_i)^T diag(bandwidth) (s - c_i)), optionally followed by a
    constant bias feature.
    """

    kind: str
    in_dim: int
    centers: np.ndarray | None = None    # (k, in_dim)
    bandwidth: np.ndarray | None = None  # (in_dim,) diagonal, > 0
    bias: bool = True

    def __post_init__(self):
        if self.kind not in ("linear", "se"):
            raise InvalidInputError(f"unknown feature map kind {self.kind!r}")
        if self.in_dim < 1:
            raise InvalidInputError("in_dim must be >= 1")
        if self.kind == "se":
            if self.centers is None or self.bandwidth is None:
                raise InvalidInputError("se feature map needs centers and bandwidth")
            c = np.asarray(self.centers, dtype=np.float64)
            b = np.asarray(self.bandwidth, dtype=np.float64)
            if c.ndim != 2 or c.shape[1] != self.in_dim:
                raise InvalidInputError("centers must be (k, in_dim)")
            if b.shape != (self.in_dim,) or np.any(b <= 0):
                raise InvalidInputError("bandwidth must be positive with one entry per dim")
            object.__setattr__(self, "centers", c)
            object.__setattr__(self, "bandwidth", b)

    @property
    def out_dim(self) -> int:
        if self.kind == "linear":
            return self.in_dim + 1
        return len(self.centers) + (1 if self.bias else 0)


def linear_features(s) -> np.ndarray:
    """Return [s; 1]."""
    v = _finite_vector(s, "context")
    return np.concatenate([v, [1.0]])


def se_features(s, fmap: FeatureMap) -> np.ndarray:
    """Squared-exponential bump activations of ``s`` against fmap.centers."""
    if fmap.kind != "se":
        raise InvalidInputError("se_features requires a squared-exponential map")
    v = _finite_vector(s, "context")
    if v.shape != (fmap.in_dim,):
        raise InvalidInputError(f"context dim {v.shape[0]} != map dim {fmap.in_dim}")
    diff = fmap.centers - v
    phi = np.exp(-np.sum(fmap.bandwidth * diff * diff, axis=1))
    if fmap.bias:
        phi = np.concatenate([phi, [1.0]])
    return phi


def features(s, fmap: FeatureMap) -> np.ndarray:
    if fmap.kind == "linear":
        v = _finite_vector(s, "context")
        if v.shape != (fmap.in_dim,):
            raise InvalidInputError(f"context dim {v.shape[0]} != map dim {fmap.in_dim}")
        return np.concatenate([v, [1.0]])
    return se_features(s, fmap)


def feature_matrix(contexts, fmap: FeatureMap) -> np.ndarray:
    """Vectorized feature map over rows of ``contexts`` (n, d_s) -> (n, out_dim)."""
    S = np.asarray(contexts, dtype=np.float64)
    if S.ndim != 2 or S.shape[1] != fmap.in_dim:
        raise InvalidInputError(f"contexts must be (n, {fmap.in_dim})")
    if not np.all(np.isfinite(S)):
        raise InvalidInputError("contexts contain non-finite entries")
    if fmap.kind == "linear":
        return np.hstack([S, np.ones((len(S), 1))])
    diff = S[:, None, :] - fmap.centers[None, :, :]
    phi = np.exp(-np.einsum("nkd,d,nkd->nk", diff, fmap.bandwidth, diff))
    if fmap.bias:
        phi = np.hstack([phi, np.ones((len(S), 1))])
    return phi


def grid_feature_map(low, high, per_dim: int = 10, bandwidth=None, bias: bool = True) -> FeatureMap:
    """Squared-exponential map with centers on a uniform grid over a box.

    The default bandwidth sets the activation at a neighboring grid point to
    exp(-1/2).
    """
    lo = _finite_vector(low, "low")
    hi = _finite_vector(high, "high")
    if lo.shape != hi.shape or np.any(hi <= lo):
        raise InvalidInputError("invalid box bounds")
    if per_dim < 2:
        raise InvalidInputError("per_dim must be >= 2")
    d = len(lo)
    axes = [np.linspace(lo[j], hi[j], per_dim) for j in range(d)]
    centers = np.array(list(itertools.product(*axes)))
    if bandwidth is None:
        spacing = (hi - lo) / (per_dim - 1)
        bandwidth = 1.0 / (2.0 * spacing**2)
    return FeatureMap("se", d, centers, np.asarray(bandwidth, dtype=np.float64), bias)


@dataclass(frozen=True)
class RngStream:
    """Named deterministic random stream.

    Equal (seed, stream) pairs produce identical draw sequences on every
    platform; derived generators use the fixed PCG64 bit generator.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        if self.seed < 0 or self.stream < 0:
            raise InvalidInputError("seed and stream id must be non-negative")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence((self.seed, self.stream))))
