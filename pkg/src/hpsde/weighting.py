"""Return transforms and normalized return-weighted importance weights.

The optimal-policy density is proportional to a monotone transform f of the
return; weighting behavior-policy samples by f(R) / pi_old and normalizing
over the batch cancels the unknown partition function, so the weights can be
computed exactly from rollout data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import InvalidInputError

__all__ = [
    "ReturnTransform",
    "transform_return",
    "batch_transform",
    "ImportanceWeights",
    "importance_weights",
    "mixture_old_density",
    "effective_sample_size",
]

_KINDS = ("exponential", "shifted-identity")


@dataclass(frozen=True)
class ReturnTransform:
    """Monotone positive transform of the return.

    exponential:      f(R) = exp(beta * (R - shift))
    shifted-identity: f(R) = R - shift + eps

    ``shift`` is a batch-level stabilizer (max return for the exponential
    kind, min return for shifted-identity); rescaling f by a common positive
    constant never changes normalized weights.
    """

    kind: str = "exponential"
    beta: float = 1.0
    shift: float = 0.0
    eps: float = 1e-6

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidInputError(f"unknown return transform kind {self.kind!r}")
        if self.beta <= 0:
            raise InvalidInputError("beta must be positive")
        if self.eps <= 0:
            raise InvalidInputError("eps must be positive")


def transform_return(ret: float, t: ReturnTransform) -> float:
    """Apply the transform to one return; result is strictly positive."""
    r = float(ret)
    if not np.isfinite(r):
        raise InvalidInputError("return must be finite")
    if t.kind == "exponential":
        return float(np.exp(t.beta * (r - t.shift)))
    out = r - t.shift + t.eps
    if out <= 0:
        raise InvalidInputError(
            "shifted-identity transform needs shift <= min return; got a non-positive value"
        )
    return float(out)


def batch_transform(returns, t: ReturnTransform) -> np.ndarray:
    """Transform a batch of returns with the overflow-safe batch shift applied."""
    r = np.asarray(returns, dtype=np.float64)
    if r.ndim != 1 or len(r) == 0 or not np.all(np.isfinite(r)):
        raise InvalidInputError("returns must be a non-empty finite 1-D array")
    if t.kind == "exponential":
        return np.exp(t.beta * (r - r.max()))
    return r - r.min() + t.eps


@dataclass(frozen=True)
class ImportanceWeights:
    raw: np.ndarray         # f(R_i) / pi_old_i, up to a common positive factor
    normalized: np.ndarray  # sums to one

    def __post_init__(self):
        object.__setattr__(self, "raw", np.asarray(self.raw, dtype=np.float64))
        object.__setattr__(self, "normalized", np.asarray(self.normalized, dtype=np.float64))


def importance_weights(ds, old_densities, t: ReturnTransform,
                       clip: float | None = None) -> ImportanceWeights:
    """Normalized return-weighted importance of each sample.

    ``ds`` may be a Dataset or a plain array of returns. ``old_densities`` are
    the behavior-policy densities recorded when each sample was collected.

    With ``clip`` set, raw weights are truncated at clip * mean(raw) * sqrt(n)
    before normalizing. Density ratios are heavy-tailed in high-dimensional
    parameter spaces (a single low-density draw can swallow all the mass);
    truncated self-normalized importance sampling bounds that failure mode at
    the cost of a small bias. Left off, the weights follow the exact formula.
    """
    returns = np.asarray(getattr(ds, "returns", ds), dtype=np.float64)
    dens = np.asarray(old_densities, dtype=np.float64)
    if returns.ndim != 1 or dens.shape != returns.shape:
        raise InvalidInputError("returns and old_densities must be matching 1-D arrays")
    if len(returns) == 0:
        raise InvalidInputError("need at least one sample")
    if np.any(dens <= 0) or not np.all(np.isfinite(dens)):
        raise InvalidInputError("old densities must be positive and finite")
    logs = np.log(batch_transform(returns, t)) - np.log(dens)
    logs -= logs.max()  # common factors cancel in the normalization
    raw = np.exp(logs)
    if clip is not None:
        if clip <= 0:
            raise InvalidInputError("clip must be positive")
        raw = np.minimum(raw, clip * raw.mean() * np.sqrt(len(raw)))
    total = raw.sum()
    if not np.isfinite(total) or total <= 0:
        raise InvalidInputError("importance weights did not normalize (overflow or zero mass)")
    return ImportanceWeights(raw=raw, normalized=raw / total)


def mixture_old_density(policies, gate_probs, s, xi) -> float:
    """Density of the gated mixture sum_o p(o) N(xi | mean_o(s), Sigma_o).

    ``policies`` only need a ``log_density(s, xi)`` method.
    """
    p = np.asarray(gate_probs, dtype=np.float64)
    if len(p) != len(policies) or len(p) == 0:
        raise InvalidInputError("one gate probability per policy required")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-8:
        raise InvalidInputError("gate probabilities must be non-negative and sum to 1")
    logs = np.full(len(p), -np.inf)
    for o, (pol, po) in enumerate(zip(policies, p)):
        if po == 0.0:
            continue
        logs[o] = np.log(po) + pol.log_density(s, xi)
    return float(np.exp(logsumexp(logs)))


def effective_sample_size(normalized_weights) -> float:
    """Kish effective sample size 1 / sum(w~^2) of normalized weights."""
    w = np.asarray(normalized_weights, dtype=np.float64)
    return float(1.0 / np.sum(w * w))
