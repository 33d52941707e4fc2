"""Gaussian option policies and their episodic updates (eRWR and REPS).

Each option policy is a Gaussian over trajectory parameters whose mean is
linear in a context feature map. Updates are weighted maximum-likelihood
fits; the weights come either from a monotone return transform (RWR) or from
the episodic REPS reweighting, which bounds the KL divergence between the
sample distribution before and after the update.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular
from scipy.special import logsumexp

from .core import FeatureMap, InvalidInputError, NumericalError, feature_matrix, features
from .weighting import ReturnTransform, batch_transform

__all__ = [
    "GaussianOptionPolicy",
    "policy_mean",
    "sample_policy",
    "policy_density",
    "erwr_update",
    "RepsSolution",
    "reps_weights",
    "update_option_policy",
]

log = logging.getLogger(__name__)

COV_EIG_FLOOR = 1e-8


def _floor_spd(cov: np.ndarray, floor: float = COV_EIG_FLOOR) -> np.ndarray:
    C = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(C)
    if evals.min() < floor:
        evals = np.maximum(evals, floor)
        C = (evecs * evals) @ evecs.T
        C = 0.5 * (C + C.T)
    return C


class GaussianOptionPolicy:
    """pi(xi | s) = N(xi | W^T phi(s), Sigma) with eigenvalue-floored Sigma."""

    def __init__(self, weights: np.ndarray, cov: np.ndarray, fmap: FeatureMap):
        W = np.asarray(weights, dtype=np.float64)
        C = np.asarray(cov, dtype=np.float64)
        if W.ndim != 2:
            raise InvalidInputError("weights must be (out_dim, d_xi)")
        if W.shape[0] != fmap.out_dim:
            raise InvalidInputError(
                f"weights rows {W.shape[0]} != feature dim {fmap.out_dim}"
            )
        if C.shape != (W.shape[1], W.shape[1]):
            raise InvalidInputError("covariance shape must match trajectory dim")
        self.weights = W
        self.cov = _floor_spd(C)
        self.fmap = fmap
        self._chol = cholesky(self.cov, lower=True)
        self._logdet = 2.0 * np.sum(np.log(np.diag(self._chol)))

    @property
    def d_xi(self) -> int:
        return self.weights.shape[1]

    def mean(self, s) -> np.ndarray:
        return features(s, self.fmap) @ self.weights

    def mean_batch(self, contexts) -> np.ndarray:
        return feature_matrix(contexts, self.fmap) @ self.weights

    def sample(self, s, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(self.d_xi)
        return self.mean(s) + self._chol @ z

    def log_density(self, s, xi) -> float:
        diff = np.asarray(xi, dtype=np.float64) - self.mean(s)
        y = solve_triangular(self._chol, diff, lower=True)
        return float(-0.5 * (self.d_xi * math.log(2 * math.pi) + self._logdet + y @ y))

    def density(self, s, xi) -> float:
        return math.exp(self.log_density(s, xi))


def policy_mean(p: GaussianOptionPolicy, s) -> np.ndarray:
    return p.mean(s)


def sample_policy(p: GaussianOptionPolicy, s, rng: np.random.Generator) -> np.ndarray:
    return p.sample(s, rng)


def policy_density(p: GaussianOptionPolicy, s, xi) -> float:
    return p.density(s, xi)


def erwr_update(
    contexts,
    xis,
    weights,
    fmap: FeatureMap,
    ridge: float = 1e-6,
    cov_floor: float = COV_EIG_FLOOR,
) -> GaussianOptionPolicy:
    """Weighted maximum-likelihood Gaussian policy fit.

    Solves (Phi^T D Phi + lam I) W = Phi^T D Xi with D = diag(weights) and a
    trace-scaled ridge lam = ridge * tr(Phi^T D Phi) / p, then sets the
    covariance to the weighted residual scatter. Scaling all weights by a
    positive constant leaves the result unchanged.
    """
    S = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    Xi = np.atleast_2d(np.asarray(xis, dtype=np.float64))
    w = np.asarray(weights, dtype=np.float64)
    n = len(S)
    if len(Xi) != n or w.shape != (n,):
        raise InvalidInputError("contexts, xis and weights must have matching length")
    if np.any(w < 0) or w.sum() <= 0:
        raise InvalidInputError("weights must be non-negative with positive total")

    Phi = feature_matrix(S, fmap)
    p = Phi.shape[1]
    A = Phi.T @ (w[:, None] * Phi)
    lam = ridge * np.trace(A) / p
    A[np.diag_indices_from(A)] += max(lam, 1e-300)
    B = Phi.T @ (w[:, None] * Xi)
    try:
        W = cho_solve(cho_factor(A, lower=True), B)
    except Exception as e:
        raise NumericalError("weighted regression normal equations failed") from e
    resid = Xi - Phi @ W
    cov = (w[:, None] * resid).T @ resid / w.sum()
    return GaussianOptionPolicy(W, _floor_spd(cov, cov_floor), fmap)


@dataclass(frozen=True)
class RepsSolution:
    """Solution of the episodic REPS reweighting problem."""

    eta: float
    weights: np.ndarray  # normalized, sums to 1
    kl: float            # achieved empirical KL to the uniform sample weights


def _reps_dual(log_eta: float, returns: np.ndarray, epsilon: float) -> float:
    eta = math.exp(log_eta)
    return eta * epsilon + eta * (logsumexp(returns / eta) - math.log(len(returns)))


def reps_weights(
    returns,
    epsilon: float,
    eta_bounds: tuple[float, float] = (1e-6, 1e6),
    max_iter: int = 200,
) -> RepsSolution:
    """Sample weights maximizing expected return under a KL budget.

    Minimizes the convex dual g(eta) = eta*eps + eta*log((1/n) sum exp(R/eta))
    by golden-section search over log(eta), then recovers the weights
    w_i ~ exp(R_i / eta*). The achieved empirical KL sum w log(n w) never
    exceeds epsilon beyond optimizer tolerance.
    """
    R = np.asarray(returns, dtype=np.float64)
    if R.ndim != 1 or len(R) < 2 or not np.all(np.isfinite(R)):
        raise InvalidInputError("need at least two finite returns")
    if epsilon <= 0:
        raise InvalidInputError("epsilon must be positive")

    R0 = R - R.max()  # dual depends on returns only through differences
    lo, hi = math.log(eta_bounds[0]), math.log(eta_bounds[1])
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = _reps_dual(c, R0, epsilon)
    fd = _reps_dual(d, R0, epsilon)
    for _ in range(max_iter):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = _reps_dual(c, R0, epsilon)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = _reps_dual(d, R0, epsilon)
        if b - a < 1e-14:
            break
    log_eta = c if fc < fd else d
    eta = math.exp(log_eta)
    if not np.isfinite(_reps_dual(log_eta, R0, epsilon)):
        raise NumericalError(
            f"REPS dual optimization failed: bracket [{math.exp(a):.3e}, {math.exp(b):.3e}], "
            f"dual values ({fc:.3e}, {fd:.3e})"
        )
    logw = R0 / eta
    logw -= logsumexp(logw)
    w = np.exp(logw)
    w /= w.sum()
    kl = float(np.sum(w * np.log(np.maximum(len(w) * w, 1e-300))))
    return RepsSolution(eta=float(eta), weights=w, kl=kl)


def update_option_policy(
    contexts,
    xis,
    returns,
    method: str,
    fmap: FeatureMap,
    prev_policy: GaussianOptionPolicy | None = None,
    beta: float = 1.0,
    epsilon: float = 0.5,
    ridge: float = 1e-6,
    cov_floor: float = COV_EIG_FLOOR,
    min_samples: int | None = None,
) -> GaussianOptionPolicy | None:
    """Fit one option policy from its assigned samples.

    RWR weights the samples by the exponential return transform; REPS uses
    the KL-bounded reweighting. Options with fewer than d_xi + 1 samples keep
    the previous policy. When the sample count is below 3 * d_xi, a small
    multiple of the previous covariance is mixed in to keep exploration from
    collapsing on thin data; ``cov_floor`` bounds the exploration variance
    from below in every case.
    """
    S = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    Xi = np.atleast_2d(np.asarray(xis, dtype=np.float64))
    R = np.asarray(returns, dtype=np.float64)
    n, d_xi = Xi.shape
    min_samples = (d_xi + 1) if min_samples is None else max(min_samples, d_xi + 1)

    if n < max(min_samples, 2):
        log.info("option update skipped (%d samples); keeping previous policy", n)
        return prev_policy

    kind = method.lower()
    if kind == "rwr":
        w = batch_transform(R, ReturnTransform("exponential", beta=beta))
    elif kind == "reps":
        w = reps_weights(R, epsilon).weights
    else:
        raise InvalidInputError(f"unknown option update method {method!r}")

    policy = erwr_update(S, Xi, w, fmap, ridge=ridge, cov_floor=cov_floor)
    if n < 3 * d_xi and prev_policy is not None:
        cov = policy.cov + 1e-2 * prev_policy.cov
        policy = GaussianOptionPolicy(policy.weights, cov, fmap)
    return policy
