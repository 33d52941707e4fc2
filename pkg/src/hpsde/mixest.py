"""Importance-weighted variational-Bayes EM for Gaussian mixtures.

Option structure is discovered by fitting a Gaussian mixture to weighted
(s, xi) samples. Each cluster carries a Dirichlet / Gaussian-Wishart
posterior; sample weights enter only the M-step sufficient statistics. A
small symmetric Dirichlet concentration drives unused clusters to zero mass,
so the number of options is determined by the data.

A weighted maximum-likelihood EM is included as an independent oracle.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular
from scipy.special import digamma, logsumexp

from .core import InvalidInputError, NumericalError

__all__ = [
    "MixturePriors",
    "default_priors",
    "WeightedMixtureState",
    "GaussianMixture",
    "vb_e_step",
    "vb_m_step",
    "fit_weighted_vbem",
    "ml_em_oracle",
    "assign_options",
    "prune_clusters",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MixturePriors:
    """Hyperparameters of the Dirichlet / Gaussian-Wishart prior."""

    alpha0: float
    beta0: float
    nu0: float
    K0: np.ndarray  # (d, d) symmetric positive definite Wishart scale

    def __post_init__(self):
        K = np.asarray(self.K0, dtype=np.float64)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise InvalidInputError("K0 must be square")
        if self.alpha0 <= 0 or self.beta0 <= 0:
            raise InvalidInputError("alpha0 and beta0 must be positive")
        d = K.shape[0]
        if self.nu0 <= d - 1:
            raise InvalidInputError(f"nu0 must exceed d-1 = {d - 1}")
        if not np.allclose(K, K.T, atol=1e-12):
            raise InvalidInputError("K0 must be symmetric")
        try:
            cholesky(K, lower=True)
        except np.linalg.LinAlgError as e:  # pragma: no cover - scipy raises its own
            raise InvalidInputError("K0 must be positive definite") from e
        except Exception as e:
            raise InvalidInputError("K0 must be positive definite") from e
        object.__setattr__(self, "K0", K)


def default_priors(points, weights, alpha0: float = 1e-3, beta0: float = 1.0) -> MixturePriors:
    """Data-scaled priors: nu0 = d + 2 and K0 = I / (mean weighted variance)."""
    X = np.asarray(points, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    d = X.shape[1]
    mean = np.average(X, axis=0, weights=w)
    var = np.average((X - mean) ** 2, axis=0, weights=w)
    scale = max(float(var.mean()), 1e-12)
    return MixturePriors(alpha0=alpha0, beta0=beta0, nu0=float(d + 2), K0=np.eye(d) / scale)


@dataclass
class WeightedMixtureState:
    """Per-cluster variational posterior plus responsibilities.

    gamma_hat[l] is the effective weighted count of cluster l; the
    responsibilities matrix is row-stochastic over clusters.
    """

    alpha_hat: np.ndarray  # (m,)
    beta_hat: np.ndarray   # (m,)
    nu_hat: np.ndarray     # (m,)
    h_hat: np.ndarray      # (m, d)
    K_hat: np.ndarray      # (m, d, d)
    resp: np.ndarray       # (n, m)
    gamma_hat: np.ndarray  # (m,)
    priors: MixturePriors
    converged: bool = True
    n_iter: int = 0

    @property
    def n_clusters(self) -> int:
        return len(self.alpha_hat)

    @property
    def dim(self) -> int:
        return self.h_hat.shape[1]


def vb_e_step(points, state: WeightedMixtureState) -> np.ndarray:
    """Responsibilities from the current cluster posteriors, in log space.

    For cluster l the unnormalized log responsibility of point x is
        psi(a_l) - psi(sum a) + (1/2) sum_j psi((nu_l + 1 - j) / 2)
        + (1/2) log det K_l - d / (2 b_l) - (nu_l / 2) (x - h_l)^T K_l (x - h_l);
    terms constant across clusters are dropped since rows are normalized.
    """
    X = np.asarray(points, dtype=np.float64)
    n, d = X.shape
    m = state.n_clusters
    if d != state.dim:
        raise InvalidInputError(f"point dim {d} != state dim {state.dim}")
    log_rho = np.empty((n, m))
    dims = np.arange(1, d + 1)
    const = (
        digamma(state.alpha_hat)
        - digamma(state.alpha_hat.sum())
        + 0.5 * digamma((state.nu_hat[:, None] + 1.0 - dims[None, :]) / 2.0).sum(axis=1)
        - d / (2.0 * state.beta_hat)
    )
    for l in range(m):
        try:
            L = np.linalg.cholesky(state.K_hat[l])
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"posterior scale of cluster {l} is not positive definite") from e
        diff = X - state.h_hat[l]
        t = diff @ L
        maha = np.einsum("ni,ni->n", t, t)  # (x-h)^T K (x-h) via K = L L^T
        log_rho[:, l] = const[l] + np.log(np.diag(L)).sum() - 0.5 * state.nu_hat[l] * maha
    log_rho -= log_rho.max(axis=1, keepdims=True)
    rho = np.exp(log_rho)
    rho /= rho.sum(axis=1, keepdims=True)
    return rho


def vb_m_step(points, weights, resp, priors: MixturePriors) -> WeightedMixtureState:
    """Update the cluster posteriors from weighted responsibilities.

    With g_l = sum_i w_i eta_il and c_l the weighted cluster mean:
        a_l = alpha0 + g_l,  b_l = beta0 + g_l,  nu_l = nu0 + g_l,
        h_l = (g_l / b_l) c_l,
        K_l = (K0^-1 + sum_i w_i eta_il (x_i - c_l)(x_i - c_l)^T
               + beta0 g_l / (beta0 + g_l) c_l c_l^T)^-1.
    Clusters with zero effective count revert to the prior.
    """
    X = np.asarray(points, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    eta = np.asarray(resp, dtype=np.float64)
    n, d = X.shape
    if w.shape != (n,) or np.any(w < 0):
        raise InvalidInputError("weights must be non-negative with one entry per point")
    if eta.shape[0] != n:
        raise InvalidInputError("responsibility rows must match points")
    if not np.allclose(eta.sum(axis=1), 1.0, atol=1e-8):
        raise InvalidInputError("responsibility rows must sum to 1")
    m = eta.shape[1]

    wr = w[:, None] * eta                      # (n, m)
    gamma = wr.sum(axis=0)                     # (m,)
    K0_inv = np.linalg.inv(priors.K0)
    K0_inv = 0.5 * (K0_inv + K0_inv.T)

    alpha_hat = priors.alpha0 + gamma
    beta_hat = priors.beta0 + gamma
    nu_hat = priors.nu0 + gamma
    h_hat = np.zeros((m, d))
    K_hat = np.empty((m, d, d))
    occupied = gamma > 0.0
    A_all = np.empty((m, d, d))
    for l in range(m):
        g = gamma[l]
        if not occupied[l]:
            K_hat[l] = priors.K0
            A_all[l] = np.eye(d)  # placeholder, inverted but unused
            continue
        c = wr[:, l] @ X / g
        diff = X - c
        scatter = (wr[:, l][:, None] * diff).T @ diff
        A = K0_inv + scatter + (priors.beta0 * g / (priors.beta0 + g)) * np.outer(c, c)
        A_all[l] = 0.5 * (A + A.T)
        h_hat[l] = (g / beta_hat[l]) * c
    try:
        K_inv_all = np.linalg.inv(A_all)
    except np.linalg.LinAlgError as e:
        raise NumericalError("scale update failed (singular scatter)") from e
    K_inv_all = 0.5 * (K_inv_all + np.transpose(K_inv_all, (0, 2, 1)))
    K_hat[occupied] = K_inv_all[occupied]
    return WeightedMixtureState(
        alpha_hat=alpha_hat,
        beta_hat=beta_hat,
        nu_hat=nu_hat,
        h_hat=h_hat,
        K_hat=K_hat,
        resp=eta,
        gamma_hat=gamma,
        priors=priors,
    )


def _weighted_kmeanspp(X, w, m, rng):
    """k-means++ style seeding where selection probabilities carry the weights."""
    n = len(X)
    p = w / w.sum()
    centers = np.empty((m, X.shape[1]))
    centers[0] = X[rng.choice(n, p=p)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for j in range(1, m):
        score = w * d2
        total = score.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=score / total))
        centers[j] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centers[j]) ** 2, axis=1))
    return centers


def fit_weighted_vbem(
    points,
    weights,
    m_max: int,
    priors: MixturePriors | None = None,
    tol: float = 1e-5,
    max_iter: int = 300,
    rng: np.random.Generator | None = None,
) -> WeightedMixtureState:
    """Alternate E and M steps from a weighted k-means++ initialization.

    Weights are rescaled to sum to n before fitting so a single prior setting
    behaves consistently across batch sizes; normalized importance weights are
    the intended input. Convergence is declared when the largest
    responsibility change drops below ``tol``.
    """
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    w = np.asarray(weights, dtype=np.float64)
    n, d = X.shape
    if m_max < 1:
        raise InvalidInputError("m_max must be >= 1")
    if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
        raise InvalidInputError("weights must be non-negative with positive total")
    rng = rng if rng is not None else np.random.default_rng(0)
    w = w * (n / w.sum())
    if priors is None:
        priors = default_priors(X, w)

    centers = _weighted_kmeanspp(X, w, m_max, rng)
    d2 = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    resp = np.zeros((n, m_max))
    resp[np.arange(n), np.argmin(d2, axis=1)] = 1.0

    state = vb_m_step(X, w, resp, priors)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new_resp = vb_e_step(X, state)
        delta = np.max(np.abs(new_resp - state.resp))
        state = vb_m_step(X, w, new_resp, priors)
        if delta < tol:
            converged = True
            break
    if not converged:
        log.warning("weighted VBEM stopped at max_iter=%d without converging", max_iter)
    state.converged = converged
    state.n_iter = it
    return state


@dataclass
class GaussianMixture:
    """Plain Gaussian mixture with precision parameterization."""

    weights: np.ndarray     # (m,)
    means: np.ndarray       # (m, d)
    precisions: np.ndarray  # (m, d, d)
    ll_path: np.ndarray | None = None  # weighted log-likelihood per EM iteration

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def log_pdf(self, points) -> np.ndarray:
        X = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n, d = X.shape
        comp = np.empty((n, self.n_components))
        for l in range(self.n_components):
            L = cholesky(self.precisions[l], lower=True)
            logdet = 2.0 * np.sum(np.log(np.diag(L)))
            diff = X - self.means[l]
            maha = np.sum((diff @ L) ** 2, axis=1)
            comp[:, l] = (
                np.log(self.weights[l] + 1e-300)
                - 0.5 * d * np.log(2.0 * np.pi)
                + 0.5 * logdet
                - 0.5 * maha
            )
        return logsumexp(comp, axis=1)


def ml_em_oracle(
    points,
    weights,
    m: int,
    tol: float = 1e-8,
    max_iter: int = 200,
    rng: np.random.Generator | None = None,
) -> GaussianMixture:
    """Weighted maximum-likelihood EM; independent check of the VB estimate.

    Weights scale each sample's sufficient statistics. The weighted
    log-likelihood is non-decreasing over iterations; covariance collapse is
    caught by flooring eigenvalues at 1e-8 (logged when it happens).
    """
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    w = np.asarray(weights, dtype=np.float64)
    n, d = X.shape
    if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
        raise InvalidInputError("weights must be non-negative with positive total")
    rng = rng if rng is not None else np.random.default_rng(0)

    centers = _weighted_kmeanspp(X, w, m, rng)
    d2 = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    resp = np.zeros((n, m))
    resp[np.arange(n), np.argmin(d2, axis=1)] = 1.0

    mix = np.full(m, 1.0 / m)
    means = centers.copy()
    covs = np.empty((m, d, d))
    ll_path = []

    def m_step(resp):
        nonlocal mix, means, covs
        wr = w[:, None] * resp
        Nk = wr.sum(axis=0)
        mix = Nk / w.sum()
        for l in range(m):
            if Nk[l] <= 0:
                means[l] = X[int(rng.integers(n))]
                covs[l] = np.eye(d) * max(X.var(), 1e-8)
                continue
            means[l] = wr[:, l] @ X / Nk[l]
            diff = X - means[l]
            C = (wr[:, l][:, None] * diff).T @ diff / Nk[l]
            C = 0.5 * (C + C.T)
            evals, evecs = np.linalg.eigh(C)
            if evals.min() < 1e-8:
                log.info("ml_em_oracle: flooring covariance of component %d", l)
                evals = np.maximum(evals, 1e-8)
                C = (evecs * evals) @ evecs.T
            covs[l] = C

    def e_step():
        logp = np.empty((n, m))
        for l in range(m):
            L = cholesky(covs[l], lower=True)
            logdet = 2.0 * np.sum(np.log(np.diag(L)))
            diff = (X - means[l]).T
            y = solve_triangular(L, diff, lower=True)
            maha = np.sum(y * y, axis=0)
            logp[:, l] = np.log(mix[l] + 1e-300) - 0.5 * (d * np.log(2 * np.pi) + logdet + maha)
        norm = logsumexp(logp, axis=1)
        return np.exp(logp - norm[:, None]), float(w @ norm)

    m_step(resp)
    prev_ll = -np.inf
    for _ in range(max_iter):
        resp, ll = e_step()
        ll_path.append(ll)
        if ll - prev_ll < tol * (1.0 + abs(ll)) and np.isfinite(prev_ll):
            break
        prev_ll = ll
        m_step(resp)
    precs = np.array([np.linalg.inv(C) for C in covs])
    precs = 0.5 * (precs + np.transpose(precs, (0, 2, 1)))
    return GaussianMixture(weights=mix, means=means.copy(), precisions=precs, ll_path=np.array(ll_path))


def assign_options(state: WeightedMixtureState) -> np.ndarray:
    """Hard option ids o_i = argmax_l resp[i, l]; ties go to the lowest index."""
    return np.argmax(state.resp, axis=1)


def prune_clusters(state: WeightedMixtureState, min_rel_mass: float = 0.02) -> np.ndarray:
    """Clusters holding at least ``min_rel_mass`` of the total effective count.

    The highest-mass cluster always survives, so the result is never empty.
    """
    total = state.gamma_hat.sum()
    if total <= 0:
        return np.array([0])
    rel = state.gamma_hat / total
    survivors = np.flatnonzero(rel >= min_rel_mass)
    if len(survivors) == 0:
        survivors = np.array([int(np.argmax(rel))])
    return survivors
