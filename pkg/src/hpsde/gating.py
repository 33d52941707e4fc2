"""GP return model and option selection.

The return surface over z = [xi; s] is modeled with a squared-exponential GP
whose hyperparameters are tuned by gradient ascent on the log marginal
likelihood. Because a Gaussian option policy induces a Gaussian distribution
over z for a fixed context, the expected return of executing an option can be
computed in closed form (exact first and second moments of the posterior mean
under Gaussian inputs). Selection is greedy, UCB, or a softmax baseline over
those expected returns.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .core import InvalidInputError, NumericalError

__all__ = [
    "GpHyper",
    "GpReturnModel",
    "UncertainInput",
    "se_kernel",
    "gp_fit",
    "gp_predict",
    "gp_log_marginal_likelihood",
    "gp_lml_grad",
    "gp_optimize_hypers",
    "gp_predict_uncertain",
    "gate_scores_batch",
    "softmax_probs_from_means",
    "select_option",
    "select_options_batch",
]

log = logging.getLogger(__name__)

_JITTERS = (1e-10, 1e-8, 1e-6)
_LOG_BOUNDS = (math.log(1e-4), math.log(1e4))


@dataclass(frozen=True)
class GpHyper:
    """Isotropic squared-exponential kernel hyperparameters."""

    l: float = 1.0
    sigma_f: float = 1.0
    sigma_n: float = 0.1

    def __post_init__(self):
        if min(self.l, self.sigma_f, self.sigma_n) <= 0:
            raise InvalidInputError("GP hyperparameters must be strictly positive")

    def as_log_array(self) -> np.ndarray:
        return np.log([self.l, self.sigma_f, self.sigma_n])

    @classmethod
    def from_log_array(cls, theta) -> "GpHyper":
        l, sf, sn = np.exp(np.asarray(theta, dtype=np.float64))
        return cls(float(l), float(sf), float(sn))


def se_kernel(z_i, z_j, hyper: GpHyper, same_index: bool = False) -> float:
    """sigma_f^2 exp(-||zi - zj||^2 / (2 l^2)), plus sigma_n^2 on training pairs.

    The noise term applies only when ``same_index`` marks the two arguments as
    the same training row; coincidentally equal inputs do not receive it.
    """
    a = np.asarray(z_i, dtype=np.float64)
    b = np.asarray(z_j, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError("kernel arguments must have equal dimension")
    val = hyper.sigma_f**2 * math.exp(-float(np.sum((a - b) ** 2)) / (2.0 * hyper.l**2))
    if same_index:
        val += hyper.sigma_n**2
    return val


def _sqdist(A, B) -> np.ndarray:
    aa = np.sum(A * A, axis=1)[:, None]
    bb = np.sum(B * B, axis=1)[None, :]
    return np.maximum(aa + bb - 2.0 * A @ B.T, 0.0)


@dataclass
class GpReturnModel:
    """Fitted GP over standardized inputs with cached factorization."""

    z_train: np.ndarray   # (n, d) standardized training inputs
    y: np.ndarray         # (n,) centered targets
    hyper: GpHyper
    chol: np.ndarray      # lower Cholesky of K + sigma_n^2 I
    alpha: np.ndarray     # (K + sigma_n^2 I)^-1 y
    k_inv: np.ndarray     # (K + sigma_n^2 I)^-1
    y_mean: float
    z_shift: np.ndarray
    z_scale: np.ndarray

    @property
    def n_train(self) -> int:
        return len(self.y)

    def standardize(self, Z) -> np.ndarray:
        return (np.asarray(Z, dtype=np.float64) - self.z_shift) / self.z_scale


def _standardizer(Z: np.ndarray, standardize: bool):
    if not standardize:
        return np.zeros(Z.shape[1]), np.ones(Z.shape[1])
    shift = Z.mean(axis=0)
    scale = Z.std(axis=0)
    scale[scale < 1e-12] = 1.0
    return shift, scale


def _kernel_matrix(Zs: np.ndarray, hyper: GpHyper):
    D = _sqdist(Zs, Zs)
    E = np.exp(-D / (2.0 * hyper.l**2))
    K = hyper.sigma_f**2 * E
    K[np.diag_indices_from(K)] += hyper.sigma_n**2
    return K, E, D


def gp_fit(Z, R, hyper: GpHyper, standardize: bool = True) -> GpReturnModel:
    """Fit the GP: center targets on their mean, factorize K + sigma_n^2 I.

    Cholesky failures escalate the diagonal jitter from 1e-10 to 1e-6 before
    giving up.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    R = np.asarray(R, dtype=np.float64)
    if len(Z) != len(R) or len(R) < 1:
        raise InvalidInputError("need matching, non-empty inputs and targets")
    shift, scale = _standardizer(Z, standardize)
    Zs = (Z - shift) / scale
    y_mean = float(R.mean())
    y = R - y_mean
    K, _, _ = _kernel_matrix(Zs, hyper)
    L = None
    for jit in _JITTERS:
        try:
            L = cholesky(K + jit * np.eye(len(K)), lower=True)
            break
        except Exception:
            continue
    if L is None:
        raise NumericalError("GP kernel factorization failed at maximum jitter")
    alpha = cho_solve((L, True), y)
    k_inv = cho_solve((L, True), np.eye(len(K)))
    return GpReturnModel(
        z_train=Zs, y=y, hyper=hyper, chol=L, alpha=alpha, k_inv=k_inv,
        y_mean=y_mean, z_shift=shift, z_scale=scale,
    )


def gp_predict(model: GpReturnModel, z):
    """Posterior mean and variance at one point (d,) or a batch (m, d)."""
    single = np.asarray(z).ndim == 1
    Zq = np.atleast_2d(np.asarray(z, dtype=np.float64))
    Zq = model.standardize(Zq)
    h = model.hyper
    Kx = h.sigma_f**2 * np.exp(-_sqdist(Zq, model.z_train) / (2.0 * h.l**2))
    mean = model.y_mean + Kx @ model.alpha
    v = solve_triangular(model.chol, Kx.T, lower=True)
    var = h.sigma_f**2 - np.sum(v * v, axis=0)
    neg = var < -1e-10
    if np.any(neg):
        log.warning("clamping %d negative GP variances (min %.3e)", neg.sum(), var.min())
    var = np.maximum(var, 0.0)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def _lml_terms(Z, R, hyper: GpHyper, standardize: bool = True):
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    R = np.asarray(R, dtype=np.float64)
    shift, scale = _standardizer(Z, standardize)
    Zs = (Z - shift) / scale
    y = R - R.mean()
    K, E, D = _kernel_matrix(Zs, hyper)
    try:
        L = cholesky(K + 1e-12 * np.eye(len(K)), lower=True)
    except Exception as e:
        raise NumericalError("kernel factorization failed in marginal likelihood") from e
    alpha = cho_solve((L, True), y)
    lml = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * len(y) * math.log(2 * math.pi)
    return lml, alpha, L, E, D


def gp_log_marginal_likelihood(Z, R, hyper: GpHyper, standardize: bool = True) -> float:
    return _lml_terms(Z, R, hyper, standardize)[0]


def gp_lml_grad(Z, R, hyper: GpHyper, standardize: bool = True):
    """Log marginal likelihood and its gradient w.r.t. log hyperparameters."""
    lml, alpha, L, E, D = _lml_terms(Z, R, hyper, standardize)
    n = len(alpha)
    K_inv = cho_solve((L, True), np.eye(n))
    M = np.outer(alpha, alpha) - K_inv
    dK_l = hyper.sigma_f**2 * E * (D / hyper.l**2)
    dK_sf = 2.0 * hyper.sigma_f**2 * E
    grad = np.array([
        0.5 * np.sum(M * dK_l),
        0.5 * np.sum(M * dK_sf),
        0.5 * np.trace(M) * 2.0 * hyper.sigma_n**2,
    ])
    return lml, grad


def gp_optimize_hypers(Z, R, init: GpHyper, iters: int = 40,
                       l_bounds: tuple[float, float] | None = None) -> GpHyper:
    """Backtracking gradient ascent on the marginal likelihood in log space.

    Never returns hyperparameters with a lower likelihood than the (bounded)
    starting point; a non-finite gradient falls back to ``init`` with a
    warning. ``l_bounds`` optionally boxes the length scale, in standardized
    input units: short likelihood-optimal length scales can be useless for
    ranking points away from the training data, so callers may floor l at a
    typical inter-point distance.
    """
    if len(np.atleast_1d(R)) < 3:
        raise InvalidInputError("hyperparameter optimization needs at least 3 samples")
    lo = np.array([_LOG_BOUNDS[0]] * 3)
    hi = np.array([_LOG_BOUNDS[1]] * 3)
    if l_bounds is not None:
        if not (0 < l_bounds[0] <= l_bounds[1]):
            raise InvalidInputError("bad length scale bounds")
        lo[0], hi[0] = math.log(l_bounds[0]), math.log(l_bounds[1])
    theta = np.clip(init.as_log_array(), lo, hi)
    best_theta = theta.copy()
    try:
        best_lml, grad = gp_lml_grad(Z, R, GpHyper.from_log_array(theta))
    except NumericalError:
        return GpHyper.from_log_array(theta)
    step = 0.1
    cur_lml = best_lml
    for _ in range(iters):
        if not np.all(np.isfinite(grad)):
            log.warning("non-finite marginal likelihood gradient; keeping initial hypers")
            return GpHyper.from_log_array(best_theta)
        gnorm = float(np.linalg.norm(grad))
        if gnorm < 1e-10:
            break
        improved = False
        while step > 1e-8:
            cand = np.clip(theta + step * grad / max(gnorm, 1.0), lo, hi)
            try:
                lml2 = gp_log_marginal_likelihood(Z, R, GpHyper.from_log_array(cand))
            except NumericalError:
                lml2 = -np.inf
            if lml2 > cur_lml:
                improved = True
                theta = cand
                cur_lml = lml2
                step = min(step * 1.5, 1.0)
                break
            step *= 0.5
        if not improved:
            break
        if cur_lml > best_lml:
            best_lml = cur_lml
            best_theta = theta.copy()
        try:
            _, grad = gp_lml_grad(Z, R, GpHyper.from_log_array(theta))
        except NumericalError:
            break
    return GpHyper.from_log_array(best_theta)


@dataclass(frozen=True)
class UncertainInput:
    """Gaussian input z ~ N(mu_z, Sigma_z); the context block of Sigma_z is zero."""

    mu_z: np.ndarray
    sigma_z: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu_z, dtype=np.float64)
        S = np.asarray(self.sigma_z, dtype=np.float64)
        if S.shape != (len(mu), len(mu)):
            raise InvalidInputError("sigma_z must be square and match mu_z")
        if not np.allclose(S, S.T, atol=1e-10):
            raise InvalidInputError("sigma_z must be symmetric")
        if np.linalg.eigvalsh(S).min() < -1e-10:
            raise InvalidInputError("sigma_z must be positive semi-definite")
        object.__setattr__(self, "mu_z", mu)
        object.__setattr__(self, "sigma_z", 0.5 * (S + S.T))


class _UncertainBatch:
    """Exact moments of the GP posterior under N(mu, Sigma) inputs.

    Shares one input covariance across a batch of means, which makes the
    per-context cost of the second moment O(n^2) instead of building a fresh
    n x n matrix for every query. With kernel k and Lam = l^2 I:

      q_i  = sf^2 |I + Sigma/l^2|^(-1/2)
             exp(-1/2 (mu - z_i)^T (Lam + Sigma)^-1 (mu - z_i))
      Q_ij = sf^4 |I + 2 Sigma/l^2|^(-1/2) exp(-||z_i - z_j||^2 / (4 l^2))
             exp(-1/2 (zhat_ij - mu)^T (Lam/2 + Sigma)^-1 (zhat_ij - mu)),
      zhat_ij = (z_i + z_j) / 2,

    giving mean = q^T alpha and
    var = sf^2 - tr(K^-1 Q) + alpha^T Q alpha - (q^T alpha)^2.
    """

    def __init__(self, model: GpReturnModel, sigma_z: np.ndarray):
        self.model = model
        h = model.hyper
        d = model.z_train.shape[1]
        S = np.asarray(sigma_z, dtype=np.float64) / np.outer(model.z_scale, model.z_scale)
        l2 = h.l**2
        eye = np.eye(d)

        self.C1 = np.linalg.inv(l2 * eye + S)
        det1 = np.linalg.det(eye + S / l2)
        self.c_q = h.sigma_f**2 / math.sqrt(max(det1, 1e-300))

        B = 0.5 * l2 * eye + S
        self.Binv = np.linalg.inv(B)
        det2 = np.linalg.det(eye + 2.0 * S / l2)
        self.c2 = h.sigma_f**4 / math.sqrt(max(det2, 1e-300))

        Zs = model.z_train
        G = Zs @ self.Binv @ Zs.T                  # (n, n)
        gd = np.diag(G)
        self.base = -_sqdist(Zs, Zs) / (4.0 * l2) - (gd[:, None] + gd[None, :] + 2.0 * G) / 8.0
        P = np.exp(self.base)
        self.M_tr = model.k_inv * P
        self.M_qf = np.outer(model.alpha, model.alpha) * P
        self.ZB = Zs @ self.Binv                   # (n, d)
        self.ZC = Zs @ self.C1                     # (n, d)
        self.z_quad_C = np.einsum("nd,nd->n", self.ZC, Zs)

    def moments(self, mus_std: np.ndarray, with_variance: bool):
        """mus_std: (B, d) standardized means; returns (means, vars or None)."""
        model = self.model
        h = model.hyper
        quad = (
            np.einsum("bd,bd->b", mus_std @ self.C1, mus_std)[:, None]
            - 2.0 * mus_std @ self.ZC.T
            + self.z_quad_C[None, :]
        )
        q = self.c_q * np.exp(-0.5 * quad)  # exponent is <= 0 by construction
        mean = model.y_mean + q @ model.alpha
        if not with_variance:
            return mean, None
        V = self.ZB @ mus_std.T                     # (n, B)
        t = np.einsum("bd,bd->b", mus_std @ self.Binv, mus_std)
        W = 0.5 * V - 0.25 * t[None, :]
        # The separable factors exp(W_i) exp(W_j) can individually overflow
        # even though their pairing with exp(base_ij) is bounded; route the
        # rare hot columns through the direct pairwise exponent instead.
        safe = W.max(axis=0) <= 30.0
        tr_term = np.empty(len(t))
        qf_term = np.empty(len(t))
        if np.any(safe):
            Ee = np.exp(W[:, safe])
            tr_term[safe] = self.c2 * np.einsum("nb,nb->b", Ee, self.M_tr @ Ee)
            qf_term[safe] = self.c2 * np.einsum("nb,nb->b", Ee, self.M_qf @ Ee)
        for b in np.flatnonzero(~safe):
            Q = self.c2 * np.exp(self.base + W[:, b][:, None] + W[:, b][None, :])
            tr_term[b] = float(np.sum(model.k_inv * Q))
            qf_term[b] = float(model.alpha @ Q @ model.alpha)
        var = h.sigma_f**2 - tr_term + qf_term - (q @ model.alpha) ** 2
        return mean, np.maximum(var, 0.0)


def gp_predict_uncertain(model: GpReturnModel, u: UncertainInput):
    """Mean and variance of the return under a Gaussian input distribution."""
    mu = model.standardize(u.mu_z[None, :])
    batch = _UncertainBatch(model, u.sigma_z)
    mean, var = batch.moments(mu, with_variance=True)
    return float(mean[0]), float(var[0])


def _option_inputs(policy, contexts: np.ndarray):
    """mu_z rows [mean_o(s); s] and the shared Sigma_z block for one option."""
    means = policy.mean_batch(contexts)
    mus = np.hstack([means, contexts])
    d_xi = policy.d_xi
    d_z = mus.shape[1]
    sigma = np.zeros((d_z, d_z))
    sigma[:d_xi, :d_xi] = policy.cov
    return mus, sigma


def gate_scores_batch(policies, gp: GpReturnModel, contexts, with_variance: bool):
    """Expected return (and its sd) of executing each option at each context.

    Returns (means, sds), each (n_contexts, n_options); sds is zero-filled
    when ``with_variance`` is off.
    """
    S = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    if len(policies) == 0:
        raise InvalidInputError("need at least one option policy")
    n_ctx, n_opt = len(S), len(policies)
    means = np.empty((n_ctx, n_opt))
    sds = np.zeros((n_ctx, n_opt))
    for o, pol in enumerate(policies):
        mus, sigma = _option_inputs(pol, S)
        batch = _UncertainBatch(gp, sigma)
        m, v = batch.moments(gp.standardize(mus), with_variance=with_variance)
        means[:, o] = m
        if v is not None:
            sds[:, o] = np.sqrt(v)
    return means, sds


def softmax_probs_from_means(means: np.ndarray, temperature: float) -> np.ndarray:
    """Row-wise softmax of gate scores at the given temperature."""
    logits = means / temperature
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def select_options_batch(
    policies,
    gp: GpReturnModel,
    contexts,
    mode: str = "greedy",
    kappa: float = 1.0,
    temperature: float = 1.0,
    rng: np.random.Generator | None = None,
):
    """Option choice for every context row; ties resolve to the lowest id."""
    mode = mode.lower()
    if mode not in ("greedy", "ucb", "softmax"):
        raise InvalidInputError(f"unknown gating mode {mode!r}")
    means, sds = gate_scores_batch(policies, gp, contexts, with_variance=(mode == "ucb"))
    if mode == "greedy":
        return np.argmax(means, axis=1)
    if mode == "ucb":
        return np.argmax(means + kappa * sds, axis=1)
    if rng is None:
        raise InvalidInputError("softmax gating requires an rng")
    probs = softmax_probs_from_means(means, temperature)
    picks = np.empty(len(means), dtype=np.int64)
    for i in range(len(means)):
        picks[i] = rng.choice(len(policies), p=probs[i])
    return picks


def select_option(
    policies,
    gp: GpReturnModel,
    s,
    mode: str = "greedy",
    kappa: float = 1.0,
    temperature: float = 1.0,
    rng: np.random.Generator | None = None,
) -> int:
    """Pick the option for one context; see ``select_options_batch``."""
    picks = select_options_batch(
        policies, gp, np.atleast_1d(np.asarray(s, dtype=np.float64))[None, :],
        mode=mode, kappa=kappa, temperature=temperature, rng=rng,
    )
    return int(picks[0])
