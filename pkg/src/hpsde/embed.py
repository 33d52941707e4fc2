"""Laplacian-eigenmaps embedding of joint (context, parameter) points.

Used as an optional preprocessing step before mixture estimation when sample
clusters are not Gaussian in the raw space. The embedding is recomputed from
scratch on the full dataset whenever it is used, so there is no out-of-sample
extension path.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .core import InvalidInputError, NumericalError

__all__ = ["EmbeddingConfig", "EmbeddingResult", "laplacian_eigenmaps"]

log = logging.getLogger(__name__)

_DENSE_LIMIT = 2000


@dataclass(frozen=True)
class EmbeddingConfig:
    k_nn: int = 10
    heat_bandwidth: float | None = None  # None: median squared pairwise distance
    out_dim: int = 2

    def __post_init__(self):
        if self.k_nn < 1:
            raise InvalidInputError("k_nn must be >= 1")
        if self.out_dim < 1:
            raise InvalidInputError("out_dim must be >= 1")
        if self.heat_bandwidth is not None and self.heat_bandwidth <= 0:
            raise InvalidInputError("heat_bandwidth must be positive")


@dataclass(frozen=True)
class EmbeddingResult:
    points: np.ndarray       # (n_used, out_dim) embedded coordinates
    indices: np.ndarray      # (n_used,) rows of the input actually embedded
    eigenvalues: np.ndarray  # generalized eigenvalues incl. the skipped null one
    null_vector: np.ndarray  # eigenvector of the (near-)zero eigenvalue


def _median_sq_distance(X: np.ndarray) -> float:
    # subsample deterministically to bound the O(n^2) pairwise computation
    if len(X) > _DENSE_LIMIT:
        stride = int(np.ceil(len(X) / _DENSE_LIMIT))
        X = X[::stride]
    d2 = pdist(X, metric="sqeuclidean")
    med = float(np.median(d2))
    return med if med > 0 else 1.0


def laplacian_eigenmaps(points, cfg: EmbeddingConfig) -> EmbeddingResult:
    """Spectral embedding from the symmetrized k-NN heat-kernel graph.

    Solves L v = lambda D v for the graph Laplacian L = D - W and returns the
    eigenvectors of the out_dim smallest non-null eigenvalues. If the graph is
    disconnected only the largest component is embedded (with a warning) and
    ``indices`` reports which input rows survived. Eigenvector signs are fixed
    by making the largest-magnitude entry positive.
    """
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = len(X)
    if n <= cfg.out_dim + 1:
        raise InvalidInputError(f"need more than out_dim + 1 = {cfg.out_dim + 1} points")

    bw = cfg.heat_bandwidth if cfg.heat_bandwidth is not None else _median_sq_distance(X)
    k = min(cfg.k_nn, n - 1)
    tree = cKDTree(X)
    dist, nbr = tree.query(X, k=k + 1)
    dist, nbr = dist[:, 1:], nbr[:, 1:]  # drop self matches

    rows = np.repeat(np.arange(n), k)
    cols = nbr.ravel()
    vals = np.exp(-(dist.ravel() ** 2) / bw)
    W = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    W = W.maximum(W.T)  # symmetrize

    n_comp, labels = connected_components(W, directed=False)
    keep = np.arange(n)
    if n_comp > 1:
        largest = np.bincount(labels).argmax()
        keep = np.flatnonzero(labels == largest)
        log.warning(
            "k-NN graph has %d components; embedding the largest (%d of %d points)",
            n_comp, len(keep), n,
        )
        W = W[np.ix_(keep, keep)].tocsr()
        if len(keep) <= cfg.out_dim + 1:
            raise InvalidInputError("largest connected component is too small to embed")

    deg = np.asarray(W.sum(axis=1)).ravel()
    d_isqrt = 1.0 / np.sqrt(deg)
    m = len(deg)
    n_eigs = cfg.out_dim + 1

    if m <= _DENSE_LIMIT:
        Wd = W.toarray()
        L_sym = np.eye(m) - (d_isqrt[:, None] * Wd) * d_isqrt[None, :]
        L_sym = 0.5 * (L_sym + L_sym.T)
        evals, U = eigh(L_sym, subset_by_index=(0, n_eigs - 1))
    else:
        L_sym = sp.eye(m) - sp.diags(d_isqrt) @ W @ sp.diags(d_isqrt)
        try:
            evals, U = sp.linalg.eigsh(L_sym.tocsc(), k=n_eigs, sigma=-1e-6, which="LM")
        except Exception as e:
            raise NumericalError("sparse eigensolver failed on the graph Laplacian") from e
        order = np.argsort(evals)
        evals, U = evals[order], U[:, order]

    V = d_isqrt[:, None] * U  # generalized eigenvectors of (L, D)
    # normalize to v^T D v = 1 and fix each sign deterministically
    for j in range(V.shape[1]):
        nrm = np.sqrt(V[:, j] @ (deg * V[:, j]))
        V[:, j] /= nrm
        if V[np.argmax(np.abs(V[:, j])), j] < 0:
            V[:, j] = -V[:, j]

    return EmbeddingResult(
        points=V[:, 1:n_eigs],
        indices=keep,
        eigenvalues=evals,
        null_vector=V[:, 0],
    )
