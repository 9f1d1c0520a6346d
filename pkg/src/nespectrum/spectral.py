"""Laplacian eigenmaps and the no-repulsion limit of exaggerated t-SNE.

For a symmetric affinity matrix ``V`` with degrees ``D``:

* ``L = D - V`` is the graph Laplacian,
* ``L_norm = D^-1/2 L D^-1/2`` its normalized form,
* ``M = I - eta D + eta V`` the linear map that gradient descent on the
  attraction alone applies to each embedding column.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import eigsh

from .affinity import AffinityGraph
from .data_io import _orient_columns
from .knn import NeighborGraph

log = logging.getLogger(__name__)

__all__ = ["GraphOperators", "build_operators", "laplacian_eigenmaps", "tsne_limit_iteration"]

DENSE_MAX_N = 2000
DEFAULT_ETA_FRACTION = 0.9


def _affinity_matrix(A):
    if isinstance(A, AffinityGraph):
        return A.to_csr()
    if isinstance(A, NeighborGraph):
        if A.directed:
            raise ValueError("expected an undirected graph")
        return A.adjacency()
    V = sparse.csr_matrix(A, dtype=float)
    if abs(V - V.T).max() > 1e-12 * max(abs(V).max(), 1.0):
        raise ValueError("affinity matrix must be symmetric")
    return V


@dataclass(frozen=True)
class GraphOperators:
    """Sparse ``V``, degrees and the derived operators as products."""

    V: sparse.csr_matrix
    degrees: np.ndarray
    eta: float

    @property
    def n(self):
        return self.V.shape[0]

    def laplacian(self):
        return (sparse.diags(self.degrees) - self.V).tocsr()

    def normalized_laplacian(self):
        s = 1.0 / np.sqrt(self.degrees)
        S = sparse.diags(s)
        return (sparse.identity(self.n) - S @ self.V @ S).tocsr()

    def markov(self):
        return (sparse.identity(self.n) - self.eta * sparse.diags(self.degrees) + self.eta * self.V).tocsr()

    def L_matvec(self, x):
        return self.degrees[:, None] * x - self.V @ x if x.ndim == 2 else self.degrees * x - self.V @ x

    def M_matvec(self, x):
        return x - self.eta * self.L_matvec(x)


def build_operators(A, eta=None):
    """Operators for affinities ``A`` (``AffinityGraph``, undirected ``NeighborGraph`` or matrix).

    ``eta`` defaults to ``0.9 / max(D)``. Values above ``1 / max(D)``, where
    ``M`` can turn negative, are rejected.
    """
    V = _affinity_matrix(A)
    deg = np.asarray(V.sum(axis=1)).ravel()
    if np.any(deg <= 0):
        raise ValueError("every node needs positive degree")
    eta_max = 1.0 / deg.max()
    if eta is None:
        eta = DEFAULT_ETA_FRACTION * eta_max
    elif not 0 < eta <= eta_max * (1 + 1e-12):
        raise ValueError(f"eta must be in (0, {float(eta_max)!r}] for a nonnegative M, got {eta!r}")
    return GraphOperators(V, deg, float(eta))


def laplacian_eigenmaps(A, n_components=2, dense_max_n=DENSE_MAX_N, seed=0):
    """Generalized eigenvectors of ``L a = lambda D a`` with the smallest eigenvalues.

    Solves ``L_norm b = lambda b`` and maps back with ``a = D^-1/2 b``. The
    first (trivial) eigenvector is dropped and the next ``n_components``
    returned as unit-length columns with their largest-magnitude entry
    positive. A disconnected graph has several zero eigenvalues; only the
    first is dropped, so each component lands on a single point, and a
    warning is emitted.

    Returns
    -------
    Y : ndarray of shape (n, n_components)
    eigenvalues : ndarray of shape (n_components,), nondecreasing
    """
    ops = build_operators(A)
    n = ops.n
    if not 1 <= n_components < n:
        raise ValueError(f"n_components must be in [1, {n - 1}]")
    n_comp, _ = csgraph.connected_components(ops.V, directed=False)
    if n_comp > 1:
        warnings.warn(
            f"graph has {n_comp} connected components; the embedding collapses each component to a point",
            RuntimeWarning,
            stacklevel=2,
        )
    k = n_components + 1
    s = 1.0 / np.sqrt(ops.degrees)
    if n <= dense_max_n:
        Lnorm = ops.normalized_laplacian().toarray()
        Lnorm = 0.5 * (Lnorm + Lnorm.T)
        evals, evecs = np.linalg.eigh(Lnorm)
        evals, evecs = evals[:k], evecs[:, :k]
    else:
        S = sparse.diags(s)
        Anorm = (S @ ops.V @ S).tocsr()
        rng = np.random.default_rng(seed)
        v0 = np.sqrt(ops.degrees) + 1e-3 * rng.standard_normal(n)
        mu, evecs = eigsh(Anorm, k=k, which="LA", v0=v0, tol=1e-12, maxiter=100 * n)
        order = np.argsort(mu)[::-1]
        evals, evecs = 1.0 - mu[order], evecs[:, order]
    evals = np.clip(evals, 0.0, None)
    a = evecs[:, 1:] * s[:, None]
    a /= np.linalg.norm(a, axis=0)
    return _orient_columns(a), evals[1:]


def tsne_limit_iteration(ops, Y0, steps, orthogonalize=True):
    """Iterate ``Y <- M Y`` with the constant direction projected out.

    After each step the columns are centred, optionally Gram-Schmidt
    orthogonalized, and rescaled to unit length. Without orthogonalization
    every column drifts to the same slowest-decaying eigenvector of ``M``.
    """
    Y = np.array(Y0, dtype=float, copy=True)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != ops.n:
        raise ValueError(f"Y0 has {Y.shape[0]} rows, operators have {ops.n}")

    def project(Y):
        Y = Y - Y.mean(axis=0)
        for c in range(Y.shape[1]):
            if orthogonalize:
                for b in range(c):
                    Y[:, c] -= (Y[:, b] @ Y[:, c]) * Y[:, b]
            norm = np.linalg.norm(Y[:, c])
            if norm <= 1e-300:
                return None
            Y[:, c] /= norm
        return Y

    P = project(Y)
    if P is None:
        warnings.warn("degenerate start: a column is constant after removing the trivial direction", RuntimeWarning, stacklevel=2)
        return np.zeros_like(Y)
    Y = P
    for _ in range(int(steps)):
        Y = project(ops.M_matvec(Y))
        if Y is None:
            warnings.warn("iteration collapsed to the trivial direction", RuntimeWarning, stacklevel=2)
            return np.zeros((ops.n, P.shape[1]))
    return _orient_columns(Y)
