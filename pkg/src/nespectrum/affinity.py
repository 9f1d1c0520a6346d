"""Symmetric affinities from kNN graphs: perplexity-calibrated Gaussian and binary."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

log = logging.getLogger(__name__)

__all__ = [
    "AffinityGraph",
    "binary_affinities",
    "calibrate_bandwidths",
    "normalized_view",
    "perplexity_calibrate",
    "read_affinities",
    "write_affinities",
]

SIGMA_BOUNDS = (1e-20, 1e20)
MAX_BISECTION_ITERS = 200
PERPLEXITY_RTOL = 1e-5

GAUSSIAN = "gaussian-perplexity"
BINARY = "binary-knn"


@dataclass(frozen=True)
class AffinityGraph:
    """Symmetric sparse affinities, stored once per unordered pair ``i < j``.

    ``total_mass`` is the sum over both orientations, i.e. ``sum_ij v_ij``
    over ordered pairs. For Gaussian affinities it equals ``n``.
    """

    n: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    kind: str
    sigmas: np.ndarray | None = None
    flagged: np.ndarray | None = None
    perplexity: float | None = None
    total_mass: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total_mass", 2.0 * float(np.sum(self.values)))

    @property
    def n_pairs(self):
        return len(self.values)

    def expanded(self):
        """``(rows, cols, v)`` over both orientations, sorted by row then column."""
        r = np.concatenate([self.rows, self.cols])
        c = np.concatenate([self.cols, self.rows])
        v = np.concatenate([self.values, self.values])
        order = np.lexsort((c, r))
        return r[order], c[order], v[order]

    def to_csr(self, normalized=False):
        """Symmetric ``csr_matrix`` of ``v`` (or of ``p`` if ``normalized``)."""
        r, c, v = self.expanded()
        if normalized:
            v = v / self._norm()
        return sparse.csr_matrix((v, (r, c)), shape=(self.n, self.n))

    def _norm(self):
        return float(self.n) if self.kind == GAUSSIAN else self.total_mass

    def row_mass(self):
        """``D_ii = sum_j v_ij``."""
        out = np.zeros(self.n)
        np.add.at(out, self.rows, self.values)
        np.add.at(out, self.cols, self.values)
        return out


def _perplexity_of_beta(d, beta):
    """Perplexity exp(H) of rows of conditional probabilities exp(-beta d)."""
    shifted = d - d.min(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", over="ignore"):
        e = np.exp(-beta[:, None] * shifted)
        s = e.sum(axis=1)
        h = np.log(s) + beta * (shifted * e).sum(axis=1) / s
    return np.exp(h)


def calibrate_bandwidths(dists, perplexity, max_iter=MAX_BISECTION_ITERS):
    """Per-row Gaussian bandwidths matching a target perplexity.

    ``dists`` holds squared distances, one row per point. Bisection runs on
    ``log(sigma)`` within ``SIGMA_BOUNDS``. Entropy is evaluated in nats.

    Returns
    -------
    sigmas : ndarray of shape (n,)
    flagged : bool ndarray of shape (n,)
        Rows where ``|perplexity - target| > PERPLEXITY_RTOL * target``.
    """
    dists = np.asarray(dists, dtype=float)
    n = dists.shape[0]
    lo = np.full(n, np.log(SIGMA_BOUNDS[0]))
    hi = np.full(n, np.log(SIGMA_BOUNDS[1]))
    best_sigma = np.full(n, 1.0)
    best_err = np.full(n, np.inf)
    active = np.ones(n, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        mid = 0.5 * (lo[idx] + hi[idx])
        sigma = np.exp(mid)
        perp = _perplexity_of_beta(dists[idx], 1.0 / (2.0 * sigma**2))
        err = np.abs(perp - perplexity)
        better = err < best_err[idx]
        best_err[idx[better]] = err[better]
        best_sigma[idx[better]] = sigma[better]
        # larger sigma -> flatter distribution -> larger perplexity
        too_wide = perp > perplexity
        hi[idx[too_wide]] = mid[too_wide]
        lo[idx[~too_wide]] = mid[~too_wide]
        done = (err <= 1e-10 * perplexity) | (hi[idx] - lo[idx] < 1e-14)
        active[idx[done]] = False
    flagged = ~(best_err <= PERPLEXITY_RTOL * perplexity)
    return best_sigma, flagged


def _conditional_probabilities(dists, sigmas):
    shifted = dists - dists.min(axis=1, keepdims=True)
    e = np.exp(-shifted / (2.0 * sigmas[:, None] ** 2))
    return e / e.sum(axis=1, keepdims=True)


def _upper_pairs(mat):
    coo = sparse.triu(mat, k=1).tocoo()
    order = np.lexsort((coo.col, coo.row))
    r, c, v = coo.row[order].astype(np.int64), coo.col[order].astype(np.int64), coo.data[order]
    keep = v > 0
    return r[keep], c[keep], v[keep]


def perplexity_calibrate(G, perplexity=30.0):
    """Gaussian affinities ``v_ij = (p_{j|i} + p_{i|j}) / 2`` over a directed kNN graph.

    Each point's bandwidth makes the perplexity of its conditional
    distribution over its stored neighbors equal ``perplexity``. Points where
    that cannot be reached (e.g. all neighbors equidistant) are flagged in
    ``flagged`` and keep the best bandwidth found.
    """
    if not G.directed:
        raise ValueError("perplexity_calibrate expects a directed kNN graph")
    if not perplexity >= 2:
        raise ValueError(f"perplexity must be >= 2, got {perplexity!r}")
    k = np.diff(G.indptr)
    if not np.all(k == k[0]):
        raise ValueError("every node needs the same number of neighbors")
    k = int(k[0])
    if k < np.ceil(perplexity):
        raise ValueError(f"{k} neighbors per point cannot support perplexity {perplexity}")
    dists = G.dists.reshape(G.n, k)
    sigmas, flagged = calibrate_bandwidths(dists, perplexity)
    if flagged.any():
        log.warning("perplexity calibration flagged %d of %d points", int(flagged.sum()), G.n)
    cond = _conditional_probabilities(dists, sigmas)
    P = sparse.csr_matrix((cond.ravel(), G.indices, G.indptr), shape=(G.n, G.n))
    V = (P + P.T) * 0.5
    r, c, v = _upper_pairs(V)
    return AffinityGraph(G.n, r, c, v, GAUSSIAN, sigmas=sigmas, flagged=flagged, perplexity=float(perplexity))


def binary_affinities(G):
    """``v_ij = 1`` on every edge of an undirected (symmetrized) graph."""
    if G.directed:
        raise ValueError("binary_affinities expects an undirected graph; call symmetrize_union first")
    rows = G.rows()
    mask = rows < G.indices
    if not mask.any():
        raise ValueError("graph has no edges")
    return AffinityGraph(G.n, rows[mask], G.indices[mask].astype(np.int64), np.ones(int(mask.sum())), BINARY)


def normalized_view(A):
    """``(rows, cols, p)`` over both orientations with ``sum(p) == 1``.

    Gaussian affinities are divided by ``n``, binary ones by their total mass.
    """
    r, c, v = A.expanded()
    return r, c, v / A._norm()


def write_affinities(path, A):
    with open(path, "w") as fh:
        fh.write(f"{A.n} {A.kind} {float(A.total_mass)!r}\n")
        for i, j, v in zip(A.rows, A.cols, A.values):
            fh.write(f"{i} {j} {float(v)!r}\n")


def read_affinities(path):
    with open(path) as fh:
        n, kind, _ = fh.readline().split()
        body = np.loadtxt(fh, ndmin=2)
    return AffinityGraph(int(n), body[:, 0].astype(np.int64), body[:, 1].astype(np.int64), body[:, 2], kind)
