"""Exact kNN graphs (brute force or vantage-point tree) and graph utilities."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from ._validation import check_data_matrix

log = logging.getLogger(__name__)

__all__ = [
    "NeighborGraph",
    "build_knn",
    "connected_components",
    "query_knn",
    "degrees",
    "read_graph",
    "symmetrize_union",
    "write_graph",
]

# Above this many points ``algorithm="auto"`` switches to the vp-tree.
EXACT_MAX_N = 20_000


@dataclass(frozen=True)
class NeighborGraph:
    """Sparse neighbor lists in CSR layout.

    Row ``i`` holds ``indices[indptr[i]:indptr[i+1]]``. Directed kNN rows are
    ordered by increasing distance (ties by index); undirected rows by
    neighbor index. ``dists`` are squared Euclidean distances.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    dists: np.ndarray
    directed: bool
    k: int

    def neighbors(self, i):
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def neighbor_dists(self, i):
        return self.dists[self.indptr[i]:self.indptr[i + 1]]

    @property
    def n_edges(self):
        """Stored entries; an undirected edge counts once per orientation."""
        return len(self.indices)

    def rows(self):
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.n), np.diff(self.indptr))

    def adjacency(self):
        """Unweighted adjacency as a ``scipy.sparse.csr_matrix``."""
        data = np.ones(len(self.indices))
        return sparse.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


@numba.njit(cache=True)
def _sqdist(X, i, j):
    s = 0.0
    for f in range(X.shape[1]):
        t = X[i, f] - X[j, f]
        s += t * t
    return s


@numba.njit(cache=True, inline="always")
def _push(best_d, best_i, d, j):
    """Insert (d, j) into ascending top-k arrays; equal distances keep lower index first."""
    k = best_d.shape[0]
    if d > best_d[k - 1] or (d == best_d[k - 1] and j > best_i[k - 1]):
        return
    pos = k - 1
    while pos > 0 and (best_d[pos - 1] > d or (best_d[pos - 1] == d and best_i[pos - 1] > j)):
        best_d[pos] = best_d[pos - 1]
        best_i[pos] = best_i[pos - 1]
        pos -= 1
    best_d[pos] = d
    best_i[pos] = j


@numba.njit(cache=True)
def _knn_bruteforce(X, k):
    n = X.shape[0]
    out_i = np.empty((n, k), dtype=np.int64)
    out_d = np.empty((n, k))
    best_d = np.empty(k)
    best_i = np.empty(k, dtype=np.int64)
    for i in range(n):
        best_d[:] = np.inf
        best_i[:] = n
        for j in range(n):
            if j != i:
                _push(best_d, best_i, _sqdist(X, i, j), j)
        out_i[i] = best_i
        out_d[i] = best_d
    return out_i, out_d


@numba.njit(cache=True)
def _knn_bruteforce_queries(X, queries, k):
    n = X.shape[0]
    out_i = np.empty((queries.shape[0], k), dtype=np.int64)
    best_d = np.empty(k)
    best_i = np.empty(k, dtype=np.int64)
    for q in range(queries.shape[0]):
        i = queries[q]
        best_d[:] = np.inf
        best_i[:] = n
        for j in range(n):
            if j != i:
                _push(best_d, best_i, _sqdist(X, i, j), j)
        out_i[q] = best_i
    return out_i


def query_knn(X, queries, k):
    """Exact ``k`` nearest neighbors (self excluded) of the rows ``queries`` of ``X``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    return _knn_bruteforce_queries(X, np.ascontiguousarray(queries, dtype=np.int64), int(k))


# -- vantage-point tree ------------------------------------------------------


def _build_vptree(X, seed=0):
    """Arrays describing a vp-tree over the rows of ``X``.

    Node ``t`` has vantage point ``vp[t]``, radius ``mu[t]`` and children
    ``inner[t]`` (points with distance ``<= mu``) and ``outer[t]``; ``-1``
    marks a missing child.
    """
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    vp = np.empty(n, dtype=np.int64)
    mu = np.zeros(n)
    inner = np.full(n, -1, dtype=np.int64)
    outer = np.full(n, -1, dtype=np.int64)
    count = 0
    root_items = np.arange(n)
    # (items, parent node, is_inner)
    stack = [(root_items, -1, False)]
    while stack:
        items, parent, is_inner = stack.pop()
        t = count
        count += 1
        if parent >= 0:
            if is_inner:
                inner[parent] = t
            else:
                outer[parent] = t
        pick = rng.integers(len(items))
        v = items[pick]
        vp[t] = v
        rest = np.delete(items, pick)
        if len(rest) == 0:
            continue
        d = np.sqrt(_row_sqdists(X, v, rest))
        m = float(np.median(d))
        mu[t] = m
        ins = rest[d <= m]
        outs = rest[d > m]
        if len(outs):
            stack.append((outs, t, False))
        if len(ins):
            stack.append((ins, t, True))
    return vp, mu, inner, outer


@numba.njit(cache=True)
def _row_sqdists(X, v, rest):
    out = np.empty(rest.shape[0])
    for a in range(rest.shape[0]):
        out[a] = _sqdist(X, v, rest[a])
    return out


@numba.njit(cache=True)
def _vptree_query_all(X, k, vp, mu, inner, outer):
    n = X.shape[0]
    out_i = np.empty((n, k), dtype=np.int64)
    out_d = np.empty((n, k))
    best_d = np.empty(k)
    best_i = np.empty(k, dtype=np.int64)
    stack_node = np.empty(n + 1, dtype=np.int64)
    stack_bound = np.empty(n + 1)
    slack = 1e-9
    for q in range(n):
        best_d[:] = np.inf
        best_i[:] = n
        top = 0
        stack_node[0] = 0
        stack_bound[0] = 0.0
        top = 1
        while top > 0:
            top -= 1
            t = stack_node[top]
            bound = stack_bound[top]
            tau = np.sqrt(best_d[k - 1])
            if bound > tau * (1.0 + slack) + slack:
                continue
            v = vp[t]
            d2 = _sqdist(X, q, v)
            if v != q:
                _push(best_d, best_i, d2, v)
            d = np.sqrt(d2)
            m = mu[t]
            tau = np.sqrt(best_d[k - 1])
            # push the far side first so the near side is explored first
            if d <= m:
                if outer[t] >= 0:
                    stack_node[top] = outer[t]
                    stack_bound[top] = max(m - d, 0.0)
                    top += 1
                if inner[t] >= 0:
                    stack_node[top] = inner[t]
                    stack_bound[top] = 0.0
                    top += 1
            else:
                if inner[t] >= 0:
                    stack_node[top] = inner[t]
                    stack_bound[top] = d - m
                    top += 1
                if outer[t] >= 0:
                    stack_node[top] = outer[t]
                    stack_bound[top] = 0.0
                    top += 1
        out_i[q] = best_i
        out_d[q] = best_d
    return out_i, out_d


def build_knn(X, k, algorithm="auto", seed=0):
    """Directed exact kNN graph under squared Euclidean distance.

    Parameters
    ----------
    X : array-like of shape (n, dim)
    k : int
        Neighbors per point, ``1 <= k < n``.
    algorithm : {"auto", "exact", "vp-tree"}
        ``"exact"`` is brute force. ``"vp-tree"`` returns the same graph (it is
        exact, not approximate); ``"auto"`` picks brute force up to
        ``EXACT_MAX_N`` points.
    seed : int
        Vantage-point selection seed; does not affect the result.

    Duplicate points are kept and produce zero-distance edges. Distance ties
    are broken by the lower point index.
    """
    X = check_data_matrix(X)
    n = X.shape[0]
    if int(k) != k or not 1 <= k < n:
        raise ValueError(f"k must be an integer in [1, {n - 1}], got {k!r}")
    k = int(k)
    if algorithm == "auto":
        algorithm = "exact" if n <= EXACT_MAX_N else "vp-tree"
    if algorithm == "exact":
        idx, d = _knn_bruteforce(X, k)
    elif algorithm == "vp-tree":
        vp, mu, inner, outer = _build_vptree(X, seed)
        idx, d = _vptree_query_all(X, k, vp, mu, inner, outer)
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    indptr = np.arange(0, n * k + 1, k, dtype=np.int64)
    return NeighborGraph(n, indptr, idx.ravel(), d.ravel(), True, k)


def symmetrize_union(G):
    """Undirected graph with edge {i, j} iff i->j or j->i in ``G``.

    Idempotent on undirected input. Rows are sorted by neighbor index.
    """
    rows = G.rows()
    cols = G.indices
    r = np.concatenate([rows, cols])
    c = np.concatenate([cols, rows])
    d = np.concatenate([G.dists, G.dists])
    order = np.lexsort((d, c, r))
    r, c, d = r[order], c[order], d[order]
    keep = np.ones(len(r), dtype=bool)
    keep[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
    r, c, d = r[keep], c[keep], d[keep]
    indptr = np.zeros(G.n + 1, dtype=np.int64)
    np.add.at(indptr, r + 1, 1)
    return NeighborGraph(G.n, np.cumsum(indptr), c, d, False, G.k)


def degrees(G):
    """Number of incident edges per node of an undirected graph."""
    if G.directed:
        raise ValueError("degrees() expects an undirected graph; call symmetrize_union first")
    return np.diff(G.indptr)


def connected_components(G):
    """Component label per node; each label is the smallest node index in its component."""
    if G.directed:
        raise ValueError("connected_components() expects an undirected graph")
    _, raw = csgraph.connected_components(G.adjacency(), directed=False)
    first = np.full(raw.max() + 1, G.n, dtype=np.int64)
    np.minimum.at(first, raw, np.arange(G.n))
    return first[raw]


def write_graph(path, G):
    """Text edge list with a ``n k directed`` header; undirected edges written once."""
    rows = G.rows()
    mask = slice(None) if G.directed else rows < G.indices
    with open(path, "w") as fh:
        fh.write(f"{G.n} {G.k} {int(G.directed)}\n")
        for i, j, d in zip(rows[mask], G.indices[mask], G.dists[mask]):
            fh.write(f"{i} {j} {float(d)!r}\n")


def read_graph(path):
    with open(path) as fh:
        n, k, directed = (int(t) for t in fh.readline().split())
        body = np.loadtxt(fh, ndmin=2)
    if body.size == 0:
        body = np.empty((0, 3))
    i = body[:, 0].astype(np.int64)
    j = body[:, 1].astype(np.int64)
    d = body[:, 2]
    if not directed:
        i, j, d = np.concatenate([i, j]), np.concatenate([j, i]), np.concatenate([d, d])
        order = np.lexsort((j, i))
    else:
        order = np.lexsort((j, d, i))
    i, j, d = i[order], j[order], d[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, i + 1, 1)
    return NeighborGraph(n, np.cumsum(indptr), j, d, bool(directed), k)
