"""Attractive and repulsive gradient fields for t-SNE, UMAP and ForceAtlas2.

All fields are gradients: an optimizer moves ``Y`` against them. Every
method shares the attraction ``sum_j v_ij w_ij (y_i - y_j)`` (``w_ij = 1``
for ForceAtlas2's linear springs) and differs in its repulsion.

Exaggeration ``rho`` is applied as ``1 / rho`` on the t-SNE repulsion
rather than ``rho`` on the attraction. The two directions differ only by the
global factor ``rho``, which the optimizer folds into its step size.

The ``*_exact`` functions are O(n^2) reference paths; ``assemble_gradient``
routes through the Barnes-Hut tree when ``theta`` is given.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

from . import quadtree
from ._validation import check_embedding
from .affinity import AffinityGraph
from .knn import NeighborGraph

__all__ = [
    "ForceField",
    "ForceSpec",
    "assemble_gradient",
    "attraction",
    "fa2_forces",
    "tsne_repulsion_exact",
    "umap_repulsion_exact",
]

UMAP_EPSILON = 0.001
UMAP_GAMMA = 1.0


class ForceField(NamedTuple):
    field: np.ndarray
    z_sum: float | None = None


@dataclass(frozen=True)
class ForceSpec:
    """Which gradient to assemble.

    ``rho`` is the t-SNE exaggeration, ``gamma``/``epsilon`` the UMAP
    repulsion weight and smoothing, ``edge_repulsion`` the ForceAtlas2
    degree weighting. ``attraction_scale`` multiplies ForceAtlas2's springs.
    """

    method: str
    rho: float = 1.0
    gamma: float = UMAP_GAMMA
    epsilon: float = UMAP_EPSILON
    edge_repulsion: bool = True
    attraction_scale: float = 1.0

    def __post_init__(self):
        if self.method not in {"tsne", "umap", "fa2"}:
            raise ValueError(f"unknown method {self.method!r}")
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")


@numba.njit(cache=True)
def _attraction_csr(indptr, indices, weights, Y, cauchy):
    n = Y.shape[0]
    out = np.zeros((n, 2))
    for i in range(n):
        fx = 0.0
        fy = 0.0
        for a in range(indptr[i], indptr[i + 1]):
            j = indices[a]
            dx = Y[i, 0] - Y[j, 0]
            dy = Y[i, 1] - Y[j, 1]
            c = weights[a]
            if cauchy:
                c /= 1.0 + dx * dx + dy * dy
            fx += c * dx
            fy += c * dy
        out[i, 0] = fx
        out[i, 1] = fy
    return out


def _edge_arrays(graph, normalized):
    """CSR arrays ``(indptr, indices, weights)`` for an affinity or neighbor graph."""
    if isinstance(graph, AffinityGraph):
        csr = graph.to_csr()
        w = csr.data
        if normalized:
            # t-SNE weights n * p_ij; equals v_ij for Gaussian affinities
            w = w * (graph.n / graph._norm())
        return csr.indptr.astype(np.int64), csr.indices.astype(np.int64), np.ascontiguousarray(w)
    if isinstance(graph, NeighborGraph):
        if graph.directed:
            raise ValueError("attraction needs an undirected graph")
        return graph.indptr, graph.indices, np.ones(len(graph.indices))
    raise TypeError(f"expected AffinityGraph or NeighborGraph, got {type(graph).__name__}")


def attraction(A, Y, kernel="cauchy", normalized=False):
    """``sum_j v_ij w_ij (y_i - y_j)`` (cauchy) or ``sum_j v_ij (y_i - y_j)`` (linear).

    With ``normalized=True`` the weights are ``n * p_ij``, the t-SNE
    convention; for Gaussian affinities this is the same as ``v_ij``.
    """
    if kernel not in {"cauchy", "linear"}:
        raise ValueError(f"unknown kernel {kernel!r}")
    Y = check_embedding(Y, A.n)
    indptr, indices, w = _edge_arrays(A, normalized)
    return ForceField(_attraction_csr(indptr, indices, w, Y, kernel == "cauchy"))


@numba.njit(cache=True)
def _tsne_rep_exact(Y):
    n = Y.shape[0]
    out = np.zeros((n, 2))
    z = 0.0
    for i in range(n):
        fx = 0.0
        fy = 0.0
        for j in range(n):
            if j == i:
                continue
            dx = Y[i, 0] - Y[j, 0]
            dy = Y[i, 1] - Y[j, 1]
            w = 1.0 / (1.0 + dx * dx + dy * dy)
            z += w
            fx += w * w * dx
            fy += w * w * dy
        out[i, 0] = fx
        out[i, 1] = fy
    return out, z


def tsne_repulsion_exact(Y):
    """``(n / Z) sum_j w_ij^2 (y_i - y_j)`` together with ``Z = sum_{k != l} w_kl``."""
    Y = check_embedding(Y)
    if Y.shape[0] < 2:
        raise ValueError("need at least 2 points")
    raw, z = _tsne_rep_exact(Y)
    return ForceField(raw * (Y.shape[0] / z), z)


@numba.njit(cache=True)
def _umap_rep_exact(Y, eps):
    n = Y.shape[0]
    out = np.zeros((n, 2))
    for i in range(n):
        fx = 0.0
        fy = 0.0
        for j in range(n):
            if j == i:
                continue
            dx = Y[i, 0] - Y[j, 0]
            dy = Y[i, 1] - Y[j, 1]
            d2 = dx * dx + dy * dy
            if d2 == 0.0:
                continue
            c = 1.0 / ((1.0 + d2) * (d2 + eps))
            fx += c * dx
            fy += c * dy
        out[i, 0] = fx
        out[i, 1] = fy
    return out


def _has_coincident(Y):
    rounded = np.ascontiguousarray(Y).view([("x", Y.dtype), ("y", Y.dtype)])
    return len(np.unique(rounded)) < Y.shape[0]


def umap_repulsion_exact(Y, gamma=UMAP_GAMMA, epsilon=UMAP_EPSILON):
    """``gamma * sum_j w_ij / (d_ij^2 + epsilon) (y_i - y_j)``."""
    Y = check_embedding(Y)
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if epsilon == 0 and _has_coincident(Y):
        raise ValueError("epsilon=0 is singular for coincident points")
    return ForceField(gamma * _umap_rep_exact(Y, float(epsilon)))


@numba.njit(cache=True)
def _invsq_rep_exact(Y, masses):
    n = Y.shape[0]
    out = np.zeros((n, 2))
    for i in range(n):
        fx = 0.0
        fy = 0.0
        for j in range(n):
            if j == i:
                continue
            dx = Y[i, 0] - Y[j, 0]
            dy = Y[i, 1] - Y[j, 1]
            d2 = dx * dx + dy * dy
            if d2 == 0.0:
                ux, uy = quadtree._jitter_direction(i, j)
                dx = quadtree.COINCIDENT_JITTER * ux
                dy = quadtree.COINCIDENT_JITTER * uy
                d2 = quadtree.COINCIDENT_JITTER * quadtree.COINCIDENT_JITTER
            c = masses[i] * masses[j] / d2
            fx += c * dx
            fy += c * dy
        out[i, 0] = fx
        out[i, 1] = fy
    return out


def fa2_masses(G, edge_repulsion=True):
    """Per-node repulsion masses: ``h_i + 1`` with edge repulsion, else 1."""
    if edge_repulsion:
        return np.diff(G.indptr).astype(np.float64) + 1.0
    return np.ones(G.n)


def fa2_repulsion(G, Y, edge_repulsion=True, theta=None):
    """``sum_j c_ij / d_ij^2 (y_i - y_j)`` as a (positive) repulsive sum."""
    Y = check_embedding(Y, G.n)
    masses = fa2_masses(G, edge_repulsion)
    if theta is None:
        return _invsq_rep_exact(Y, masses)
    tree = quadtree.build(Y, masses)
    return quadtree.repulsion(tree, Y, quadtree.KERNEL_INVSQ, theta)[0]


def fa2_forces(G, Y, edge_repulsion=True, attraction_scale=1.0, theta=None):
    """ForceAtlas2 gradient over an undirected graph.

    ``a * sum_{j in N(i)} (y_i - y_j) - sum_{j != i} c_ij / d_ij^2 (y_i - y_j)``
    with ``c_ij = (h_i + 1)(h_j + 1)`` under edge repulsion and 1 otherwise.
    Coincident pairs are separated by a fixed 1e-9 displacement whose
    direction depends only on the pair's indices.
    """
    if G.directed:
        raise ValueError("fa2_forces expects an undirected graph")
    Y = check_embedding(Y, G.n)
    attr = _attraction_csr(G.indptr, G.indices, np.ones(len(G.indices)), Y, False)
    rep = fa2_repulsion(G, Y, edge_repulsion, theta)
    return ForceField(attraction_scale * attr - rep)


def tsne_repulsion(Y, theta=None):
    """``(n / Z) sum_j w_ij^2 (y_i - y_j)`` and ``Z``, exact or Barnes-Hut."""
    if theta is None:
        return tsne_repulsion_exact(Y)
    Y = check_embedding(Y)
    tree = quadtree.build(Y)
    raw, z = quadtree.repulsion(tree, Y, quadtree.KERNEL_TSNE, theta)
    return ForceField(raw * (Y.shape[0] / z), z)


def umap_repulsion(Y, gamma=UMAP_GAMMA, epsilon=UMAP_EPSILON, theta=None):
    if theta is None:
        return umap_repulsion_exact(Y, gamma, epsilon)
    Y = check_embedding(Y)
    tree = quadtree.build(Y)
    raw, _ = quadtree.repulsion(tree, Y, quadtree.KERNEL_UMAP, theta, epsilon)
    return ForceField(gamma * raw)


def assemble_gradient(spec, A, Y, G=None, theta=None):
    """Full gradient field for ``spec.method``.

    ``A`` is the affinity graph (t-SNE, UMAP); ``G`` the undirected kNN graph
    (ForceAtlas2). ``theta=None`` uses the exact O(n^2) repulsion.

    * tsne: ``attraction(n p) - (1 / rho) * tsne_repulsion``; ``z_sum`` is Z.
    * umap: ``attraction(v) - umap_repulsion(gamma, epsilon)``.
    * fa2: ``fa2_forces``.
    """
    if spec.method == "fa2":
        if G is None:
            raise ValueError("ForceAtlas2 needs the undirected kNN graph G")
        return fa2_forces(G, Y, spec.edge_repulsion, spec.attraction_scale, theta)
    if A is None:
        raise ValueError(f"{spec.method} needs an affinity graph")
    Y = check_embedding(Y, A.n)
    if spec.method == "tsne":
        attr = attraction(A, Y, "cauchy", normalized=True).field
        rep = tsne_repulsion(Y, theta)
        return ForceField(attr - rep.field / spec.rho, rep.z_sum)
    attr = attraction(A, Y, "cauchy").field
    rep = umap_repulsion(Y, spec.gamma, spec.epsilon, theta)
    return ForceField(attr - rep.field)
