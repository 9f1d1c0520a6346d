"""Scikit-learn style estimators over the functional pipeline.

Each estimator builds a kNN graph, derives affinities and optimizes a 2-D
layout in ``fit``. Results are exposed as ``embedding_``, ``graph_``,
``affinities_`` and, for iterative methods, ``trace_``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_data_matrix, check_positive
from .affinity import binary_affinities, perplexity_calibrate
from .data_io import InitConfig, default_init_config, make_init
from .knn import build_knn, symmetrize_union
from .optimize import NegSampleConfig, Schedule, run_fa2, run_tsne, run_umap_full, run_umap_ns
from .spectral import laplacian_eigenmaps

__all__ = ["ForceAtlas2", "LaplacianEigenmaps", "TSNE", "UMAP", "build_affinities"]


def build_affinities(X, kind="gaussian", perplexity=30.0, n_neighbors=15, knn_algorithm="auto", seed=0):
    """kNN graph and affinities for ``X``.

    ``kind="gaussian"`` uses ``min(n - 1, 3 * perplexity)`` neighbors and
    perplexity calibration; ``kind="binary"`` uses ``n_neighbors`` and unit
    weights on the symmetrized graph.

    Returns
    -------
    graph : NeighborGraph
        Directed for Gaussian, undirected for binary affinities.
    affinities : AffinityGraph
    """
    X = check_data_matrix(X)
    n = X.shape[0]
    if kind == "gaussian":
        k = min(n - 1, int(np.ceil(3 * perplexity)))
        G = build_knn(X, k, knn_algorithm, seed)
        return G, perplexity_calibrate(G, perplexity)
    if kind == "binary":
        G = symmetrize_union(build_knn(X, min(n_neighbors, n - 1), knn_algorithm, seed))
        return G, binary_affinities(G)
    raise ValueError(f"unknown affinity kind {kind!r}")


def _seed(random_state):
    if random_state is None:
        return 0
    if isinstance(random_state, np.random.RandomState):
        return int(random_state.randint(2**31 - 1))
    return int(random_state)


def _initial_layout(X, init, method, seed):
    if isinstance(init, str):
        if init not in {"pca", "random"}:
            raise ValueError(f"init must be 'pca', 'random' or an array, got {init!r}")
        cfg = default_init_config(method, mode=init, seed=seed)
    else:
        cfg = InitConfig("provided", scale=None, provided=np.asarray(init, dtype=float))
    return make_init(X, cfg)


class _Embedding(BaseEstimator):
    def fit_transform(self, X, y=None):
        self.fit(X, y)
        return self.embedding_

    def _prepare(self, X):
        X = check_data_matrix(X, min_samples=3)
        self.n_features_in_ = X.shape[1]
        return X

    def _check_fitted(self):
        check_is_fitted(self, "embedding_")


class TSNE(_Embedding):
    """t-SNE with a tunable exaggeration ``exaggeration`` (``rho``).

    ``rho = 1`` is standard t-SNE; larger values move the layout towards
    Laplacian eigenmaps. An early phase at ``early_exaggeration`` runs for
    ``early_exaggeration_iter`` iterations whenever it exceeds ``rho``.

    Parameters
    ----------
    exaggeration : float, default=1.0
    perplexity : float, default=30.0
    affinity : {"gaussian", "binary"}, default="gaussian"
    n_neighbors : int, default=15
        Only used for binary affinities.
    n_iter : int, default=750
        Total iterations including the early phase.
    early_exaggeration, early_exaggeration_iter : float, int
    learning_rate : float or "auto"
    theta : float or None, default=0.5
        Barnes-Hut opening angle; ``None`` for exact repulsion.
    init : {"pca", "random"} or ndarray of shape (n, 2)
    random_state : int or None
    knn_algorithm : {"auto", "exact", "vp-tree"}

    Attributes
    ----------
    embedding_, graph_, affinities_, trace_
    """

    def __init__(self, exaggeration=1.0, perplexity=30.0, affinity="gaussian", n_neighbors=15, n_iter=750,
                 early_exaggeration=12.0, early_exaggeration_iter=250, learning_rate="auto", theta=0.5,
                 init="pca", random_state=None, knn_algorithm="auto"):
        self.exaggeration = exaggeration
        self.perplexity = perplexity
        self.affinity = affinity
        self.n_neighbors = n_neighbors
        self.n_iter = n_iter
        self.early_exaggeration = early_exaggeration
        self.early_exaggeration_iter = early_exaggeration_iter
        self.learning_rate = learning_rate
        self.theta = theta
        self.init = init
        self.random_state = random_state
        self.knn_algorithm = knn_algorithm

    def schedule(self):
        return Schedule(
            total_iters=self.n_iter,
            final_rho=self.exaggeration,
            early_rho=self.early_exaggeration,
            early_iters=self.early_exaggeration_iter,
            learning_rate=self.learning_rate,
        )

    def fit(self, X, y=None):
        X = self._prepare(X)
        check_positive("exaggeration", self.exaggeration)
        seed = _seed(self.random_state)
        self.graph_, self.affinities_ = build_affinities(
            X, self.affinity, self.perplexity, self.n_neighbors, self.knn_algorithm, seed
        )
        Y0 = _initial_layout(X, self.init, "tsne", seed)
        self.embedding_, self.trace_ = run_tsne(self.affinities_, Y0, self.schedule(), self.theta)
        return self


class UMAP(_Embedding):
    """UMAP-style embedding over binary kNN affinities with the Cauchy kernel.

    ``optimizer="ns"`` runs negative-sampling SGD with ``negative_samples``
    draws per edge update; ``optimizer="bh"`` minimizes the full loss with
    Barnes-Hut repulsion weighted by ``gamma``.

    Attributes
    ----------
    embedding_, graph_, affinities_, trace_
    """

    def __init__(self, n_neighbors=15, optimizer="ns", negative_samples=5, gamma=1.0, epsilon=0.001,
                 n_epochs=750, theta=0.5, init="pca", random_state=None, knn_algorithm="auto"):
        self.n_neighbors = n_neighbors
        self.optimizer = optimizer
        self.negative_samples = negative_samples
        self.gamma = gamma
        self.epsilon = epsilon
        self.n_epochs = n_epochs
        self.theta = theta
        self.init = init
        self.random_state = random_state
        self.knn_algorithm = knn_algorithm

    def fit(self, X, y=None):
        X = self._prepare(X)
        if self.optimizer not in {"ns", "bh"}:
            raise ValueError(f"optimizer must be 'ns' or 'bh', got {self.optimizer!r}")
        seed = _seed(self.random_state)
        self.graph_, self.affinities_ = build_affinities(
            X, "binary", n_neighbors=self.n_neighbors, knn_algorithm=self.knn_algorithm, seed=seed
        )
        Y0 = _initial_layout(X, self.init, "umap", seed)
        if self.optimizer == "ns":
            cfg = NegSampleConfig(nu=self.negative_samples, gamma=self.gamma, epsilon=self.epsilon, epochs=self.n_epochs)
            self.embedding_, self.trace_ = run_umap_ns(self.affinities_, Y0, cfg, seed)
        else:
            sched = Schedule(total_iters=self.n_epochs, early_iters=0)
            self.embedding_, self.trace_ = run_umap_full(
                self.affinities_, Y0, self.gamma, self.epsilon, sched, self.theta
            )
        return self


class ForceAtlas2(_Embedding):
    """ForceAtlas2 layout of the symmetrized kNN graph.

    Linear attraction along edges and inverse-distance repulsion between all
    pairs, optionally weighted by ``(h_i + 1)(h_j + 1)`` (``edge_repulsion``).
    ``attraction`` scales the springs.

    Attributes
    ----------
    embedding_, graph_, trace_
    """

    def __init__(self, n_neighbors=15, edge_repulsion=True, attraction=1.0, n_iter=750, theta=0.5,
                 init="pca", random_state=None, knn_algorithm="auto"):
        self.n_neighbors = n_neighbors
        self.edge_repulsion = edge_repulsion
        self.attraction = attraction
        self.n_iter = n_iter
        self.theta = theta
        self.init = init
        self.random_state = random_state
        self.knn_algorithm = knn_algorithm

    def fit(self, X, y=None):
        X = self._prepare(X)
        check_positive("attraction", self.attraction)
        seed = _seed(self.random_state)
        self.graph_, self.affinities_ = build_affinities(
            X, "binary", n_neighbors=self.n_neighbors, knn_algorithm=self.knn_algorithm, seed=seed
        )
        Y0 = _initial_layout(X, self.init, "fa2", seed)
        self.embedding_, self.trace_ = run_fa2(
            self.graph_, Y0, self.edge_repulsion, self.n_iter, self.theta, self.attraction
        )
        return self


class LaplacianEigenmaps(_Embedding):
    """Generalized eigenvectors of the kNN graph Laplacian.

    Attributes
    ----------
    embedding_, eigenvalues_, graph_, affinities_
    """

    def __init__(self, n_components=2, affinity="binary", n_neighbors=15, perplexity=30.0, knn_algorithm="auto"):
        self.n_components = n_components
        self.affinity = affinity
        self.n_neighbors = n_neighbors
        self.perplexity = perplexity
        self.knn_algorithm = knn_algorithm

    def fit(self, X, y=None):
        X = self._prepare(X)
        self.graph_, self.affinities_ = build_affinities(
            X, self.affinity, self.perplexity, self.n_neighbors, self.knn_algorithm
        )
        self.embedding_, self.eigenvalues_ = laplacian_eigenmaps(self.affinities_, self.n_components)
        return self
