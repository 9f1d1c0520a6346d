"""Neighbor embeddings on one attraction-repulsion spectrum.

t-SNE with exaggeration, UMAP (negative sampling or full gradient),
ForceAtlas2 and Laplacian eigenmaps share a kNN graph, affinities, force
kernels and optimizers, so their layouts can be compared directly.
"""
from .affinity import AffinityGraph, binary_affinities, perplexity_calibrate
from .data_io import DataError, InitConfig, gen_gaussian_chain, load_matrix, make_init, pca_reduce
from .estimators import TSNE, UMAP, ForceAtlas2, LaplacianEigenmaps, build_affinities
from .forces import ForceSpec, assemble_gradient
from .knn import NeighborGraph, build_knn, symmetrize_union
from .metrics import distance_correlation, embedding_span, estimate_effective_gamma, knn_recall
from .optimize import NegSampleConfig, OptimizationDiverged, RunTrace, Schedule, run_fa2, run_tsne, run_umap_full, run_umap_ns
from .spectral import build_operators, laplacian_eigenmaps, tsne_limit_iteration

__all__ = [
    "AffinityGraph",
    "DataError",
    "ForceAtlas2",
    "ForceSpec",
    "InitConfig",
    "LaplacianEigenmaps",
    "NegSampleConfig",
    "NeighborGraph",
    "OptimizationDiverged",
    "RunTrace",
    "Schedule",
    "TSNE",
    "UMAP",
    "assemble_gradient",
    "binary_affinities",
    "build_affinities",
    "build_knn",
    "build_operators",
    "distance_correlation",
    "embedding_span",
    "estimate_effective_gamma",
    "gen_gaussian_chain",
    "knn_recall",
    "laplacian_eigenmaps",
    "load_matrix",
    "make_init",
    "pca_reduce",
    "perplexity_calibrate",
    "run_fa2",
    "run_tsne",
    "run_umap_full",
    "run_umap_ns",
    "symmetrize_union",
    "tsne_limit_iteration",
]
