"""Evaluation metrics: kNN recall, distance correlation, span and effective repulsion."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_embedding
from .affinity import BINARY, binary_affinities
from .data_io import default_init_config, make_init
from .knn import build_knn, query_knn, symmetrize_union
from .optimize import NegSampleConfig, OptimizationDiverged, Schedule, run_umap_full, run_umap_ns

log = logging.getLogger(__name__)

__all__ = [
    "EffectiveGammaResult",
    "MetricReport",
    "distance_correlation",
    "embedding_span",
    "estimate_effective_gamma",
    "knn_recall",
    "loglog_slope",
]


@dataclass
class MetricReport:
    """A scalar metric with the configuration that produced it."""

    name: str
    value: float
    params: dict = field(default_factory=dict)
    n_samples: int | None = None
    seed: int | None = None
    runtime_s: float = 0.0
    flags: list = field(default_factory=list)

    def __float__(self):
        return float(self.value)

    def to_dict(self):
        return {
            "metric": self.name,
            "value": float(self.value),
            "params": self.params,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "runtime_s": self.runtime_s,
            "flags": list(self.flags),
        }

    def to_json(self):
        return json.dumps(self.to_dict())


def _sample(n, n_samples, seed):
    if n_samples is None or n <= n_samples:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=n_samples, replace=False))


def _affinity_topk(csr, i, k):
    lo, hi = csr.indptr[i], csr.indptr[i + 1]
    cols = csr.indices[lo:hi]
    vals = csr.data[lo:hi]
    order = np.lexsort((cols, -vals))
    return cols[order[:k]]


def knn_recall(A, Y, k=15, n_samples=10_000, seed=0):
    """Fraction of each point's ``k`` largest-affinity neighbors among its ``k`` nearest in ``Y``.

    Affinity ties at the k-th value go to the smaller index. Points with
    fewer than ``k`` affinity edges contribute ``|overlap| / k``. For binary
    affinities every neighbor ties, so the metric reduces to edge-set
    recall; the affinity kind is echoed in ``params``.
    """
    t0 = time.perf_counter()
    Y = check_embedding(Y, A.n)
    n = A.n
    if not 1 <= k < n:
        raise ValueError(f"k must be in [1, {n - 1}]")
    idx = _sample(n, n_samples, seed)
    csr = A.to_csr()
    emb = query_knn(Y, idx, k)
    hits = np.empty(len(idx))
    for q, i in enumerate(idx):
        top = _affinity_topk(csr, i, k)
        hits[q] = np.intersect1d(top, emb[q], assume_unique=True).size / k
    flags = ["edge-set recall (binary affinities)"] if A.kind == BINARY else []
    return MetricReport(
        "knn_recall", float(hits.mean()), {"k": k, "affinity": A.kind}, len(idx), seed,
        time.perf_counter() - t0, flags,
    )


def _centered_distances(Y):
    sq = np.einsum("ij,ij->i", Y, Y)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (Y @ Y.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    D = np.sqrt(d2, out=d2)
    row = D.mean(axis=0)
    D -= row[None, :]
    D -= row[:, None]
    D += row.mean()
    return D


def distance_correlation(Y1, Y2, subsample=5_000, seed=0):
    """Biased-estimator distance correlation between two configurations of the same points.

    Both inputs are restricted to the same random subset of ``subsample``
    rows. A configuration with zero distance variance gives 0 and the
    ``degenerate`` flag.
    """
    t0 = time.perf_counter()
    Y1 = np.asarray(Y1, dtype=float)
    Y2 = np.asarray(Y2, dtype=float)
    if Y1.ndim == 1:
        Y1 = Y1[:, None]
    if Y2.ndim == 1:
        Y2 = Y2[:, None]
    if Y1.shape[0] != Y2.shape[0]:
        raise ValueError(f"row counts differ: {Y1.shape[0]} vs {Y2.shape[0]}")
    if not (np.isfinite(Y1).all() and np.isfinite(Y2).all()):
        raise ValueError("inputs contain non-finite values")
    idx = _sample(Y1.shape[0], subsample, seed)
    A = _centered_distances(Y1[idx] - Y1[idx].mean(axis=0))
    B = _centered_distances(Y2[idx] - Y2[idx].mean(axis=0))
    dcov = np.mean(A * B)
    dvar = math.sqrt(np.mean(A * A) * np.mean(B * B))
    params = {"subsample": subsample}
    if dvar <= 0.0:
        return MetricReport("distance_correlation", 0.0, params, len(idx), seed, time.perf_counter() - t0, ["degenerate"])
    value = math.sqrt(min(max(dcov / dvar, 0.0), 1.0))
    return MetricReport("distance_correlation", value, params, len(idx), seed, time.perf_counter() - t0)


def embedding_span(Y):
    """``max(Y) - min(Y)`` over all coordinates."""
    Y = np.asarray(Y, dtype=float)
    if not np.isfinite(Y).all():
        raise ValueError("Y contains non-finite values")
    return MetricReport("embedding_span", float(Y.max() - Y.min()), n_samples=Y.shape[0])


def loglog_slope(sizes, values):
    """Least-squares slope of ``log(values)`` against ``log(sizes)``; NaN for fewer than two points."""
    sizes = np.asarray(sizes, dtype=float)
    values = np.asarray(values, dtype=float)
    ok = np.isfinite(values) & (values > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(sizes[ok]), np.log(values[ok]), 1)[0])


@dataclass
class EffectiveGammaResult:
    sizes: list
    gamma_hat: list
    reference_span: list
    spans: list
    slope: float
    flags: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _span(Y):
    return float(Y.max() - Y.min())


def estimate_effective_gamma(X, sizes, gamma_grid, k=15, nu=5, epochs=750, iters=750, theta=0.5,
                             seed=0, reference=None, search="grid"):
    """Per-size repulsion ``gamma`` at which full-gradient UMAP matches a reference's span.

    For each size a random subset of ``X`` gets a binary kNN graph and a PCA
    initialization scaled to ``[-10, 10]``. ``reference(A, Y0, seed)``
    produces the target layout (default: negative sampling with ``nu`` and
    ``epochs``). The estimate is the grid value whose full-gradient layout
    span is closest in log-ratio to the reference span.

    ``search="bisect"`` assumes span increases with ``gamma`` and evaluates
    only O(log len(grid)) grid points per size.

    Returns
    -------
    EffectiveGammaResult
        ``spans[s]`` maps each evaluated grid value to its span. ``slope`` is
        the log-log fit over sizes with an estimate (NaN if fewer than two).
    """
    X = np.asarray(X, dtype=float)
    sizes = [int(s) for s in sizes]
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")
    grid = np.sort(np.asarray(gamma_grid, dtype=float))
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("gamma_grid must be nonempty and positive")
    if search not in {"grid", "bisect"}:
        raise ValueError(f"unknown search {search!r}")
    if reference is None:
        cfg = NegSampleConfig(nu=nu, epochs=epochs)

        def reference(A, Y0, s):
            return run_umap_ns(A, Y0, cfg, seed=s)[0]

    rng = np.random.default_rng(seed)
    sched = Schedule(total_iters=iters, early_iters=0)
    gamma_hat, ref_spans, all_spans, flags = [], [], [], {}
    for size in sizes:
        if size > X.shape[0]:
            raise ValueError(f"size {size} exceeds the {X.shape[0]} available points")
        sub = np.sort(rng.choice(X.shape[0], size=size, replace=False))
        Xs = X[sub]
        A = binary_affinities(symmetrize_union(build_knn(Xs, k)))
        Y0 = make_init(Xs, default_init_config("umap", seed=seed))
        try:
            target = _span(reference(A, Y0, seed))
        except OptimizationDiverged as exc:
            log.warning("reference diverged at size %d: %s", size, exc)
            flags[size] = "reference diverged"
            gamma_hat.append(float("nan"))
            ref_spans.append(float("nan"))
            all_spans.append({})
            continue
        spans = {}

        def span_at(g):
            if g not in spans:
                try:
                    spans[g] = _span(run_umap_full(A, Y0, gamma=g, sched=sched, theta=theta)[0])
                except OptimizationDiverged:
                    spans[g] = float("nan")
            return spans[g]

        if search == "grid":
            for g in grid:
                span_at(float(g))
        else:
            lo, hi = 0, len(grid) - 1
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if span_at(float(grid[mid])) < target:
                    lo = mid
                else:
                    hi = mid
            span_at(float(grid[lo]))
            span_at(float(grid[hi]))
        cand = [(abs(math.log(s / target)), g) for g, s in spans.items() if np.isfinite(s) and s > 0]
        gamma_hat.append(min(cand)[1] if cand else float("nan"))
        ref_spans.append(target)
        all_spans.append(dict(sorted(spans.items())))
        log.info("size %d: reference span %.3g, gamma_hat %.3g", size, target, gamma_hat[-1])
    return EffectiveGammaResult(sizes, gamma_hat, ref_spans, all_spans, loglog_slope(sizes, gamma_hat), flags)
