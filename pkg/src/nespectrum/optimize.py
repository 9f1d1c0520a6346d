"""Optimizers: batch gradient descent (t-SNE, full-gradient UMAP, ForceAtlas2)
and the negative-sampling SGD loop of UMAP.

Batch methods share one integrator: momentum plus per-coordinate
delta-bar-delta gains, with an optional per-point step-norm cap.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from . import quadtree
from ._validation import check_embedding, check_positive
from .affinity import AffinityGraph
from .forces import UMAP_EPSILON, UMAP_GAMMA, _attraction_csr, _edge_arrays, _invsq_rep_exact, _tsne_rep_exact, _umap_rep_exact, fa2_masses
from .knn import NeighborGraph

log = logging.getLogger(__name__)

__all__ = [
    "NegSampleConfig",
    "OptimizationDiverged",
    "RunTrace",
    "Schedule",
    "run_fa2",
    "run_tsne",
    "run_umap_full",
    "negative_displacements",
    "run_umap_ns",
]

MIN_GAIN = 0.01
DIVERGENCE_SPAN = 1e8
TRACE_EVERY = 10


class OptimizationDiverged(RuntimeError):
    """Coordinates became non-finite or the layout exploded.

    ``trace`` and ``embedding`` hold the state at abort time.
    """

    def __init__(self, message, trace, embedding):
        super().__init__(message)
        self.trace = trace
        self.embedding = embedding


@dataclass(frozen=True)
class Schedule:
    """Exaggeration, momentum and learning-rate schedule for batch descent.

    With ``final_rho < early_rho`` the first ``early_iters`` iterations use
    ``early_rho``; otherwise ``final_rho`` applies throughout. ``total_iters``
    includes the early phase. ``learning_rate="auto"`` means
    ``n / max(final_rho, early_rho)`` (``n / final_rho`` when the early phase
    is disabled with ``early_iters=0``).
    """

    total_iters: int = 750
    final_rho: float = 1.0
    early_rho: float = 12.0
    early_iters: int = 250
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    momentum_switch: int = 250
    learning_rate: float | str = "auto"
    max_step_norm: float | None = 5.0

    def __post_init__(self):
        if self.total_iters < 0 or self.early_iters < 0:
            raise ValueError("iteration counts must be >= 0")
        if not self.final_rho > 0 or not self.early_rho > 0:
            raise ValueError("exaggeration must be > 0")

    @property
    def has_early_phase(self):
        return self.early_iters > 0 and self.final_rho < self.early_rho

    def exaggeration(self, it):
        if self.has_early_phase and it < self.early_iters:
            return self.early_rho
        return self.final_rho

    def momentum(self, it):
        return self.momentum_early if it < self.momentum_switch else self.momentum_late

    def eta(self, n):
        if self.learning_rate != "auto":
            return float(self.learning_rate)
        top = max(self.final_rho, self.early_rho) if self.has_early_phase else self.final_rho
        return n / top


@dataclass(frozen=True)
class NegSampleConfig:
    """Settings of the negative-sampling SGD loop.

    ``nu`` negative samples follow every attractive edge update; ``gamma``
    scales each repulsive update, so ``gamma * nu`` sets the repulsion.
    """

    nu: int = 5
    gamma: float = UMAP_GAMMA
    epsilon: float = UMAP_EPSILON
    epochs: int = 750
    move_tail_on_attraction: bool = True
    clip: float = 4.0
    lr0: float = 1.0

    def __post_init__(self):
        if self.nu < 0 or int(self.nu) != self.nu:
            raise ValueError("nu must be a non-negative integer")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.clip > 0 or not self.lr0 > 0:
            raise ValueError("clip and lr0 must be > 0")


@dataclass
class RunTrace:
    """Per-iteration diagnostics, recorded every ``every`` iterations and at the end."""

    every: int = TRACE_EVERY
    records: list = field(default_factory=list)

    def record(self, it, Y, z=None, rho=1.0, grad=None):
        span = Y.max(axis=0) - Y.min(axis=0)
        n = Y.shape[0]
        self.records.append(
            {
                "iter": int(it),
                "Z": None if z is None else float(z),
                "n_over_rhoZ": None if z is None else float(n / (rho * z)),
                "span_x": float(span[0]),
                "span_y": float(span[1]),
                "grad_norm": None if grad is None else float(np.mean(np.linalg.norm(grad, axis=1))),
            }
        )

    @property
    def final(self):
        return self.records[-1] if self.records else None

    def column(self, key):
        return np.array([np.nan if r[key] is None else r[key] for r in self.records])

    def to_json(self, path=None):
        text = json.dumps({"every": self.every, "records": self.records}, indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(every=data["every"], records=data["records"])


class _MomentumGains:
    """Heavy-ball momentum with delta-bar-delta gains.

    A coordinate's gain grows by 0.2 while the new descent direction agrees in
    sign with the running update and shrinks by a factor 0.8 otherwise.
    """

    def __init__(self, shape, max_step_norm=None, use_gains=True):
        self.update = np.zeros(shape)
        self.gains = np.ones(shape)
        self.max_step_norm = max_step_norm
        self.use_gains = use_gains

    def step(self, Y, grad, lr, momentum):
        if self.use_gains:
            agree = np.sign(grad) != np.sign(self.update)
            self.gains = np.where(agree, self.gains + 0.2, self.gains * 0.8)
            np.maximum(self.gains, MIN_GAIN, out=self.gains)
        self.update = momentum * self.update - lr * self.gains * grad
        if self.max_step_norm is not None:
            norms = np.linalg.norm(self.update, axis=1)
            big = norms > self.max_step_norm
            if big.any():
                self.update[big] *= (self.max_step_norm / norms[big])[:, None]
        Y += self.update


def _check_divergence(Y, trace, it):
    if not np.isfinite(Y).all():
        raise OptimizationDiverged(f"non-finite coordinates at iteration {it}", trace, Y)
    span = float(Y.max() - Y.min())
    if span > DIVERGENCE_SPAN:
        raise OptimizationDiverged(f"embedding span {span:.3g} exceeds {DIVERGENCE_SPAN:g} at iteration {it}", trace, Y)


def _tree_repulsion(Y, kernel, theta, eps=UMAP_EPSILON, masses=None):
    tree = quadtree.build(Y, masses)
    return quadtree.repulsion(tree, Y, kernel, theta, eps)


def run_tsne(A, Y0, sched=None, theta=0.5, callback=None):
    """t-SNE with exaggeration schedule ``sched``.

    The gradient is ``sum_j n p_ij w_ij (y_i - y_j) - n / (rho Z) sum_j
    w_ij^2 (y_i - y_j)``. It is multiplied by ``rho(t) * eta / n`` before
    entering the integrator, which reproduces the step of the conventional
    ``rho``-on-attraction form with learning rate ``eta``. ``theta=None``
    uses the exact O(n^2) repulsion.

    Returns ``(Y, trace)``.
    """
    sched = sched or Schedule()
    n = A.n
    Y = check_embedding(Y0, n).copy()
    indptr, indices, w = _edge_arrays(A, normalized=True)
    eta = sched.eta(n)
    opt = _MomentumGains(Y.shape, sched.max_step_norm)
    trace = RunTrace()
    z = None
    for it in range(sched.total_iters):
        rho = sched.exaggeration(it)
        attr = _attraction_csr(indptr, indices, w, Y, True)
        if theta is None:
            raw, z = _tsne_rep_exact(Y)
        else:
            raw, z = _tree_repulsion(Y, quadtree.KERNEL_TSNE, theta)
        grad = attr - raw * (n / (rho * z))
        if it % trace.every == 0:
            trace.record(it, Y, z, rho, grad)
        opt.step(Y, grad, rho * eta / n, sched.momentum(it))
        _check_divergence(Y, trace, it)
        if callback is not None:
            callback(it, Y)
    if theta is None:
        _, z = _tsne_rep_exact(Y)
    else:
        _, z = _tree_repulsion(Y, quadtree.KERNEL_TSNE, theta)
    trace.record(sched.total_iters, Y, z, sched.final_rho)
    return Y, trace


def run_umap_full(A, Y0, gamma=UMAP_GAMMA, epsilon=UMAP_EPSILON, sched=None, theta=0.5, warm_start=None):
    """UMAP's full gradient (no negative sampling) with Barnes-Hut repulsion.

    Uses the t-SNE integrator. Exaggeration in ``sched`` divides the
    repulsion, as for t-SNE. The step is additionally divided by the mean
    affinity row mass ``sum(v) / n`` so that attraction stiffness matches the
    t-SNE convention (where ``n p_ij`` rows average to 1). The default
    schedule has no early exaggeration; ``warm_start`` replaces ``Y0``.
    """
    sched = sched or Schedule(early_iters=0)
    check_positive("gamma", gamma)
    check_positive("epsilon", epsilon, strict=False)
    n = A.n
    Y = check_embedding(warm_start if warm_start is not None else Y0, n).copy()
    if epsilon == 0:
        from .forces import _has_coincident

        if _has_coincident(Y):
            raise ValueError("epsilon=0 is singular for coincident points")
    indptr, indices, w = _edge_arrays(A, normalized=False)
    eta = sched.eta(n) / (A.total_mass / n)
    opt = _MomentumGains(Y.shape, sched.max_step_norm)
    trace = RunTrace()
    for it in range(sched.total_iters):
        rho = sched.exaggeration(it)
        attr = _attraction_csr(indptr, indices, w, Y, True)
        if theta is None:
            raw = _umap_rep_exact(Y, float(epsilon))
        else:
            raw, _ = _tree_repulsion(Y, quadtree.KERNEL_UMAP, theta, float(epsilon))
        grad = attr - (gamma / rho) * raw
        if it % trace.every == 0:
            trace.record(it, Y, None, rho, grad)
        opt.step(Y, grad, rho * eta / n, sched.momentum(it))
        _check_divergence(Y, trace, it)
    trace.record(sched.total_iters, Y)
    return Y, trace


# -- negative sampling -------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _clip(v, c):
    if v > c:
        return c
    if v < -c:
        return -c
    return v


@numba.njit(cache=True, inline="always")
def _negative_update(Y, i, k, gamma, eps, clip):
    dx = Y[i, 0] - Y[k, 0]
    dy = Y[i, 1] - Y[k, 1]
    d2 = dx * dx + dy * dy
    if d2 == 0.0:
        return 0.0, 0.0
    c = 2.0 * gamma / ((eps + d2) * (1.0 + d2))
    return _clip(c * dx, clip), _clip(c * dy, clip)


@numba.njit(cache=True)
def _negative_displacements(Y, heads, nu, gamma, eps, clip, seed):
    np.random.seed(seed)
    n = Y.shape[0]
    out = np.zeros((heads.shape[0], 2))
    for q in range(heads.shape[0]):
        i = heads[q]
        for _ in range(nu):
            gx, gy = _negative_update(Y, i, np.random.randint(n), gamma, eps, clip)
            out[q, 0] += gx
            out[q, 1] += gy
    return out


def negative_displacements(Y, heads, cfg=None, seed=0):
    """Unit-step repulsive displacement of each head from ``cfg.nu`` negative draws at a frozen ``Y``."""
    cfg = cfg or NegSampleConfig()
    Y = check_embedding(Y)
    heads = np.ascontiguousarray(heads, dtype=np.int64)
    return _negative_displacements(Y, heads, int(cfg.nu), float(cfg.gamma), float(cfg.epsilon), float(cfg.clip), int(seed))


@numba.njit(cache=True)
def _ns_epochs(Y, head, tail, weights, nu, gamma, eps, n_epochs, move_tail, clip, lr0, seed, record_every, spans):
    np.random.seed(seed)
    n = Y.shape[0]
    m = head.shape[0]
    wmax = weights.max()
    per_sample = np.empty(m)
    for e in range(m):
        per_sample[e] = wmax / weights[e] if weights[e] > 0 else np.inf
    next_sample = np.zeros(m)
    n_rec = 0
    for epoch in range(n_epochs):
        alpha = lr0 * (1.0 - epoch / n_epochs)
        order = np.random.permutation(m)
        for idx in range(m):
            e = order[idx]
            if next_sample[e] > epoch:
                continue
            i = head[e]
            j = tail[e]
            dx = Y[i, 0] - Y[j, 0]
            dy = Y[i, 1] - Y[j, 1]
            d2 = dx * dx + dy * dy
            if d2 > 0.0:
                c = -2.0 / (1.0 + d2)
                gx = _clip(c * dx, clip)
                gy = _clip(c * dy, clip)
                Y[i, 0] += gx * alpha
                Y[i, 1] += gy * alpha
                if move_tail:
                    Y[j, 0] -= gx * alpha
                    Y[j, 1] -= gy * alpha
            for _ in range(nu):
                k = np.random.randint(n)
                gx, gy = _negative_update(Y, i, k, gamma, eps, clip)
                Y[i, 0] += gx * alpha
                Y[i, 1] += gy * alpha
            next_sample[e] += per_sample[e]
        if not (np.isfinite(Y[:, 0]).all() and np.isfinite(Y[:, 1]).all()):
            return epoch, n_rec
        if (epoch + 1) % record_every == 0 or epoch == n_epochs - 1:
            spans[n_rec, 0] = epoch + 1
            spans[n_rec, 1] = Y[:, 0].max() - Y[:, 0].min()
            spans[n_rec, 2] = Y[:, 1].max() - Y[:, 1].min()
            n_rec += 1
    return n_epochs, n_rec


def _positive_edges(graph):
    """Ordered (head, tail, weight) triples over both orientations."""
    if isinstance(graph, AffinityGraph):
        r, c, v = graph.expanded()
        return r.astype(np.int64), c.astype(np.int64), v.astype(np.float64)
    if isinstance(graph, NeighborGraph):
        if graph.directed:
            raise ValueError("negative sampling needs an undirected graph")
        return graph.rows().astype(np.int64), graph.indices.astype(np.int64), np.ones(len(graph.indices))
    raise TypeError(f"expected AffinityGraph or NeighborGraph, got {type(graph).__name__}")


def run_umap_ns(graph, Y0, cfg=None, seed=0):
    """UMAP's negative-sampling SGD with the Cauchy kernel (``a = b = 1``).

    Every epoch visits the positive edges (both orientations) in a fresh
    random order. An edge of weight ``v`` is used once every ``max(v) / v``
    epochs, so with binary affinities every edge is used every epoch. Each
    use applies the attractive update to the head (and the tail when
    ``move_tail_on_attraction``) and then ``nu`` repulsive updates of the
    head against uniformly drawn nodes. Per-coordinate updates are clipped
    to ``+-clip`` and the step decays linearly from ``lr0`` to 0.
    """
    cfg = cfg or NegSampleConfig()
    head, tail, w = _positive_edges(graph)
    Y = check_embedding(Y0, graph.n).copy()
    trace = RunTrace()
    spans = np.zeros((cfg.epochs // trace.every + 2, 3))
    done, n_rec = _ns_epochs(
        Y, head, tail, w, int(cfg.nu), float(cfg.gamma), float(cfg.epsilon), int(cfg.epochs),
        bool(cfg.move_tail_on_attraction), float(cfg.clip), float(cfg.lr0), int(seed), trace.every, spans,
    )
    for it, sx, sy in spans[:n_rec]:
        trace.records.append({"iter": int(it), "Z": None, "n_over_rhoZ": None, "span_x": sx, "span_y": sy, "grad_norm": None})
    if done < cfg.epochs:
        raise OptimizationDiverged(f"non-finite coordinates at epoch {done}", trace, Y)
    return Y, trace


# -- ForceAtlas2 -------------------------------------------------------------


def run_fa2(G, Y0, edge_repulsion=True, iters=750, theta=0.5, attraction_scale=1.0, step=0.2,
            momentum=0.5, tol=1e-6, force_cap_quantile=0.99):
    """Gradient descent to an equilibrium of the ForceAtlas2 forces.

    Uses the shared momentum/gains integrator with base step
    ``step / (a * mean(h))``, ``a = attraction_scale``.
    Each iteration caps per-point force norms at their ``force_cap_quantile``
    quantile. Stops early once the mean net force falls below ``tol`` times
    the mean attractive force.
    """
    if G.directed:
        raise ValueError("run_fa2 expects an undirected graph")
    n = G.n
    Y = check_embedding(Y0, n).copy()
    deg = np.diff(G.indptr)
    masses = fa2_masses(G, edge_repulsion)
    ones = np.ones(len(G.indices))
    lr = step / (attraction_scale * deg.mean())
    opt = _MomentumGains(Y.shape, None)
    trace = RunTrace()
    it = 0
    for it in range(iters):
        attr = attraction_scale * _attraction_csr(G.indptr, G.indices, ones, Y, False)
        if theta is None:
            rep = _invsq_rep_exact(Y, masses)
        else:
            rep, _ = _tree_repulsion(Y, quadtree.KERNEL_INVSQ, theta, masses=masses)
        grad = attr - rep
        norms = np.linalg.norm(grad, axis=1)
        if it % trace.every == 0:
            trace.record(it, Y, grad=grad)
        scale_ref = np.mean(np.linalg.norm(attr, axis=1))
        if scale_ref > 0 and norms.mean() <= tol * scale_ref:
            break
        if n > 2:
            cap = np.quantile(norms, force_cap_quantile)
            big = norms > cap
            if big.any() and cap > 0:
                grad[big] *= (cap / norms[big])[:, None]
        opt.step(Y, grad, lr, momentum)
        _check_divergence(Y, trace, it)
    trace.record(it + 1, Y)
    return Y, trace
