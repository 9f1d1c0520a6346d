"""Barnes-Hut quadtree for all-pairs repulsion in 2-D.

Three kernels share one traversal:

``KERNEL_TSNE``
    Accumulates ``sum_j w_ij^2 (y_i - y_j)`` and ``Z = sum_{i != j} w_ij``.
``KERNEL_UMAP``
    Accumulates ``sum_j w_ij / (d_ij^2 + eps) (y_i - y_j)``.
``KERNEL_INVSQ``
    Accumulates ``sum_j m_i m_j / d_ij^2 (y_i - y_j)`` with per-point masses
    (``h + 1`` for ForceAtlas2 edge repulsion, otherwise 1).

A cell is replaced by a point mass at its centre of mass when its diagonal
divided by the distance to that centre is below ``theta`` and the query
point lies outside it. ``theta=0`` therefore reproduces the exact sum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

__all__ = ["KERNEL_INVSQ", "KERNEL_TSNE", "KERNEL_UMAP", "QuadTree", "build", "repulsion"]

KERNEL_TSNE = 0
KERNEL_UMAP = 1
KERNEL_INVSQ = 2

MAX_DEPTH = 64
COINCIDENT_JITTER = 1e-9

# float node columns
_X0, _Y0, _SIZE, _CX, _CY, _MASS = range(6)
# int node columns
_START, _END, _CHILD, _DEPTH = range(4)


@dataclass(frozen=True)
class QuadTree:
    """Flattened tree. ``perm[start:end]`` lists a node's points.

    ``child`` is the index of the first of four consecutive children, or -1
    for a leaf. Leaves hold one point, or several coincident points, or any
    points once ``MAX_DEPTH`` is reached.
    """

    fnodes: np.ndarray
    inodes: np.ndarray
    perm: np.ndarray
    masses: np.ndarray

    @property
    def n_nodes(self):
        return self.fnodes.shape[0]

    def count(self, t):
        return int(self.inodes[t, _END] - self.inodes[t, _START])

    def center_of_mass(self, t):
        return self.fnodes[t, _CX], self.fnodes[t, _CY]

    def mass(self, t):
        return self.fnodes[t, _MASS]

    def children(self, t):
        c = self.inodes[t, _CHILD]
        return [] if c < 0 else list(range(c, c + 4))

    def points(self, t):
        return self.perm[self.inodes[t, _START]:self.inodes[t, _END]]

    def is_leaf(self, t):
        return self.inodes[t, _CHILD] < 0


@numba.njit(cache=True)
def _grow(fnodes, inodes, need):
    cap = fnodes.shape[0]
    if need <= cap:
        return fnodes, inodes
    new_cap = max(need, 2 * cap)
    f2 = np.zeros((new_cap, fnodes.shape[1]))
    i2 = np.zeros((new_cap, inodes.shape[1]), dtype=np.int64)
    f2[:cap] = fnodes
    i2[:cap] = inodes
    return f2, i2


@numba.njit(cache=True)
def _build(Y, masses):
    n = Y.shape[0]
    perm = np.arange(n)
    fnodes = np.zeros((4 * n + 8, 6))
    inodes = np.zeros((4 * n + 8, 4), dtype=np.int64)
    xmin, xmax = Y[:, 0].min(), Y[:, 0].max()
    ymin, ymax = Y[:, 1].min(), Y[:, 1].max()
    size = max(xmax - xmin, ymax - ymin)
    if size == 0.0:
        size = 1.0
    size *= 1.0 + 1e-9
    fnodes[0, _X0] = xmin
    fnodes[0, _Y0] = ymin
    fnodes[0, _SIZE] = size
    inodes[0, _START] = 0
    inodes[0, _END] = n
    n_nodes = 1
    scratch = np.empty(n, dtype=np.int64)
    quad = np.empty(n, dtype=np.int64)
    stack = np.empty(4 * MAX_DEPTH + 8, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        t = stack[top]
        s, e = inodes[t, _START], inodes[t, _END]
        inodes[t, _CHILD] = -1
        m = 0.0
        cx = 0.0
        cy = 0.0
        for a in range(s, e):
            p = perm[a]
            m += masses[p]
            cx += masses[p] * Y[p, 0]
            cy += masses[p] * Y[p, 1]
        fnodes[t, _MASS] = m
        if m > 0:
            fnodes[t, _CX] = cx / m
            fnodes[t, _CY] = cy / m
        if e - s <= 1 or inodes[t, _DEPTH] >= MAX_DEPTH:
            continue
        same = True
        p0 = perm[s]
        for a in range(s + 1, e):
            p = perm[a]
            if Y[p, 0] != Y[p0, 0] or Y[p, 1] != Y[p0, 1]:
                same = False
                break
        if same:
            continue
        x0, y0, half = fnodes[t, _X0], fnodes[t, _Y0], 0.5 * fnodes[t, _SIZE]
        xm, ym = x0 + half, y0 + half
        counts = np.zeros(4, dtype=np.int64)
        for a in range(s, e):
            p = perm[a]
            q = (1 if Y[p, 0] >= xm else 0) + (2 if Y[p, 1] >= ym else 0)
            quad[a] = q
            counts[q] += 1
        offs = np.zeros(5, dtype=np.int64)
        for q in range(4):
            offs[q + 1] = offs[q] + counts[q]
        fill = offs[:4].copy()
        for a in range(s, e):
            q = quad[a]
            scratch[s + fill[q]] = perm[a]
            fill[q] += 1
        for a in range(s, e):
            perm[a] = scratch[a]
        fnodes, inodes = _grow(fnodes, inodes, n_nodes + 4)
        c0 = n_nodes
        inodes[t, _CHILD] = c0
        n_nodes += 4
        for q in range(4):
            c = c0 + q
            fnodes[c, _X0] = x0 + (half if q & 1 else 0.0)
            fnodes[c, _Y0] = y0 + (half if q & 2 else 0.0)
            fnodes[c, _SIZE] = half
            inodes[c, _START] = s + offs[q]
            inodes[c, _END] = s + offs[q + 1]
            inodes[c, _DEPTH] = inodes[t, _DEPTH] + 1
            inodes[c, _CHILD] = -1
            if counts[q] > 0:
                stack[top] = c
                top += 1
    return fnodes[:n_nodes].copy(), inodes[:n_nodes].copy(), perm


def build(Y, masses=None):
    """Quadtree over the rows of ``Y``; ``masses`` default to 1 per point."""
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != 2 or Y.shape[0] < 1:
        raise ValueError("Y must have shape (n, 2) with n >= 1")
    if not np.isfinite(Y).all():
        raise ValueError("Y contains non-finite coordinates")
    if masses is None:
        masses = np.ones(Y.shape[0])
    masses = np.ascontiguousarray(masses, dtype=np.float64)
    fnodes, inodes, perm = _build(Y, masses)
    return QuadTree(fnodes, inodes, perm, masses)


@numba.njit(cache=True, inline="always")
def _jitter_direction(i, j):
    """Unit vector for a coincident pair, antisymmetric in (i, j)."""
    lo, hi = (i, j) if i < j else (j, i)
    h = (lo * 73856093) ^ (hi * 19349663)
    ang = (h % 65536) / 65536.0 * 2.0 * np.pi
    sgn = 1.0 if i < j else -1.0
    return sgn * np.cos(ang), sgn * np.sin(ang)


@numba.njit(cache=True)
def _repulsion(fnodes, inodes, perm, masses, Y, kernel, theta, eps):
    n = Y.shape[0]
    out = np.zeros((n, 2))
    z_total = 0.0
    stack = np.empty(4 * MAX_DEPTH + 8, dtype=np.int64)
    theta2 = theta * theta
    for i in range(n):
        yi0, yi1 = Y[i, 0], Y[i, 1]
        mi = masses[i]
        fx = 0.0
        fy = 0.0
        z = 0.0
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            t = stack[top]
            s, e = inodes[t, _START], inodes[t, _END]
            if e == s:
                continue
            if inodes[t, _CHILD] < 0:
                for a in range(s, e):
                    j = perm[a]
                    if j == i:
                        continue
                    dx = yi0 - Y[j, 0]
                    dy = yi1 - Y[j, 1]
                    d2 = dx * dx + dy * dy
                    if kernel == KERNEL_TSNE:
                        w = 1.0 / (1.0 + d2)
                        z += w
                        fx += w * w * dx
                        fy += w * w * dy
                    elif kernel == KERNEL_UMAP:
                        c = 1.0 / ((1.0 + d2) * (d2 + eps))
                        fx += c * dx
                        fy += c * dy
                    else:
                        if d2 == 0.0:
                            ux, uy = _jitter_direction(i, j)
                            dx = COINCIDENT_JITTER * ux
                            dy = COINCIDENT_JITTER * uy
                            d2 = COINCIDENT_JITTER * COINCIDENT_JITTER
                        c = mi * masses[j] / d2
                        fx += c * dx
                        fy += c * dy
                continue
            size = fnodes[t, _SIZE]
            dx = yi0 - fnodes[t, _CX]
            dy = yi1 - fnodes[t, _CY]
            d2 = dx * dx + dy * dy
            x0, y0 = fnodes[t, _X0], fnodes[t, _Y0]
            inside = x0 <= yi0 <= x0 + size and y0 <= yi1 <= y0 + size
            if not inside and 2.0 * size * size < theta2 * d2:
                m = fnodes[t, _MASS]
                if kernel == KERNEL_TSNE:
                    w = 1.0 / (1.0 + d2)
                    z += m * w
                    fx += m * w * w * dx
                    fy += m * w * w * dy
                elif kernel == KERNEL_UMAP:
                    c = m / ((1.0 + d2) * (d2 + eps))
                    fx += c * dx
                    fy += c * dy
                else:
                    c = mi * m / d2
                    fx += c * dx
                    fy += c * dy
            else:
                c0 = inodes[t, _CHILD]
                for q in range(4):
                    stack[top] = c0 + q
                    top += 1
        out[i, 0] = fx
        out[i, 1] = fy
        z_total += z
    return out, z_total


def repulsion(tree, Y, kernel, theta=0.5, eps=0.001):
    """Raw repulsive sums for every point.

    Returns ``(field, z)``; ``z`` is ``sum_{i != j} w_ij`` for
    ``KERNEL_TSNE`` and 0 otherwise. The t-SNE normalization ``n / Z`` is
    applied by the caller.
    """
    if theta < 0:
        raise ValueError("theta must be >= 0")
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    return _repulsion(tree.fnodes, tree.inodes, tree.perm, tree.masses, Y, int(kernel), float(theta), float(eps))
