"""Datasets, PCA preprocessing and embedding initialization.

Matrices are plain ``float64`` arrays of shape ``(n_points, n_features)``.
"""
from __future__ import annotations

import csv
import gzip
import logging
import os
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from ._validation import check_data_matrix

log = logging.getLogger(__name__)

__all__ = [
    "DataError",
    "InitConfig",
    "default_init_config",
    "gen_gaussian_chain",
    "load_labels",
    "load_matrix",
    "make_init",
    "pca_reduce",
    "write_matrix",
]

# Covariance eigendecomposition is used up to this many features; above it a
# randomized subspace iteration takes over.
_DENSE_PCA_MAX_DIM = 2000

_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


class DataError(ValueError):
    """Raised for malformed input files or invalid data matrices."""


def gen_gaussian_chain(n_clusters, per_cluster, dim, spacing, seed=None):
    """Sample a chain of isotropic unit Gaussians spaced along the first axis.

    Cluster ``c`` is centred at ``(c * spacing, 0, ..., 0)``. Every cluster
    draws from its own child stream of ``np.random.SeedSequence(seed)``, so a
    cluster's points do not depend on how many clusters follow it.

    Returns
    -------
    X : ndarray of shape (n_clusters * per_cluster, dim)
    labels : ndarray of shape (n_clusters * per_cluster,)
        Cluster index of every row.
    """
    for name, value in (("n_clusters", n_clusters), ("per_cluster", per_cluster), ("dim", dim)):
        if int(value) != value or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")
    if not np.isfinite(spacing) or spacing < 0:
        raise ValueError(f"spacing must be finite and non-negative, got {spacing!r}")

    streams = np.random.SeedSequence(seed).spawn(int(n_clusters))
    X = np.empty((n_clusters * per_cluster, dim))
    for c, ss in enumerate(streams):
        rng = np.random.Generator(np.random.PCG64(ss))
        block = X[c * per_cluster:(c + 1) * per_cluster]
        block[:] = rng.standard_normal((per_cluster, dim))
        block[:, 0] += c * spacing
    labels = np.repeat(np.arange(n_clusters), per_cluster)
    return X, labels


def _orient_columns(components):
    """Flip each column so that its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(components), axis=0)
    signs = np.sign(components[idx, np.arange(components.shape[1])])
    signs[signs == 0] = 1.0
    return components * signs


def pca_reduce(X, d, return_variance=False, random_state=0):
    """Project mean-centred ``X`` onto its top ``d`` principal axes.

    Columns come out ordered by decreasing explained variance, each axis
    oriented so its largest loading is positive. When ``X`` has fewer than
    ``d`` non-negligible components the trailing columns are zero and a
    ``RuntimeWarning`` is emitted.

    Parameters
    ----------
    X : array-like of shape (n, dim)
    d : int
        Number of components, ``1 <= d <= min(n, dim)``.
    return_variance : bool
        Also return the per-component sample variances.
    random_state : int
        Seed for the randomized solver used when ``dim`` is large.
    """
    X = check_data_matrix(X)
    n, dim = X.shape
    if int(d) != d or not 1 <= d <= min(n, dim):
        raise ValueError(f"d must be an integer in [1, {min(n, dim)}], got {d!r}")
    d = int(d)

    Xc = X - X.mean(axis=0)
    if dim <= _DENSE_PCA_MAX_DIM:
        cov = Xc.T @ Xc / max(n - 1, 1)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1][:d]
        variances = np.clip(evals[order], 0.0, None)
        components = evecs[:, order]
    else:
        from sklearn.utils.extmath import randomized_svd

        _, s, vt = randomized_svd(Xc, d, n_iter=7, random_state=random_state)
        variances = s**2 / max(n - 1, 1)
        components = vt.T

    total = max(float(np.sum(Xc**2)) / max(n - 1, 1), np.finfo(float).tiny)
    dead = variances <= total * 1e-12
    if dead.any():
        warnings.warn(
            f"X has only {int((~dead).sum())} non-zero principal components; "
            f"padding {int(dead.sum())} trailing columns with zeros",
            RuntimeWarning,
            stacklevel=2,
        )
        components[:, dead] = 0.0
        variances[dead] = 0.0

    components = _orient_columns(components)
    Y = Xc @ components
    if dead.any():
        Y[:, dead] = 0.0
    if return_variance:
        return Y, variances
    return Y


@dataclass(frozen=True)
class InitConfig:
    """How to produce an initial 2-D layout.

    ``mode`` is one of ``"pca"``, ``"random"`` or ``"provided"``. ``scale`` is
    either ``("stddev", s)`` or ``("range", lo, hi)``; ``None`` leaves the
    coordinates unscaled (only meaningful for ``"provided"``).
    """

    mode: str = "pca"
    scale: tuple | None = ("stddev", 1e-4)
    seed: int | None = None
    provided: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in {"pca", "random", "provided"}:
            raise ValueError(f"unknown init mode {self.mode!r}")
        if self.mode == "provided" and self.provided is None:
            raise ValueError("mode='provided' requires the `provided` coordinates")
        if self.scale is not None:
            kind = self.scale[0]
            if kind == "stddev":
                if len(self.scale) != 2 or not self.scale[1] > 0:
                    raise ValueError("stddev scale must be ('stddev', s) with s > 0")
            elif kind == "range":
                if len(self.scale) != 3 or not self.scale[1] < self.scale[2]:
                    raise ValueError("range scale must be ('range', lo, hi) with lo < hi")
            else:
                raise ValueError(f"unknown scale rule {kind!r}")


_METHOD_SCALES = {
    "tsne": ("stddev", 1e-4),
    "umap": ("range", -10.0, 10.0),
    "umap-ns": ("range", -10.0, 10.0),
    "umap-bh": ("range", -10.0, 10.0),
    "fa2": ("stddev", 10_000.0),
}


def default_init_config(method, mode="pca", seed=None):
    """Initialization conventions per method; ``"le"`` needs none and gives ``None``."""
    if method == "le":
        return None
    try:
        scale = _METHOD_SCALES[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}") from None
    return InitConfig(mode=mode, scale=scale, seed=seed)


def _rescale(Y, scale):
    if scale is None:
        return Y
    if scale[0] == "stddev":
        Y = Y - Y.mean(axis=0)
        sd = Y.std()
        if sd == 0:
            raise ValueError("cannot rescale a constant layout to a positive stddev")
        return Y * (scale[1] / sd)
    lo, hi = float(scale[1]), float(scale[2])
    ymin, ymax = Y.min(), Y.max()
    if ymax == ymin:
        raise ValueError("cannot rescale a constant layout to a range")
    out = lo + (Y - ymin) * ((hi - lo) / (ymax - ymin))
    # pin the extremes against rounding
    out.flat[np.argmin(Y)] = lo
    out.flat[np.argmax(Y)] = hi
    return out


def make_init(X, cfg, method=None):
    """Initial 2-D coordinates for ``X`` following ``cfg``.

    With ``method`` given and ``cfg`` ``None`` the method's default
    convention is used. Returns ``None`` for Laplacian eigenmaps.
    """
    if cfg is None:
        if method is None:
            raise ValueError("either cfg or method is required")
        cfg = default_init_config(method)
        if cfg is None:
            return None
    X = check_data_matrix(X)
    n = X.shape[0]
    if cfg.mode == "pca":
        d = min(2, X.shape[1])
        Y = pca_reduce(X, d)
        if d < 2:
            Y = np.column_stack([Y, np.zeros(n)])
    elif cfg.mode == "random":
        rng = np.random.default_rng(cfg.seed)
        Y = rng.standard_normal((n, 2))
    else:
        Y = np.array(cfg.provided, dtype=float)
        if Y.shape != (n, 2):
            raise ValueError(f"provided initialization has shape {Y.shape}, expected {(n, 2)}")
        if not np.isfinite(Y).all():
            raise ValueError("provided initialization contains non-finite values")
    return np.ascontiguousarray(_rescale(Y, cfg.scale))


# ---------------------------------------------------------------------------
# file formats


def _open(path):
    path = os.fspath(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_csv(path):
    rows = []
    width = None
    opener = gzip.open if os.fspath(path).endswith(".gz") else open
    with opener(path, "rt", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} fields, found {len(row)}")
            try:
                values = [float(c) for c in row]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    X = np.array(rows, dtype=float)
    _check_finite(X, path)
    return X


def _read_idx(path):
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DataError(f"{path}: bad IDX magic number {raw[:4].hex()}")
    type_code, ndim = raw[2], raw[3]
    if type_code not in _IDX_DTYPES or ndim < 1:
        raise DataError(f"{path}: bad IDX magic number {raw[:4].hex()}")
    header = 4 + 4 * ndim
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = _IDX_DTYPES[type_code]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header != expected:
        raise DataError(f"{path}: IDX payload has {len(raw) - header} bytes, header implies {expected}")
    arr = np.frombuffer(raw, dtype=dtype, offset=header).reshape(dims)
    return arr


def _read_raw_f32(path):
    with _open(path) as fh:
        head = fh.read(16)
        if len(head) != 16:
            raise DataError(f"{path}: truncated raw-f32 header")
        n, dim = struct.unpack("<QQ", head)
        payload = fh.read()
    if len(payload) != n * dim * 4:
        raise DataError(f"{path}: raw-f32 payload has {len(payload)} bytes, header implies {n * dim * 4}")
    X = np.frombuffer(payload, dtype="<f4").reshape(n, dim)
    _check_finite(X, path)
    return X


def _check_finite(X, path):
    bad = ~np.isfinite(X)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataError(f"{path}: non-finite value at row {r}, column {c}")


def _guess_format(path):
    p = os.fspath(path).lower()
    if p.endswith(".gz"):
        p = p[:-3]
    if p.endswith(".csv") or p.endswith(".txt"):
        return "csv"
    if p.endswith(".f32"):
        return "raw-f32"
    if "idx" in os.path.basename(p) or "ubyte" in p:
        return "idx-images"
    raise DataError(f"cannot infer format of {path}; pass it explicitly")


def load_matrix(path, format=None):
    """Read a data matrix, one row per point.

    ``path`` may be a sequence of files of the same format; their rows are
    stacked in order (e.g. the MNIST train and test image files).
    ``format`` is ``"csv"``, ``"idx-images"`` or ``"raw-f32"``; ``None``
    guesses from the file name. IDX images are flattened to one row each.
    Raw-f32 data is returned as float32 so that round trips are exact.
    """
    if isinstance(path, (list, tuple)):
        parts = [load_matrix(p, format) for p in path]
        if len({p.shape[1] for p in parts}) != 1:
            raise DataError("stacked files have different row widths")
        return np.vstack(parts)
    fmt = format or _guess_format(path)
    if fmt == "csv":
        return _read_csv(path)
    if fmt == "raw-f32":
        return _read_raw_f32(path)
    if fmt == "idx-images":
        arr = _read_idx(path)
        if arr.ndim < 2:
            raise DataError(f"{path}: IDX file has {arr.ndim} dimension(s); images need at least 2")
        X = arr.reshape(arr.shape[0], -1).astype(float)
        _check_finite(X, path)
        return X
    raise DataError(f"unknown format {fmt!r}")


def load_labels(path):
    """Integer labels from an IDX label file or a one-column CSV/text file."""
    if isinstance(path, (list, tuple)):
        return np.concatenate([load_labels(p) for p in path])
    p = os.fspath(path).lower()
    if p.endswith((".csv", ".txt", ".csv.gz", ".txt.gz")):
        return np.loadtxt(path, dtype=float, ndmin=1).astype(np.int64)
    arr = _read_idx(path)
    if arr.ndim != 1:
        raise DataError(f"{path}: label file must be one-dimensional")
    return arr.astype(np.int64)


def write_matrix(path, X, format=None):
    """Write ``X`` as CSV or raw-f32 (``u64 n, u64 dim`` little-endian header)."""
    X = np.asarray(X)
    if X.ndim != 2:
        raise ValueError("X must be two-dimensional")
    fmt = format or _guess_format(path)
    if fmt == "csv":
        np.savetxt(path, X, delimiter=",", fmt="%.17g")
    elif fmt == "raw-f32":
        with open(path, "wb") as fh:
            fh.write(struct.pack("<QQ", X.shape[0], X.shape[1]))
            fh.write(np.ascontiguousarray(X, dtype="<f4").tobytes())
    else:
        raise DataError(f"cannot write format {fmt!r}")

