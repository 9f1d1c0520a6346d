"""Command line interface: ``nespectrum {embed,sweep,match-gamma,gen,rerun}``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical divergence.
Option values come from flags, then a ``--config`` file of ``key = value``
lines, then built-in defaults. ``NE_THREADS`` caps worker processes and
numba threads.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib.metadata import PackageNotFoundError, version

import numpy as np

from .data_io import DataError, default_init_config, gen_gaussian_chain, load_labels, load_matrix, make_init, pca_reduce, write_matrix
from .estimators import build_affinities
from .metrics import distance_correlation, estimate_effective_gamma, knn_recall
from .optimize import NegSampleConfig, OptimizationDiverged, Schedule, run_fa2, run_tsne, run_umap_full, run_umap_ns
from .plotting import curve_svg, scatter_svg
from .spectral import laplacian_eigenmaps

log = logging.getLogger("nespectrum")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
METHODS = ("tsne", "umap-ns", "umap-bh", "fa2", "le")

EMBED_DEFAULTS = {
    "method": "tsne",
    "format": None,
    "labels": None,
    "pca": 0,
    "k": 15,
    "perplexity": 30.0,
    "affinity": None,
    "rho": 1.0,
    "early_rho": 12.0,
    "early_iters": 250,
    "learning_rate": "auto",
    "iters": 750,
    "epochs": 750,
    "nu": 5,
    "gamma": 1.0,
    "epsilon": 0.001,
    "theta": 0.5,
    "edge_repulsion": True,
    "attraction": 1.0,
    "init": "pca",
    "seed": 0,
    "output_format": "csv",
    "svg": False,
    "knn_algorithm": "auto",
}
SWEEP_DEFAULTS = {
    "format": None,
    "pca": 0,
    "perplexity": 30.0,
    "rho_min": 1.0,
    "rho_max": 100.0,
    "n_rho": 50,
    "rhos": None,
    "reference": None,
    "reference_method": "umap-ns",
    "iters": 750,
    "theta": 0.5,
    "seed": 0,
    "recall_samples": 10_000,
    "dcor_samples": 5_000,
    "knn_algorithm": "auto",
}
MATCH_DEFAULTS = {
    "format": None,
    "pca": 0,
    "sizes": "2000,3500,5000,7500,10000",
    "gamma_min": 1e-5,
    "gamma_max": 1e-2,
    "n_gamma": 40,
    "k": 15,
    "nu": 5,
    "epochs": 750,
    "iters": 750,
    "theta": 0.5,
    "search": "grid",
    "seed": 0,
}
GEN_DEFAULTS = {"n_clusters": 20, "per_cluster": 1000, "dim": 50, "spacing": 6.0, "seed": 0, "labels_out": None}


class UsageError(Exception):
    pass


def engine_version():
    try:
        return version("nespectrum")
    except PackageNotFoundError:
        return "unknown"


def _threads():
    raw = os.environ.get("NE_THREADS")
    if not raw:
        return 1
    try:
        t = int(raw)
    except ValueError:
        raise UsageError(f"NE_THREADS must be an integer, got {raw!r}") from None
    if t < 1:
        raise UsageError("NE_THREADS must be >= 1")
    return t


def _apply_threads(t):
    import numba

    numba.set_num_threads(min(t, numba.config.NUMBA_NUM_THREADS))


def read_config(path):
    """``key = value`` lines; ``#`` starts a comment; keys may use dashes or underscores."""
    out = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value.strip("\"'")
    return out


def _to_bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).lower()
    if s in {"1", "true", "yes", "on"}:
        return True
    if s in {"0", "false", "no", "off"}:
        return False
    raise UsageError(f"not a boolean: {v!r}")


def _resolve(args, parser, defaults):
    """Merge flags over config-file values over ``defaults``."""
    cfg = read_config(args.config) if getattr(args, "config", None) else {}
    actions = {a.dest: a for a in parser._actions}
    unknown = set(cfg) - set(defaults) - {"input", "out"}
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = {}
    for key, default in defaults.items():
        val = getattr(args, key, None)
        if val is None and key in cfg:
            act = actions.get(key)
            raw = cfg[key]
            if isinstance(default, bool) or isinstance(act, argparse.BooleanOptionalAction):
                val = _to_bool(raw)
            elif act is not None and act.type is not None:
                try:
                    val = act.type(raw)
                except (TypeError, ValueError) as exc:
                    raise UsageError(f"config key {key}: {exc}") from None
                if act.choices is not None and val not in act.choices:
                    raise UsageError(f"config key {key}: {val!r} not in {list(act.choices)}")
            else:
                val = raw
        out[key] = default if val is None else val
    for key in ("input", "out"):
        if getattr(args, key, None) is None and key in cfg:
            setattr(args, key, cfg[key])
    return out


def _sha256(paths):
    h = hashlib.sha256()
    for p in paths:
        with open(p, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 20), b""):
                h.update(block)
    return h.hexdigest()


def _load_input(paths, fmt, pca):
    if not paths:
        raise UsageError("--input is required")
    paths = [paths] if isinstance(paths, str) else list(paths)
    for p in paths:
        if not os.path.exists(p):
            raise UsageError(f"input file not found: {p}")
    X = np.asarray(load_matrix(paths if len(paths) > 1 else paths[0], fmt), dtype=np.float64)
    if pca and pca < X.shape[1]:
        X = pca_reduce(X, int(pca))
    return X, paths


def _write_manifest(outdir, command, inputs, params, outputs):
    manifest = {
        "command": command,
        "dataset": {"paths": [os.path.abspath(p) for p in inputs], "sha256": _sha256(inputs)},
        "params": params,
        "outputs": outputs,
        "engine_version": engine_version(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, default=str)
    return manifest


def _learning_rate(v):
    return v if v == "auto" else float(v)


def embed_array(X, p):
    """Embedding of ``X`` by method ``p["method"]`` with resolved options ``p``.

    Returns ``(Y, trace or None, affinities, extra)``; ``extra`` carries
    method-specific outputs such as eigenvalues.
    """
    method, seed = p["method"], int(p["seed"])
    init_method = {"umap-ns": "umap", "umap-bh": "umap"}.get(method, method)
    if method == "tsne":
        kind = p["affinity"] or "gaussian"
    elif method == "le":
        kind = p["affinity"] or "binary"
    else:
        kind = "binary"
    G, A = build_affinities(X, kind, p["perplexity"], p["k"], p["knn_algorithm"], seed)
    if method == "le":
        Y, evals = laplacian_eigenmaps(A, 2)
        return Y, None, A, {"eigenvalues": evals.tolist()}
    Y0 = make_init(X, default_init_config(init_method, mode=p["init"], seed=seed))
    if method == "tsne":
        sched = Schedule(total_iters=p["iters"], final_rho=p["rho"], early_rho=p["early_rho"],
                         early_iters=p["early_iters"], learning_rate=_learning_rate(p["learning_rate"]))
        Y, trace = run_tsne(A, Y0, sched, p["theta"])
    elif method == "umap-ns":
        cfg = NegSampleConfig(nu=p["nu"], gamma=p["gamma"], epsilon=p["epsilon"], epochs=p["epochs"])
        Y, trace = run_umap_ns(A, Y0, cfg, seed)
    elif method == "umap-bh":
        Y, trace = run_umap_full(A, Y0, p["gamma"], p["epsilon"], Schedule(total_iters=p["epochs"], early_iters=0), p["theta"])
    else:
        Y, trace = run_fa2(G, Y0, p["edge_repulsion"], p["iters"], p["theta"], p["attraction"])
    return Y, trace, A, {}


def cmd_embed(args, parser):
    p = _resolve(args, parser, EMBED_DEFAULTS)
    if p["method"] not in METHODS:
        raise UsageError(f"unknown method {p['method']!r}")
    if not args.out:
        raise UsageError("--out is required")
    X, inputs = _load_input(args.input, p["format"], p["pca"])
    os.makedirs(args.out, exist_ok=True)
    Y, trace, A, extra = embed_array(X, p)
    ext = "csv" if p["output_format"] == "csv" else "f32"
    outputs = {"embedding": os.path.join(args.out, f"embedding.{ext}")}
    write_matrix(outputs["embedding"], Y, "csv" if ext == "csv" else "raw-f32")
    if trace is not None:
        outputs["trace"] = os.path.join(args.out, "trace.json")
        trace.to_json(outputs["trace"])
    if extra:
        outputs["extra"] = os.path.join(args.out, "extra.json")
        with open(outputs["extra"], "w") as fh:
            json.dump(extra, fh, indent=1)
    if p["svg"]:
        labels = load_labels(p["labels"]) if p["labels"] else None
        outputs["svg"] = os.path.join(args.out, "embedding.svg")
        scatter_svg(Y, outputs["svg"], labels, seed=p["seed"], title=p["method"])
    _write_manifest(args.out, "embed", inputs, p, outputs)
    final = trace.final if trace is not None else None
    if final and final.get("Z") is not None:
        print(f"final Z = {final['Z']:.6g}  (Z/n = {final['Z'] / len(Y):.4g})")
    print(f"wrote {outputs['embedding']}")
    return EXIT_OK


def default_rho_grid(rho_min=1.0, rho_max=100.0, n=50):
    """``n`` log-spaced values in ``[rho_min, rho_max]`` with 4 and 30 inserted when in range."""
    grid = set(np.round(np.geomspace(rho_min, rho_max, n), 10).tolist()) if n > 1 else {float(rho_min)}
    for extra in (4.0, 30.0):
        if rho_min <= extra <= rho_max:
            grid.add(extra)
    return sorted(grid)


def _sweep_point(job):
    rho, A, Y0, iters, theta = job
    sched = Schedule(total_iters=iters, final_rho=rho)
    Y, trace = run_tsne(A, Y0, sched, theta)
    return Y, trace.final["Z"]


def cmd_sweep(args, parser):
    p = _resolve(args, parser, SWEEP_DEFAULTS)
    if not args.out:
        raise UsageError("--out is required")
    if p["rhos"]:
        try:
            rhos = sorted({float(v) for v in str(p["rhos"]).split(",")})
        except ValueError:
            raise UsageError(f"bad --rhos list {p['rhos']!r}") from None
    else:
        if not 0 < p["rho_min"] <= p["rho_max"] or p["n_rho"] < 1:
            raise UsageError("rho grid must satisfy 0 < rho_min <= rho_max and n_rho >= 1")
        rhos = default_rho_grid(p["rho_min"], p["rho_max"], p["n_rho"])
    X, inputs = _load_input(args.input, p["format"], p["pca"])
    os.makedirs(args.out, exist_ok=True)
    seed = int(p["seed"])
    _, A = build_affinities(X, "gaussian", p["perplexity"], knn_algorithm=p["knn_algorithm"], seed=seed)
    Y0 = make_init(X, default_init_config("tsne", seed=seed))
    jobs = [(rho, A, Y0, p["iters"], p["theta"]) for rho in rhos]
    workers = _threads()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    if p["reference"]:
        ref = np.asarray(load_matrix(p["reference"]), dtype=float)
        ref_name = os.path.basename(p["reference"])
    elif p["reference_method"] == "self":
        ref = results[0][0]
        ref_name = f"tsne rho={rhos[0]:g}"
    else:
        rp = dict(EMBED_DEFAULTS, method=p["reference_method"], seed=seed, knn_algorithm=p["knn_algorithm"])
        ref = embed_array(X, rp)[0]
        ref_name = p["reference_method"]
        write_matrix(os.path.join(args.out, "reference.csv"), ref, "csv")
    if ref.shape[0] != X.shape[0]:
        raise DataError(f"reference has {ref.shape[0]} rows, data has {X.shape[0]}")
    rows = []
    for rho, (Y, z) in zip(rhos, results):
        dc = distance_correlation(Y, ref, p["dcor_samples"], seed).value
        rec = knn_recall(A, Y, 15, p["recall_samples"], seed).value
        rows.append((rho, dc, rec, z / len(Y)))
    table = os.path.join(args.out, "sweep.csv")
    with open(table, "w") as fh:
        fh.write("rho,dcor,recall,Z_over_n\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) for v in r) + "\n")
    arr = np.array(rows)
    curve_svg(arr[:, 0], {f"dCor vs {ref_name}": arr[:, 1], "kNN recall": arr[:, 2]},
              os.path.join(args.out, "sweep.svg"), logx=True, xlabel="exaggeration", ylabel="value")
    best = int(np.argmax(arr[:, 1]))
    _write_manifest(args.out, "sweep", inputs, dict(p, rhos=rhos), {"table": table, "svg": os.path.join(args.out, "sweep.svg")})
    print(f"max dCor {arr[best, 1]:.4f} at rho = {arr[best, 0]:.4g}")
    return EXIT_OK


def cmd_match_gamma(args, parser):
    p = _resolve(args, parser, MATCH_DEFAULTS)
    if not args.out:
        raise UsageError("--out is required")
    try:
        sizes = [int(s) for s in str(p["sizes"]).split(",")]
    except ValueError:
        raise UsageError(f"bad --sizes list {p['sizes']!r}") from None
    if sizes != sorted(sizes) or min(sizes) < 3:
        raise UsageError("sizes must be ascending integers >= 3")
    if not 0 < p["gamma_min"] < p["gamma_max"] or p["n_gamma"] < 1:
        raise UsageError("gamma grid must satisfy 0 < gamma_min < gamma_max and n_gamma >= 1")
    X, inputs = _load_input(args.input, p["format"], p["pca"])
    os.makedirs(args.out, exist_ok=True)
    grid = np.geomspace(p["gamma_min"], p["gamma_max"], p["n_gamma"])
    res = estimate_effective_gamma(X, sizes, grid, k=p["k"], nu=p["nu"], epochs=p["epochs"], iters=p["iters"],
                                   theta=p["theta"], seed=p["seed"], search=p["search"])
    table = os.path.join(args.out, "gamma.csv")
    with open(table, "w") as fh:
        fh.write("n,gamma_hat,reference_span,predicted_k_nu_over_n\n")
        for n, g, s in zip(res.sizes, res.gamma_hat, res.reference_span):
            fh.write(f"{n},{float(g)!r},{float(s)!r},{p['k'] * p['nu'] / n!r}\n")
    report = os.path.join(args.out, "gamma.json")
    with open(report, "w") as fh:
        json.dump({k: v for k, v in res.to_dict().items() if k != "spans"}
                  | {"spans": [{repr(g): s for g, s in d.items()} for d in res.spans]}, fh, indent=1)
    svg = os.path.join(args.out, "gamma.svg")
    fit = None
    g = np.asarray(res.gamma_hat, dtype=float)
    ok = np.isfinite(g)
    if ok.sum() >= 2:
        slope, icpt = np.polyfit(np.log10(np.asarray(sizes)[ok]), np.log10(g[ok]), 1)
        fit = (slope, icpt)
    curve_svg(sizes, {"gamma_hat": g}, svg, logx=True, logy=True, xlabel="n", ylabel="effective gamma", fit=fit)
    _write_manifest(args.out, "match-gamma", inputs, p, {"table": table, "report": report, "svg": svg})
    for n, gh in zip(res.sizes, res.gamma_hat):
        print(f"n = {n}: gamma_hat = {gh:.4g}")
    if len(sizes) > 1:
        print(f"log-log slope = {res.slope:.3f}")
    else:
        print("single size: slope undefined")
    return EXIT_OK


def cmd_gen(args, parser):
    p = _resolve(args, parser, GEN_DEFAULTS)
    if not args.out:
        raise UsageError("--out is required")
    X, labels = gen_gaussian_chain(p["n_clusters"], p["per_cluster"], p["dim"], p["spacing"], p["seed"])
    write_matrix(args.out, X)
    if p["labels_out"]:
        np.savetxt(p["labels_out"], labels, fmt="%d")
    print(f"wrote {X.shape[0]} x {X.shape[1]} to {args.out}")
    return EXIT_OK


def cmd_rerun(args, parser):
    try:
        with open(args.manifest) as fh:
            m = json.load(fh)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read manifest: {exc}") from None
    if m.get("command") != "embed":
        raise UsageError("only embed manifests can be re-run")
    ns = argparse.Namespace(input=m["dataset"]["paths"], out=args.out, config=None, **m["params"])
    return cmd_embed(ns, argparse.ArgumentParser())


def build_parser():
    parser = argparse.ArgumentParser(prog="nespectrum", description="Neighbor embeddings along the attraction-repulsion spectrum.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="key = value file; flags take precedence")
        sp.add_argument("--out", help="output directory (file for gen)")
        sp.add_argument("--seed", type=int)
        if data:
            sp.add_argument("--input", nargs="+", help="data file(s); several files are stacked row-wise")
            sp.add_argument("--format", choices=["csv", "idx-images", "raw-f32"])
            sp.add_argument("--pca", type=int, help="reduce input to this many principal components first (0 = off)")

    e = sub.add_parser("embed", help="compute one embedding")
    common(e)
    e.add_argument("--method", choices=METHODS)
    e.add_argument("--labels", help="labels file used to color the SVG")
    e.add_argument("--k", type=int, help="neighbors for binary affinities")
    e.add_argument("--perplexity", type=float)
    e.add_argument("--affinity", choices=["gaussian", "binary"])
    e.add_argument("--rho", type=float, help="exaggeration")
    e.add_argument("--early-rho", dest="early_rho", type=float)
    e.add_argument("--early-iters", dest="early_iters", type=int)
    e.add_argument("--learning-rate", dest="learning_rate")
    e.add_argument("--iters", type=int)
    e.add_argument("--epochs", type=int)
    e.add_argument("--nu", type=int, help="negative samples per edge update")
    e.add_argument("--gamma", type=float)
    e.add_argument("--epsilon", type=float)
    e.add_argument("--theta", type=float)
    e.add_argument("--edge-repulsion", dest="edge_repulsion", action=argparse.BooleanOptionalAction)
    e.add_argument("--attraction", type=float)
    e.add_argument("--init", choices=["pca", "random"])
    e.add_argument("--output-format", dest="output_format", choices=["csv", "raw-f32"])
    e.add_argument("--svg", action=argparse.BooleanOptionalAction)
    e.add_argument("--knn-algorithm", dest="knn_algorithm", choices=["auto", "exact", "vp-tree"])
    e.set_defaults(func=cmd_embed)

    s = sub.add_parser("sweep", help="t-SNE across an exaggeration grid")
    common(s)
    s.add_argument("--perplexity", type=float)
    s.add_argument("--rho-min", dest="rho_min", type=float)
    s.add_argument("--rho-max", dest="rho_max", type=float)
    s.add_argument("--n-rho", dest="n_rho", type=int)
    s.add_argument("--rhos", help="comma-separated explicit grid")
    s.add_argument("--reference", help="reference embedding file")
    s.add_argument("--reference-method", dest="reference_method", choices=["umap-ns", "umap-bh", "fa2", "le", "self"])
    s.add_argument("--iters", type=int)
    s.add_argument("--theta", type=float)
    s.add_argument("--recall-samples", dest="recall_samples", type=int)
    s.add_argument("--dcor-samples", dest="dcor_samples", type=int)
    s.add_argument("--knn-algorithm", dest="knn_algorithm", choices=["auto", "exact", "vp-tree"])
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("match-gamma", help="effective repulsion of negative sampling across sizes")
    common(g)
    g.add_argument("--sizes", help="comma-separated ascending subset sizes")
    g.add_argument("--gamma-min", dest="gamma_min", type=float)
    g.add_argument("--gamma-max", dest="gamma_max", type=float)
    g.add_argument("--n-gamma", dest="n_gamma", type=int)
    g.add_argument("--k", type=int)
    g.add_argument("--nu", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--iters", type=int)
    g.add_argument("--theta", type=float)
    g.add_argument("--search", choices=["grid", "bisect"])
    g.set_defaults(func=cmd_match_gamma)

    n = sub.add_parser("gen", help="write a Gaussian chain toy dataset")
    common(n, data=False)
    n.add_argument("--n-clusters", dest="n_clusters", type=int)
    n.add_argument("--per-cluster", dest="per_cluster", type=int)
    n.add_argument("--dim", type=int)
    n.add_argument("--spacing", type=float)
    n.add_argument("--labels-out", dest="labels_out")
    n.set_defaults(func=cmd_gen)

    r = sub.add_parser("rerun", help="repeat an embed run from its manifest")
    r.add_argument("manifest")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if os.environ.get("NE_THREADS"):
            _apply_threads(_threads())
        sub = parser._subparsers._group_actions[0].choices[args.command]
        return args.func(args, sub)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OptimizationDiverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
