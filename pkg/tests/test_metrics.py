import json

import numpy as np
import pytest
from _oracles import spearman

from nespectrum import TSNE
from nespectrum.affinity import BINARY, GAUSSIAN, AffinityGraph, binary_affinities
from nespectrum.knn import build_knn, symmetrize_union
from nespectrum.metrics import distance_correlation, embedding_span, estimate_effective_gamma, knn_recall, loglog_slope
from nespectrum.optimize import Schedule, run_umap_full


def _distance_affinities(Y):
    """All pairs with value decreasing in distance, so the top-k are the k nearest."""
    n = len(Y)
    r, c = np.triu_indices(n, 1)
    d = np.linalg.norm(Y[r] - Y[c], axis=1)
    return AffinityGraph(n, r, c, np.exp(-d), GAUSSIAN)


def _dcor_oracle(X, Y):
    """Distance correlation from the S1 + S2 - 2 S3 decomposition."""

    def dist(Z):
        return np.sqrt(((Z[:, None] - Z[None]) ** 2).sum(-1))

    def dcov2(a, b):
        s1 = (a * b).mean()
        s2 = a.mean() * b.mean()
        s3 = (a.mean(1) * b.mean(1)).mean()
        return s1 + s2 - 2 * s3

    a, b = dist(X), dist(Y)
    return np.sqrt(dcov2(a, b) / np.sqrt(dcov2(a, a) * dcov2(b, b)))


class TestRecall:
    def test_perfect_preservation(self):
        Y = np.random.default_rng(0).standard_normal((80, 2))
        r = knn_recall(_distance_affinities(Y), Y, k=10)
        assert r.value == 1.0 and r.n_samples == 80

    def test_permutation_null(self):
        rng = np.random.default_rng(1)
        n, k = 400, 15
        Y = rng.standard_normal((n, 2))
        A = _distance_affinities(Y)
        vals = [knn_recall(A, Y[rng.permutation(n)], k=k).value for _ in range(5)]
        p = k / (n - 1)
        se = np.sqrt(p * (1 - p) / k * (n - 1 - k) / (n - 2) / (n * len(vals)))
        assert abs(np.mean(vals) - p) <= 3 * se

    def test_rigid_transform_invariance(self):
        rng = np.random.default_rng(2)
        Y = rng.standard_normal((150, 2))
        A = binary_affinities(symmetrize_union(build_knn(rng.standard_normal((150, 5)), 8)))
        R = np.array([[0.6, -0.8], [0.8, 0.6]])
        a = knn_recall(A, Y, k=8)
        b = knn_recall(A, 3.0 * Y @ R.T + [5.0, -2.0], k=8)
        assert a.value == b.value
        assert a.flags and a.params["affinity"] == BINARY

    def test_subsampling(self):
        Y = np.random.default_rng(3).standard_normal((300, 2))
        r = knn_recall(_distance_affinities(Y), Y, k=5, n_samples=50, seed=4)
        assert r.n_samples == 50 and r.value == 1.0 and r.seed == 4

    def test_bad_k(self):
        Y = np.zeros((5, 2))
        with pytest.raises(ValueError):
            knn_recall(_distance_affinities(np.random.default_rng(0).standard_normal((5, 2))), Y, k=5)

    def test_recall_falls_with_exaggeration(self, small_chain):
        X, _ = small_chain
        rhos = [1, 2, 4, 8, 30, 100]
        vals = []
        for rho in rhos:
            est = TSNE(exaggeration=rho, perplexity=20, random_state=0).fit(X)
            vals.append(knn_recall(est.affinities_, est.embedding_).value)
        assert spearman(rhos, vals) <= -0.9


class TestDistanceCorrelation:
    def test_self_is_one(self):
        Y = np.random.default_rng(0).standard_normal((100, 2))
        assert abs(distance_correlation(Y, Y).value - 1) <= 1e-12

    def test_similarity_transform(self):
        rng = np.random.default_rng(1)
        Y = rng.standard_normal((200, 2))
        R = np.array([[0.0, -1.0], [1.0, 0.0]])
        assert abs(distance_correlation(Y, 7 * Y @ R + 3).value - 1) <= 1e-9

    def test_matches_decomposition_oracle(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((120, 3))
        Y = X[:, :2] ** 2 + 0.5 * rng.standard_normal((120, 2))
        assert abs(distance_correlation(X, Y).value - _dcor_oracle(X, Y)) <= 1e-10

    def test_independent_clouds(self):
        rng = np.random.default_rng(3)
        X, Y = rng.standard_normal((2000, 2)), rng.standard_normal((2000, 2))
        v = distance_correlation(X, Y).value
        assert v <= 0.1
        sub = slice(0, 500)
        assert abs(distance_correlation(X[sub], Y[sub]).value - _dcor_oracle(X[sub], Y[sub])) <= 1e-10

    def test_symmetric(self):
        rng = np.random.default_rng(4)
        X, Y = rng.standard_normal((100, 2)), rng.standard_normal((100, 5))
        assert abs(distance_correlation(X, Y).value - distance_correlation(Y, X).value) <= 1e-14

    def test_degenerate(self):
        r = distance_correlation(np.ones((10, 2)), np.random.default_rng(0).standard_normal((10, 2)))
        assert r.value == 0.0 and "degenerate" in r.flags

    def test_subsample_and_report(self):
        Y = np.random.default_rng(5).standard_normal((600, 2))
        r = distance_correlation(Y, Y, subsample=100)
        assert r.n_samples == 100
        d = json.loads(r.to_json())
        assert d["metric"] == "distance_correlation" and float(r) == r.value

    def test_row_mismatch(self):
        with pytest.raises(ValueError):
            distance_correlation(np.zeros((3, 2)), np.zeros((4, 2)))


class TestSpanSlope:
    def test_span(self):
        assert embedding_span(np.array([[0.0, -1.0], [3.0, 2.0]])).value == 4.0

    def test_slope(self):
        sizes = np.array([1000, 2000, 4000])
        assert abs(loglog_slope(sizes, 5.0 / sizes) + 1) < 1e-12
        assert np.isnan(loglog_slope([1000], [1.0]))

    def test_negative_sampling_prediction_arithmetic(self):
        # k nu / n for k = 15, nu = 5
        sizes = np.array([2000, 5000, 10000])
        pred = 15 * 5 / sizes
        np.testing.assert_allclose(pred, [0.0375, 0.015, 0.0075])
        assert abs(loglog_slope(sizes, pred) + 1) < 1e-12


class TestEffectiveGamma:
    @pytest.mark.parametrize("search", ["grid", "bisect"])
    def test_recovers_planted_gamma(self, search):
        X = np.random.default_rng(0).standard_normal((400, 6))
        sched = Schedule(total_iters=150, early_iters=0)
        grid = [0.03, 0.1, 0.3, 1.0, 3.0]

        def reference(A, Y0, seed):
            return run_umap_full(A, Y0, gamma=0.3, sched=sched)[0]

        res = estimate_effective_gamma(X, [200, 400], grid, iters=150, reference=reference, search=search)
        assert res.gamma_hat == [0.3, 0.3]
        assert abs(res.slope) < 1e-12
        if search == "bisect":
            assert all(len(s) < len(grid) for s in res.spans)

    def test_rejects(self):
        X = np.zeros((10, 2))
        with pytest.raises(ValueError):
            estimate_effective_gamma(X, [5, 3], [1.0])
        with pytest.raises(ValueError):
            estimate_effective_gamma(X, [5], [])
        with pytest.raises(ValueError):
            estimate_effective_gamma(X, [50], [1.0])
