import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nespectrum.affinity import (
    BINARY,
    GAUSSIAN,
    PERPLEXITY_RTOL,
    _conditional_probabilities,
    _perplexity_of_beta,
    binary_affinities,
    calibrate_bandwidths,
    normalized_view,
    perplexity_calibrate,
    read_affinities,
    write_affinities,
)
from nespectrum.knn import NeighborGraph, build_knn, symmetrize_union


def _two_neighbor_perplexity(sigma, d):
    # closed form: p_near = 1 / (1 + exp(-(d_far - d_near) / (2 sigma^2)))
    p = 1.0 / (1.0 + np.exp(-(d[1] - d[0]) / (2 * sigma**2)))
    q = 1.0 - p
    h = -sum(t * np.log2(t) for t in (p, q) if t > 0)
    return 2.0**h


def _bisect(f, lo, hi, iters=200):
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@pytest.fixture(scope="module")
def gauss_100():
    X = np.random.default_rng(0).standard_normal((100, 5))
    G = build_knn(X, 30)
    return G, perplexity_calibrate(G, 10)


class TestCalibration:
    def test_equidistant_neighbors_uniform(self):
        sig, flagged = calibrate_bandwidths(np.array([[1.0, 1.0, 1.0]]), 3.0)
        p = _conditional_probabilities(np.array([[1.0, 1.0, 1.0]]), sig)
        np.testing.assert_allclose(p, 1 / 3)
        assert not flagged[0]

    def test_two_neighbor_bisection_oracle(self):
        d = [1.0, 4.0]
        sig, flagged = calibrate_bandwidths(np.array([d]), 1.8)
        oracle = _bisect(lambda s: _two_neighbor_perplexity(s, d) - 1.8, 1e-9, 100.0)
        assert abs(_two_neighbor_perplexity(sig[0], d) - 1.8) <= 1e-5
        assert abs(sig[0] - oracle) / oracle < 1e-4
        assert not flagged[0]

    def test_unreachable_target_flagged(self):
        _, flagged = calibrate_bandwidths(np.array([[2.0, 2.0, 2.0, 2.0]]), 3.0)
        assert flagged[0]

    def test_accuracy_on_unflagged(self, gauss_100):
        G, A = gauss_100
        d = G.dists.reshape(G.n, G.k)
        perp = _perplexity_of_beta(d, 1 / (2 * A.sigmas**2))
        ok = ~A.flagged
        assert ok.all()
        assert np.all(np.abs(perp[ok] - 10) <= PERPLEXITY_RTOL * 10)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0.0, 50.0), min_size=3, max_size=12), st.floats(-3, 3), st.floats(0.01, 2))
    def test_entropy_nondecreasing_in_sigma(self, d, log_sigma, step):
        d = np.array([d])
        s1 = np.exp(log_sigma)
        s2 = s1 * np.exp(step)
        h1 = _perplexity_of_beta(d, np.array([1 / (2 * s1**2)]))[0]
        h2 = _perplexity_of_beta(d, np.array([1 / (2 * s2**2)]))[0]
        assert h2 >= h1 * (1 - 1e-12)


class TestGaussian:
    def test_symmetric_and_normalized(self, gauss_100):
        _, A = gauss_100
        assert A.kind == GAUSSIAN
        V = A.to_csr()
        assert abs(V - V.T).max() == 0
        _, _, p = normalized_view(A)
        assert abs(p.sum() - 1) < 1e-9
        assert np.all(A.values > 0) and np.all(A.rows < A.cols)

    def test_conditional_rows_sum_to_one(self, gauss_100):
        G, A = gauss_100
        cond = _conditional_probabilities(G.dists.reshape(G.n, G.k), A.sigmas)
        direct = np.array([cond[i].sum() for i in range(G.n)])
        np.testing.assert_allclose(direct, 1.0, atol=1e-12)

    def test_symmetrization_formula(self, gauss_100):
        G, A = gauss_100
        cond = _conditional_probabilities(G.dists.reshape(G.n, G.k), A.sigmas)
        P = np.zeros((G.n, G.n))
        P[G.rows(), G.indices] = cond.ravel()
        np.testing.assert_allclose(A.to_csr().toarray(), (P + P.T) / 2, atol=1e-15)

    def test_total_mass_is_n(self, gauss_100):
        _, A = gauss_100
        assert abs(A.total_mass - A.n) < 1e-9

    def test_duplicates_pass_through(self):
        X = np.vstack([np.zeros((2, 3)), np.random.default_rng(1).standard_normal((40, 3))])
        A = perplexity_calibrate(build_knn(X, 9), 3)
        assert np.isfinite(A.values).all() and A.to_csr()[0, 1] > 0

    def test_preconditions(self):
        G = build_knn(np.random.default_rng(2).standard_normal((30, 2)), 5)
        with pytest.raises(ValueError):
            perplexity_calibrate(G, 1.5)
        with pytest.raises(ValueError):
            perplexity_calibrate(G, 6)
        with pytest.raises(ValueError):
            perplexity_calibrate(symmetrize_union(G), 3)


class TestBinary:
    def test_uniform_normalization(self):
        X = np.random.default_rng(3).standard_normal((60, 4))
        A = binary_affinities(symmetrize_union(build_knn(X, 5)))
        E = A.n_pairs
        assert A.kind == BINARY and A.total_mass == 2 * E
        _, _, p = normalized_view(A)
        np.testing.assert_allclose(p, 1 / (2 * E))
        assert A.values.max() / A.values.min() == 1

    def test_single_edge(self):
        G = NeighborGraph(2, np.array([0, 1, 2]), np.array([1, 0]), np.ones(2), False, 1)
        _, _, p = normalized_view(binary_affinities(G))
        np.testing.assert_array_equal(p, [0.5, 0.5])

    def test_ten_edges(self):
        edges = [(i, i + 1) for i in range(10)]
        rows = np.repeat(np.arange(11), [1] + [2] * 9 + [1])
        cols = np.array([j for i in range(11) for j in (i - 1, i + 1) if 0 <= j <= 10])
        indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=11))])
        A = binary_affinities(NeighborGraph(11, indptr, cols, np.ones(len(cols)), False, 1))
        assert A.n_pairs == len(edges)
        np.testing.assert_allclose(normalized_view(A)[2], 0.05)

    def test_empty_and_directed_rejected(self):
        G = NeighborGraph(3, np.zeros(4, dtype=np.int64), np.array([], dtype=np.int64), np.array([]), False, 0)
        with pytest.raises(ValueError):
            binary_affinities(G)
        with pytest.raises(ValueError):
            binary_affinities(build_knn(np.eye(4), 1))


def test_round_trip(tmp_path, gauss_100):
    _, A = gauss_100
    p = tmp_path / "a.txt"
    write_affinities(p, A)
    B = read_affinities(p)
    assert B.n == A.n and B.kind == A.kind
    np.testing.assert_array_equal(B.rows, A.rows)
    np.testing.assert_array_equal(B.values, A.values)
