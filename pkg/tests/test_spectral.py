import numpy as np
import pytest
from scipy import linalg, sparse

from nespectrum.affinity import binary_affinities, perplexity_calibrate
from nespectrum.knn import build_knn, symmetrize_union
from nespectrum.metrics import distance_correlation
from nespectrum.spectral import build_operators, laplacian_eigenmaps, tsne_limit_iteration


def _path3():
    return np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)


def _abs_corr(a, b):
    return abs(np.corrcoef(a, b)[0, 1])


@pytest.fixture(scope="module")
def perp_graph():
    X = np.random.default_rng(0).standard_normal((300, 6))
    return perplexity_calibrate(build_knn(X, 45), 15)


@pytest.fixture(scope="module")
def knn_graph():
    X = np.random.default_rng(1).standard_normal((400, 5))
    return binary_affinities(symmetrize_union(build_knn(X, 10)))


class TestOperators:
    def test_path_laplacian(self):
        ops = build_operators(_path3())
        np.testing.assert_array_equal(ops.laplacian().toarray(), [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
        np.testing.assert_array_equal(ops.degrees, [1, 2, 1])

    def test_constant_vector(self, perp_graph):
        ops = build_operators(perp_graph)
        one = np.ones(ops.n)
        assert np.abs(ops.L_matvec(one)).max() <= 1e-12
        assert np.abs(ops.M_matvec(one) - 1).max() <= 1e-12
        assert np.abs(ops.markov() @ one - 1).max() <= 1e-12

    def test_markov_spectrum(self, perp_graph):
        ops = build_operators(perp_graph)
        M = ops.markov().toarray()
        assert M.min() >= 0
        ev = np.linalg.eigvalsh(M)
        assert ev.min() >= -1 - 1e-12 and abs(ev.max() - 1) <= 1e-10
        x = np.random.default_rng(0).random(ops.n)
        for _ in range(3000):
            x = M @ x
            x /= np.linalg.norm(x)
        assert np.linalg.norm(M @ x - x) <= 1e-10

    def test_matvec_matches_matrices(self, perp_graph):
        ops = build_operators(perp_graph)
        Y = np.random.default_rng(1).standard_normal((ops.n, 2))
        np.testing.assert_allclose(ops.L_matvec(Y), ops.laplacian() @ Y, atol=1e-12)
        np.testing.assert_allclose(ops.M_matvec(Y), ops.markov() @ Y, atol=1e-12)

    def test_eta_bounds(self, perp_graph):
        ops = build_operators(perp_graph)
        assert abs(ops.eta * ops.degrees.max() - 0.9) < 1e-12
        with pytest.raises(ValueError, match="eta must be in"):
            build_operators(perp_graph, eta=2.0 / ops.degrees.max())
        build_operators(perp_graph, eta=1.0 / ops.degrees.max())

    def test_rejects_asymmetric_and_isolated(self):
        with pytest.raises(ValueError):
            build_operators(np.array([[0, 1.0], [0, 0]]))
        with pytest.raises(ValueError):
            build_operators(np.array([[0, 1.0, 0], [1, 0, 0], [0, 0, 0]]))
        with pytest.raises(ValueError):
            build_operators(build_knn(np.eye(4), 1))


class TestLaplacianEigenmaps:
    def test_path_graph(self):
        Y, ev = laplacian_eigenmaps(_path3(), n_components=1)
        # L a = lambda D a: lambda = 1, a = (1, 0, -1) up to sign
        assert abs(ev[0] - 1) < 1e-12
        np.testing.assert_allclose(np.abs(Y[:, 0]), np.array([1, 0, 1]) / np.sqrt(2), atol=1e-12)

    @pytest.mark.parametrize("graph", ["perp_graph", "knn_graph"])
    def test_dense_generalized_oracle(self, graph, request):
        A = request.getfixturevalue(graph)
        Y, ev = laplacian_eigenmaps(A, 2)
        V = A.to_csr().toarray()
        D = np.diag(V.sum(1))
        w, U = linalg.eigh(D - V, D)
        np.testing.assert_allclose(ev, w[1:3], atol=1e-8)
        for c in range(2):
            assert _abs_corr(Y[:, c], U[:, c + 1]) >= 0.999

    def test_sparse_path_agrees(self, knn_graph):
        a, ea = laplacian_eigenmaps(knn_graph, 2)
        b, eb = laplacian_eigenmaps(knn_graph, 2, dense_max_n=10)
        np.testing.assert_allclose(ea, eb, atol=1e-8)
        for c in range(2):
            assert _abs_corr(a[:, c], b[:, c]) >= 0.999

    def test_unit_columns_and_orientation(self, knn_graph):
        Y, _ = laplacian_eigenmaps(knn_graph, 3)
        np.testing.assert_allclose(np.linalg.norm(Y, axis=0), 1, atol=1e-12)
        idx = np.abs(Y).argmax(axis=0)
        assert np.all(Y[idx, np.arange(3)] > 0)

    def test_laplacian_and_normalized_laplacian_agree(self, small_chain):
        # on clustered data the degrees are nearly uniform and both spectra share their leading vectors
        A = perplexity_calibrate(build_knn(small_chain[0], 45), 15)
        Y, _ = laplacian_eigenmaps(A, 2)
        L = build_operators(A).laplacian().toarray()
        U = np.linalg.eigh(L)[1]
        for c in range(2):
            assert _abs_corr(Y[:, c], U[:, c + 1]) >= 0.99

    def test_disconnected_warns(self):
        V = sparse.block_diag([_path3(), _path3()]).toarray()
        with pytest.warns(RuntimeWarning, match="connected components"):
            laplacian_eigenmaps(V, 1)

    def test_bad_components(self):
        with pytest.raises(ValueError):
            laplacian_eigenmaps(_path3(), 3)


class TestLimitIteration:
    def test_recovers_laplacian_eigenvectors(self, knn_graph):
        ops = build_operators(knn_graph)
        U = np.linalg.eigh(ops.laplacian().toarray())[1]
        Y0 = np.random.default_rng(2).standard_normal((ops.n, 2))
        Y = tsne_limit_iteration(ops, Y0, 20_000)
        for c in range(2):
            assert _abs_corr(Y[:, c], U[:, c + 1]) >= 0.999

    def test_without_orthogonalization_columns_align(self, knn_graph):
        ops = build_operators(knn_graph)
        Y0 = np.random.default_rng(3).standard_normal((ops.n, 2))
        Y = tsne_limit_iteration(ops, Y0, 20_000, orthogonalize=False)
        assert _abs_corr(Y[:, 0], Y[:, 1]) >= 0.999

    def test_degenerate_start(self, knn_graph):
        ops = build_operators(knn_graph)
        with pytest.warns(RuntimeWarning, match="degenerate"):
            Y = tsne_limit_iteration(ops, np.ones((ops.n, 2)), 10)
        assert np.all(Y == 0)

    def test_shape_check(self, knn_graph):
        with pytest.raises(ValueError):
            tsne_limit_iteration(build_operators(knn_graph), np.zeros((3, 2)), 1)


def test_strong_exaggeration_approaches_eigenmaps(toy_chain):
    from nespectrum import TSNE

    X, _ = toy_chain
    tsne = TSNE(exaggeration=100, random_state=0).fit(X)
    le, _ = laplacian_eigenmaps(tsne.affinities_, 2)
    assert distance_correlation(tsne.embedding_, le).value >= 0.90
