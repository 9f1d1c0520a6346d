import numpy as np
import pytest

from nespectrum import quadtree
from nespectrum.forces import _invsq_rep_exact, _tsne_rep_exact, _umap_rep_exact
from nespectrum.quadtree import KERNEL_INVSQ, KERNEL_TSNE, KERNEL_UMAP, build, repulsion


def _rel_err(a, b):
    return np.linalg.norm(a - b, axis=1) / np.linalg.norm(b, axis=1)


@pytest.fixture(scope="module")
def cloud():
    return np.random.default_rng(0).standard_normal((1000, 2)) * 5


class TestBuild:
    def test_single_point(self):
        t = build(np.array([[3.0, -1.0]]))
        assert t.n_nodes == 1 and t.is_leaf(0)
        assert t.center_of_mass(0) == (3.0, -1.0) and t.mass(0) == 1

    def test_square_corners(self):
        Y = np.array([[0.0, 0], [1, 0], [0, 1], [1, 1]])
        t = build(Y)
        np.testing.assert_allclose(t.center_of_mass(0), [0.5, 0.5])
        kids = t.children(0)
        assert len(kids) == 4 and all(t.count(c) == 1 for c in kids)

    def test_center_of_mass_oracle(self, cloud):
        m = np.random.default_rng(1).uniform(1, 5, len(cloud))
        t = build(cloud, m)
        np.testing.assert_allclose(t.center_of_mass(0), (m[:, None] * cloud).sum(0) / m.sum(), rtol=1e-12)
        for node in range(t.n_nodes):
            pts = t.points(node)
            if len(pts):
                np.testing.assert_allclose(t.mass(node), m[pts].sum(), rtol=1e-12)
                if not t.is_leaf(node):
                    assert sum(t.count(c) for c in t.children(node)) == len(pts)

    def test_coincident_points_share_leaf(self):
        t = build(np.array([[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]))
        assert t.n_nodes == 1 and t.count(0) == 3

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            build(np.zeros((5, 3)))
        with pytest.raises(ValueError):
            build(np.array([[0.0, np.nan]]))
        with pytest.raises(ValueError):
            repulsion(build(np.zeros((1, 2))), np.zeros((1, 2)), KERNEL_TSNE, theta=-1)


class TestRepulsion:
    def test_theta_zero_is_exact(self, cloud):
        t = build(cloud)
        raw, z = repulsion(t, cloud, KERNEL_TSNE, theta=0.0)
        ex, zx = _tsne_rep_exact(cloud)
        assert np.abs(raw - ex).max() <= 1e-10 * np.abs(ex).max()
        assert abs(z - zx) <= 1e-10 * zx
        raw, _ = repulsion(t, cloud, KERNEL_UMAP, theta=0.0, eps=0.001)
        ex = _umap_rep_exact(cloud, 0.001)
        assert np.abs(raw - ex).max() <= 1e-10 * np.abs(ex).max()

    def test_error_shrinks_with_theta(self, cloud):
        t = build(cloud)
        ex, zx = _tsne_rep_exact(cloud)
        errs, zerrs = [], []
        for theta in (0.25, 0.5, 1.0):
            raw, z = repulsion(t, cloud, KERNEL_TSNE, theta)
            errs.append(np.median(_rel_err(raw, ex)))
            zerrs.append(abs(z - zx) / zx)
        assert errs[0] < errs[1] < errs[2]
        assert errs[1] < 0.02 and zerrs[1] < 0.01

    def test_distant_cluster_acts_as_point_mass(self):
        rng = np.random.default_rng(2)
        b = rng.standard_normal((50, 2)) * 0.01 + [100.0, 0]
        Y = np.vstack([[0.0, 0.0], b])
        m = np.ones(51)
        raw, _ = repulsion(build(Y, m), Y, KERNEL_INVSQ, theta=0.5)
        # 50 unit masses at distance 100 along -x
        assert abs(raw[0, 0] - (-0.5)) <= 0.01 * 0.5
        assert abs(raw[0, 1]) <= 0.01 * 0.5
        np.testing.assert_allclose(raw[0], _invsq_rep_exact(Y, m)[0], rtol=0.01)

    def test_invsq_coincident_pair_finite_and_antisymmetric(self):
        Y = np.array([[0.0, 0.0], [0.0, 0.0], [3.0, 4.0]])
        t = build(Y)
        raw, _ = repulsion(t, Y, KERNEL_INVSQ, theta=0.0)
        assert np.isfinite(raw).all()
        np.testing.assert_allclose(raw.sum(0), 0, atol=1e-6 * np.abs(raw).max())
        assert np.linalg.norm(raw[0] - raw[1]) > 1e8
        ex = _invsq_rep_exact(Y, np.ones(3))
        np.testing.assert_allclose(raw, ex, rtol=1e-12)

    def test_masses_scale_invsq(self):
        Y = np.random.default_rng(3).standard_normal((30, 2))
        m = np.full(30, 3.0)
        a, _ = repulsion(build(Y, m), Y, KERNEL_INVSQ, theta=0.0)
        b, _ = repulsion(build(Y), Y, KERNEL_INVSQ, theta=0.0)
        np.testing.assert_allclose(a, 9 * b, rtol=1e-12)

    def test_deep_clustered_input(self):
        # points separated by ~1e-12 force deep subdivision without failing
        Y = np.vstack([np.zeros((1, 2)), np.array([[1e-12, 0.0]]), np.random.default_rng(4).standard_normal((20, 2))])
        raw, z = repulsion(build(Y), Y, KERNEL_TSNE, 0.0)
        ex, zx = _tsne_rep_exact(Y)
        np.testing.assert_allclose(raw, ex, atol=1e-12)
        assert quadtree.MAX_DEPTH >= 40
