"""Coarsening hierarchy: structural invariants, determinism, upsampling."""

import numpy as np
import pytest

from meshlift import coarsen as C
from meshlift import tensor as T
from meshlift.graphs import Graph
from meshlift.tensor import Tensor


def path_graph(n):
    a = np.eye(n)
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = 1.0
    return Graph(a)


def triangle_graph():
    a = np.ones((3, 3))
    return Graph(a)


def random_mesh_like_graph(n, seed, extra=2.0):
    """Connected random graph: a random spanning tree plus extra edges."""
    rng = np.random.default_rng(seed)
    a = np.eye(n)
    order = rng.permutation(n)
    for i in range(1, n):
        j = order[rng.integers(0, i)]
        a[order[i], j] = a[j, order[i]] = 1.0
    for _ in range(int(extra * n)):
        i, j = rng.integers(0, n, 2)
        if i != j:
            a[i, j] = a[j, i] = 1.0
    return Graph(a)


def check_invariants(g, h):
    """The full structural contract of a hierarchy over graph g."""
    c_levels = h.num_levels
    assert len(h.levels) == c_levels + 1
    # exact doubling of padded sizes
    for c in range(c_levels):
        assert h.level_size(c) == 2 * h.level_size(c + 1), c
    # coarsest level is all real
    assert h.num_fake[-1] == 0
    for c, lvl in enumerate(h.levels):
        assert h.num_real[c] + h.num_fake[c] == lvl.num_vertices
        # fake slots are exactly the degree-0 rows
        fake_slots = h.tree_ids[c] < 0
        np.testing.assert_array_equal(lvl.is_fake(), fake_slots)
    # parent-child law: slot s at level c has parent slot s//2 at level c+1,
    # and the raw matching agrees
    for c in range(c_levels):
        ids_fine = h.tree_ids[c]
        ids_coarse = h.tree_ids[c + 1]
        parents = h.raw_parents[c]
        for slot, vid in enumerate(ids_fine):
            pid = ids_coarse[slot // 2]
            if vid >= 0:
                assert pid == parents[vid], (c, slot)
            # a fake child under a real parent is allowed (singleton pad);
            # a real child under a fake parent is not
            if pid < 0:
                assert vid < 0, (c, slot)
    # perm is a bijection original vertices -> real level-0 slots
    n0 = g.num_vertices
    assert h.perm.shape == (n0,)
    assert len(set(h.perm.tolist())) == n0
    real_slots = set(np.flatnonzero(h.tree_ids[0] >= 0).tolist())
    assert set(h.perm.tolist()) == real_slots
    # connectivity preservation: adjacent fine vertices have adjacent-or-equal
    # parent clusters
    for c in range(c_levels):
        fine = h.levels[c].adjacency
        coarse = h.levels[c + 1].adjacency
        n = fine.shape[0]
        for i in range(n):
            for j in np.flatnonzero(fine[i]):
                pi, pj = i // 2, j // 2
                assert pi == pj or coarse[pi, pj] == 1, (c, i, j)
    # level 0 edges equal the original graph's edges, relabeled by perm
    a0 = h.levels[0].adjacency
    recovered = a0[np.ix_(h.perm, h.perm)]
    np.testing.assert_array_equal(recovered, g.adjacency)


class TestHandExamples:
    def test_path_two_vertices_one_level(self):
        h = C.graclus_coarsen(path_graph(2), levels=1, seed=0)
        assert h.level_size(1) == 1 and h.level_size(0) == 2
        assert h.num_fake == [0, 0]  # the pair matches; no padding needed

    def test_triangle_one_level(self):
        h = C.graclus_coarsen(triangle_graph(), levels=1, seed=0)
        # one matched pair plus one singleton -> 2 coarse, 4 fine slots, 1 fake
        assert h.level_size(1) == 2
        assert h.level_size(0) == 4
        assert h.num_fake[0] == 1 and h.num_fake[1] == 0
        check_invariants(triangle_graph(), h)

    def test_single_vertex(self):
        g = Graph(np.array([[1.0]]))
        h = C.graclus_coarsen(g, levels=1, seed=0)
        assert h.level_size(1) == 1 and h.level_size(0) == 2
        assert h.num_fake[0] == 1

    def test_levels_cap_error(self):
        with pytest.raises(ValueError, match="levels"):
            C.graclus_coarsen(triangle_graph(), levels=5, seed=0)
        with pytest.raises(ValueError, match="levels must be"):
            C.graclus_coarsen(triangle_graph(), levels=0, seed=0)


class TestInvariantsOnRandomGraphs:
    @pytest.mark.parametrize("seed", range(8))
    def test_structural_contract(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(10, 60))
        levels = int(rng.integers(1, 4))
        g = random_mesh_like_graph(n, seed=seed)
        h = C.graclus_coarsen(g, levels=levels, seed=seed)
        check_invariants(g, h)

    def test_deterministic_for_seed(self):
        g = random_mesh_like_graph(40, seed=3)
        h1 = C.graclus_coarsen(g, levels=3, seed=11)
        h2 = C.graclus_coarsen(g, levels=3, seed=11)
        np.testing.assert_array_equal(h1.perm, h2.perm)
        for a, b in zip(h1.levels, h2.levels):
            np.testing.assert_array_equal(a.adjacency, b.adjacency)

    def test_different_seeds_usually_differ(self):
        g = random_mesh_like_graph(40, seed=3)
        h1 = C.graclus_coarsen(g, levels=2, seed=0)
        h2 = C.graclus_coarsen(g, levels=2, seed=1)
        assert not np.array_equal(h1.perm, h2.perm)

    def test_disconnected_graph_supported(self):
        a = np.eye(6)
        a[0, 1] = a[1, 0] = 1.0
        a[2, 3] = a[3, 2] = 1.0
        # vertices 4, 5 isolated (self-loop only)
        g = Graph(a)
        h = C.graclus_coarsen(g, levels=1, seed=0)
        check_invariants(g, h)


class TestUpsampleAndPerm:
    def make(self):
        g = random_mesh_like_graph(20, seed=7)
        return g, C.graclus_coarsen(g, levels=2, seed=7)

    def test_upsample_copies_parent_rows(self):
        _, h = self.make()
        size1 = h.level_size(1)
        f = Tensor(np.random.default_rng(0).standard_normal((size1, 3)), dtype=np.float64)
        up = C.upsample_features(f, h, level=0)
        assert up.shape == (h.level_size(0), 3)
        for i in range(size1):
            np.testing.assert_array_equal(up.data[2 * i], f.data[i])
            np.testing.assert_array_equal(up.data[2 * i + 1], f.data[i])

    def test_upsample_backward_sums_children(self):
        _, h = self.make()
        size1 = h.level_size(1)
        f = Tensor(np.ones((size1, 2)), requires_grad=True, dtype=np.float64)
        with T.Tape():
            up = C.upsample_features(f, h, level=0)
            w = Tensor(np.arange(up.size, dtype=np.float64).reshape(up.shape))
            loss = T.reduce_sum(T.mul(up, w))
        T.backward(loss)
        expected = w.data[0::2] + w.data[1::2]
        np.testing.assert_array_equal(f.grad, expected)

    def test_upsample_shape_errors(self):
        _, h = self.make()
        with pytest.raises(T.ShapeError):
            C.upsample_features(Tensor(np.zeros((3, 2))), h, level=0)
        with pytest.raises(ValueError, match="level"):
            C.upsample_features(Tensor(np.zeros((h.level_size(1), 2))), h, level=5)

    def test_apply_perm_roundtrip(self):
        g, h = self.make()
        f = np.random.default_rng(1).standard_normal((g.num_vertices, 4))
        tree = C.scatter_to_tree(f, h)
        back = C.apply_perm(Tensor(tree, dtype=np.float64), h)
        np.testing.assert_array_equal(back.data, f)

    def test_apply_perm_differentiable(self):
        g, h = self.make()
        tree = Tensor(np.random.default_rng(2).standard_normal((h.level_size(0), 2)),
                      requires_grad=True, dtype=np.float64)
        with T.Tape():
            out = C.apply_perm(tree, h)
            loss = T.reduce_sum(out)
        T.backward(loss)
        # every real slot contributes once; fake slots get zero gradient
        fake = h.tree_ids[0] < 0
        assert np.all(tree.grad[fake] == 0)
        assert np.all(tree.grad[~fake] == 1)
