"""Greedy graph coarsening into a balanced binary vertex hierarchy.

Each coarsening round visits vertices in a seeded-shuffled order and
matches each unmarked vertex with the unmarked neighbor maximizing the
normalized-cut score w_ij * (1/d_i + 1/d_j); leftovers become singleton
clusters. Coarse edge weights accumulate the fine weights between
clusters (self-weights collect intra-cluster mass). After all rounds the
levels are padded with fake (degree-0) vertices and reordered so that the
children of parent slot i sit at slots 2i and 2i+1 (0-based), which makes
nearest-neighbor upsampling a plain row gather.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from meshlift import tensor as T
from meshlift.graphs import Graph, ScaledLaplacian, scaled_laplacian
from meshlift.tensor import ShapeError, Tensor


@dataclass
class CoarseningHierarchy:
    """Coarse-to-fine vertex hierarchy over a mesh graph.

    levels[0] is the finest (tree-ordered, fake slots included),
    levels[-1] the coarsest. tree_ids[c][slot] holds the pre-padding
    vertex id at that slot, or -1 for a fake slot. perm maps an original
    mesh vertex index to its level-0 tree slot. raw_parents[c] maps
    pre-padding ids at level c to cluster ids at level c+1.
    """

    levels: list[Graph]
    scaled_laplacians: list[ScaledLaplacian]
    perm: np.ndarray
    tree_ids: list[np.ndarray]
    raw_parents: list[np.ndarray]
    num_real: list[int]
    num_fake: list[int]
    seed: int

    @property
    def num_levels(self) -> int:
        return len(self.levels) - 1

    def level_size(self, c: int) -> int:
        return self.levels[c].num_vertices

    def summary(self) -> str:
        lines = []
        for c, g in enumerate(self.levels):
            lines.append(
                f"level {c}: {g.num_vertices} slots = {self.num_real[c]} real"
                f" + {self.num_fake[c]} fake")
        return "\n".join(lines)


def _match_round(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One greedy matching pass; returns fine-vertex -> cluster-id map."""
    n = weights.shape[0]
    degrees = weights.sum(axis=1)
    cluster = np.full(n, -1, dtype=np.int64)
    next_id = 0
    for u in rng.permutation(n):
        if cluster[u] >= 0:
            continue
        best_v = -1
        best_score = -np.inf
        row = weights[u]
        for v in np.flatnonzero(row):
            if v == u or cluster[v] >= 0:
                continue
            score = row[v] * (1.0 / degrees[u] + 1.0 / degrees[v])
            if score > best_score:
                best_score = score
                best_v = int(v)
        cluster[u] = next_id
        if best_v >= 0:
            cluster[best_v] = next_id
        next_id += 1
    return cluster


def _accumulate_weights(weights: np.ndarray, cluster: np.ndarray) -> np.ndarray:
    m = int(cluster.max()) + 1
    assign = np.zeros((weights.shape[0], m))
    assign[np.arange(weights.shape[0]), cluster] = 1.0
    return assign.T @ weights @ assign


def _tree_order(raw_parents: list[np.ndarray], n_coarsest: int) -> list[np.ndarray]:
    """Slot layouts per level, coarsest row first; -1 marks a fake slot."""
    orders = [np.arange(n_coarsest, dtype=np.int64)]
    for parents in reversed(raw_parents):
        children: dict[int, list[int]] = {}
        for fine, p in enumerate(parents):
            children.setdefault(int(p), []).append(fine)
        slots: list[int] = []
        for pid in orders[-1]:
            kids = children.get(int(pid), []) if pid >= 0 else []
            while len(kids) < 2:
                kids.append(-1)
            slots.extend(kids)
        orders.append(np.asarray(slots, dtype=np.int64))
    orders.reverse()  # finest first
    return orders


def _reorder_adjacency(adj: np.ndarray, ids: np.ndarray) -> np.ndarray:
    size = ids.size
    out = np.zeros((size, size))
    real = np.flatnonzero(ids >= 0)
    src = ids[real]
    out[np.ix_(real, real)] = adj[np.ix_(src, src)]
    return out


def graclus_coarsen(g: Graph, levels: int, seed: int = 0) -> CoarseningHierarchy:
    """Coarsen a mesh graph `levels` times into a padded binary hierarchy.

    Deterministic for a given seed. Every level c satisfies
    |V^c| == 2 |V^{c+1}| after padding.
    """
    if levels < 1:
        raise ValueError(f"graclus_coarsen: levels must be >= 1, got {levels}")
    n0 = g.num_vertices
    if n0 < 1 or np.all(g.is_fake()):
        raise ValueError("graclus_coarsen: graph has no real vertices")
    cap = max(1, int(np.ceil(np.log2(n0))))
    if levels > cap:
        raise ValueError(
            f"graclus_coarsen: {levels} levels would coarsen {n0} vertices "
            f"past a single vertex (cap {cap})")

    rng = np.random.default_rng(seed)
    weights = g.adjacency.copy()  # initial edge weights are all 1
    adjacencies = [g.adjacency.copy()]
    raw_parents: list[np.ndarray] = []
    for _ in range(levels):
        cluster = _match_round(weights, rng)
        raw_parents.append(cluster)
        weights = _accumulate_weights(weights, cluster)
        coarse_adj = (weights > 0).astype(np.float64)
        np.fill_diagonal(coarse_adj, 1.0)
        adjacencies.append(coarse_adj)

    n_coarsest = adjacencies[-1].shape[0]
    if n_coarsest < 1:
        raise ValueError("graclus_coarsen: coarsest level has no vertices")
    tree_ids = _tree_order(raw_parents, n_coarsest)

    graphs = [Graph(_reorder_adjacency(adj, ids))
              for adj, ids in zip(adjacencies, tree_ids)]
    laplacians = [scaled_laplacian(lg, seed=seed) for lg in graphs]

    perm = np.full(n0, -1, dtype=np.int64)
    finest = tree_ids[0]
    for slot, vid in enumerate(finest):
        if vid >= 0:
            perm[vid] = slot
    if np.any(perm < 0):
        missing = int(np.flatnonzero(perm < 0)[0])
        raise RuntimeError(f"graclus_coarsen: vertex {missing} lost during reordering")

    num_real = [adj.shape[0] for adj in adjacencies]
    num_fake = [ids.size - nr for ids, nr in zip(tree_ids, num_real)]
    return CoarseningHierarchy(
        levels=graphs,
        scaled_laplacians=laplacians,
        perm=perm,
        tree_ids=tree_ids,
        raw_parents=raw_parents,
        num_real=num_real,
        num_fake=num_fake,
        seed=seed,
    )


def upsample_features(f_coarse: Tensor, hierarchy: CoarseningHierarchy,
                      level: int) -> Tensor:
    """Copy each level-(c+1) parent row to its two level-c children.

    The tree ordering makes this a gather with index slot//2; its backward
    therefore sums the two child gradients into the parent row.
    """
    if not 0 <= level < hierarchy.num_levels:
        raise ValueError(
            f"upsample_features: level {level} outside 0..{hierarchy.num_levels - 1}")
    coarse_size = hierarchy.level_size(level + 1)
    if f_coarse.shape[0] != coarse_size:
        raise ShapeError("upsample_features", f_coarse.shape, (coarse_size,))
    fine_size = hierarchy.level_size(level)
    idx = np.arange(fine_size, dtype=np.int64) // 2
    return T.gather_rows(f_coarse, idx)


def apply_perm(f_tree: Tensor, hierarchy: CoarseningHierarchy) -> Tensor:
    """Reorder level-0 tree rows back to original mesh vertex order.

    Output row v equals tree row perm[v]; fake rows are dropped.
    """
    if f_tree.shape[0] != hierarchy.level_size(0):
        raise ShapeError("apply_perm", f_tree.shape, (hierarchy.level_size(0),))
    return T.gather_rows(f_tree, hierarchy.perm)


def scatter_to_tree(f_orig: np.ndarray, hierarchy: CoarseningHierarchy) -> np.ndarray:
    """Inverse of apply_perm on plain arrays: embed original-order rows
    into level-0 tree order, zero-filling fake slots."""
    f_orig = np.asarray(f_orig)
    if f_orig.shape[0] != hierarchy.perm.size:
        raise ValueError(
            f"scatter_to_tree: expected {hierarchy.perm.size} rows, got {f_orig.shape[0]}")
    out = np.zeros((hierarchy.level_size(0),) + f_orig.shape[1:], dtype=f_orig.dtype)
    out[hierarchy.perm] = f_orig
    return out
