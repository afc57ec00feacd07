"""The two networks: a 2D-to-3D pose lifter and a pose-to-mesh regressor.

The pose lifter is a fully-connected residual network over flattened
normalized 2D keypoints. The mesh regressor runs graph convolutions on the
joint graph, lifts the joint features to the coarsest mesh level with one
dense layer, then alternates per-level graph-conv blocks and
nearest-neighbor upsampling down the hierarchy to the full-resolution
vertex set.

Batched mesh features live in the stacked (V, batch * f) column layout
throughout, so each Chebyshev application is a single matmul.
"""

from __future__ import annotations

import numpy as np

from meshlift import tensor as T
from meshlift.coarsen import CoarseningHierarchy, apply_perm, upsample_features
from meshlift.graphs import Graph, ScaledLaplacian, chebyshev_conv, scaled_laplacian
from meshlift.layers import BatchNorm1d, GraphConvBlock, Linear, dropout, make_cheb_filter
from meshlift.template import MeshTemplate
from meshlift.tensor import Tensor


def fit_widths(widths, n_levels: int) -> list[int]:
    """Pad (repeating the last entry) or truncate to one width per level;
    the list is in processing order, coarsest level first, and must be
    monotonically non-increasing."""
    widths = [int(w) for w in widths]
    if not widths or any(w < 1 for w in widths):
        raise ValueError(f"fit_widths: bad widths {widths}")
    if any(a < b for a, b in zip(widths, widths[1:])):
        raise ValueError(f"fit_widths: widths must be non-increasing, got {widths}")
    out = widths[:n_levels]
    while len(out) < n_levels:
        out.append(out[-1])
    return out


class _ResidualBlock:
    """Two (linear -> batchnorm -> ReLU -> dropout) stages with an additive skip."""

    def __init__(self, width: int, drop_p: float, rng, dtype):
        self.fc1 = Linear(width, width, rng, dtype)
        self.bn1 = BatchNorm1d(width, dtype)
        self.fc2 = Linear(width, width, rng, dtype)
        self.bn2 = BatchNorm1d(width, dtype)
        self.drop_p = drop_p

    def forward(self, x, training, rng):
        h = dropout(T.relu(self.bn1.forward(self.fc1.forward(x), training)),
                    self.drop_p, training, rng)
        h = dropout(T.relu(self.bn2.forward(self.fc2.forward(h), training)),
                    self.drop_p, training, rng)
        return T.add(x, h)

    def parameters(self):
        out = []
        for name, mod in (("fc1", self.fc1), ("bn1", self.bn1),
                          ("fc2", self.fc2), ("bn2", self.bn2)):
            out += [(f"{name}.{n}", p) for n, p in mod.parameters()]
        return out

    def bn_modules(self):
        return [("bn1", self.bn1), ("bn2", self.bn2)]


class PoseLifter:
    """Lift flattened normalized 2D keypoints to a root-relative 3D pose (mm)."""

    def __init__(self, num_joints: int, hidden: int = 4096, num_blocks: int = 2,
                 drop_p: float = 0.5, root_index: int = 0, seed: int = 0,
                 dtype=np.float32):
        rng = np.random.default_rng([seed, 101])
        self.num_joints = num_joints
        self.root_index = root_index
        self.fc_in = Linear(2 * num_joints, hidden, rng, dtype)
        self.blocks = [_ResidualBlock(hidden, drop_p, rng, dtype)
                       for _ in range(num_blocks)]
        self.fc_out = Linear(hidden, 3 * num_joints, rng, dtype)

    def forward(self, x: Tensor, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        """(B, 2J) normalized keypoints -> (B, 3J) root-relative pose."""
        if x.ndim != 2 or x.shape[1] != 2 * self.num_joints:
            raise T.ShapeError("pose_lifter", x.shape, (2 * self.num_joints,))
        b = x.shape[0]
        h = self.fc_in.forward(x)
        for blk in self.blocks:
            h = blk.forward(h, training, rng)
        y = self.fc_out.forward(h)
        # pin the root joint to the origin by subtracting its own output
        j = self.num_joints
        jbf = T.transpose(T.reshape(y, (b, j, 3)), (1, 0, 2))
        root = T.repeat_rows(T.gather_rows(jbf, [self.root_index]), j)
        return T.reshape(T.transpose(T.sub(jbf, root), (1, 0, 2)), (b, 3 * j))

    def named_parameters(self):
        out = [(f"fc_in.{n}", p) for n, p in self.fc_in.parameters()]
        for i, blk in enumerate(self.blocks):
            out += [(f"blocks.{i}.{n}", p) for n, p in blk.parameters()]
        out += [(f"fc_out.{n}", p) for n, p in self.fc_out.parameters()]
        return out

    def named_batchnorms(self):
        out = []
        for i, blk in enumerate(self.blocks):
            out += [(f"blocks.{i}.{n}", bn) for n, bn in blk.bn_modules()]
        return out


class MeshRegressor:
    """Regress root-relative mesh vertices from 2D keypoints plus a 3D pose."""

    def __init__(self, template: MeshTemplate, hierarchy: CoarseningHierarchy,
                 pose_graph: Graph, level_widths=(64, 64, 32, 32),
                 pose_width: int = 64, order: int = 3,
                 across_level_residual: bool = False, seed: int = 0,
                 dtype=np.float32):
        rng = np.random.default_rng([seed, 202])
        c = hierarchy.num_levels
        self.template = template
        self.hierarchy = hierarchy
        self.pose_lap = scaled_laplacian(pose_graph, seed=hierarchy.seed)
        self.num_joints = pose_graph.num_vertices
        self.order = order
        self.widths = fit_widths(level_widths, c + 1)
        self.pose_width = pose_width
        self.across_level_residual = across_level_residual

        self.pose_blocks = [
            GraphConvBlock(5, pose_width, order, rng, dtype),
            GraphConvBlock(pose_width, pose_width, order, rng, dtype),
        ]
        coarse_size = hierarchy.level_size(c)
        self.lift = Linear(self.num_joints * pose_width,
                           coarse_size * self.widths[0], rng, dtype)
        self.level_blocks = []
        self.skip_projections: list[Tensor | None] = []
        prev = self.widths[0]
        for w in self.widths:
            self.level_blocks.append((
                GraphConvBlock(prev, w, order, rng, dtype),
                GraphConvBlock(w, w, order, rng, dtype),
            ))
            if across_level_residual and prev != w:
                s = np.sqrt(6.0 / prev)
                self.skip_projections.append(Tensor(
                    rng.uniform(-s, s, size=(prev, w)), requires_grad=True,
                    dtype=dtype))
            else:
                self.skip_projections.append(None)
            prev = w
        self.head = make_cheb_filter(self.widths[-1], 3, order, rng, dtype)

    def forward(self, p2d: Tensor, p3d: Tensor, training: bool = False) -> Tensor:
        """(B, J, 2) normalized keypoints + (B, J, 3) pose -> (B, V, 3) mesh (mm)."""
        j = self.num_joints
        if p2d.ndim != 3 or p2d.shape[1:] != (j, 2):
            raise T.ShapeError("mesh_regressor", p2d.shape, (j, 2))
        if p3d.ndim != 3 or p3d.shape[1:] != (j, 3):
            raise T.ShapeError("mesh_regressor", p3d.shape, (j, 3))
        if p2d.shape[0] != p3d.shape[0]:
            raise T.ShapeError("mesh_regressor", p2d.shape, p3d.shape)
        b = p2d.shape[0]
        h = self.hierarchy
        c = h.num_levels

        x = T.concat([p2d, p3d], axis=2)                      # (B, J, 5)
        x = T.reshape(T.transpose(x, (1, 0, 2)), (j, b * 5))  # stacked layout
        for blk in self.pose_blocks:
            x = blk.forward(x, self.pose_lap, b, training)

        x = T.reshape(T.transpose(T.reshape(x, (j, b, self.pose_width)),
                                  (1, 0, 2)), (b, j * self.pose_width))
        x = self.lift.forward(x)                              # (B, Vc * w0)
        coarse = h.level_size(c)
        x = T.reshape(T.transpose(T.reshape(x, (b, coarse, self.widths[0])),
                                  (1, 0, 2)), (coarse, b * self.widths[0]))

        for i, (blk_a, blk_b) in enumerate(self.level_blocks):
            level = c - i
            lap = h.scaled_laplacians[level]
            skip = x
            y = blk_a.forward(x, lap, b, training)
            # residual around the second conv of the level
            x = T.add(y, blk_b.forward(y, lap, b, training))
            if self.across_level_residual:
                proj = self.skip_projections[i]
                if proj is not None:
                    v = skip.shape[0]
                    skip = T.reshape(T.matmul(
                        T.reshape(skip, (v * b, proj.shape[0])), proj),
                        (v, b * proj.shape[1]))
                x = T.add(x, skip)
            if level > 0:
                x = upsample_features(x, h, level=level - 1)

        x = chebyshev_conv(x, h.scaled_laplacians[0], self.head, batch=b)
        x = apply_perm(x, h)                                  # (V_orig, B*3)
        v_orig = x.shape[0]
        return T.transpose(T.reshape(x, (v_orig, b, 3)), (1, 0, 2))

    def named_parameters(self):
        out = []
        for i, blk in enumerate(self.pose_blocks):
            out += [(f"pose_blocks.{i}.{n}", p) for n, p in blk.parameters()]
        out += [(f"lift.{n}", p) for n, p in self.lift.parameters()]
        for i, (blk_a, blk_b) in enumerate(self.level_blocks):
            out += [(f"levels.{i}.a.{n}", p) for n, p in blk_a.parameters()]
            out += [(f"levels.{i}.b.{n}", p) for n, p in blk_b.parameters()]
            proj = self.skip_projections[i]
            if proj is not None:
                out.append((f"levels.{i}.skip_proj", proj))
        out += [(f"head.filter.{k}", t) for k, t in enumerate(self.head.coefficients)]
        return out

    def named_batchnorms(self):
        out = []
        for i, blk in enumerate(self.pose_blocks):
            out += [(f"pose_blocks.{i}.{n}", bn) for n, bn in blk.bn_modules()]
        for i, (blk_a, blk_b) in enumerate(self.level_blocks):
            out += [(f"levels.{i}.a.{n}", bn) for n, bn in blk_a.bn_modules()]
            out += [(f"levels.{i}.b.{n}", bn) for n, bn in blk_b.bn_modules()]
        return out


def parameter_count(model) -> int:
    return sum(p.size for _, p in model.named_parameters())


def check_unique_parameter_names(model) -> None:
    names = [n for n, _ in model.named_parameters()]
    if len(names) != len(set(names)):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate parameter names: {dup}")
