"""RMSprop, the two-stage training procedure, and model checkpointing.

Stage 1 fits the 2D->3D lifter alone; stage 2 trains lifter + mesh
regressor end to end on the weighted mesh losses (edge term gated in
after its start epoch, pose term included by default). Each epoch draws
its shuffle, error synthesis, and dropout masks from one seeded stream,
so identical (config, seed, dataset) runs are bit-identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import RunConfig, check_checkpoint_config, checkpoint_config
from .coarsen import graclus_coarsen
from .data import normalize_2d_pose, synthesize_pose_errors
from .graphs import build_mesh_graph, build_pose_graph
from .io import load_checkpoint, save_checkpoint
from .losses import compute_mesh_losses, pose_loss, total_mesh_loss
from .models import MeshRegressor, PoseLifter
from .template import ROOT_INDEX, build_tube_body
from .tensor import Tape, Tensor

RMSPROP_ALPHA = 0.99
RMSPROP_EPS = 1e-8

TRACE_COLUMNS = ["epoch", "iter", "lr", "L_pose", "L_vertex", "L_joint",
                 "L_normal", "L_edge", "L_total"]


class RMSprop:
    """Per-element v <- a*v + (1-a)*g^2; theta <- theta - lr*g/(sqrt(v)+eps)."""

    def __init__(self, named_params, lr: float, alpha: float = RMSPROP_ALPHA,
                 eps: float = RMSPROP_EPS):
        self.params = list(named_params)
        names = [n for n, _ in self.params]
        if len(set(names)) != len(names):
            raise ValueError("rmsprop: duplicate parameter names")
        self.lr = float(lr)
        self.alpha = alpha
        self.eps = eps
        self.state = {n: np.zeros_like(p.data) for n, p in self.params}

    def step(self) -> None:
        for name, p in self.params:
            if p.grad is None:
                raise ValueError(f"rmsprop: parameter {name!r} has no gradient")
            g = p.grad
            v = self.state[name]
            v *= self.alpha
            v += (1.0 - self.alpha) * g * g
            p.data -= (self.lr * g / (np.sqrt(v) + self.eps)).astype(p.data.dtype)
            p.grad = None

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


# ------------------------------------------------------------ model assembly

def build_models(cfg: RunConfig, dtype=np.float32):
    """Template, graph hierarchy, and freshly initialized networks."""
    template = build_tube_body(cfg.template)
    hierarchy = graclus_coarsen(build_mesh_graph(template), cfg.model.levels,
                                seed=cfg.seed)
    pose_graph = build_pose_graph(template.num_joints, template.skeleton_edges,
                                  template.symmetry_pairs)
    posenet = PoseLifter(num_joints=template.num_joints, hidden=cfg.model.hidden,
                         num_blocks=cfg.model.num_blocks,
                         drop_p=cfg.model.dropout, root_index=ROOT_INDEX,
                         seed=cfg.seed, dtype=dtype)
    meshnet = MeshRegressor(template, hierarchy, pose_graph,
                            level_widths=cfg.model.level_widths,
                            pose_width=cfg.model.pose_width,
                            order=cfg.model.order, seed=cfg.seed, dtype=dtype,
                            across_level_residual=cfg.model.across_level_residual)
    return template, hierarchy, pose_graph, posenet, meshnet


def collect_state(model, prefix: str) -> dict:
    out = {}
    for name, p in model.named_parameters():
        out[f"{prefix}.{name}"] = p.data
    for name, bn in model.named_batchnorms():
        out[f"{prefix}.{name}.running_mean"] = bn.running_mean
        out[f"{prefix}.{name}.running_var"] = bn.running_var
    return out


def restore_state(model, prefix: str, tensors: dict) -> None:
    for name, p in model.named_parameters():
        key = f"{prefix}.{name}"
        if key not in tensors:
            raise ValueError(f"checkpoint missing tensor {key!r}")
        if tensors[key].shape != p.data.shape:
            raise ValueError(f"checkpoint tensor {key!r} has shape "
                             f"{tensors[key].shape}, expected {p.data.shape}")
        p.data[:] = tensors[key].astype(p.data.dtype)
    for name, bn in model.named_batchnorms():
        for stat in ("running_mean", "running_var"):
            key = f"{prefix}.{name}.{stat}"
            if key not in tensors:
                raise ValueError(f"checkpoint missing tensor {key!r}")
            getattr(bn, stat)[:] = tensors[key].astype(bn.running_mean.dtype)


def save_models(path, cfg: RunConfig, posenet=None, meshnet=None) -> None:
    tensors = {}
    if posenet is not None:
        tensors.update(collect_state(posenet, "posenet"))
    if meshnet is not None:
        tensors.update(collect_state(meshnet, "meshnet"))
    if not tensors:
        raise ValueError("save_models: nothing to save")
    save_checkpoint(path, checkpoint_config(cfg), tensors)


def load_models(path, cfg: RunConfig, dtype=np.float32):
    """Rebuild networks from a checkpoint, cross-checked against ``cfg``.

    Returns (template, hierarchy, pose_graph, posenet_or_None,
    meshnet_or_None).
    """
    stored, tensors = load_checkpoint(path)
    check_checkpoint_config(stored, cfg)
    template, hierarchy, pose_graph, posenet, meshnet = build_models(cfg, dtype)
    has_pose = any(k.startswith("posenet.") for k in tensors)
    has_mesh = any(k.startswith("meshnet.") for k in tensors)
    if has_pose:
        restore_state(posenet, "posenet", tensors)
    if has_mesh:
        restore_state(meshnet, "meshnet", tensors)
    return (template, hierarchy, pose_graph,
            posenet if has_pose else None, meshnet if has_mesh else None)


# -------------------------------------------------------------- batch making

def assemble_batch(samples, idxs, synth_cfg, symmetry_pairs, rng, *,
                   need_mesh: bool):
    """Corrupt (optionally), normalize, and stack one mini-batch."""
    x2d, gt3d, mesh = [], [], []
    for i in idxs:
        s = samples[i]
        p2d = s.pose2d
        if synth_cfg is not None:
            p2d = synthesize_pose_errors(p2d, synth_cfg, symmetry_pairs, rng)
        norm, _, _ = normalize_2d_pose(p2d)
        x2d.append(norm)
        gt3d.append(s.pose3d)
        if need_mesh:
            if s.mesh is None:
                raise ValueError("training on meshes requires samples with mesh")
            mesh.append(s.mesh)
    x2d = np.stack(x2d)
    gt3d = np.stack(gt3d)
    mesh = np.stack(mesh) if need_mesh else None
    return x2d, gt3d, mesh


def _batches(n: int, batch_size: int, perm: np.ndarray):
    """Contiguous slices of the permutation; singleton tails are dropped
    because batch norm cannot run on one sample."""
    for start in range(0, n, batch_size):
        idxs = perm[start:start + batch_size]
        if len(idxs) >= 2:
            yield idxs


def _lr_for_epoch(base: float, decay_epoch: int, factor: float, epoch: int) -> float:
    return base / factor if epoch > decay_epoch else base


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


@dataclass
class TrainResult:
    trace: list = field(default_factory=list)   # list of dict rows
    dead_parameters: list = field(default_factory=list)
    checkpoint_path: Path | None = None
    trace_path: Path | None = None
    posenet: object = None
    meshnet: object = None


class _TraceWriter:
    def __init__(self, path):
        self.rows = []
        self.path = Path(path) if path else None
        self._fh = open(self.path, "w", newline="") if self.path else None
        self._csv = csv.writer(self._fh) if self._fh else None
        if self._csv:
            self._csv.writerow(TRACE_COLUMNS)

    def row(self, epoch, it, lr, **losses):
        rec = {"epoch": epoch, "iter": it, "lr": lr}
        rec.update(losses)
        self.rows.append(rec)
        if self._csv:
            self._csv.writerow([epoch, it, _fmt(lr)] +
                               [_fmt(losses.get(c)) for c in TRACE_COLUMNS[3:]])

    def close(self):
        if self._fh:
            self._fh.close()


class _GradTracker:
    """Dead-parameter detector: which tensors ever saw a nonzero gradient."""

    def __init__(self, named_params):
        self.params = list(named_params)
        self.seen = {n: False for n, _ in self.params}

    def observe(self):
        for n, p in self.params:
            if not self.seen[n] and p.grad is not None and np.any(p.grad != 0):
                self.seen[n] = True

    def dead(self):
        return sorted(n for n, alive in self.seen.items() if not alive)


# ------------------------------------------------------------------- stage 1

def train_posenet(cfg: RunConfig, samples, out_dir=None) -> TrainResult:
    """Pre-train the 2D->3D lifter; emits a per-epoch mean loss trace."""
    if not samples:
        raise ValueError("train_posenet: empty dataset")
    template, _, _, posenet, _ = build_models(cfg)
    tc = cfg.train
    opt = RMSprop(posenet.named_parameters(), lr=tc.stage1_lr)
    tracker = _GradTracker(posenet.named_parameters())
    synth = cfg.synth if cfg.synth_enabled else None
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    writer = _TraceWriter(out_dir / "trace_stage1.csv" if out_dir else None)
    n = len(samples)
    j = template.num_joints
    it = 0
    try:
        for epoch in range(1, tc.stage1_epochs + 1):
            lr = _lr_for_epoch(tc.stage1_lr, tc.stage1_decay_epoch,
                               tc.decay_factor, epoch)
            opt.lr = lr
            rng = np.random.default_rng([cfg.seed, 1, epoch])
            perm = rng.permutation(n)
            epoch_losses = []
            for idxs in _batches(n, tc.batch_size, perm):
                x2d, gt3d, _ = assemble_batch(samples, idxs, synth,
                                              template.symmetry_pairs, rng,
                                              need_mesh=False)
                b = len(idxs)
                x = Tensor(x2d.reshape(b, 2 * j), dtype=np.float32)
                target = gt3d.reshape(b, 3 * j)
                with Tape():
                    out = posenet.forward(x, training=True, rng=rng)
                    loss = pose_loss(out, target)
                T.backward(loss)
                tracker.observe()
                opt.step()
                epoch_losses.append(loss.item())
                it += 1
            mean = float(np.mean(epoch_losses))
            writer.row(epoch, it, lr, L_pose=mean, L_total=mean)
    finally:
        writer.close()
    result = TrainResult(trace=writer.rows, dead_parameters=tracker.dead(),
                         trace_path=writer.path)
    if out_dir:
        result.checkpoint_path = out_dir / "posenet.ckpt"
        save_models(result.checkpoint_path, cfg, posenet=posenet)
    result.posenet = posenet
    return result


# ------------------------------------------------------------------- stage 2

def train_full(cfg: RunConfig, samples, posenet_checkpoint, out_dir=None,
               max_iterations: int | None = None) -> TrainResult:
    """End-to-end training of lifter + mesh regressor from a stage-1 start."""
    if not samples:
        raise ValueError("train_full: empty dataset")
    if any(s.mesh is None for s in samples):
        raise ValueError("train_full: every sample needs a ground-truth mesh")
    template, _, _, posenet, meshnet = load_models(posenet_checkpoint, cfg)
    if posenet is None:
        raise ValueError("train_full: checkpoint has no lifter weights")
    if meshnet is None:
        _, _, _, _, meshnet = build_models(cfg)
    tc = cfg.train
    named = list(meshnet.named_parameters())
    named = [(f"meshnet.{n}", p) for n, p in named]
    if not tc.freeze_posenet:
        named += [(f"posenet.{n}", p) for n, p in posenet.named_parameters()]
    opt = RMSprop(named, lr=tc.stage2_lr)
    tracker = _GradTracker(named)
    synth = cfg.synth if cfg.synth_enabled else None
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    writer = _TraceWriter(out_dir / "trace_stage2.csv" if out_dir else None)
    n = len(samples)
    j = template.num_joints
    weights = tc.loss_weights
    it = 0
    done = False
    try:
        for epoch in range(1, tc.stage2_epochs + 1):
            if done:
                break
            lr = _lr_for_epoch(tc.stage2_lr, tc.stage2_decay_epoch,
                               tc.decay_factor, epoch)
            opt.lr = lr
            rng = np.random.default_rng([cfg.seed, 2, epoch])
            perm = rng.permutation(n)
            for idxs in _batches(n, tc.batch_size, perm):
                x2d, gt3d, gt_mesh = assemble_batch(samples, idxs, synth,
                                                    template.symmetry_pairs,
                                                    rng, need_mesh=True)
                b = len(idxs)
                x2d_t = Tensor(x2d, dtype=np.float32)
                x_flat = Tensor(x2d.reshape(b, 2 * j), dtype=np.float32)
                if tc.freeze_posenet:
                    # outside the tape: the lifter is a constant feature
                    # extractor, so its forward pass is not backpropagated
                    lifted = posenet.forward(x_flat, training=False)
                with Tape():
                    if not tc.freeze_posenet:
                        lifted = posenet.forward(x_flat, training=True, rng=rng)
                    p3d = T.reshape(lifted, (b, j, 3))
                    pred = meshnet.forward(x2d_t, p3d, training=True)
                    parts = compute_mesh_losses(pred, gt_mesh, gt3d,
                                                template.faces,
                                                template.joint_regressor)
                    if tc.include_pose_loss_stage2:
                        parts["pose"] = pose_loss(lifted,
                                                  gt3d.reshape(b, 3 * j))
                    total = total_mesh_loss(parts, weights, epoch)
                T.backward(total)
                tracker.observe()
                opt.step()
                it += 1
                writer.row(
                    epoch, it, lr,
                    L_pose=parts["pose"].item()
                    if "pose" in parts else None,
                    L_vertex=parts["vertex"].item(),
                    L_joint=parts["joint"].item(),
                    L_normal=parts["normal"].item(),
                    L_edge=parts["edge"].item(),
                    L_total=total.item())
                if max_iterations is not None and it >= max_iterations:
                    done = True
                    break
    finally:
        writer.close()
    result = TrainResult(trace=writer.rows, dead_parameters=tracker.dead(),
                         trace_path=writer.path)
    if out_dir:
        result.checkpoint_path = out_dir / "full.ckpt"
        save_models(result.checkpoint_path, cfg, posenet=posenet,
                    meshnet=meshnet)
    result.posenet = posenet
    result.meshnet = meshnet
    return result
