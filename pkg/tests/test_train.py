"""Optimizer arithmetic, the two-stage loops, and checkpoint round trips."""

import numpy as np
import pytest

from meshlift.config import resolve_config
from meshlift.data import generate_synthetic_dataset
from meshlift.tensor import Tape, Tensor, backward, reduce_sum
from meshlift.train import (RMSprop, build_models, load_models, save_models,
                            train_full, train_posenet)

TINY = {
    "template": {"verts_per_ring": 3, "rings_per_bone": 2},
    "model": {"hidden": 32, "pose_width": 8, "level_widths": [8, 8, 4],
              "levels": 2},
    "train": {"batch_size": 4, "stage1_epochs": 6, "stage1_decay_epoch": 3,
              "stage2_epochs": 4, "stage2_decay_epoch": 2,
              "stage1_lr": 1e-3, "stage2_lr": 1e-3, "freeze_posenet": False,
              "loss_weights": {"edge_start_epoch": 3}},
}


def tiny_cfg(**extra):
    over = dict(TINY)
    for k, v in extra.items():
        if isinstance(v, dict) and k in over:
            over[k] = {**over[k], **v}
        else:
            over[k] = v
    return resolve_config("desk", over)


def tiny_data(n=8, seed=0):
    cfg = tiny_cfg()
    return generate_synthetic_dataset(cfg.template, n, seed=seed)


class TestRmsprop:
    def test_first_step_hand_value(self):
        p = Tensor(np.zeros(1, dtype=np.float32), requires_grad=True)
        p.grad = np.ones(1, dtype=np.float32)
        opt = RMSprop([("p", p)], lr=1e-3)
        opt.step()
        # v = 0.01, step = 1e-3 / (0.1 + 1e-8)
        assert p.data[0] == pytest.approx(-9.99999e-3, rel=1e-5)
        assert p.grad is None

    def test_zero_grad_leaves_params(self):
        p = Tensor(np.full(3, 5.0, dtype=np.float32), requires_grad=True)
        p.grad = np.zeros(3, dtype=np.float32)
        RMSprop([("p", p)], lr=1.0).step()
        np.testing.assert_array_equal(p.data, 5.0)

    def test_constant_gradient_approaches_lr_steps(self):
        p = Tensor(np.zeros(1, dtype=np.float64), requires_grad=True)
        opt = RMSprop([("p", p)], lr=1e-3)
        prev = p.data.copy()
        for _ in range(800):
            p.grad = np.full(1, 3.0)
            prev = p.data.copy()
            opt.step()
        delta = abs(p.data[0] - prev[0])
        assert delta == pytest.approx(1e-3, rel=0.02)

    def test_missing_grad_names_parameter(self):
        p = Tensor(np.zeros(1), requires_grad=True)
        opt = RMSprop([("blocks.0.fc1.weight", p)], lr=1e-3)
        with pytest.raises(ValueError, match="blocks.0.fc1.weight"):
            opt.step()

    def test_accumulator_state_persists(self):
        p = Tensor(np.zeros(1, dtype=np.float64), requires_grad=True)
        opt = RMSprop([("p", p)], lr=1e-3)
        p.grad = np.ones(1)
        opt.step()
        first = abs(p.data[0])
        p.grad = np.ones(1)
        opt.step()
        second = abs(p.data[0]) - first
        assert second < first  # larger v means smaller steps

    def test_optimizer_in_training_loop(self):
        w = Tensor(np.zeros((2, 1), dtype=np.float64), requires_grad=True)
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 1.0]]),
                   dtype=np.float64)
        target = x.data @ np.array([[2.0], [-1.0]])
        opt = RMSprop([("w", w)], lr=1e-2)
        from meshlift.tensor import absolute, matmul, sub
        for _ in range(3000):
            with Tape():
                loss = reduce_sum(absolute(sub(matmul(x, w),
                                               Tensor(target, dtype=np.float64))))
            backward(loss)
            opt.step()
        np.testing.assert_allclose(w.data, [[2.0], [-1.0]], atol=0.05)


class TestStage1:
    def test_trace_schedule_and_determinism(self, tmp_path):
        cfg = tiny_cfg()
        _, samples = tiny_data()
        r1 = train_posenet(cfg, samples, out_dir=tmp_path / "a")
        r2 = train_posenet(cfg, samples, out_dir=tmp_path / "b")
        assert len(r1.trace) == cfg.train.stage1_epochs
        lrs = [row["lr"] for row in r1.trace]
        assert lrs[:3] == [1e-3] * 3 and lrs[3:] == [1e-4] * 3
        assert all(np.isfinite(row["L_pose"]) for row in r1.trace)
        assert r1.trace == r2.trace
        assert (tmp_path / "a" / "posenet.ckpt").read_bytes() == \
            (tmp_path / "b" / "posenet.ckpt").read_bytes()
        assert (tmp_path / "a" / "trace_stage1.csv").read_text() == \
            (tmp_path / "b" / "trace_stage1.csv").read_text()

    def test_seed_changes_trace(self, tmp_path):
        cfg1, cfg2 = tiny_cfg(seed=1), tiny_cfg(seed=2)
        _, samples = tiny_data()
        r1 = train_posenet(cfg1, samples)
        r2 = train_posenet(cfg2, samples)
        assert r1.trace != r2.trace

    def test_no_dead_parameters(self):
        cfg = tiny_cfg()
        _, samples = tiny_data()
        assert train_posenet(cfg, samples).dead_parameters == []

    def test_empty_dataset(self):
        with pytest.raises(ValueError, match="empty"):
            train_posenet(tiny_cfg(), [])

    def test_csv_columns(self, tmp_path):
        cfg = tiny_cfg()
        _, samples = tiny_data()
        train_posenet(cfg, samples, out_dir=tmp_path)
        lines = (tmp_path / "trace_stage1.csv").read_text().splitlines()
        assert lines[0] == "epoch,iter,lr,L_pose,L_vertex,L_joint,L_normal," \
                           "L_edge,L_total"
        first = lines[1].split(",")
        assert first[0] == "1" and first[4] == ""  # no mesh losses in stage 1


class TestStage2:
    def run_stages(self, tmp_path, **extra):
        cfg = tiny_cfg(**extra)
        _, samples = tiny_data()
        s1 = train_posenet(cfg, samples, out_dir=tmp_path / "s1")
        s2 = train_full(cfg, samples, s1.checkpoint_path,
                        out_dir=tmp_path / "s2")
        return cfg, samples, s1, s2

    def test_trace_rows_and_edge_gate(self, tmp_path):
        cfg, _, _, s2 = self.run_stages(tmp_path)
        iters_per_epoch = 8 // cfg.train.batch_size
        assert len(s2.trace) == cfg.train.stage2_epochs * iters_per_epoch
        for row in s2.trace:
            parts = row["L_vertex"] + row["L_joint"] + 0.1 * row["L_normal"] \
                + row["L_pose"]
            if row["epoch"] >= 3:   # edge_start_epoch pinned to 3 here
                parts += 20.0 * row["L_edge"]
            assert row["L_total"] == pytest.approx(parts, rel=1e-5)

    def test_determinism_bit_exact(self, tmp_path):
        cfg = tiny_cfg()
        _, samples = tiny_data()
        results = []
        for tag in ("a", "b"):
            s1 = train_posenet(cfg, samples, out_dir=tmp_path / tag / "s1")
            s2 = train_full(cfg, samples, s1.checkpoint_path,
                            out_dir=tmp_path / tag / "s2")
            results.append((s1, s2))
        a, b = results
        assert a[1].trace == b[1].trace
        assert (tmp_path / "a" / "s2" / "full.ckpt").read_bytes() == \
            (tmp_path / "b" / "s2" / "full.ckpt").read_bytes()

    def test_checkpoint_holds_both_and_restores(self, tmp_path):
        cfg, samples, _, s2 = self.run_stages(tmp_path)
        template, _, _, posenet, meshnet = load_models(
            s2.checkpoint_path, cfg)
        assert posenet is not None and meshnet is not None
        for (_, p), (_, q) in zip(posenet.named_parameters(),
                                  s2.posenet.named_parameters()):
            np.testing.assert_array_equal(p.data, q.data)
        for (_, p), (_, q) in zip(meshnet.named_parameters(),
                                  s2.meshnet.named_parameters()):
            np.testing.assert_array_equal(p.data, q.data)
        for (_, m), (_, n) in zip(meshnet.named_batchnorms(),
                                  s2.meshnet.named_batchnorms()):
            np.testing.assert_array_equal(m.running_mean, n.running_mean)
            np.testing.assert_array_equal(m.running_var, n.running_var)

    def test_config_mismatch_rejected(self, tmp_path):
        cfg, samples, s1, _ = self.run_stages(tmp_path)
        other = tiny_cfg(seed=cfg.seed + 1)
        with pytest.raises(ValueError, match="mismatch"):
            train_full(other, samples, s1.checkpoint_path)

    def test_freeze_posenet_keeps_weights(self, tmp_path):
        cfg = tiny_cfg(train={"freeze_posenet": True})
        _, samples = tiny_data()
        s1 = train_posenet(cfg, samples, out_dir=tmp_path / "s1")
        _, _, _, posenet0, _ = load_models(s1.checkpoint_path, cfg)
        s2 = train_full(cfg, samples, s1.checkpoint_path)
        for (_, p), (_, q) in zip(posenet0.named_parameters(),
                                  s2.posenet.named_parameters()):
            np.testing.assert_array_equal(p.data, q.data)

    def test_pose_loss_column_empty_when_excluded(self, tmp_path):
        cfg = tiny_cfg(train={"include_pose_loss_stage2": False})
        _, samples = tiny_data()
        s1 = train_posenet(cfg, samples, out_dir=tmp_path / "s1")
        s2 = train_full(cfg, samples, s1.checkpoint_path,
                        out_dir=tmp_path / "s2")
        assert all(row["L_pose"] is None for row in s2.trace)
        csv_rows = (tmp_path / "s2" / "trace_stage2.csv").read_text().splitlines()
        assert csv_rows[1].split(",")[3] == ""

    def test_max_iterations_cap(self, tmp_path):
        cfg = tiny_cfg()
        _, samples = tiny_data()
        s1 = train_posenet(cfg, samples, out_dir=tmp_path / "s1")
        s2 = train_full(cfg, samples, s1.checkpoint_path, max_iterations=3)
        assert len(s2.trace) == 3

    def test_requires_mesh_ground_truth(self, tmp_path):
        cfg = tiny_cfg()
        _, samples = tiny_data()
        s1 = train_posenet(cfg, samples, out_dir=tmp_path / "s1")
        for s in samples:
            s.mesh = None
        with pytest.raises(ValueError, match="mesh"):
            train_full(cfg, samples, s1.checkpoint_path)

    def test_no_dead_parameters_stage2(self, tmp_path):
        _, _, _, s2 = self.run_stages(tmp_path)
        assert s2.dead_parameters == []
