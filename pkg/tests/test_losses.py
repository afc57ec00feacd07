"""Loss identities, hand values, and gradient checks."""

import numpy as np
import pytest

from meshlift import tensor as T
from meshlift.losses import (LossWeights, compute_mesh_losses, edge_loss,
                             joint_loss, normal_loss, pose_loss, total_mesh_loss,
                             vertex_loss)
from meshlift.template import TubeBodySpec, build_tube_body, euler_rotation
from meshlift.data import generate_synthetic_dataset
from meshlift.tensor import Tensor

TETRA_VERTS = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
TETRA_FACES = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])


def batched(v, b=1):
    return np.repeat(v[None], b, axis=0)


class TestHandValues:
    def test_pose_and_vertex_are_l1_over_batch(self):
        pred = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), dtype=np.float64)
        gt = np.array([[0.0, 2.0], [3.0, 1.0]])
        assert pose_loss(pred, gt).item() == pytest.approx((1 + 3) / 2)
        pm = Tensor(np.zeros((2, 3, 3)), dtype=np.float64)
        gm = np.ones((2, 3, 3))
        assert vertex_loss(pm, gm).item() == pytest.approx(18 / 2)

    def test_joint_loss_hand_value(self):
        reg = np.array([[1.0, 0, 0], [0, 0.5, 0.5]])
        pred = Tensor(np.array([[[0.0, 0, 0], [2, 0, 0], [0, 2, 0]]]),
                      dtype=np.float64)
        gt_j = np.array([[[1.0, 0, 0], [1, 1, 0]]])
        # regressed joints: (0,0,0) and (1,1,0) -> L1 = 1 + 0
        assert joint_loss(pred, reg, gt_j).item() == pytest.approx(1.0)

    def test_normal_loss_hand_value(self):
        gt = np.array([[[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]])
        pred = Tensor(np.array([[[0.0, 0, 0], [1, 0, 1], [0, 1, 0]]]),
                      dtype=np.float64)
        faces = np.array([[0, 1, 2]])
        expect = 1 / np.sqrt(2) + 1 / np.sqrt(3)
        assert normal_loss(pred, gt, faces).item() == pytest.approx(expect, abs=1e-12)

    def test_edge_loss_scaling_hand_value(self):
        gt = batched(TETRA_VERTS, 2)
        pred = Tensor(2.0 * gt, dtype=np.float64)
        expect = 0.0
        for a, b in [(0, 1), (1, 2), (2, 0)]:
            lengths = np.linalg.norm(gt[0][TETRA_FACES[:, b]] - gt[0][TETRA_FACES[:, a]],
                                     axis=1)
            expect += lengths.sum()
        got = edge_loss(pred, gt, TETRA_FACES).item()
        assert got == pytest.approx(expect, rel=1e-12)

    def test_batch_sum_divided_by_batch(self):
        rng = np.random.default_rng(0)
        pred1 = rng.standard_normal((1, 4, 3))
        gt1 = rng.standard_normal((1, 4, 3))
        v1 = edge_loss(Tensor(pred1, dtype=np.float64), gt1, TETRA_FACES).item()
        v2 = edge_loss(Tensor(np.repeat(pred1, 3, axis=0), dtype=np.float64),
                       np.repeat(gt1, 3, axis=0), TETRA_FACES).item()
        assert v2 == pytest.approx(v1, rel=1e-12)


class TestIdentitiesAtGroundTruth:
    def test_all_losses_vanish_on_generated_body(self):
        spec = TubeBodySpec(verts_per_ring=3, rings_per_bone=2)
        template, samples = generate_synthetic_dataset(spec, 2, seed=4)
        gt_mesh = np.stack([s.mesh for s in samples])
        gt_joints = np.stack([s.pose3d for s in samples])
        pred = Tensor(gt_mesh.copy(), dtype=np.float64)
        parts = compute_mesh_losses(pred, gt_mesh, gt_joints,
                                    template.faces, template.joint_regressor)
        assert parts["vertex"].item() == 0.0
        assert parts["joint"].item() < 1e-9
        assert parts["normal"].item() < 1e-9
        assert parts["edge"].item() < 1e-9

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(1)
        gt = batched(TETRA_VERTS * 50.0, 2)
        pred_np = gt + rng.standard_normal(gt.shape)
        r = euler_rotation(np.array([0.3, -0.8, 1.9]))
        t = np.array([12.0, -5.0, 40.0])
        base_n = normal_loss(Tensor(pred_np, dtype=np.float64), gt, TETRA_FACES).item()
        base_e = edge_loss(Tensor(pred_np, dtype=np.float64), gt, TETRA_FACES).item()
        pred_m = Tensor(pred_np @ r.T + t, dtype=np.float64)
        gt_m = gt @ r.T + t
        assert normal_loss(pred_m, gt_m, TETRA_FACES).item() == pytest.approx(
            base_n, abs=1e-9)
        assert edge_loss(pred_m, gt_m, TETRA_FACES).item() == pytest.approx(
            base_e, abs=1e-9)

    def test_degenerate_gt_face_contributes_nothing(self):
        gt = np.array([[[0.0, 0, 0], [1, 0, 0], [2, 0, 0]]])  # collinear
        pred = Tensor(np.random.default_rng(2).standard_normal((1, 3, 3)),
                      dtype=np.float64)
        val = normal_loss(pred, gt, np.array([[0, 1, 2]])).item()
        assert val == 0.0 and np.isfinite(val)

    def test_degenerate_pred_edge_contributes_nothing(self):
        gt = np.array([[[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]])
        pred = Tensor(np.array([[[0.0, 0, 1], [0, 0, 1], [0, 1, 0]]]),
                      dtype=np.float64)
        val = normal_loss(pred, gt, np.array([[0, 1, 2]])).item()
        assert np.isfinite(val)
        # e01 is zero-length: only e12 and e20 can contribute
        e12 = (pred.data[0, 2] - pred.data[0, 1])
        e20 = (pred.data[0, 0] - pred.data[0, 2])
        expect = sum(abs(e[2] / np.linalg.norm(e)) for e in (e12, e20))
        assert val == pytest.approx(expect, abs=1e-12)


class TestTotal:
    def ones(self):
        return {k: Tensor(np.array(1.0), dtype=np.float64)
                for k in ("vertex", "joint", "normal", "edge")}

    def test_unit_parts_after_gate(self):
        assert total_mesh_loss(self.ones(), LossWeights(), epoch=7).item() == \
            pytest.approx(22.1)
        assert total_mesh_loss(self.ones(), LossWeights(), epoch=60).item() == \
            pytest.approx(22.1)

    def test_unit_parts_before_gate(self):
        assert total_mesh_loss(self.ones(), LossWeights(), epoch=1).item() == \
            pytest.approx(2.1)
        assert total_mesh_loss(self.ones(), LossWeights(), epoch=6).item() == \
            pytest.approx(2.1)

    def test_pose_part_included_when_present(self):
        parts = self.ones()
        parts["pose"] = Tensor(np.array(1.0), dtype=np.float64)
        assert total_mesh_loss(parts, LossWeights(), epoch=7).item() == \
            pytest.approx(23.1)

    def test_validation(self):
        with pytest.raises(ValueError, match=">= 0"):
            LossWeights(edge=-1.0)
        with pytest.raises(ValueError, match="unknown loss weight"):
            LossWeights.from_dict({"vortex": 1.0})
        with pytest.raises(ValueError, match="missing loss parts"):
            total_mesh_loss({"vertex": Tensor(np.array(1.0))}, LossWeights(), 1)
        parts = self.ones()
        parts["extra"] = Tensor(np.array(1.0))
        with pytest.raises(ValueError, match="unknown loss parts"):
            total_mesh_loss(parts, LossWeights(), 1)
        with pytest.raises(ValueError, match="1-based"):
            total_mesh_loss(self.ones(), LossWeights(), 0)


class TestGradients:
    def setup_method(self):
        rng = np.random.default_rng(7)
        self.gt = batched(TETRA_VERTS * 10.0, 2)
        self.pred0 = self.gt + rng.standard_normal(self.gt.shape)
        self.gt_j = np.einsum("jv,bvc->bjc",
                              np.array([[0.5, 0.5, 0, 0], [0, 0, 0.25, 0.75]]),
                              self.gt + 1.0)
        self.reg = np.array([[0.5, 0.5, 0, 0], [0, 0, 0.25, 0.75]])

    def check(self, f, tol=1e-5):
        rep = T.gradient_check(f, Tensor(self.pred0, dtype=np.float64))
        assert rep.max_rel_err < tol, rep

    def test_vertex_grad(self):
        self.check(lambda p: vertex_loss(p, self.gt))

    def test_joint_grad(self):
        self.check(lambda p: joint_loss(p, self.reg, self.gt_j))

    def test_normal_grad(self):
        self.check(lambda p: normal_loss(p, self.gt, TETRA_FACES))

    def test_edge_grad(self):
        self.check(lambda p: edge_loss(p, self.gt, TETRA_FACES))

    def test_total_grad(self):
        def f(p):
            parts = compute_mesh_losses(p, self.gt, self.gt_j, TETRA_FACES, self.reg)
            return total_mesh_loss(parts, LossWeights(), epoch=10)
        self.check(f, tol=1e-4)
