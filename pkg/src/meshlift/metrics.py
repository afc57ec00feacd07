"""Evaluation metrics: position errors and surface F-score.

Everything here is plain float64 numpy; metrics never need gradients.
Point sets are (P, 3) or batched (N, P, 3) arrays in millimeters;
batched inputs return the mean over samples, accumulated in sample
order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROCRUSTES_EPS = 1e-12
ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class SimilarityTransform:
    """x -> scale * R @ x + t with a proper rotation (det +1)."""

    scale: float
    rotation: np.ndarray     # (3, 3)
    translation: np.ndarray  # (3,)

    def validate(self) -> None:
        r = self.rotation
        if self.scale <= 0:
            raise ValueError("SimilarityTransform: scale must be positive")
        if not np.allclose(r.T @ r, np.eye(3), atol=ORTHONORMAL_TOL):
            raise ValueError("SimilarityTransform: rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOL:
            raise ValueError("SimilarityTransform: rotation must have det +1")

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return self.scale * points @ self.rotation.T + self.translation


def _as_batch(points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 2:
        points = points[None]
    if points.ndim != 3 or points.shape[2] != 3:
        raise ValueError(f"expected (P, 3) or (N, P, 3) points, got {points.shape}")
    return points


def _check_pair(pred, gt):
    pred, gt = _as_batch(pred), _as_batch(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"mismatched point sets {pred.shape} vs {gt.shape}")
    return pred, gt


def _select(points, mask):
    if mask is None:
        return points
    return points[:, np.asarray(mask)]


def mpjpe(pred, gt, root_index: int | None = 0, joint_mask=None) -> float:
    """Mean per-joint position error after root alignment.

    ``root_index=None`` skips alignment. ``joint_mask`` restricts the
    averaged joints (the root is still used for alignment).
    """
    pred, gt = _check_pair(pred, gt)
    if root_index is not None:
        if not 0 <= root_index < pred.shape[1]:
            raise ValueError(f"root index {root_index} out of range")
        pred = pred - pred[:, root_index:root_index + 1]
        gt = gt - gt[:, root_index:root_index + 1]
    err = np.linalg.norm(_select(pred, joint_mask) - _select(gt, joint_mask),
                         axis=2)
    return float(err.mean())


def procrustes_align(pred, gt) -> SimilarityTransform:
    """Least-squares similarity transform taking ``pred`` onto ``gt``.

    Classic Kabsch-Umeyama on one (N, 3) pair: optimal scale, rotation
    (reflections excluded via the sign of the last singular vector),
    and translation.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ValueError(f"expected matching (N, 3) arrays, got {pred.shape} "
                         f"and {gt.shape}")
    n = pred.shape[0]
    if n < 3:
        raise ValueError("procrustes_align: need at least 3 points")
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    p = pred - mu_p
    g = gt - mu_g
    var_p = (p ** 2).sum() / n
    if var_p < PROCRUSTES_EPS:
        raise ValueError("procrustes_align: degenerate input, zero spread")
    cov = g.T @ p / n
    u, d, vt = np.linalg.svd(cov)
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1.0
    rot = u @ s @ vt
    scale = float((d * np.diag(s)).sum() / var_p)
    tr = SimilarityTransform(scale=scale, rotation=rot,
                             translation=mu_g - scale * rot @ mu_p)
    tr.validate()
    return tr


def align_batch(pred, gt) -> np.ndarray:
    """Procrustes-align every sample of a batch onto its target."""
    pred, gt = _check_pair(pred, gt)
    return np.stack([procrustes_align(pred[i], gt[i]).apply(pred[i])
                     for i in range(pred.shape[0])])


def pa_mpjpe(pred, gt, joint_mask=None) -> float:
    """MPJPE after per-sample similarity alignment."""
    pred, gt = _check_pair(pred, gt)
    return mpjpe(align_batch(pred, gt), gt, root_index=None,
                 joint_mask=joint_mask)


def mpvpe(pred_mesh, gt_mesh, root_regressor_row) -> float:
    """Mean per-vertex position error after regressed-root alignment."""
    pred, gt = _check_pair(pred_mesh, gt_mesh)
    row = np.asarray(root_regressor_row, dtype=np.float64)
    if row.shape != (pred.shape[1],):
        raise ValueError(f"root regressor row must be ({pred.shape[1]},), "
                         f"got {row.shape}")
    pred = pred - np.einsum("v,nvc->nc", row, pred)[:, None]
    gt = gt - np.einsum("v,nvc->nc", row, gt)[:, None]
    return float(np.linalg.norm(pred - gt, axis=2).mean())


def f_score(pred, gt, tau: float, align: bool = True) -> float:
    """Surface F-score at threshold ``tau`` (mm), averaged over samples.

    Precision: fraction of predicted points within tau of the target
    set; recall: the reverse. Uses brute-force nearest neighbours, and
    similarity-aligns the prediction first unless ``align=False``.
    """
    pred, gt = _check_pair(pred, gt)
    if pred.shape[1] == 0:
        raise ValueError("f_score: empty point set")
    if tau <= 0:
        raise ValueError("tau must be positive")
    if align:
        pred = align_batch(pred, gt)
    scores = []
    for i in range(pred.shape[0]):
        d = np.linalg.norm(pred[i][:, None, :] - gt[i][None, :, :], axis=2)
        precision = (d.min(axis=1) <= tau).mean()
        recall = (d.min(axis=0) <= tau).mean()
        if precision + recall == 0:
            scores.append(0.0)
        else:
            scores.append(2 * precision * recall / (precision + recall))
    return float(np.mean(scores))
