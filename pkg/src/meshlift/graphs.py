"""Vertex graphs, normalized Laplacians, and Chebyshev spectral filtering.

Graph structure and Laplacian matrices are kept in float64 as the single
source of truth; the convolution casts the scaled Laplacian to the feature
dtype on demand (cached), so float32 training and float64 oracle runs share
one graph object.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from meshlift import tensor as T
from meshlift.tensor import ShapeError, Tensor

POWER_ITER_MAX = 200
POWER_ITER_TOL = 1e-9
LAMBDA_MAX_FALLBACK = 2.0


class Graph:
    """Undirected vertex graph as a dense 0/1 adjacency matrix.

    Real vertices carry a self-loop (A[i, i] = 1); fake vertices (padding
    slots from coarsening) have all-zero rows. The matrix must be square,
    symmetric, and 0/1-valued.
    """

    def __init__(self, adjacency: np.ndarray):
        a = np.asarray(adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"Graph: adjacency must be square, got {a.shape}")
        if not np.array_equal(a, a.T):
            raise ValueError("Graph: adjacency must be symmetric")
        if not np.all((a == 0) | (a == 1)):
            raise ValueError("Graph: adjacency entries must be 0 or 1")
        degrees = a.sum(axis=1)
        bad = (degrees > 0) & (np.diag(a) == 0)
        if np.any(bad):
            v = int(np.flatnonzero(bad)[0])
            raise ValueError(f"Graph: real vertex {v} is missing its self-loop")
        self.adjacency = a

    @property
    def num_vertices(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def is_fake(self) -> np.ndarray:
        """Boolean mask of degree-0 (padding) vertices."""
        return self.degrees == 0

    def __repr__(self) -> str:
        return f"Graph(num_vertices={self.num_vertices}, edges={int(self.adjacency.sum() - np.trace(self.adjacency)) // 2})"


def build_pose_graph(num_joints: int, skeleton_edges: Sequence[tuple[int, int]],
                     symmetry_pairs: Sequence[tuple[int, int]] = ()) -> Graph:
    """Joint graph: skeleton edges plus left/right symmetry edges plus self-loops."""
    if num_joints < 1:
        raise ValueError("build_pose_graph: need at least one joint")
    a = np.eye(num_joints)
    for i, j in list(skeleton_edges) + list(symmetry_pairs):
        if not (0 <= i < num_joints and 0 <= j < num_joints):
            raise ValueError(f"build_pose_graph: edge ({i}, {j}) out of range")
        if i == j:
            raise ValueError(f"build_pose_graph: self edge ({i}, {j})")
        a[i, j] = a[j, i] = 1.0
    return Graph(a)


def mesh_graph_from_faces(num_vertices: int, faces: np.ndarray) -> Graph:
    """Vertex graph induced by triangle edges, plus self-loops."""
    faces = np.asarray(faces, dtype=np.int64)
    if faces.ndim != 2 or faces.shape[1] != 3:
        raise ValueError(f"mesh_graph_from_faces: faces must be (F, 3), got {faces.shape}")
    if faces.size and (faces.min() < 0 or faces.max() >= num_vertices):
        raise ValueError("mesh_graph_from_faces: face references vertex out of range")
    for f in faces:
        if len(set(int(v) for v in f)) != 3:
            raise ValueError(f"mesh_graph_from_faces: degenerate face {tuple(int(v) for v in f)}")
    a = np.eye(num_vertices)
    for i, j, k in faces:
        a[i, j] = a[j, i] = 1.0
        a[j, k] = a[k, j] = 1.0
        a[i, k] = a[k, i] = 1.0
    return Graph(a)


def build_mesh_graph(template) -> Graph:
    """Mesh graph of a template (anything with .vertices and .faces)."""
    return mesh_graph_from_faces(len(template.vertices), template.faces)


def normalized_laplacian(g: Graph) -> np.ndarray:
    """L = I - D^{-1/2} A D^{-1/2}, float64.

    Degree-0 (fake) vertices get the identity row e_i, so they stay inert
    under filtering and the spectrum stays inside [0, 2].
    """
    a = g.adjacency
    d = a.sum(axis=1)
    inv_sqrt = np.zeros_like(d)
    np.divide(1.0, np.sqrt(d), out=inv_sqrt, where=d > 0)
    lap = np.eye(g.num_vertices) - (inv_sqrt[:, None] * a) * inv_sqrt[None, :]
    return lap


class LambdaMaxEstimate(NamedTuple):
    value: float
    converged: bool


def estimate_lambda_max(lap: np.ndarray, seed: int = 0) -> LambdaMaxEstimate:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Seeded start vector, Rayleigh-quotient convergence below 1e-9, at most
    200 iterations. On non-convergence returns the safe upper bound 2.0
    (valid for normalized Laplacians) with converged=False.
    """
    lap = np.asarray(lap, dtype=np.float64)
    n = lap.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    prev = np.inf
    for _ in range(POWER_ITER_MAX):
        w = lap @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return LambdaMaxEstimate(0.0, True)  # lap annihilates v: lambda_max 0
        v = w / nw
        rayleigh = float(v @ (lap @ v))
        if abs(rayleigh - prev) < POWER_ITER_TOL:
            return LambdaMaxEstimate(rayleigh, True)
        prev = rayleigh
    return LambdaMaxEstimate(LAMBDA_MAX_FALLBACK, False)


class ScaledLaplacian:
    """L_tilde = 2 L / lambda_max - I, spectrum mapped into [-1, 1]."""

    def __init__(self, matrix: np.ndarray, lambda_max: float, converged: bool = True):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.lambda_max = float(lambda_max)
        self.converged = bool(converged)
        self._cache: dict = {}

    @property
    def num_vertices(self) -> int:
        return self.matrix.shape[0]

    def as_tensor(self, dtype) -> Tensor:
        key = np.dtype(dtype)
        if key not in self._cache:
            self._cache[key] = Tensor(self.matrix, dtype=key)
        return self._cache[key]


def scaled_laplacian(g: Graph, seed: int = 0) -> ScaledLaplacian:
    lap = normalized_laplacian(g)
    est = estimate_lambda_max(lap, seed=seed)
    lam = est.value if est.value > 1e-9 else LAMBDA_MAX_FALLBACK
    scaled = (2.0 / lam) * lap - np.eye(g.num_vertices)
    return ScaledLaplacian(scaled, lam, est.converged)


class ChebFilter:
    """Chebyshev filter: K trainable coefficient matrices of shape (f_in, f_out)."""

    def __init__(self, coefficients: Sequence[Tensor]):
        coeffs = list(coefficients)
        if not coeffs:
            raise ValueError("ChebFilter: need at least one coefficient matrix")
        f_in, f_out = coeffs[0].shape
        for c in coeffs:
            if c.ndim != 2 or c.shape != (f_in, f_out):
                raise ShapeError("ChebFilter", coeffs[0].shape, c.shape)
        self.coefficients = coeffs
        self.f_in = f_in
        self.f_out = f_out

    @property
    def order(self) -> int:
        return len(self.coefficients)


def chebyshev_conv(f_in: Tensor, lap: ScaledLaplacian, filt: ChebFilter,
                   batch: int = 1) -> Tensor:
    """Spectral filtering sum_k T_k(L_tilde) F Theta_k via the recurrence
    T_0 F = F, T_1 F = L F, T_k = 2 L T_{k-1} - T_{k-2}.

    f_in is (V, batch * f) with per-sample feature blocks side by side in
    the columns; batch=1 is the plain single-sample signature. Output is
    (V, batch * f_out).
    """
    if f_in.ndim != 2:
        raise ShapeError("chebyshev_conv", f_in.shape)
    v, cols = f_in.shape
    if v != lap.num_vertices:
        raise ShapeError("chebyshev_conv", f_in.shape, lap.matrix.shape)
    if cols != batch * filt.f_in:
        raise ShapeError("chebyshev_conv", f_in.shape, (filt.f_in, filt.f_out))
    lt = lap.as_tensor(f_in.dtype)

    def combine(tk: Tensor, theta: Tensor) -> Tensor:
        # (V, B*f_in) rows are [sample0 | sample1 | ...] blocks; a reshape
        # to (V*B, f_in) keeps blocks intact, so one matmul applies Theta
        # per vertex per sample.
        x = T.reshape(tk, (v * batch, filt.f_in))
        x = T.matmul(x, theta)
        return T.reshape(x, (v, batch * filt.f_out))

    t_prev = f_in
    out = combine(t_prev, filt.coefficients[0])
    if filt.order == 1:
        return out
    t_cur = T.matmul(lt, f_in)
    out = T.add(out, combine(t_cur, filt.coefficients[1]))
    for k in range(2, filt.order):
        t_next = T.sub(T.scalar_mul(T.matmul(lt, t_cur), 2.0), t_prev)
        out = T.add(out, combine(t_next, filt.coefficients[k]))
        t_prev, t_cur = t_cur, t_next
    return out


def dense_spectral_oracle(x: np.ndarray, lap: ScaledLaplacian,
                          theta: Sequence[float]) -> np.ndarray:
    """Reference filtering U diag(sum_k theta_k T_k(lambda)) U^T x.

    Single-channel, float64, by explicit eigendecomposition; exists purely
    to cross-check chebyshev_conv through an independent route.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != lap.num_vertices:
        raise ValueError(f"dense_spectral_oracle: x must be ({lap.num_vertices},), got {x.shape}")
    theta = [float(t) for t in theta]
    if not theta:
        raise ValueError("dense_spectral_oracle: empty filter")
    lam, u = np.linalg.eigh(lap.matrix)
    t_prev = np.ones_like(lam)
    gain = theta[0] * t_prev
    if len(theta) > 1:
        t_cur = lam.copy()
        gain = gain + theta[1] * t_cur
        for k in range(2, len(theta)):
            t_next = 2.0 * lam * t_cur - t_prev
            gain = gain + theta[k] * t_next
            t_prev, t_cur = t_cur, t_next
    return u @ (gain * (u.T @ x))
