"""Trainable layers: linear, batchnorm, dropout, graph-conv block.

Weights are initialized uniform in (-s, s) with s = sqrt(6 / fan_in);
fan_in is n_in for linear layers and order * f_in for Chebyshev filters.
Biases start at zero, batchnorm at gamma=1 beta=0.
"""

from __future__ import annotations

import numpy as np

from meshlift import tensor as T
from meshlift.graphs import ChebFilter, ScaledLaplacian, chebyshev_conv
from meshlift.tensor import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Linear:
    """y = x @ W + b for (batch, n_in) inputs."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 dtype=np.float32):
        s = np.sqrt(6.0 / n_in)
        self.weight = Tensor(rng.uniform(-s, s, size=(n_in, n_out)),
                             requires_grad=True, dtype=dtype)
        self.bias = Tensor(np.zeros((1, n_out)), requires_grad=True, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return T.add(y, T.repeat_rows(self.bias, y.shape[0]))

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]


class BatchNorm1d:
    """Per-feature normalization over axis 0 of a (batch, features) input.

    Training mode normalizes by batch statistics (differentiable through
    them) and updates the running estimates with momentum 0.1; eval mode
    uses the frozen running estimates. Training on a batch of one is an
    error because the batch variance collapses.
    """

    def __init__(self, n: int, dtype=np.float32):
        self.gamma = Tensor(np.ones((1, n)), requires_grad=True, dtype=dtype)
        self.beta = Tensor(np.zeros((1, n)), requires_grad=True, dtype=dtype)
        self.running_mean = np.zeros((1, n), dtype=dtype)
        self.running_var = np.ones((1, n), dtype=dtype)
        self.n = n

    def forward(self, x: Tensor, training: bool) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.n:
            raise T.ShapeError("batchnorm", x.shape, (self.n,))
        b = x.shape[0]
        if training:
            if b < 2:
                raise ValueError("batchnorm: training mode needs batch size >= 2")
            mean = T.reduce_mean(x, axis=0, keepdims=True)
            centered = T.sub(x, T.repeat_rows(mean, b))
            var = T.reduce_mean(T.mul(centered, centered), axis=0, keepdims=True)
            denom = T.sqrt(T.scalar_add(var, BN_EPS))
            xhat = T.div(centered, T.repeat_rows(denom, b))
            m = x.data.mean(axis=0, keepdims=True)
            v = x.data.var(axis=0, keepdims=True) * (b / (b - 1))  # unbiased
            self.running_mean = ((1 - BN_MOMENTUM) * self.running_mean
                                 + BN_MOMENTUM * m).astype(x.data.dtype)
            self.running_var = ((1 - BN_MOMENTUM) * self.running_var
                                + BN_MOMENTUM * v).astype(x.data.dtype)
        else:
            mean = Tensor(self.running_mean, dtype=x.dtype)
            denom = Tensor(np.sqrt(self.running_var.astype(np.float64) + BN_EPS),
                           dtype=x.dtype)
            xhat = T.div(T.sub(x, T.repeat_rows(mean, b)),
                         T.repeat_rows(denom, b))
        scaled = T.mul(xhat, T.repeat_rows(self.gamma, b))
        return T.add(scaled, T.repeat_rows(self.beta, b))

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]


def dropout(x: Tensor, p: float, training: bool,
            rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when eval or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: training mode needs an rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return T.mul(x, Tensor(mask, dtype=x.dtype))


def make_cheb_filter(f_in: int, f_out: int, order: int,
                     rng: np.random.Generator, dtype=np.float32) -> ChebFilter:
    s = np.sqrt(6.0 / (order * f_in))
    return ChebFilter([
        Tensor(rng.uniform(-s, s, size=(f_in, f_out)), requires_grad=True, dtype=dtype)
        for _ in range(order)
    ])


class GraphConvBlock:
    """Chebyshev conv -> batchnorm (per feature over batch x vertices) -> ReLU.

    Operates on the stacked (V, batch * f) layout shared with chebyshev_conv.
    """

    def __init__(self, f_in: int, f_out: int, order: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.filter = make_cheb_filter(f_in, f_out, order, rng, dtype)
        self.bn = BatchNorm1d(f_out, dtype=dtype)
        self.f_out = f_out

    def forward(self, x: Tensor, lap: ScaledLaplacian, batch: int,
                training: bool) -> Tensor:
        y = chebyshev_conv(x, lap, self.filter, batch=batch)
        v = y.shape[0]
        flat = T.reshape(y, (v * batch, self.f_out))
        flat = T.relu(self.bn.forward(flat, training))
        return T.reshape(flat, (v, batch * self.f_out))

    def parameters(self):
        params = [(f"filter.{k}", c) for k, c in enumerate(self.filter.coefficients)]
        return params + [(f"bn.{n}", p) for n, p in self.bn.parameters()]

    def bn_modules(self):
        return [("bn", self.bn)]
