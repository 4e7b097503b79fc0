"""Graph building blocks: MS-GCN, MS-TCN, MS-G3D, the STGC / coarse / fine
blocks and the two cross-head attention blocks."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import AlignmentError, ConfigError, DimensionError, UsageError
from .graph import SkeletonGraph, build_multiscale, build_window_adjacency
from .nn import BatchNorm, Module, PointwiseConv, TemporalConv, glorot
from .tensor import Parameter, Tensor


class MsGcn(Module):
    """sigma(BN(sum_k A_k X_t W_k + b)) applied to every frame."""

    def __init__(self, c_in: int, c_out: int, adjacency: np.ndarray, rng: np.random.Generator,
                 bn: bool = True, activation: bool = True, bias: bool = True):
        self.adjacency = np.ascontiguousarray(adjacency)
        S = self.adjacency.shape[0]
        self.c_in, self.c_out = c_in, c_out
        w = np.concatenate([glorot(rng, (c_out, c_in), c_in, c_out) for _ in range(S)], axis=1)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(c_out, dtype=T.default_dtype())) if bias else None
        self.bn = BatchNorm(c_out, enabled=bn)
        self.activation = activation

    def scale_weight(self, k: int) -> np.ndarray:
        """W_k as a (C_in, C_out) matrix."""
        return self.weight.data[:, k * self.c_in:(k + 1) * self.c_in].T

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.adjacency.shape[-1]:
            raise DimensionError(f"MS-GCN expects {self.adjacency.shape[-1]} joints, got {x.shape[-1]}")
        y = self.bn(T.graph_conv(x, self.adjacency, self.weight, self.bias))
        return T.relu(y) if self.activation else y


class MsTcn(Module):
    """Sum of dilated temporal convolutions sharing one kernel length."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, kernel: int = 3,
                 dilations: Sequence[int] = (1, 2), bias: bool = True):
        dilations = tuple(dilations)
        if not dilations or any(b <= a for a, b in zip(dilations, dilations[1:])):
            raise ConfigError(f"MS-TCN dilations must be non-empty and strictly increasing, got {dilations}")
        if kernel % 2 == 0:
            raise ConfigError(f"MS-TCN kernel length must be odd, got {kernel}")
        self.branches = [TemporalConv(c_in, c_out, kernel, d, rng, bias=False) for d in dilations]
        self.bias = Parameter(np.zeros(c_out, dtype=T.default_dtype())) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = self.branches[0](x)
        for br in self.branches[1:]:
            y = T.add(y, br(x))
        if self.bias is not None:
            y = T.add(y, T.reshape(self.bias, (1, -1, 1, 1)))
        return y


class MsG3d(Module):
    """Multi-scale graph convolution over a centred tau-frame window.

    Each frame's window is stacked into a tau*N-node graph; the centre slot's
    rows of the stacked multi-scale adjacency produce the output, followed by
    a channel projection.
    """

    def __init__(self, c_in: int, c_out: int, graph: SkeletonGraph, tau: int, K: int,
                 rng: np.random.Generator, bn: bool = True, project: bool = True):
        self.tau = tau
        self.window = build_window_adjacency(graph, tau, K)
        self.gcn = MsGcn(c_in, c_out, self.window.center_rows(), rng, bn=bn, activation=True)
        self.project = PointwiseConv(c_out, c_out, rng) if project else None
        self.bn = BatchNorm(c_out, enabled=bn and project)

    def forward(self, x: Tensor) -> Tensor:
        if self.tau > x.shape[2]:
            raise ConfigError(f"G3D window tau={self.tau} longer than sequence T={x.shape[2]}")
        y = self.gcn(T.window_nodes(x, self.tau))
        if self.project is not None:
            y = self.bn(self.project(y))
        return y


class StackPath(Module):
    """MS-GCN followed by MS-TCN (the factorized pathway)."""

    def __init__(self, c_in: int, c_out: int, graph: SkeletonGraph, K: int, rng,
                 tcn_kernel: int, tcn_dilations, bn: bool):
        self.gcn = MsGcn(c_in, c_out, build_multiscale(graph, K).stacked(), rng, bn=bn)
        self.tcn = MsTcn(c_out, c_out, rng, tcn_kernel, tcn_dilations)
        self.bn = BatchNorm(c_out, enabled=bn)

    def forward(self, x: Tensor) -> Tensor:
        return T.relu(self.bn(self.tcn(self.gcn(x))))


class GraphBlock(Module):
    """Parallel G3D paths (one per window length) and a stack path, concatenated
    on channels and fused by an MS-TCN.

    The backbone STGC block uses windows (3, 5) at full width, the coarse block
    keeps only the smallest window, and the fine block uses (3, 5) at half width.
    """

    def __init__(self, c_in: int, c_out: int, graph: SkeletonGraph, taus: Sequence[int], K: int,
                 rng: np.random.Generator, tcn_kernel: int = 3, tcn_dilations=(1, 2), bn: bool = True,
                 residual: bool = True):
        self.c_out = c_out
        self.g3d = [MsG3d(c_in, c_out, graph, tau, K, rng, bn=bn) for tau in taus]
        self.stack = StackPath(c_in, c_out, graph, K, rng, tcn_kernel, tcn_dilations, bn)
        n_paths = len(self.g3d) + 1
        self.fuse = MsTcn(n_paths * c_out, c_out, rng, tcn_kernel, tcn_dilations)
        self.bn = BatchNorm(c_out, enabled=bn)
        # identity shortcut when widths agree, otherwise a projected one
        self.res_proj = PointwiseConv(c_in, c_out, rng) if residual and c_in != c_out else None
        self.res_bn = BatchNorm(c_out, enabled=bn and self.res_proj is not None)
        self.residual = residual

    def forward(self, x: Tensor) -> Tensor:
        outs = [p(x) for p in self.g3d] + [self.stack(x)]
        shapes = {o.shape for o in outs}
        if len(shapes) != 1:
            raise UsageError(f"internal: block paths disagree on shape: {sorted(shapes)}")
        y = self.bn(self.fuse(T.concat(outs, axis=1)))
        if self.residual:
            y = T.add(y, x if self.res_proj is None else self.res_bn(self.res_proj(x)))
        return T.relu(y)


def stgc_block(c_in, c_out, graph, K, rng, taus=(3, 5), **kw) -> GraphBlock:
    return GraphBlock(c_in, c_out, graph, taus, K, rng, **kw)


def coarse_block(c_in, c_out, graph, K, rng, taus=(3,), **kw) -> GraphBlock:
    return GraphBlock(c_in, c_out, graph, taus, K, rng, **kw)


def fine_block(c_in, c_out, graph, K, rng, taus=(3, 5), **kw) -> GraphBlock:
    return GraphBlock(c_in, c_out, graph, taus, K, rng, **kw)


# ---------------------------------------------------------------------------
# attention

class TemporalAttention(Module):
    """Frame attention: pool channels and joints, 1-D conv over frames, sigmoid.

    Maps (B, C, T, N) to (B, 1, T, 1).
    """

    def __init__(self, rng: np.random.Generator, kernel: int = 9):
        if kernel % 2 == 0:
            raise ConfigError(f"temporal attention kernel must be odd, got {kernel}")
        self.weight = Parameter(glorot(rng, (1, 1, kernel), kernel, kernel))
        self.bias = Parameter(np.zeros(1, dtype=T.default_dtype()))

    def forward(self, x: Tensor) -> Tensor:
        pooled = T.mean(x, axes=(1, 3))
        return T.sigmoid(T.conv_temporal(pooled, self.weight, self.bias))


class SpatialAttention(Module):
    """Joint attention: pool channels and frames, per-joint affine map, sigmoid.

    Maps (B, C, T, N) to (B, 1, 1, N).  The kernel spans a single joint so
    joint order does not matter.
    """

    def __init__(self, rng: np.random.Generator):
        self.weight = Parameter(glorot(rng, (1, 1), 1, 1))
        self.bias = Parameter(np.zeros(1, dtype=T.default_dtype()))

    def forward(self, x: Tensor) -> Tensor:
        pooled = T.mean(x, axes=(1, 2))
        return T.sigmoid(T.pointwise_conv(pooled, self.weight, self.bias))


def temporal_indices(T_full: int, alpha: int) -> np.ndarray:
    if alpha < 1:
        raise ConfigError(f"subsample rate must be >= 1, got {alpha}")
    if T_full % alpha:
        pad = alpha - T_full % alpha
        raise AlignmentError(f"T={T_full} is not divisible by alpha={alpha}; pad by {pad} frame(s) "
                             f"to {T_full + pad}")
    return np.arange(0, T_full, alpha)


def apply_temporal_attention(theta: Tensor, x_coar: Tensor, alpha: int = 1) -> Tensor:
    """theta * X + X, after aligning theta to X's frame rate by stride-alpha sampling."""
    idx = temporal_indices(theta.shape[-2], alpha)
    if alpha > 1:
        theta = T.take(theta, idx, axis=-2)
    if theta.shape[-2] != x_coar.shape[-2]:
        raise AlignmentError(f"attention has {theta.shape[-2]} frames after alignment, "
                             f"features have {x_coar.shape[-2]}")
    return T.add(T.mul(theta, x_coar), x_coar)


def apply_spatial_attention(theta: Tensor, x_fine: Tensor) -> Tensor:
    """theta * X + X with theta broadcast over channels and frames."""
    if theta.shape[-1] != x_fine.shape[-1]:
        raise DimensionError(f"spatial attention has {theta.shape[-1]} joints, features have {x_fine.shape[-1]}")
    return T.add(T.mul(theta, x_fine), x_fine)


def subsample(x: Tensor, alpha: int) -> Tensor:
    """Keep frames 0, alpha, 2*alpha, ...; T must be divisible by alpha."""
    idx = temporal_indices(x.shape[-2], alpha)
    return x if alpha == 1 else T.take(x, idx, axis=-2)
