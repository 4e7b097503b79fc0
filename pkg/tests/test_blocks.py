"""Blocks against element-by-element loop oracles, plus shape contracts."""
import numpy as np
import pytest

from dualhead.blocks import (
    GraphBlock, MsG3d, MsGcn, MsTcn, SpatialAttention, TemporalAttention, apply_spatial_attention,
    apply_temporal_attention, subsample, temporal_indices,
)
from dualhead.errors import AlignmentError, ConfigError, DimensionError
from dualhead.graph import SkeletonGraph, build_multiscale, build_window_adjacency
from dualhead.tensor import Tensor
from oracles import (naive_g3d, naive_gcn, naive_spatial_attention_apply, naive_tconv,
                     naive_temporal_attention_apply)

INSTANCES = 50
TOL = 1e-10


def random_graph(rng, n):
    edges = tuple((i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.5)
    return SkeletonGraph(n, edges)


def small_shape(rng):
    return int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(3, 7)), int(rng.integers(1, 5))


def test_ms_gcn_matches_loops(rng):
    for _ in range(INSTANCES):
        B, C, Tn, N = small_shape(rng)
        O, K = int(rng.integers(1, 4)), int(rng.integers(0, 3))
        mats = build_multiscale(random_graph(rng, N), K).matrices
        blk = MsGcn(C, O, np.stack(mats), rng, bn=False)
        blk.bias.data[:] = rng.standard_normal(O)
        x = rng.standard_normal((B, C, Tn, N))
        W = [blk.scale_weight(k) for k in range(K + 1)]
        expected = naive_gcn(x, mats, W, blk.bias.data)
        assert np.max(np.abs(blk(Tensor(x)).data - expected)) < TOL


def test_ms_tcn_matches_loops(rng):
    for _ in range(INSTANCES):
        B, C, Tn, N = small_shape(rng)
        O = int(rng.integers(1, 4))
        kernel = int(rng.choice([1, 3, 5]))
        dil = tuple(sorted(rng.choice([1, 2, 3], size=int(rng.integers(1, 3)), replace=False).tolist()))
        blk = MsTcn(C, O, rng, kernel, dil)
        blk.bias.data[:] = rng.standard_normal(O)
        x = rng.standard_normal((B, C, Tn, N))
        expected = sum(naive_tconv(x, br.weight.data, d) for br, d in zip(blk.branches, dil))
        expected = expected + blk.bias.data[None, :, None, None]
        assert np.max(np.abs(blk(Tensor(x)).data - expected)) < TOL


def test_ms_g3d_matches_loops(rng):
    for _ in range(INSTANCES):
        B, C, Tn, N = small_shape(rng)
        tau, K, O = int(rng.choice([1, 3])), int(rng.integers(0, 3)), int(rng.integers(1, 3))
        g = random_graph(rng, N)
        blk = MsG3d(C, O, g, tau, K, rng, bn=False)
        blk.gcn.bias.data[:] = rng.standard_normal(O)
        x = rng.standard_normal((B, C, Tn, N))
        full = build_window_adjacency(g, tau, K).base.matrices
        W = [blk.gcn.scale_weight(k) for k in range(K + 1)]
        expected = naive_g3d(x, full, tau, W, blk.gcn.bias.data, blk.project.weight.data, blk.project.bias.data)
        assert np.max(np.abs(blk(Tensor(x)).data - expected)) < TOL


def test_temporal_attention_application_matches_loops(rng):
    for _ in range(INSTANCES):
        B, C, Tc, N = small_shape(rng)
        alpha = int(rng.integers(1, 4))
        theta = rng.random((B, 1, Tc * alpha, 1))
        x = rng.standard_normal((B, C, Tc, N))
        out = apply_temporal_attention(Tensor(theta), Tensor(x), alpha).data
        expected = naive_temporal_attention_apply(theta, x, alpha)
        assert np.max(np.abs(out - expected)) < TOL


def test_spatial_attention_application_matches_loops(rng):
    for _ in range(INSTANCES):
        B, C, Tn, N = small_shape(rng)
        theta = rng.random((B, 1, 1, N))
        x = rng.standard_normal((B, C, Tn, N))
        out = apply_spatial_attention(Tensor(theta), Tensor(x)).data
        expected = naive_spatial_attention_apply(theta, x)
        assert np.max(np.abs(out - expected)) < TOL


def test_attention_modules_match_loops(rng):
    for _ in range(INSTANCES):
        B, C, Tn, N = small_shape(rng)
        x = rng.standard_normal((B, C, Tn, N))
        ta, sa = TemporalAttention(rng, kernel=3), SpatialAttention(rng)
        ta.bias.data[:] = rng.standard_normal(1)
        sa.bias.data[:] = rng.standard_normal(1)
        pooled_t = x.mean(axis=(1, 3))
        w = ta.weight.data[0, 0]
        exp_t = np.zeros((B, 1, Tn, 1))
        for bi in range(B):
            for t in range(Tn):
                acc = ta.bias.data[0]
                for k in range(3):
                    s = t + k - 1
                    if 0 <= s < Tn:
                        acc += w[k] * pooled_t[bi, s]
                exp_t[bi, 0, t, 0] = 1 / (1 + np.exp(-acc))
        pooled_s = x.mean(axis=(1, 2))
        exp_s = 1 / (1 + np.exp(-(sa.weight.data[0, 0] * pooled_s + sa.bias.data[0])))
        assert np.max(np.abs(ta(Tensor(x)).data - exp_t)) < TOL
        assert np.max(np.abs(sa(Tensor(x)).data - exp_s[:, None, None, :])) < TOL


@pytest.mark.parametrize("Tn,N", [(8, 3), (16, 11), (64, 25), (6, 1)])
def test_attention_shapes(rng, Tn, N):
    x = Tensor(rng.standard_normal((1, 4, Tn, N)))
    assert TemporalAttention(rng)(x).shape == (1, 1, Tn, 1)
    assert SpatialAttention(rng)(x).shape == (1, 1, 1, N)


def test_subsample_halves_frames(rng):
    x = Tensor(rng.standard_normal((2, 3, 64, 5)))
    y = subsample(x, 2)
    assert y.shape == (2, 3, 32, 5)
    np.testing.assert_array_equal(y.data, x.data[:, :, ::2])


def test_subsample_misaligned():
    with pytest.raises(AlignmentError, match="pad by 1"):
        temporal_indices(7, 2)


def test_attention_misaligned(rng):
    with pytest.raises(AlignmentError):
        apply_temporal_attention(Tensor(rng.random((1, 1, 8, 1))), Tensor(rng.random((1, 2, 3, 2))), 2)
    with pytest.raises(DimensionError):
        apply_spatial_attention(Tensor(rng.random((1, 1, 1, 3))), Tensor(rng.random((1, 2, 4, 2))))


def test_zero_attention_is_identity(rng):
    x = rng.standard_normal((1, 2, 4, 3))
    np.testing.assert_array_equal(apply_temporal_attention(Tensor(np.zeros((1, 1, 8, 1))), Tensor(x), 2).data, x)


def test_block_config_errors(rng):
    g = SkeletonGraph(3, ((0, 1), (1, 2)))
    with pytest.raises(ConfigError):
        MsTcn(2, 2, rng, 3, (2, 1))
    with pytest.raises(ConfigError):
        MsTcn(2, 2, rng, 4, (1,))
    with pytest.raises(ConfigError):
        MsG3d(2, 2, g, 7, 1, rng)(Tensor(np.zeros((1, 2, 4, 3))))
    with pytest.raises(DimensionError):
        MsGcn(2, 2, build_multiscale(g, 1).stacked(), rng)(Tensor(np.zeros((1, 2, 4, 4))))


@pytest.mark.parametrize("c_in,c_out", [(4, 4), (3, 6)])
def test_graph_block_preserves_frames(rng, c_in, c_out):
    g = SkeletonGraph(4, ((0, 1), (1, 2), (2, 3)))
    blk = GraphBlock(c_in, c_out, g, (3, 5), 2, rng)
    assert blk(Tensor(rng.standard_normal((2, c_in, 10, 4)))).shape == (2, c_out, 10, 4)
    assert (blk.res_proj is None) == (c_in == c_out)


def test_graph_block_input_gradcheck(rng):
    from dualhead.gradcheck import check_function

    g = SkeletonGraph(3, ((0, 1), (1, 2)))
    blk = GraphBlock(2, 3, g, (3,), 1, rng, bn=False)
    assert max(check_function(blk, [rng.standard_normal((1, 2, 5, 3))])) < 1e-6
