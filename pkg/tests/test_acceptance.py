"""Acceptance suite: one test (or group) per criterion, summarised at the end of the run.

The training experiments read their regimes from ``configs/`` so that
``dualhead ablate --config configs/ablation.cfg`` reproduces the same numbers.
"""
import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from dualhead.blocks import (MsG3d, MsGcn, MsTcn, apply_spatial_attention, apply_temporal_attention,
                             subsample)
from dualhead.cli import main
from dualhead.config import RunConfig
from dualhead.data import (SkeletonSequence, batch_features, load_sequence, modality_stream,
                           save_sequence)
from dualhead.experiment import ablate, build_model, synthetic_arrays, train_run
from dualhead.gradcheck import check_model, micro_model
from dualhead.graph import SkeletonGraph, bone_parents, build_multiscale, build_window_adjacency, bundled_skeleton
from dualhead.model import DualHeadNet, ModelConfig, count_parameters
from dualhead.tensor import Tensor
from oracles import (analytic_total, naive_g3d, naive_gcn, naive_spatial_attention_apply, naive_tconv,
                     naive_temporal_attention_apply)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
criterion = pytest.mark.criterion


def random_graph(rng, n):
    return SkeletonGraph(n, tuple((i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.5))


def small_shape(rng):
    return int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(3, 7)), int(rng.integers(1, 5))


# -- 1 ---------------------------------------------------------------------------

@criterion(1, "gradient integrity of the micro model")
def test_gradient_integrity(acceptance_notes):
    cfg = RunConfig.defaults()
    g = cfg["gradcheck"]
    assert (g["joints"], g["frames"], g["channels"], g["classes"]) == (3, 8, 4, 2)
    assert (g["step"], g["tolerance"]) == (1e-5, 1e-4)
    start = time.perf_counter()
    net, x, y = micro_model(g["joints"], g["frames"], g["channels"], g["classes"], g["scales"], g["batch"],
                            seed=cfg["run"]["seed"])
    assert net.cfg.stages == 2 and net.cfg.batch_norm
    assert x.dtype == np.float64
    reports = check_model(net, x, y, h=g["step"], tol=g["tolerance"])
    elapsed = time.perf_counter() - start
    assert len(reports) == len(net.parameters())
    worst = max(reports, key=lambda r: r.max_rel_error)
    acceptance_notes.append(f"gradcheck: worst group {worst.name} {worst.max_rel_error:.2e}, {elapsed:.1f}s")
    assert all(r.max_rel_error < 1e-4 for r in reports)
    assert elapsed < 60


# -- 2 ---------------------------------------------------------------------------

ORACLE_SEED = 2


@criterion(2, "oracle equivalence")
def test_oracle_ms_gcn():
    rng = np.random.default_rng(ORACLE_SEED)
    worst = 0.0
    for _ in range(50):
        B, C, Tn, N = small_shape(rng)
        O, K = int(rng.integers(1, 4)), int(rng.integers(0, 3))
        mats = build_multiscale(random_graph(rng, N), K).matrices
        blk = MsGcn(C, O, np.stack(mats), rng, bn=False)
        blk.bias.data[:] = rng.standard_normal(O)
        x = rng.standard_normal((B, C, Tn, N))
        expected = naive_gcn(x, mats, [blk.scale_weight(k) for k in range(K + 1)], blk.bias.data)
        worst = max(worst, np.max(np.abs(blk(Tensor(x)).data - expected)))
    assert worst < 1e-10


@criterion(2, "oracle equivalence")
def test_oracle_ms_tcn():
    rng = np.random.default_rng(ORACLE_SEED + 1)
    worst = 0.0
    for _ in range(50):
        B, C, Tn, N = small_shape(rng)
        O, kernel = int(rng.integers(1, 4)), int(rng.choice([1, 3, 5]))
        dil = tuple(sorted(rng.choice([1, 2, 3], size=int(rng.integers(1, 3)), replace=False).tolist()))
        blk = MsTcn(C, O, rng, kernel, dil)
        blk.bias.data[:] = rng.standard_normal(O)
        x = rng.standard_normal((B, C, Tn, N))
        expected = sum(naive_tconv(x, br.weight.data, d) for br, d in zip(blk.branches, dil))
        expected = expected + blk.bias.data[None, :, None, None]
        worst = max(worst, np.max(np.abs(blk(Tensor(x)).data - expected)))
    assert worst < 1e-10


@criterion(2, "oracle equivalence")
def test_oracle_ms_g3d():
    rng = np.random.default_rng(ORACLE_SEED + 2)
    worst = 0.0
    for _ in range(50):
        B, C, Tn, N = small_shape(rng)
        tau, K, O = int(rng.choice([1, 3, 5])), int(rng.integers(0, 3)), int(rng.integers(1, 3))
        Tn = max(Tn, tau)
        g = random_graph(rng, N)
        blk = MsG3d(C, O, g, tau, K, rng, bn=False)
        blk.gcn.bias.data[:] = rng.standard_normal(O)
        x = rng.standard_normal((B, C, Tn, N))
        full = build_window_adjacency(g, tau, K).base.matrices
        W = [blk.gcn.scale_weight(k) for k in range(K + 1)]
        expected = naive_g3d(x, full, tau, W, blk.gcn.bias.data, blk.project.weight.data, blk.project.bias.data)
        worst = max(worst, np.max(np.abs(blk(Tensor(x)).data - expected)))
    assert worst < 1e-10


@criterion(2, "oracle equivalence")
def test_oracle_attention_applications():
    rng = np.random.default_rng(ORACLE_SEED + 3)
    worst = 0.0
    for _ in range(50):
        B, C, Tc, N = small_shape(rng)
        alpha = int(rng.integers(1, 4))
        theta_te = rng.random((B, 1, Tc * alpha, 1))
        theta_sp = rng.random((B, 1, 1, N))
        x = rng.standard_normal((B, C, Tc, N))
        te = apply_temporal_attention(Tensor(theta_te), Tensor(x), alpha).data
        sp = apply_spatial_attention(Tensor(theta_sp), Tensor(x)).data
        worst = max(worst, np.max(np.abs(te - naive_temporal_attention_apply(theta_te, x, alpha))),
                    np.max(np.abs(sp - naive_spatial_attention_apply(theta_sp, x))))
    assert worst < 1e-10


# -- 3 ---------------------------------------------------------------------------

SHAPE_CASES = [(8, SkeletonGraph(3, ((0, 1), (1, 2)))), (16, bundled_skeleton("synthetic11")),
               (32, bundled_skeleton("ntu25")), (12, SkeletonGraph(1, ()))]


@criterion(3, "attention and subsample shape contracts")
@pytest.mark.parametrize("Tn,graph", SHAPE_CASES, ids=["path3", "synthetic11", "ntu25", "single-joint"])
def test_shape_contracts(Tn, graph):
    rng = np.random.default_rng(Tn)
    cfg = ModelConfig(num_classes=3, backbone_channels=4, coarse_channels=4, fine_channels=2, scales=1)
    net = DualHeadNet(cfg, graph, rng)
    net.eval()
    _, _, s, trace = net(rng.standard_normal((2, 3, Tn, graph.num_joints)))
    n = graph.num_joints
    assert all(th.shape[1:] == (1, Tn, 1) for th in trace.theta_te)
    assert all(th.shape[1:] == (1, 1, n) for th in trace.theta_sp)
    assert trace.shapes["coarse.0"][2] == Tn // 2
    assert subsample(Tensor(rng.standard_normal((1, 2, Tn, n))), 2).shape == (1, 2, Tn // 2, n)
    assert s.shape == (2, 3)


# -- 4 ---------------------------------------------------------------------------

@criterion(4, "fusion exactness and default weight")
@pytest.mark.parametrize("mu", [0.0, 0.25, 0.5, 1.0])
def test_fusion_exactness(mu):
    rng = np.random.default_rng(4)
    cfg = ModelConfig(num_classes=5, backbone_channels=6, coarse_channels=6, fine_channels=3, scales=2, mu=mu)
    g = bundled_skeleton("synthetic11")
    net = DualHeadNet(cfg, g, rng)
    net.eval()
    sc, sf, s, _ = net(rng.standard_normal((4, 3, 16, g.num_joints)))
    assert np.max(np.abs(s.data - (mu * sc.data + (1 - mu) * sf.data))) <= 1e-12
    assert ModelConfig().mu == 0.5 and RunConfig.defaults()["model"]["mu"] == 0.5


# -- 5 ---------------------------------------------------------------------------

def overfit_config() -> RunConfig:
    return RunConfig.from_file(CONFIGS / "overfit.cfg")


@pytest.mark.slow
@criterion(5, "overfit sanity on 80 sequences")
@pytest.mark.parametrize("model_seed", [7, 8, 9])
def test_overfit(model_seed, acceptance_notes):
    cfg = overfit_config()
    o, d = cfg["optim"], cfg["data"]
    assert (o["lr"], o["momentum"], o["nesterov"], o["weight_decay"]) == (0.1, 0.9, True, 5e-4)
    assert o["epochs"] <= 100
    (X, y), _ = synthetic_arrays(cfg, cfg["run"]["seed"])
    assert X.shape == (80, 3, 64, 11) and len(np.unique(y)) == 4 and cfg["run"]["seed"] == 7
    net = build_model(cfg, model_seed, model_cfg=replace(cfg.model_config(), num_classes=4))
    start = time.perf_counter()
    hist = train_run(cfg, net, (X, y), None, model_seed)
    elapsed = time.perf_counter() - start
    losses = [r.train_loss for r in hist]
    acceptance_notes.append(f"overfit seed {model_seed}: {len(hist)} epochs, train acc {hist[-1].train_acc:.4f}, "
                            f"{elapsed:.1f}s")
    assert all(b < a for a, b in zip(losses[:5], losses[1:5]))
    assert hist[-1].train_acc >= 0.99
    assert elapsed < 300


# -- 6 and 7 -------------------------------------------------------------------------

def at_least(a, b):
    # means of k/n accuracies: equal totals can still differ in the last bit
    return a >= b - 1e-12


@pytest.fixture(scope="module")
def ablation(acceptance_notes):
    cfg = RunConfig.from_file(CONFIGS / "ablation.cfg")
    start = time.perf_counter()
    rows, _ = ablate(cfg)
    elapsed = time.perf_counter() - start
    table = {r.variant: r.mean for r in rows}
    acceptance_notes.extend(r.line() for r in rows)
    acceptance_notes.append(f"ablation: {elapsed:.0f}s")
    return cfg, table, elapsed


@pytest.mark.slow
@criterion(6, "directional ablation")
def test_directional_ablation(ablation):
    cfg, table, elapsed = ablation
    assert cfg["data"]["num_coarse"] * cfg["data"]["fine_variants"] == 8 and cfg["ablate"]["seeds"] == 5
    best_single = max(table["single-coarse"], table["single-fine"])
    assert at_least(table["dual+ta+sa"], table["dual"]) and at_least(table["dual"], best_single)
    assert table["dual+ta+sa"] - best_single >= 0.02
    assert elapsed < 30 * 60


@pytest.mark.slow
@criterion(7, "cross-head attention against self attention")
def test_cross_beats_self(ablation):
    _, table, _ = ablation
    assert at_least(table["dual+ta+sa"], table["self-attention"])


# -- 8 ---------------------------------------------------------------------------

ACCOUNTING = [
    ModelConfig(),
    ModelConfig(num_classes=8, backbone_channels=8, coarse_channels=8, fine_channels=4, scales=2),
    ModelConfig(num_classes=3, backbone_channels=5, coarse_channels=7, fine_channels=2, scales=1,
                tcn_dilations=(1, 2, 4), stages=1, batch_norm=False, attention_kernel=5),
]


@criterion(8, "parameter accounting")
@pytest.mark.parametrize("cfg", ACCOUNTING, ids=["default", "narrow", "odd-widths"])
def test_parameter_totals(cfg):
    total, _ = count_parameters(DualHeadNet(cfg, bundled_skeleton("synthetic11"), 0))
    assert total == analytic_total(cfg)


@criterion(8, "parameter accounting")
def test_fine_head_halving_and_attention_size():
    g = bundled_skeleton("synthetic11")
    full = count_parameters(DualHeadNet(ModelConfig(fine_channels=64), g, 0))[1]["fine"]
    half = count_parameters(DualHeadNet(ModelConfig(fine_channels=32), g, 0))[1]["fine"]
    assert 3.5 <= full / half <= 4.2
    net = DualHeadNet(ModelConfig(), g, 0)
    assert net.temporal_att and net.spatial_att
    assert all(blk.num_parameters() < 100_000 for blk in net.temporal_att + net.spatial_att)


# -- 9 ---------------------------------------------------------------------------

PERSIST_CFG = """
[model]
backbone_channels = 6
coarse_channels = 6
fine_channels = 3
scales = 2
[data]
frames = 32
target_frames = 32
per_class_train = 6
per_class_test = 4
[optim]
epochs = 3
batch_size = 8
"""


@criterion(9, "determinism and persistence")
def test_rerun_and_checkpoint(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(PERSIST_CFG)
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["generate", "--config", str(cfg), "--out", str(out)]) == 0
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        runs.append(out)
    first = (runs[0] / "metrics.jsonl").read_bytes()
    assert first == (runs[1] / "metrics.jsonl").read_bytes()

    last = json.loads(first.splitlines()[-1])
    assert main(["eval", "--config", str(cfg), "--out", str(runs[0]),
                 "--stream", str(runs[0] / "final.ckpt")]) == 0
    ev = json.loads((runs[0] / "eval.jsonl").read_text().splitlines()[0])
    assert ev["acc"] == last["test_acc"]


@criterion(9, "determinism and persistence")
def test_skel_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    for i in range(100):
        T, N, d = int(rng.integers(1, 70)), int(rng.integers(1, 26)), int(rng.choice([2, 3]))
        seq = SkeletonSequence(rng.standard_normal((T, N, d)) * 10 ** rng.uniform(-8, 8), int(rng.integers(0, 120)))
        path = tmp_path / f"{i}.skel"
        save_sequence(seq, path)
        back = load_sequence(path)
        assert back.coords.tobytes() == seq.coords.tobytes() and back.label == seq.label


# -- 10 --------------------------------------------------------------------------

EQUIV_MODEL = dict(num_classes=4, backbone_channels=6, coarse_channels=6, fine_channels=3, scales=2)


@criterion(10, "equivariance suite")
def test_joint_permutation_invariance():
    for case in range(20):
        rng = np.random.default_rng(100 + case)
        n = int(rng.integers(3, 9))
        g = SkeletonGraph(n, tuple((i, int(rng.integers(0, i))) for i in range(1, n)))
        perm = rng.permutation(n)
        x = rng.standard_normal((2, 3, 8, n))
        a = DualHeadNet(ModelConfig(**EQUIV_MODEL), g, case)
        b = DualHeadNet(ModelConfig(**EQUIV_MODEL), g.permuted(perm), case)
        a.eval()
        b.eval()
        assert np.max(np.abs(a(x)[2].data - b(x[..., perm])[2].data)) <= 1e-9


@criterion(10, "equivariance suite")
def test_bone_translation_invariance():
    g = bundled_skeleton("synthetic11")
    parents = bone_parents(g, 0)
    net = DualHeadNet(ModelConfig(**EQUIV_MODEL), g, 10)
    net.eval()
    for case in range(20):
        rng = np.random.default_rng(200 + case)
        coords = rng.standard_normal((16, g.num_joints, 3))
        shift = rng.uniform(-100, 100, size=(1, 1, 3))
        a = modality_stream(coords, "bone", parents)
        b = modality_stream(coords + shift, "bone", parents)
        assert np.max(np.abs(a - b)) <= 1e-9
        Xa, _ = batch_features([SkeletonSequence(coords, 0)], "bone", parents, 16)
        Xb, _ = batch_features([SkeletonSequence(coords + shift, 0)], "bone", parents, 16)
        assert np.max(np.abs(net(Xa)[2].data - net(Xb)[2].data)) <= 1e-9
