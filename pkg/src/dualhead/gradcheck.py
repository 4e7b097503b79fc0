"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .graph import SkeletonGraph
from .model import DualHeadNet, ModelConfig
from .tensor import Parameter, Tensor

REL_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def check_function(fn: Callable[..., Tensor], inputs: list[np.ndarray], h: float = 1e-5,
                   weights: np.ndarray | None = None) -> list[float]:
    """Relative error of d(sum(w * fn(*inputs)))/d(input) for every input.

    ``weights`` defaults to a fixed random projection so that non-scalar
    outputs are checked in every direction at once.
    """
    tensors = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    T.get_tape().clear()
    out = fn(*tensors)
    w = weights if weights is not None else np.random.default_rng(123).standard_normal(out.shape)
    loss = T.mul(out, Tensor(w))
    loss = T.mean(loss, axes=None, keepdims=False)
    T.backward(T.mul(loss, float(np.prod(out.shape))))
    T.get_tape().clear()
    errs = []
    for t in tensors:
        def f():
            with T.no_grad():
                return float(np.sum(w * fn(*tensors).data))
        errs.append(relative_error(t.grad, numeric_grad(f, t.data, h)))
    return errs


@dataclass
class GroupReport:
    name: str
    size: int
    max_rel_error: float
    passed: bool


def check_model(net: DualHeadNet, x: np.ndarray, y: np.ndarray, h: float = 1e-5, tol: float = 1e-4,
                corrupt: str | None = None) -> list[GroupReport]:
    """Finite-difference check of every parameter of ``net`` on one batch.

    Batch norm runs in eval mode.  ``corrupt`` names a parameter whose
    analytic gradient is deliberately perturbed (a sabotage hook used to
    prove the checker can fail).
    """
    net.eval()
    params = list(net.named_parameters())
    for _, p in params:
        p.zero_grad()
    tape = T.get_tape()
    tape.clear()
    s_coar, s_fine, _, _ = net(x)
    T.backward(net.loss(s_coar, s_fine, y))
    tape.clear()

    def f():
        with T.no_grad():
            sc, sf, _, _ = net(x)
            return net.loss(sc, sf, y).item()

    reports = []
    for name, p in params:
        analytic = p.grad.copy()
        if corrupt == name:
            analytic = analytic * 1.01 + 1e-3
        err = relative_error(analytic, numeric_grad(f, p.data, h))
        reports.append(GroupReport(name, p.data.size, err, err < tol))
        p.zero_grad()
    return reports


def micro_model(joints: int = 3, frames: int = 8, channels: int = 4, classes: int = 2, scales: int = 1,
                batch: int = 2, seed: int = 0, **overrides) -> tuple[DualHeadNet, np.ndarray, np.ndarray]:
    """A tiny path-graph model with random inputs, for gradient checks."""
    rng = np.random.default_rng(seed)
    graph = SkeletonGraph(joints, tuple((i, i + 1) for i in range(joints - 1)))
    kw = dict(num_classes=classes, in_channels=3, backbone_channels=channels, coarse_channels=channels,
              fine_channels=max(1, channels // 2), scales=scales, stages=2)
    kw.update(overrides)
    net = DualHeadNet(ModelConfig(**kw), graph, rng)
    # randomize batch-norm statistics and affine terms so eval-mode BN is not the identity
    for m in net.modules():
        bufs = getattr(m, "_buffers", None)
        if bufs:
            bufs["running_mean"][:] = rng.normal(0, 0.1, bufs["running_mean"].shape)
            bufs["running_var"][:] = rng.uniform(0.5, 1.5, bufs["running_var"].shape)
            m.gamma.data[:] = rng.uniform(0.5, 1.5, m.gamma.shape)
            m.beta.data[:] = rng.normal(0, 0.1, m.beta.shape)
    for _, p in net.named_parameters():
        if p.name.endswith("bias"):
            p.data[:] = rng.normal(0, 0.1, p.shape)
    x = rng.standard_normal((batch, 3, frames, joints))
    y = rng.integers(0, classes, size=batch)
    return net, x, y
