"""Mini-batch training and evaluation of a DualHeadNet."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import NumericError
from .model import DualHeadNet
from .nn import BatchNorm
from .optim import OptimizerConfig, lr_at_epoch, sgd_step


@dataclass
class MetricsRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float | None
    train_acc_coarse: float | None
    train_acc_fine: float | None
    test_acc: float | None
    test_acc_coarse: float | None
    test_acc_fine: float | None
    wall_time: float

    def as_dict(self, with_time: bool = True) -> dict:
        d = asdict(self)
        if not with_time:
            d.pop("wall_time")
        return d


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Shuffle for one epoch, derived from (seed, epoch) so resumed runs match."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def train_epoch(net: DualHeadNet, X: np.ndarray, y: np.ndarray, opt: OptimizerConfig,
                epoch: int, batch_size: int, seed: int) -> float:
    """One pass over (X, y); returns the sample-weighted mean loss."""
    net.train()
    params = net.parameters()
    lr = lr_at_epoch(opt, epoch)
    order = epoch_order(len(X), seed, epoch)
    tape = T.get_tape()
    total = 0.0
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        tape.clear()
        s_coar, s_fine, _, _ = net(X[idx])
        loss = net.loss(s_coar, s_fine, y[idx])
        value = loss.item()
        if not np.isfinite(value):
            culprit = tape.first_nonfinite() or "cross_entropy"
            tape.clear()
            raise NumericError(f"non-finite loss at epoch {epoch}; first non-finite op: {culprit}")
        T.backward(loss)
        tape.clear()
        sgd_step(params, opt, lr)
        total += value * len(idx)
    return total / len(order)


def recalibrate_batch_norm(net: DualHeadNet, X: np.ndarray, batch_size: int = 64) -> None:
    """Replace running BN statistics with population statistics of ``X``.

    The exponential running averages lag behind weights that moved during the
    epoch; one no-grad pass with cumulative averaging removes that lag.
    """
    bns = [m for m in net.modules() if isinstance(m, BatchNorm) and m.enabled]
    if not bns:
        return
    saved = [m.momentum for m in bns]
    for m in bns:
        m._buffers["running_mean"][:] = 0.0
        m._buffers["running_var"][:] = 0.0
    net.train()
    try:
        for k, start in enumerate(range(0, len(X), batch_size)):
            for m in bns:
                m.momentum = 1.0 / (k + 1)
            with T.no_grad():
                net(X[start:start + batch_size])
    finally:
        for m, mom in zip(bns, saved):
            m.momentum = mom
        net.eval()


def predict_scores(net: DualHeadNet, X: np.ndarray, batch_size: int = 64, threads: int = 1):
    """(s_coar, s_fine, s) score arrays over X in eval mode; absent heads give None."""
    net.eval()
    chunks = [X[i:i + batch_size] for i in range(0, len(X), batch_size)]

    def run(chunk):
        with T.no_grad():
            sc, sf, s, _ = net(chunk)
        return (None if sc is None else sc.data, None if sf is None else sf.data, s.data)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    out = []
    for k in range(3):
        out.append(None if parts[0][k] is None else np.concatenate([p[k] for p in parts]))
    return tuple(out)


def accuracy(scores: np.ndarray | None, y: np.ndarray) -> float | None:
    if scores is None:
        return None
    return float(np.mean(np.argmax(scores, axis=-1) == y))


def evaluate(net: DualHeadNet, X: np.ndarray, y: np.ndarray, batch_size: int = 64,
             threads: int = 1) -> dict:
    sc, sf, s = predict_scores(net, X, batch_size, threads)
    return {"acc": accuracy(s, y), "acc_coarse": accuracy(sc, y), "acc_fine": accuracy(sf, y),
            "scores": s}


_EMPTY = {"acc": None, "acc_coarse": None, "acc_fine": None}


def fit(net: DualHeadNet, train: tuple[np.ndarray, np.ndarray], test: tuple[np.ndarray, np.ndarray] | None,
        opt: OptimizerConfig, epochs: int, batch_size: int, seed: int, start_epoch: int = 0,
        on_epoch=None, stop_at_train_acc: float | None = None, threads: int = 1,
        recalibrate: bool = True, final_only: bool = False) -> list[MetricsRecord]:
    """Train for ``epochs`` (0-based from ``start_epoch``) and return per-epoch metrics.

    ``on_epoch(record, net)`` is called after each epoch.  Training stops early
    once fused train accuracy reaches ``stop_at_train_acc``.  With
    ``recalibrate`` the BN statistics are recomputed on the training set after
    every epoch, before evaluation.  ``final_only`` skips recalibration and
    evaluation (accuracies are None) on every epoch but the last.
    """
    X, y = train
    history = []
    for epoch in range(start_epoch, epochs):
        t0 = time.perf_counter()
        loss = train_epoch(net, X, y, opt, epoch, batch_size, seed)
        measure = not final_only or epoch == epochs - 1
        if recalibrate and measure:
            recalibrate_batch_norm(net, X)
        tr = evaluate(net, X, y, threads=threads) if measure else _EMPTY
        te = evaluate(net, *test, threads=threads) if test is not None and measure else None
        rec = MetricsRecord(
            epoch=epoch, lr=lr_at_epoch(opt, epoch), train_loss=loss, train_acc=tr["acc"],
            train_acc_coarse=tr["acc_coarse"], train_acc_fine=tr["acc_fine"],
            test_acc=None if te is None else te["acc"],
            test_acc_coarse=None if te is None else te["acc_coarse"],
            test_acc_fine=None if te is None else te["acc_fine"],
            wall_time=time.perf_counter() - t0)
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec, net)
        if stop_at_train_acc is not None and rec.train_acc is not None and rec.train_acc >= stop_at_train_acc:
            break
    return history
