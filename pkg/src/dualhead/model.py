"""The dual-head network: backbone, coarse/fine heads with cross-head
attention, per-head classifiers and score fusion."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .blocks import (GraphBlock, SpatialAttention, TemporalAttention, apply_spatial_attention,
                     apply_temporal_attention, coarse_block, fine_block, stgc_block, subsample)
from .errors import ConfigError, DimensionError, UsageError
from .graph import SkeletonGraph
from .nn import BatchNorm, Linear, Module, PointwiseConv
from .tensor import Tensor

HEADS = ("dual", "coarse", "fine")
ATTENTION_SOURCES = ("cross", "self")


@dataclass
class ModelConfig:
    num_classes: int = 4
    in_channels: int = 3
    alpha: int = 2
    mu: float = 0.5
    lam: float = 1.0
    scales: int = 4
    backbone_taus: tuple[int, ...] = (3, 5)
    coarse_taus: tuple[int, ...] = (3,)
    fine_taus: tuple[int, ...] = (3, 5)
    backbone_channels: int = 64
    coarse_channels: int = 64
    fine_channels: int = 32
    tcn_kernel: int = 3
    tcn_dilations: tuple[int, ...] = (1, 2)
    attention_kernel: int = 9
    temporal_attention: bool = True
    spatial_attention: bool = True
    attention_source: str = "cross"
    heads: str = "dual"
    stages: int = 2
    batch_norm: bool = True
    residual: bool = True

    def __post_init__(self):
        for key in ("backbone_taus", "coarse_taus", "fine_taus", "tcn_dilations"):
            setattr(self, key, tuple(int(v) for v in getattr(self, key)))
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.alpha < 1:
            raise ConfigError(f"alpha must be an integer >= 1, got {self.alpha}")
        if not 0.0 <= self.mu <= 1.0:
            raise ConfigError(f"mu must be in [0, 1], got {self.mu}")
        if self.heads not in HEADS:
            raise ConfigError(f"heads must be one of {HEADS}, got {self.heads!r}")
        if self.attention_source not in ATTENTION_SOURCES:
            raise ConfigError(f"attention_source must be one of {ATTENTION_SOURCES}, got {self.attention_source!r}")
        for key in ("backbone_taus", "coarse_taus", "fine_taus"):
            if any(t < 1 or t % 2 == 0 for t in getattr(self, key)):
                raise ConfigError(f"{key} must hold positive odd window lengths, got {getattr(self, key)}")
        if self.stages < 1:
            raise ConfigError(f"stages must be >= 1, got {self.stages}")

    def arch_hash(self) -> str:
        """SHA-256 over every architecture-defining key."""
        d = asdict(self)
        text = ";".join(f"{k}={d[k]}" for k in sorted(d) if k not in ("mu", "lam"))
        return hashlib.sha256(text.encode()).hexdigest()


_ROLES = ("backbone", "coarse", "embed", "fine", "temporal_att", "spatial_att", "cls_coar", "cls_fine")


@dataclass
class ForwardTrace:
    shapes: dict[str, tuple[int, ...]] = field(default_factory=dict)
    theta_te: list[np.ndarray] = field(default_factory=list)
    theta_sp: list[np.ndarray] = field(default_factory=list)
    s_coar: np.ndarray | None = None
    s_fine: np.ndarray | None = None


class DualHeadNet(Module):
    def __init__(self, cfg: ModelConfig, graph: SkeletonGraph, rng: np.random.Generator | int = 0):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self.cfg = cfg
        self.graph = graph
        kw = dict(tcn_kernel=cfg.tcn_kernel, tcn_dilations=cfg.tcn_dilations, bn=cfg.batch_norm,
                  residual=cfg.residual)
        K = cfg.scales
        cb, cc, cf = cfg.backbone_channels, cfg.coarse_channels, cfg.fine_channels
        # one child stream per module role: variants that share a module start
        # from the same weights for it, so ablation comparisons are paired
        r = dict(zip(_ROLES, rng.spawn(len(_ROLES))))
        self.data_bn = BatchNorm(cfg.in_channels, enabled=cfg.batch_norm)
        self.backbone = stgc_block(cfg.in_channels, cb, graph, K, r["backbone"], taus=cfg.backbone_taus, **kw)
        self.coarse = []
        self.fine = []
        self.embed = None
        self.temporal_att = []
        self.spatial_att = []
        if self.has_coarse:
            self.coarse = [coarse_block(cb if s == 0 else cc, cc, graph, K, r["coarse"], taus=cfg.coarse_taus, **kw)
                           for s in range(cfg.stages)]
        if self.has_fine:
            self.embed = PointwiseConv(cb, cf, r["embed"])
            self.fine = [fine_block(cf, cf, graph, K, r["fine"], taus=cfg.fine_taus, **kw)
                         for s in range(cfg.stages)]
        if cfg.heads == "dual":
            if cfg.temporal_attention:
                self.temporal_att = [TemporalAttention(r["temporal_att"], cfg.attention_kernel)
                                     for _ in range(cfg.stages)]
            if cfg.spatial_attention:
                self.spatial_att = [SpatialAttention(r["spatial_att"]) for _ in range(cfg.stages)]
        self.cls_coar = Linear(cc, cfg.num_classes, r["cls_coar"]) if self.has_coarse else None
        self.cls_fine = Linear(cf, cfg.num_classes, r["cls_fine"]) if self.has_fine else None
        for name, p in self.named_parameters():
            p.name = name

    @property
    def has_coarse(self) -> bool:
        return self.cfg.heads in ("dual", "coarse")

    @property
    def has_fine(self) -> bool:
        return self.cfg.heads in ("dual", "fine")

    def forward(self, x, attention_override: dict | None = None):
        """Return ``(s_coar, s_fine, s, trace)``; absent heads give ``None``.

        ``x`` is (d, T, N) or (B, d, T, N).  ``attention_override`` maps
        ``"temporal"``/``"spatial"`` to a constant used in place of the learned
        attention (a test hook).
        """
        cfg = self.cfg
        x = T.as_tensor(x)
        unbatched = x.ndim == 3
        if unbatched:
            x = T.reshape(x, (1,) + x.shape)
        if x.ndim != 4:
            raise DimensionError(f"input must be (d, T, N) or (B, d, T, N), got {x.shape}")
        if x.shape[1] != cfg.in_channels:
            raise DimensionError(f"input stage: expected {cfg.in_channels} channels, got {x.shape[1]}")
        if x.shape[3] != self.graph.num_joints:
            raise DimensionError(f"input stage: expected {self.graph.num_joints} joints, got {x.shape[3]}")
        override = attention_override or {}
        trace = ForwardTrace()
        trace.shapes["input"] = x.shape
        xb = self.backbone(self.data_bn(x))
        trace.shapes["backbone"] = xb.shape
        xc = subsample(xb, cfg.alpha) if self.has_coarse else None
        xf = self.embed(xb) if self.has_fine else None
        cross = cfg.attention_source == "cross"
        for s in range(cfg.stages):
            if xf is not None:
                xf = self.fine[s](xf)
                trace.shapes[f"fine.{s}"] = xf.shape
            if xc is not None:
                if self.temporal_att:
                    if "temporal" in override:
                        theta = T.Tensor(np.full((xc.shape[0], 1, xf.shape[2], 1), override["temporal"]))
                        xc = apply_temporal_attention(theta, xc, cfg.alpha)
                    elif cross:
                        theta = self.temporal_att[s](xf)
                        xc = apply_temporal_attention(theta, xc, cfg.alpha)
                    else:
                        theta = self.temporal_att[s](xc)
                        xc = apply_temporal_attention(theta, xc, 1)
                    trace.theta_te.append(theta.data)
                xc = self.coarse[s](xc)
                trace.shapes[f"coarse.{s}"] = xc.shape
            if self.spatial_att:
                if "spatial" in override:
                    theta = T.Tensor(np.full((xf.shape[0], 1, 1, xf.shape[3]), override["spatial"]))
                else:
                    theta = self.spatial_att[s](xc if cross else xf)
                xf = apply_spatial_attention(theta, xf)
                trace.theta_sp.append(theta.data)
        s_coar = self._classify(xc, self.cls_coar) if xc is not None else None
        s_fine = self._classify(xf, self.cls_fine) if xf is not None else None
        if s_coar is not None and s_fine is not None:
            s = fuse(s_coar, s_fine, cfg.mu)
        else:
            s = s_coar if s_coar is not None else s_fine
        if unbatched:
            s_coar, s_fine, s = (None if v is None else T.reshape(v, v.shape[1:]) for v in (s_coar, s_fine, s))
        trace.s_coar = None if s_coar is None else s_coar.data
        trace.s_fine = None if s_fine is None else s_fine.data
        return s_coar, s_fine, s, trace

    @staticmethod
    def _classify(x: Tensor, cls: Linear) -> Tensor:
        pooled = T.mean(x, axes=(2, 3), keepdims=False)
        return T.softmax(cls(pooled), axis=-1)

    def loss(self, s_coar, s_fine, labels) -> Tensor:
        return loss(s_coar, s_fine, labels, self.cfg.mu, self.cfg.lam)


def fuse(s_coar: Tensor, s_fine: Tensor, mu: float) -> Tensor:
    """s = mu * s_coar + (1 - mu) * s_fine."""
    return T.add(T.mul(s_coar, mu), T.mul(s_fine, 1.0 - mu))


def loss(s_coar, s_fine, labels, mu: float = 0.5, lam: float = 1.0) -> Tensor:
    """lam * (mu * CE(s_coar, y) + (1 - mu) * CE(s_fine, y)), batch-averaged.

    With only one head present its cross entropy is used alone.
    """
    if s_coar is None and s_fine is None:
        raise UsageError("loss needs at least one head's scores")
    if s_fine is None:
        total = T.cross_entropy(s_coar, labels)
    elif s_coar is None:
        total = T.cross_entropy(s_fine, labels)
    else:
        total = T.add(T.mul(T.cross_entropy(s_coar, labels), mu),
                      T.mul(T.cross_entropy(s_fine, labels), 1.0 - mu))
    return T.mul(total, lam) if lam != 1.0 else total


def ensemble(scores: Sequence) -> int | np.ndarray:
    """Argmax of the summed score vectors; ties go to the lowest class index.

    Accepts a list of (a,) vectors (returns an int) or of (B, a) arrays
    (returns B predictions).
    """
    if len(scores) == 0:
        raise UsageError("ensemble needs at least one score stream")
    arrs = [np.asarray(s.data if isinstance(s, Tensor) else s, dtype=np.float64) for s in scores]
    if len({a.shape for a in arrs}) != 1:
        raise DimensionError(f"ensemble streams disagree in shape: {[a.shape for a in arrs]}")
    total = np.sum(arrs, axis=0)
    pred = np.argmax(total, axis=-1)  # first maximal index
    return int(pred) if total.ndim == 1 else pred


COMPONENTS = ("backbone", "coarse", "fine", "attention", "classifier")


def count_parameters(net: DualHeadNet) -> tuple[int, dict[str, int]]:
    """Total trainable scalars and a per-component breakdown."""
    breakdown = dict.fromkeys(COMPONENTS, 0)
    for name, p in net.named_parameters():
        head = name.split(".", 1)[0]
        if head in ("backbone", "data_bn"):
            key = "backbone"
        elif head == "coarse":
            key = "coarse"
        elif head in ("fine", "embed"):
            key = "fine"
        elif head in ("temporal_att", "spatial_att"):
            key = "attention"
        else:
            key = "classifier"
        breakdown[key] += p.data.size
    return sum(breakdown.values()), breakdown
