"""Glue between a RunConfig and the library: datasets, models, training runs
and the variant ablation."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig, variant_overrides
from .data import SkeletonSequence, SyntheticSpec, batch_features, coarse_fine_patterns, generate_synthetic
from .graph import SkeletonGraph, bone_parents, resolve_skeleton
from .model import DualHeadNet, ModelConfig
from .train import MetricsRecord, fit

TEST_SEED_OFFSET = 1_000_003


def skeleton(cfg: RunConfig) -> SkeletonGraph:
    return resolve_skeleton(cfg["model"]["skeleton"])


def synthetic_spec(cfg: RunConfig, split: str, seed: int) -> SyntheticSpec:
    """Generator spec for the train or test split; the test split uses a derived seed."""
    d = cfg["data"]
    patterns = coarse_fine_patterns(d["num_coarse"], d["fine_variants"], fine_amp=d["fine_amp"],
                                    coarse_amp=d["coarse_amp"], vary=d["fine_vary"])
    per_class = d["per_class_train"] if split == "train" else d["per_class_test"]
    split_seed = seed if split == "train" else (seed + TEST_SEED_OFFSET) % 2 ** 64
    return SyntheticSpec(patterns, frames=d["frames"], per_class=per_class, noise=d["noise"],
                         amp_jitter=d["amp_jitter"], shift_jitter=d["shift_jitter"], translate=d["translate"],
                         seed=split_seed)


def features(cfg: RunConfig, seqs: list[SkeletonSequence], graph: SkeletonGraph):
    d = cfg["data"]
    parents = bone_parents(graph, cfg["model"]["root_joint"]) if d["modality"].startswith("bone") else None
    return batch_features(seqs, d["modality"], parents, d["target_frames"])


def synthetic_arrays(cfg: RunConfig, seed: int, graph: SkeletonGraph | None = None):
    """((X_train, y_train), (X_test, y_test)) generated in memory."""
    graph = graph or skeleton(cfg)
    train = features(cfg, generate_synthetic(synthetic_spec(cfg, "train", seed)), graph)
    test_seqs = generate_synthetic(synthetic_spec(cfg, "test", seed))
    test = features(cfg, test_seqs, graph) if test_seqs else None
    return train, test


def build_model(cfg: RunConfig, seed: int, graph: SkeletonGraph | None = None,
                model_cfg: ModelConfig | None = None) -> DualHeadNet:
    graph = graph or skeleton(cfg)
    mc = model_cfg or cfg.model_config()
    return DualHeadNet(mc, graph, np.random.default_rng([seed, 0]))


def train_run(cfg: RunConfig, net: DualHeadNet, train, test, seed: int, start_epoch: int = 0,
              on_epoch=None, threads: int = 1, final_only: bool = False) -> list[MetricsRecord]:
    o = cfg["optim"]
    stop = o["stop_at_train_acc"] or None
    return fit(net, train, test, cfg.optimizer_config(), o["epochs"], o["batch_size"], seed,
               start_epoch=start_epoch, on_epoch=on_epoch, stop_at_train_acc=stop, threads=threads,
               recalibrate=o["recalibrate_bn"], final_only=final_only)


@dataclass
class VariantResult:
    variant: str
    seed: int
    test_acc: float
    test_acc_coarse: float | None
    test_acc_fine: float | None
    train_acc: float
    epochs: int


def run_variant(cfg: RunConfig, variant: str, seed: int, data=None) -> VariantResult:
    """Train one ablation variant from scratch and report its final accuracies."""
    graph = skeleton(cfg)
    train, test = data if data is not None else synthetic_arrays(cfg, seed, graph)
    mc = replace(cfg.model_config(), num_classes=_num_classes(cfg), **variant_overrides(variant))
    net = build_model(cfg, seed, graph, mc)
    hist = train_run(cfg, net, train, test, seed, final_only=True)
    last = hist[-1]
    return VariantResult(variant, seed, last.test_acc, last.test_acc_coarse, last.test_acc_fine,
                         last.train_acc, len(hist))


def _num_classes(cfg: RunConfig) -> int:
    return cfg["data"]["num_coarse"] * cfg["data"]["fine_variants"]


@dataclass
class AblationRow:
    variant: str
    mean: float
    std: float
    accs: list[float]

    def line(self) -> str:
        return f"{self.variant:<16} {100 * self.mean:6.2f} +- {100 * self.std:5.2f}  (n={len(self.accs)})"


def ablate(cfg: RunConfig, variants=None, seeds=None, threads: int = 1
           ) -> tuple[list[AblationRow], list[VariantResult]]:
    """Every variant on every seed; variants share each seed's dataset.

    The class count comes from the data section (``num_coarse`` times
    ``fine_variants``), overriding ``model.num_classes``.

    Seeds are ``run.seed + i`` for ``i < ablate.seeds``.  With ``threads`` > 1
    the (variant, seed) jobs are spread over a thread pool; each job trains
    one model single-threaded, so results do not depend on the thread count.
    """
    variants = list(variants or cfg["ablate"]["variants"])
    if seeds is None:
        base = cfg["run"]["seed"]
        seeds = [base + i for i in range(cfg["ablate"]["seeds"])]
    datasets = {s: synthetic_arrays(cfg, s) for s in seeds}
    jobs = [(v, s) for s in seeds for v in variants]

    def job(vs):
        v, s = vs
        return run_variant(cfg, v, s, datasets[s])

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(job, jobs))
    else:
        results = [job(j) for j in jobs]
    rows = []
    for v in variants:
        accs = [r.test_acc for r in results if r.variant == v]
        mean = float(np.mean(accs))
        std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
        rows.append(AblationRow(v, mean, std if math.isfinite(std) else 0.0, accs))
    return rows, results
