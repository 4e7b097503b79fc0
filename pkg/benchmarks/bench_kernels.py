"""Compiled vs pure-numpy temporal unfold/fold, plus one training step per backend.

    python3 benchmarks/bench_kernels.py [--repeat 20]

The training-step comparison re-imports the package in a subprocess with
DUALHEAD_PURE=1 so the model runs on the fallback end to end.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from dualhead import kernels

SHAPES = [  # (B, C, T, N, kernel, dilation)
    (16, 16, 64, 11, 3, 1),
    (16, 16, 64, 11, 3, 2),
    (16, 48, 64, 11, 5, 1),
    (32, 64, 64, 25, 3, 2),
]

STEP = """
import time, numpy as np
from dualhead import kernels, tensor as T
from dualhead.data import SyntheticSpec, batch_features, coarse_fine_patterns, generate_synthetic
from dualhead.graph import bundled_skeleton
from dualhead.model import DualHeadNet, ModelConfig
from dualhead.optim import OptimizerConfig, sgd_step
X, y = batch_features(generate_synthetic(SyntheticSpec(coarse_fine_patterns(2, 2), per_class=4)))
net = DualHeadNet(ModelConfig(backbone_channels=16, coarse_channels=16, fine_channels=8, scales=2),
                  bundled_skeleton("synthetic11"), 0)
opt = OptimizerConfig()
def step():
    T.get_tape().clear()
    sc, sf, _, _ = net(X)
    T.backward(net.loss(sc, sf, y))
    sgd_step(net.parameters(), opt)
step()
t0 = time.perf_counter()
for _ in range({n}):
    step()
print(kernels.BACKEND, (time.perf_counter() - t0) / {n})
"""


def bench_kernels(repeat: int) -> None:
    impls = kernels.backends()
    if "compiled" not in impls:
        print("compiled extension not built; only the fallback is available")
    print(f"{'shape (B,C,T,N,K,d)':<28}{'op':<8}" + "".join(f"{n:>12}" for n in impls) + f"{'speedup':>10}")
    rng = np.random.default_rng(0)
    for B, C, T, N, K, d in SHAPES:
        x = rng.standard_normal((B, C, T, N))
        cols = rng.standard_normal((B, C, K, T, N))
        for op, fn, arg in (("unfold", "unfold_time", (x, K, d)), ("fold", "fold_time", (cols, d))):
            times = {}
            for name, mod in impls.items():
                f = getattr(mod, fn)
                times[name] = min(timeit.repeat(lambda: f(*arg), number=1, repeat=repeat))
            ratio = times["python"] / times["compiled"] if "compiled" in times else float("nan")
            print(f"{str((B, C, T, N, K, d)):<28}{op:<8}" + "".join(f"{1e3 * t:>10.3f}ms" for t in times.values())
                  + f"{ratio:>9.2f}x")


def bench_step(n: int) -> None:
    for pure in ("0", "1"):
        env = dict(os.environ, DUALHEAD_PURE=pure)
        out = subprocess.run([sys.executable, "-c", STEP.format(n=n)], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"training step ({out[0]:>8}): {1e3 * float(out[1]):8.1f} ms")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--steps", type=int, default=5)
    args = ap.parse_args()
    bench_kernels(args.repeat)
    bench_step(args.steps)


if __name__ == "__main__":
    main()
