"""Pure-numpy temporal unfold/fold, used when the compiled core is absent."""
import numpy as np


def unfold_time(x, kernel, dilation):
    B, C, T, N = x.shape
    half = kernel // 2
    out = np.zeros((B, C, kernel, T, N), dtype=x.dtype)
    for k in range(kernel):
        off = (k - half) * dilation
        lo, hi = max(0, -off), min(T, T - off)
        if lo < hi:
            out[:, :, k, lo:hi] = x[:, :, lo + off:hi + off]
    return out


def fold_time(cols, dilation):
    B, C, K, T, N = cols.shape
    half = K // 2
    out = np.zeros((B, C, T, N), dtype=cols.dtype)
    for k in range(K):
        off = (k - half) * dilation
        lo, hi = max(0, -off), min(T, T - off)
        if lo < hi:
            out[:, :, lo + off:hi + off] += cols[:, :, k, lo:hi]
    return out
