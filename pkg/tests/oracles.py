"""Brute-force reference computations, kept independent of the package code paths."""

import itertools

import numpy as np


def matmul_loops(a, b):
    n, k = len(a), len(a[0])
    m = len(b[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i][t] * b[t][j]
            out[i][j] = s
    return np.array(out)


def conv_loops(x, w, bias, stride):
    N, D = len(x), len(x[0])
    H = len(w)
    out = []
    pos = 0
    while pos + H <= N:
        s = bias
        for i in range(H):
            for j in range(D):
                s += w[i][j] * x[pos + i][j]
        out.append(max(0.0, s))
        pos += stride
    return np.array(out)


def pool_windows(length, pool_height, pool_stride):
    """Window start positions that fit entirely inside the map."""
    starts = []
    start = 0
    while start + pool_height <= length:
        starts.append(start)
        start += pool_stride
    return starts


def brute_force_split(X, y, min_samples_leaf=1):
    """Smallest total SSE over every (feature, midpoint threshold) candidate,
    scanning features then thresholds in increasing order; ties keep the first."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    best = None
    for f in range(X.shape[1]):
        values = sorted(set(X[:, f]))
        for lo, hi in zip(values, values[1:]):
            thr = (lo + hi) / 2
            left = y[X[:, f] <= thr]
            right = y[X[:, f] > thr]
            if len(left) < min_samples_leaf or len(right) < min_samples_leaf:
                continue
            sse = ((left - left.mean()) ** 2).sum() + ((right - right.mean()) ** 2).sum()
            if best is None or sse < best[2] - 1e-12 * max(1.0, abs(best[2])):
                best = (f, thr, sse)
    return best


def central_difference(f, params, eps=1e-5):
    """Finite-difference gradient of scalar ``f()`` w.r.t. every entry of every array in ``params``."""
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        for idx in itertools.product(*(range(d) for d in arr.shape)):
            orig = arr[idx]
            arr[idx] = orig + eps
            up = f()
            arr[idx] = orig - eps
            down = f()
            arr[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric):
    worst, where = 0.0, None
    for name in numeric:
        a, b = np.asarray(analytic[name]), numeric[name]
        rel = np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
        if rel.size and rel.max() > worst:
            worst, where = float(rel.max()), name
    return worst, where
