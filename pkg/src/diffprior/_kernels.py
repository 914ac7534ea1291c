"""Pairwise-kernel inner loops for the MMD metric.

Each kernel has a numba implementation and a pure-NumPy twin with the same
signature. The numba path is used when numba imports and the environment
variable ``DIFFPRIOR_DISABLE_NUMBA`` is unset or ``0``; both paths are always
importable so tests and the benchmark can compare them directly.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
    from numba import njit, prange

    if "NUMBA_THREADING_LAYER" not in os.environ:
        # the workqueue layer is always available and avoids probing TBB
        numba.config.THREADING_LAYER = "workqueue"
except ImportError:  # pragma: no cover - numba is an optional extra
    numba = None

_DISABLED = os.environ.get("DIFFPRIOR_DISABLE_NUMBA", "0").lower() not in ("", "0", "false", "no")
USE_NUMBA = numba is not None and not _DISABLED

_CHUNK = 1024


def _sq_dists_numpy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a[:, None, :] - b[None, :, :]) ** 2
    return d.sum(axis=2)


def rbf_mean_numpy(a: np.ndarray, b: np.ndarray, gamma: float) -> float:
    """Mean of ``exp(-gamma |a_i - b_j|^2)`` over all pairs."""
    total = 0.0
    for i in range(0, a.shape[0], _CHUNK):
        total += np.exp(-gamma * _sq_dists_numpy(a[i : i + _CHUNK], b)).sum()
    return total / (a.shape[0] * b.shape[0])


def rbf_gram_numpy(x: np.ndarray, gamma: float) -> np.ndarray:
    sq = np.einsum("ij,ij->i", x, x)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return np.exp(-gamma * d)


def weighted_quadratic_numpy(K: np.ndarray, w: np.ndarray) -> float:
    return float(w @ (K @ w))


def pairwise_distances_numpy(x: np.ndarray) -> np.ndarray:
    """Euclidean distances for every unordered pair ``i < j``."""
    iu, ju = np.triu_indices(x.shape[0], k=1)
    out = np.empty(iu.size)
    for s in range(0, iu.size, 1 << 20):
        diff = x[iu[s : s + (1 << 20)]] - x[ju[s : s + (1 << 20)]]
        out[s : s + (1 << 20)] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return out


if numba is not None:

    @njit(cache=True, fastmath=False)
    def rbf_mean_numba(a, b, gamma):
        n, m, d = a.shape[0], b.shape[0], a.shape[1]
        total = 0.0
        for i in range(n):
            row = 0.0
            for j in range(m):
                s = 0.0
                for k in range(d):
                    diff = a[i, k] - b[j, k]
                    s += diff * diff
                row += np.exp(-gamma * s)
            total += row
        return total / (n * m)

    @njit(cache=True, parallel=True)
    def rbf_gram_numba(x, gamma):
        n, d = x.shape
        K = np.empty((n, n))
        for i in prange(n):
            K[i, i] = 1.0
            for j in range(i + 1, n):
                s = 0.0
                for k in range(d):
                    diff = x[i, k] - x[j, k]
                    s += diff * diff
                v = np.exp(-gamma * s)
                K[i, j] = v
                K[j, i] = v
        return K

    @njit(cache=True)
    def weighted_quadratic_numba(K, w):
        n = K.shape[0]
        total = 0.0
        for i in range(n):
            wi = w[i]
            if wi == 0.0:
                continue
            row = 0.0
            for j in range(n):
                row += K[i, j] * w[j]
            total += wi * row
        return total

    @njit(cache=True)
    def pairwise_distances_numba(x):
        n, d = x.shape
        out = np.empty(n * (n - 1) // 2)
        p = 0
        for i in range(n):
            for j in range(i + 1, n):
                s = 0.0
                for k in range(d):
                    diff = x[i, k] - x[j, k]
                    s += diff * diff
                out[p] = np.sqrt(s)
                p += 1
        return out


if USE_NUMBA:
    rbf_mean = rbf_mean_numba
    rbf_gram = rbf_gram_numba
    weighted_quadratic = weighted_quadratic_numba
    pairwise_distances = pairwise_distances_numba
else:
    rbf_mean = rbf_mean_numpy
    rbf_gram = rbf_gram_numpy
    weighted_quadratic = weighted_quadratic_numpy
    pairwise_distances = pairwise_distances_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
