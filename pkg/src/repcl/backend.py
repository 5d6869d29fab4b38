"""Hot numeric kernels with numba and pure-numpy implementations.

The active path is chosen once at import time from the REPCL_BACKEND
environment variable ("numba" or "numpy"). Default is numba when it
imports cleanly, numpy otherwise. Both paths are kept behind the same
function names so callers never branch.

`benchmarks/bench_kernels.py` compares the two paths.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def _numpy_scatter_add_rows(out: np.ndarray, idx: np.ndarray, src: np.ndarray) -> None:
    np.add.at(out, idx, src)


def _numpy_gelu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    return 0.5 * x * (1.0 + t), t


def _numpy_gelu_backward(x: np.ndarray, t: np.ndarray, g: np.ndarray) -> np.ndarray:
    sech2 = 1.0 - t * t
    d_inner = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner)


def _numpy_kmeans_assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # (N,K) squared distances via expansion; fine at desk scale
    d2 = (
        np.sum(points * points, axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + np.sum(centroids * centroids, axis=1)[None, :]
    )
    assign = np.argmin(d2, axis=1)
    return assign.astype(np.int64), d2[np.arange(points.shape[0]), assign]


def _build_numba_kernels():
    import math

    from numba import njit

    @njit(cache=True)
    def scatter_add_rows(out, idx, src):
        for i in range(idx.shape[0]):
            row = idx[i]
            for j in range(src.shape[1]):
                out[row, j] += src[i, j]

    @njit(cache=True)
    def gelu_forward_flat(x):
        out = np.empty_like(x)
        t = np.empty_like(x)
        for i in range(x.size):
            v = x[i]
            tt = math.tanh(_GELU_C * (v + _GELU_A * v * v * v))
            t[i] = tt
            out[i] = 0.5 * v * (1.0 + tt)
        return out, t

    @njit(cache=True)
    def gelu_backward_flat(x, t, g):
        grad = np.empty_like(x)
        for i in range(x.size):
            v = x[i]
            tt = t[i]
            sech2 = 1.0 - tt * tt
            d_inner = _GELU_C * (1.0 + 3.0 * _GELU_A * v * v)
            grad[i] = g[i] * (0.5 * (1.0 + tt) + 0.5 * v * sech2 * d_inner)
        return grad

    def gelu_forward(x):
        flat = np.ascontiguousarray(x).reshape(-1)
        out, t = gelu_forward_flat(flat)
        return out.reshape(x.shape), t.reshape(x.shape)

    def gelu_backward(x, t, g):
        flat = gelu_backward_flat(
            np.ascontiguousarray(x).reshape(-1),
            np.ascontiguousarray(t).reshape(-1),
            np.ascontiguousarray(g).reshape(-1),
        )
        return flat.reshape(x.shape)

    return scatter_add_rows, gelu_forward, gelu_backward

def _build_numba_kmeans():
    from numba import njit

    @njit(cache=True)
    def kmeans_assign(points, centroids):
        n, d = points.shape
        k = centroids.shape[0]
        assign = np.empty(n, dtype=np.int64)
        best = np.empty(n, dtype=points.dtype)
        for i in range(n):
            bj = 0
            bd = np.inf
            for j in range(k):
                acc = 0.0
                for t in range(d):
                    diff = points[i, t] - centroids[j, t]
                    acc += diff * diff
                if acc < bd:
                    bd = acc
                    bj = j
            assign[i] = bj
            best[i] = bd
        return assign, best

    return kmeans_assign


def _select_backend() -> str:
    requested = os.environ.get("REPCL_BACKEND", "").strip().lower()
    if requested not in ("", "numba", "numpy"):
        raise ConfigError(f"REPCL_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if requested == "numba":
            raise ConfigError("REPCL_BACKEND=numba but numba is not importable")
        return "numpy"
    return "numba"


BACKEND = _select_backend()

if BACKEND == "numba":
    scatter_add_rows, gelu_forward, gelu_backward = _build_numba_kernels()
    kmeans_assign = _build_numba_kmeans()
else:
    scatter_add_rows = _numpy_scatter_add_rows
    gelu_forward = _numpy_gelu_forward
    gelu_backward = _numpy_gelu_backward
    kmeans_assign = _numpy_kmeans_assign

# numpy reference path stays importable for benchmarking and tests
numpy_scatter_add_rows = _numpy_scatter_add_rows
numpy_gelu_forward = _numpy_gelu_forward
numpy_gelu_backward = _numpy_gelu_backward
numpy_kmeans_assign = _numpy_kmeans_assign
