"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import time from the ``ESSOIL_BACKEND``
environment variable:

* ``numba`` - require numba, fail loudly if it is missing
* ``numpy`` - force the vectorized numpy implementations
* unset / ``auto`` - use numba when importable, numpy otherwise

Both paths compute the same values (loop order differs, so last-ulp
rounding may differ between backends; within one backend results are
bit-reproducible). ``benchmarks/bench_backends.py`` compares the two.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def _pick_backend() -> str:
    flag = os.environ.get("ESSOIL_BACKEND", "auto").strip().lower()
    if flag in ("", "auto"):
        return "numba" if HAVE_NUMBA else "numpy"
    if flag == "numba":
        if not HAVE_NUMBA:
            raise ImportError("ESSOIL_BACKEND=numba but numba is not installed")
        return "numba"
    if flag == "numpy":
        return "numpy"
    raise ValueError(f"ESSOIL_BACKEND must be 'numba', 'numpy' or 'auto', got {flag!r}")


BACKEND = _pick_backend()
USE_NUMBA = BACKEND == "numba"


# ---------------------------------------------------------------------------
# 1-D convolution along the row (compound) axis, feature channels, zero
# same-padding, odd kernel width. x: (n, f_in), w: (k, f_in, f_out), b: (f_out,)
# ---------------------------------------------------------------------------

def _conv1d_forward_loops(x, w, b):
    # same tap-shifted matmul as the numpy path; under numba the @ still
    # hits BLAS but the tap loop, bias fill and slicing fuse into one
    # compiled call, which pays off at the small per-sample shapes
    n, f_in = x.shape
    k, _, f_out = w.shape
    half = k // 2
    out = np.empty((n, f_out), dtype=np.float64)
    for i in range(n):
        for o in range(f_out):
            out[i, o] = b[o]
    for t in range(k):
        shift = t - half
        lo = max(0, -shift)
        hi = min(n, n - shift)
        if lo < hi:
            out[lo:hi] += np.ascontiguousarray(x[lo + shift:hi + shift]) @ w[t]
    return out


def _conv1d_backward_loops(x, w, gy):
    n, f_in = x.shape
    k, _, f_out = w.shape
    half = k // 2
    gx = np.zeros((n, f_in), dtype=np.float64)
    gw = np.zeros((k, f_in, f_out), dtype=np.float64)
    gb = np.zeros(f_out, dtype=np.float64)
    for i in range(n):
        for o in range(f_out):
            gb[o] += gy[i, o]
    for t in range(k):
        shift = t - half
        lo = max(0, -shift)
        hi = min(n, n - shift)
        if lo < hi:
            gy_part = np.ascontiguousarray(gy[lo:hi])
            x_part = np.ascontiguousarray(x[lo + shift:hi + shift])
            gx[lo + shift:hi + shift] += gy_part @ w[t].T
            gw[t] = x_part.T @ gy_part
    return gx, gw, gb


def conv1d_forward_numpy(x, w, b):
    n = x.shape[0]
    k = w.shape[0]
    half = k // 2
    out = np.tile(b, (n, 1)).astype(np.float64)
    for t in range(k):
        shift = t - half
        lo, hi = max(0, -shift), min(n, n - shift)
        if lo < hi:
            out[lo:hi] += x[lo + shift:hi + shift] @ w[t]
    return out


def conv1d_backward_numpy(x, w, gy):
    n = x.shape[0]
    k = w.shape[0]
    half = k // 2
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for t in range(k):
        shift = t - half
        lo, hi = max(0, -shift), min(n, n - shift)
        if lo < hi:
            gx[lo + shift:hi + shift] += gy[lo:hi] @ w[t].T
            gw[t] = x[lo + shift:hi + shift].T @ gy[lo:hi]
    gb = gy.sum(axis=0)
    return gx, gw, gb


# ---------------------------------------------------------------------------
# Pairwise Tanimoto over a stack of 0/1 fingerprint rows. bits: (n, width)
# uint8. Diagonal forced to 1.0; all-zero vs all-zero pairs score 1.0 by the
# shared empty-feature-set convention.
# ---------------------------------------------------------------------------

def _pairwise_tanimoto_loops(bits):
    n, width = bits.shape
    pop = np.empty(n, dtype=np.int64)
    for i in range(n):
        s = 0
        for c in range(width):
            s += bits[i, c]
        pop[i] = s
    out = np.empty((n, n), dtype=np.float64)
    for i in range(n):
        out[i, i] = 1.0
        for j in range(i + 1, n):
            inter = 0
            for c in range(width):
                if bits[i, c] != 0 and bits[j, c] != 0:
                    inter += 1
            union = pop[i] + pop[j] - inter
            t = 1.0 if union == 0 else inter / union
            out[i, j] = t
            out[j, i] = t
    return out


def pairwise_tanimoto_numpy(bits):
    b = bits.astype(np.int64)
    inter = b @ b.T
    pop = b.sum(axis=1)
    union = pop[:, None] + pop[None, :] - inter
    out = np.where(union == 0, 1.0, inter / np.maximum(union, 1))
    np.fill_diagonal(out, 1.0)
    return out


# ---------------------------------------------------------------------------
# In-place Adam update with bias correction. step is the 1-based step count
# after this update.
# ---------------------------------------------------------------------------

def _adam_update_loops(p, g, m, v, lr, beta1, beta2, eps, step):
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for i in range(p.size):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


def adam_update_numpy(p, g, m, v, lr, beta1, beta2, eps, step):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


conv1d_forward_numba = njit(cache=True)(_conv1d_forward_loops)
conv1d_backward_numba = njit(cache=True)(_conv1d_backward_loops)
pairwise_tanimoto_numba = njit(cache=True)(_pairwise_tanimoto_loops)
adam_update_numba = njit(cache=True)(_adam_update_loops)

if USE_NUMBA:
    conv1d_forward = conv1d_forward_numba
    conv1d_backward = conv1d_backward_numba
    pairwise_tanimoto = pairwise_tanimoto_numba

    def adam_update(p, g, m, v, lr, beta1, beta2, eps, step):
        adam_update_numba(p.ravel(), g.ravel(), m.ravel(), v.ravel(),
                          lr, beta1, beta2, eps, step)
else:
    conv1d_forward = conv1d_forward_numpy
    conv1d_backward = conv1d_backward_numpy
    pairwise_tanimoto = pairwise_tanimoto_numpy

    def adam_update(p, g, m, v, lr, beta1, beta2, eps, step):
        adam_update_numpy(p.ravel(), g.ravel(), m.ravel(), v.ravel(),
                          lr, beta1, beta2, eps, step)


def warmup():
    """Trigger JIT compilation of every kernel on tiny inputs.

    No-op on the numpy backend. Called before timing-sensitive code so
    compilation cost is not attributed to the first real call.
    """
    if not USE_NUMBA:
        return
    x = np.zeros((2, 3))
    w = np.zeros((3, 3, 2))
    b = np.zeros(2)
    conv1d_forward(x, w, b)
    conv1d_backward(x, w, np.zeros((2, 2)))
    pairwise_tanimoto(np.zeros((2, 4), dtype=np.uint8))
    adam_update(np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2),
                1e-3, 0.9, 0.999, 1e-8, 1)
