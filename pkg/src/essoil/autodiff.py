"""Reverse-mode automatic differentiation on dense float64 arrays.

Define-by-run: every op builds a :class:`Value` holding data, a lazily
allocated gradient, and a backward closure. :func:`backward` runs the
closures once each in reverse topological order. Gradients accumulate
across backward calls until :func:`zero_grad`.

Parameter init is a seeded splitmix64 stream (documented below), so
training runs are bit-reproducible for a given seed on any platform.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels


class ShapeMismatch(ValueError):
    pass


class NonScalarLoss(ValueError):
    pass


class NonFiniteInput(ValueError):
    pass


class MissingGradient(RuntimeError):
    pass


class Value:
    """Node in the computation graph: dense array plus gradient slot."""

    __slots__ = ("data", "_grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self._grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Value, ...] = ()
        self._backward = None

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, g) -> None:
        g = np.asarray(g, dtype=np.float64)
        if g.shape != self.data.shape:
            raise ShapeMismatch(f"grad shape {g.shape} != data shape {self.data.shape}")
        self._grad = g

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Value(shape={self.data.shape}, requires_grad={self.requires_grad})"


def const(data) -> Value:
    return data if isinstance(data, Value) else Value(data)


def param(data) -> Value:
    return Value(data, requires_grad=True)


def _out(data, parents, backward_fn) -> Value:
    v = Value(data)
    if any(p.requires_grad for p in parents):
        v.requires_grad = True
        v._parents = tuple(parents)
        v._backward = backward_fn
    return v


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _accum(v: Value, g: np.ndarray) -> None:
    if v.requires_grad:
        v.grad += _unbroadcast(g, v.data.shape)


# ---------------------------------------------------------------------------
# forward ops
# ---------------------------------------------------------------------------

def add(a, b) -> Value:
    a, b = const(a), const(b)
    data = a.data + b.data

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _out(data, (a, b), bw)


def mul(a, b) -> Value:
    a, b = const(a), const(b)
    data = a.data * b.data

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _out(data, (a, b), bw)


def matmul(a, b) -> Value:
    a, b = const(a), const(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul needs (n,k)@(k,m), got {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _out(data, (a, b), bw)


def concat(values, axis: int = 0) -> Value:
    values = [const(v) for v in values]
    data = np.concatenate([v.data for v in values], axis=axis)
    sizes = [v.data.shape[axis] for v in values]

    def bw(g):
        offset = 0
        for v, size in zip(values, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + size)
            _accum(v, g[tuple(sl)])
            offset += size

    return _out(data, tuple(values), bw)


def reshape(x, shape) -> Value:
    x = const(x)
    data = x.data.reshape(shape)

    def bw(g):
        _accum(x, g.reshape(x.data.shape))

    return _out(data, (x,), bw)


def relu(x) -> Value:
    x = const(x)
    mask = x.data > 0
    data = np.where(mask, x.data, 0.0)

    def bw(g):
        _accum(x, g * mask)

    return _out(data, (x,), bw)


def leaky_relu(x, slope: float = 0.2) -> Value:
    x = const(x)
    mask = x.data > 0
    data = np.where(mask, x.data, slope * x.data)

    def bw(g):
        _accum(x, g * np.where(mask, 1.0, slope))

    return _out(data, (x,), bw)


def sigmoid(x) -> Value:
    x = const(x)
    z = x.data
    data = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def bw(g):
        _accum(x, g * data * (1.0 - data))

    return _out(data, (x,), bw)


def exp(x) -> Value:
    x = const(x)
    data = np.exp(x.data)

    def bw(g):
        _accum(x, g * data)

    return _out(data, (x,), bw)


def log(x) -> Value:
    x = const(x)
    data = np.log(x.data)

    def bw(g):
        _accum(x, g / x.data)

    return _out(data, (x,), bw)


def vsum(x, axis: int | None = None) -> Value:
    x = const(x)
    data = x.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, x.data.shape))
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g, axis), x.data.shape))

    return _out(data, (x,), bw)


def vmean(x, axis: int | None = None) -> Value:
    x = const(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    data = x.data.mean(axis=axis)

    def bw(g):
        if axis is None:
            _accum(x, np.broadcast_to(g / n, x.data.shape))
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g / n, axis), x.data.shape))

    return _out(data, (x,), bw)


def vmax(x, axis: int | None = None) -> Value:
    """Max over an axis; the subgradient routes to the first argmax."""
    x = const(x)
    if axis is None:
        data = x.data.max()
        idx = np.unravel_index(np.argmax(x.data), x.data.shape)

        def bw(g):
            gx = np.zeros_like(x.data)
            gx[idx] = g
            _accum(x, gx)
    else:
        data = x.data.max(axis=axis)
        idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)

        def bw(g):
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
            _accum(x, gx)

    return _out(data, (x,), bw)


def row_softmax(x) -> Value:
    """Softmax along the last axis, max-subtracted for stability."""
    x = const(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        _accum(x, data * (g - dot))

    return _out(data, (x,), bw)


def log_softmax(x, axis: int = -1) -> Value:
    x = const(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    data = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    soft = np.exp(data)

    def bw(g):
        _accum(x, g - soft * g.sum(axis=axis, keepdims=True))

    return _out(data, (x,), bw)


def conv1d(x, w, b) -> Value:
    """Same-padded 1-D convolution along rows; features are channels.

    x: (n, f_in), w: (k, f_in, f_out) with odd k, b: (f_out,). The heavy
    loops live in :mod:`essoil.kernels` (numba or numpy backend).
    """
    x, w, b = const(x), const(w), const(b)
    if x.data.ndim != 2 or w.data.ndim != 3 or w.data.shape[0] % 2 == 0 \
            or x.data.shape[1] != w.data.shape[1] or b.data.shape != (w.data.shape[2],):
        raise ShapeMismatch(
            f"conv1d needs x(n,fi), w(odd k,fi,fo), b(fo); "
            f"got {x.shape}, {w.shape}, {b.shape}")
    data = kernels.conv1d_forward(x.data, w.data, b.data)

    def bw(g):
        gx, gw, gb = kernels.conv1d_backward(x.data, w.data, g)
        _accum(x, gx)
        _accum(w, gw)
        _accum(b, gb)

    return _out(data, (x, w, b), bw)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def bce_with_logits(logits, target) -> Value:
    """Mean binary cross-entropy straight from logits.

    Stable form max(z,0) - z*y + log(1 + exp(-|z|)); the gradient is
    (sigmoid(z) - y) / n.
    """
    logits = const(logits)
    y = np.asarray(target.data if isinstance(target, Value) else target,
                   dtype=np.float64)
    z = logits.data
    if z.shape != y.shape:
        raise ShapeMismatch(f"logits {z.shape} vs target {y.shape}")
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    data = per.mean()
    sig = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                   np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def bw(g):
        _accum(logits, g * (sig - y) / z.size)

    return _out(data, (logits,), bw)


def nll_paired(log_probs, target_classes) -> Value:
    """Mean negative log likelihood over per-label (absent, present) rows.

    log_probs: (C, 2) log-distributions, target_classes: C ints in {0,1}.
    """
    log_probs = const(log_probs)
    y = np.asarray(target_classes, dtype=np.int64)
    lp = log_probs.data
    if lp.ndim != 2 or lp.shape[1] != 2 or y.shape != (lp.shape[0],):
        raise ShapeMismatch(f"log_probs {lp.shape} vs targets {y.shape}")
    if not np.isfinite(lp).all():
        raise NonFiniteInput("log_probs contain non-finite entries")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("target classes must be 0 or 1")
    rows = np.arange(lp.shape[0])
    data = -lp[rows, y].mean()

    def bw(g):
        gx = np.zeros_like(lp)
        gx[rows, y] = -g / lp.shape[0]
        _accum(log_probs, gx)

    return _out(data, (log_probs,), bw)


# ---------------------------------------------------------------------------
# backward pass and optimizers
# ---------------------------------------------------------------------------

def backward(loss: Value) -> None:
    """Populate gradients of everything reachable from a scalar loss.

    Repeated calls accumulate; use :func:`zero_grad` between steps.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.data.shape}")
    topo: list[Value] = []
    visited: set[int] = set()
    stack: list[tuple[Value, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    # interior nodes get a fresh gradient each pass; only leaves (params,
    # constants) accumulate across repeated backward calls
    for node in topo:
        if node._parents:
            node._grad = None
    loss.grad += 1.0
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grad(params) -> None:
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p._grad = None


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Value], state: AdamState) -> None:
    for name, p in params.items():
        if p._grad is None:
            raise MissingGradient(f"parameter {name!r} has no gradient")
    state.step += 1
    for name, p in params.items():
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        kernels.adam_update(p.data, p._grad, m, v,
                            state.lr, state.beta1, state.beta2, state.eps,
                            state.step)


def sgd_step(params: dict[str, Value], lr: float) -> None:
    for name, p in params.items():
        if p._grad is None:
            raise MissingGradient(f"parameter {name!r} has no gradient")
        p.data -= lr * p._grad


# ---------------------------------------------------------------------------
# deterministic initialization: splitmix64 stream
# ---------------------------------------------------------------------------

_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)


def splitmix64(seed: int, n: int) -> np.ndarray:
    """First n outputs of splitmix64 seeded with ``seed`` (uint64)."""
    i = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & ((1 << 64) - 1)) + i * _SM_GAMMA
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z


def mix_seed(seed: int, *parts) -> int:
    """Fold strings/ints into a derived 64-bit seed (FNV-1a)."""
    h = 0xCBF29CE484222325
    stream = [seed] + list(parts)
    for part in stream:
        data = part.encode() if isinstance(part, str) else \
            (int(part) & ((1 << 64) - 1)).to_bytes(8, "little", signed=False)
        for byte in data:
            h ^= byte
            h = (h * 0x100000001B3) & ((1 << 64) - 1)
    return h


def uniform_array(shape, limit: float, seed: int) -> np.ndarray:
    size = int(np.prod(shape)) if shape else 1
    u = splitmix64(seed, size).astype(np.float64) / 2.0 ** 64  # [0, 1)
    return ((2.0 * u - 1.0) * limit).reshape(shape)


def glorot_uniform(shape, seed: int) -> np.ndarray:
    """uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).

    For 2-D (fi, fo) weights fans are the dims; for conv (k, fi, fo)
    they are k*fi and k*fo; 1-D and scalar shapes use size as both fans.
    """
    if len(shape) == 2:
        fan_in, fan_out = shape
    elif len(shape) == 3:
        fan_in, fan_out = shape[0] * shape[1], shape[0] * shape[2]
    else:
        fan_in = fan_out = max(1, int(np.prod(shape)) if shape else 1)
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return uniform_array(shape, a, seed)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    n_coords: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def grad_check(fn, params: dict[str, Value], epsilon: float = 1e-5,
               tolerance: float = 1e-4) -> GradCheckReport:
    """Compare backward() gradients against central finite differences.

    ``fn`` maps the live params dict to a scalar Value; it is re-run
    with each coordinate nudged by +/- epsilon. Per-coordinate relative
    error is |a - n| / max(|a|, |n|, 1e-6); the floor keeps the
    cancellation noise of the central difference (~1e-12 for O(1)
    losses) from registering on coordinates whose true gradient is zero.
    """
    zero_grad(params)
    backward(fn(params))
    analytic = {name: p.grad.copy() for name, p in params.items()}

    worst = 0.0
    worst_param = ""
    n_coords = 0
    for name, p in params.items():
        flat = p.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = float(fn(params).data)
            flat[i] = orig - epsilon
            down = float(fn(params).data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            a = analytic[name].ravel()[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            n_coords += 1
            if rel > worst:
                worst = rel
                worst_param = name
    return GradCheckReport(worst, worst_param, n_coords, tolerance)


# ---------------------------------------------------------------------------
# checkpoints: magic, shape table, raw little-endian f64 payload
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"ESSOILC1"


def save_checkpoint(path, params: dict, hyper: dict | None = None) -> None:
    """Write named arrays (Values or plain ndarrays) sorted by name."""
    arrays = {name: (p.data if isinstance(p, Value) else
                     np.asarray(p, dtype=np.float64))
              for name, p in params.items()}
    names = sorted(arrays)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            raw = name.encode("utf-8")
            arr = arrays[name]
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
        for name in names:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())
    if hyper is not None:
        with open(str(path) + ".json", "w", encoding="utf-8") as fh:
            json.dump(hyper, fh, sort_keys=True, indent=2)
            fh.write("\n")


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        (count,) = struct.unpack("<I", fh.read(4))
        entries = []
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
            entries.append((name, shape))
        out = {}
        for name, shape in entries:
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n)
            out[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return out
