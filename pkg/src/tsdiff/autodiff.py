"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every operation appends a node to a Tape; `backward` walks the tape in
reverse creation order, which makes gradient accumulation deterministic.
All ops also accept plain ndarrays (no Var among the inputs) and then run
as ordinary numpy with no recording, so the same model code serves both
training and inference.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit

from .errors import DataError, NumericalError

__all__ = [
    "Tape", "Var", "backward", "ParameterStore",
    "add", "sub", "mul", "div", "matmul", "transpose", "concat", "stack",
    "split", "tanh", "sigmoid", "softplus", "exp", "log", "sqrt",
    "reduce_sum", "sumsq", "dot", "masked_softmax", "layer_norm",
    "lstm_cell", "value_of", "dropout_mask", "apply_dropout",
]


class Var:
    """A tape node: a value plus the recipe to push gradients to its parents."""

    __slots__ = ("tape", "value", "grad", "parents", "vjp", "idx", "name")

    def __init__(self, tape, value, parents=(), vjp=None, name=None):
        self.tape = tape
        self.value = value
        self.grad = None
        self.parents = parents
        self.vjp = vjp
        self.name = name
        self.idx = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, idx={self.idx})"


class Tape:
    """Append-only record of operations; one per forward pass."""

    def __init__(self):
        self.nodes: list[Var] = []

    def leaf(self, value, name=None) -> Var:
        return Var(self, np.asarray(value, dtype=np.float64), name=name)

    def __len__(self):
        return len(self.nodes)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def backward(root: Var) -> dict[str, np.ndarray]:
    """Reverse sweep from a scalar root; returns gradients of named leaves.

    Gradients of every intermediate node are also left on `node.grad`.
    Deterministic: iteration follows reverse creation order.
    """
    if not isinstance(root, Var):
        raise ValueError("backward root must be a Var")
    if root.value.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.value.shape}")
    tape = root.tape
    for node in tape.nodes:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(tape.nodes[: root.idx + 1]):
        if node.grad is None or node.vjp is None:
            continue
        grads = node.vjp(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
    named = {}
    for node in tape.nodes:
        if node.name is not None and node.grad is not None:
            named[node.name] = node.grad
    return named


# ---------------------------------------------------------------------------
# op plumbing


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _binary(a, b, fwd, grad_a, grad_b):
    av, bv = _val(a), _val(b)
    out = fwd(av, bv)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    ia, ib = isinstance(a, Var), isinstance(b, Var)
    parents = tuple(x for x, flag in ((a, ia), (b, ib)) if flag)

    def vjp(g):
        gs = []
        if ia:
            gs.append(grad_a(g, av, bv, out))
        if ib:
            gs.append(grad_b(g, av, bv, out))
        return tuple(gs)

    return Var(tape, out, parents, vjp)


def _unary(x, fwd, grad):
    xv = _val(x)
    out = fwd(xv)
    if not isinstance(x, Var):
        return out
    return Var(x.tape, out, (x,), lambda g: (grad(g, xv, out),))


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    return _binary(
        a, b, lambda x, y: x + y,
        lambda g, x, y, o: _unbroadcast(g, x.shape),
        lambda g, x, y, o: _unbroadcast(g, y.shape),
    )


def sub(a, b):
    return _binary(
        a, b, lambda x, y: x - y,
        lambda g, x, y, o: _unbroadcast(g, x.shape),
        lambda g, x, y, o: _unbroadcast(-g, y.shape),
    )


def mul(a, b):
    return _binary(
        a, b, lambda x, y: x * y,
        lambda g, x, y, o: _unbroadcast(g * y, x.shape),
        lambda g, x, y, o: _unbroadcast(g * x, y.shape),
    )


def div(a, b):
    return _binary(
        a, b, lambda x, y: x / y,
        lambda g, x, y, o: _unbroadcast(g / y, x.shape),
        lambda g, x, y, o: _unbroadcast(-g * x / (y * y), y.shape),
    )


def _matmul_ga(g, x, y):
    if x.ndim >= 2 and y.ndim == 2:
        return g @ y.T
    if x.ndim == 1 and y.ndim == 2:
        return g @ y.T
    if x.ndim == 2 and y.ndim == 1:
        return np.outer(g, y)
    return g * y  # 1D @ 1D


def _matmul_gb(g, x, y):
    if x.ndim == 2 and y.ndim == 2:
        return x.T @ g
    if x.ndim == 1 and y.ndim == 2:
        return np.outer(x, g)
    if x.ndim == 2 and y.ndim == 1:
        return x.T @ g
    return g * x  # 1D @ 1D


def matmul(a, b):
    return _binary(
        a, b, lambda x, y: x @ y,
        lambda g, x, y, o: _matmul_ga(g, x, y),
        lambda g, x, y, o: _matmul_gb(g, x, y),
    )


def dot(a, b):
    """Inner product of two 1-D vectors (scalar output)."""
    return matmul(a, b)


def transpose(x):
    return _unary(x, lambda v: v.T.copy(), lambda g, v, o: g.T)


# ---------------------------------------------------------------------------
# structure


def concat(xs, axis=-1):
    vals = [_val(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    tape = _tape_of(*xs)
    if tape is None:
        return out
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum(sizes)[:-1]
    flags = [isinstance(x, Var) for x in xs]
    parents = tuple(x for x, f in zip(xs, flags) if f)

    def vjp(g):
        pieces = np.split(g, offsets, axis=axis)
        return tuple(p for p, f in zip(pieces, flags) if f)

    return Var(tape, out, parents, vjp)


def stack(xs):
    """Stack equal-shape arrays along a new leading axis."""
    vals = [_val(x) for x in xs]
    out = np.stack(vals, axis=0)
    tape = _tape_of(*xs)
    if tape is None:
        return out
    flags = [isinstance(x, Var) for x in xs]
    parents = tuple(x for x, f in zip(xs, flags) if f)

    def vjp(g):
        return tuple(g[i] for i, f in enumerate(flags) if f)

    return Var(tape, out, parents, vjp)


def split(x, parts: int, axis=-1):
    """Split into `parts` equal chunks along `axis` (inverse of concat)."""
    xv = _val(x)
    chunks = np.split(xv, parts, axis=axis)
    if not isinstance(x, Var):
        return chunks
    out = []
    for i, chunk in enumerate(chunks):
        def vjp(g, i=i, shape=xv.shape):
            full = np.zeros(shape)
            idx = [slice(None)] * full.ndim
            width = shape[axis] // parts
            ax = axis if axis >= 0 else full.ndim + axis
            idx[ax] = slice(i * width, (i + 1) * width)
            full[tuple(idx)] = g
            return (full,)

        out.append(Var(x.tape, chunk, (x,), vjp))
    return out


# ---------------------------------------------------------------------------
# nonlinearities


def tanh(x):
    return _unary(x, np.tanh, lambda g, v, o: g * (1.0 - o * o))


def sigmoid(x):
    return _unary(x, expit, lambda g, v, o: g * o * (1.0 - o))


def softplus(x):
    """log(1 + exp(x)), numerically stable across the whole real line."""
    return _unary(
        x, lambda v: np.logaddexp(0.0, v), lambda g, v, o: g * expit(v)
    )


def exp(x):
    return _unary(x, np.exp, lambda g, v, o: g * o)


def log(x):
    return _unary(x, np.log, lambda g, v, o: g / v)


def sqrt(x):
    return _unary(x, np.sqrt, lambda g, v, o: g / (2.0 * o))


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(x, axis=None, keepdims=False):
    xv = _val(x)
    out = xv.sum(axis=axis, keepdims=keepdims)
    if not isinstance(x, Var):
        return out

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, xv.shape),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, xv.shape),)

    return Var(x.tape, np.asarray(out), (x,), vjp)


def sumsq(x):
    """Squared L2 norm over all entries (scalar)."""
    xv = _val(x)
    out = np.asarray((xv * xv).sum())
    if not isinstance(x, Var):
        return out
    return Var(x.tape, out, (x,), lambda g: (2.0 * g * xv,))


def masked_softmax(x, mask):
    """Softmax over the last axis restricted to mask==1 entries.

    Masked entries get exactly zero weight; a fully masked row is an error
    (a fully missing event is invalid upstream of this op).
    """
    xv = _val(x)
    mv = np.asarray(mask, dtype=np.float64)
    mv = np.broadcast_to(mv, xv.shape)
    if np.any(mv.sum(axis=-1) == 0):
        raise DataError("masked_softmax: fully masked row")
    safe = np.where(mv > 0, xv, -np.inf)
    shifted = safe - safe.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    if not isinstance(x, Var):
        return y

    def vjp(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - inner),)

    return Var(x.tape, y, (x,), vjp)


# ---------------------------------------------------------------------------
# composites


def layer_norm(x, eps: float = 1e-5):
    """Normalize over the last axis to zero mean, unit variance (no affine)."""
    n = _val(x).shape[-1]
    mu = mul(reduce_sum(x, axis=-1, keepdims=True), 1.0 / n)
    d = sub(x, mu)
    var = mul(reduce_sum(mul(d, d), axis=-1, keepdims=True), 1.0 / n)
    return div(d, sqrt(add(var, eps)))


def lstm_cell(x, h, c, w_ih, w_hh, b):
    """Standard LSTM cell; gates packed as [input, forget, cell, output].

    Returns (h_new, c_new). w_ih: (in, 4H), w_hh: (H, 4H), b: (4H,).
    """
    z = add(add(matmul(x, w_ih), matmul(h, w_hh)), b)
    zi, zf, zg, zo = split(z, 4, axis=-1)
    i = sigmoid(zi)
    f = sigmoid(zf)
    g = tanh(zg)
    o = sigmoid(zo)
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability rate, else 1/(1-rate)."""
    keep = (rng.random(shape) >= rate).astype(np.float64)
    return keep / (1.0 - rate)


def apply_dropout(x, mask):
    if mask is None:
        return x
    return mul(x, mask)


# ---------------------------------------------------------------------------
# parameters


def glorot_init(shape: tuple, rng: np.random.Generator) -> np.ndarray:
    if len(shape) == 2:
        scale = math.sqrt(2.0 / (shape[0] + shape[1]))
    else:
        scale = math.sqrt(1.0 / max(shape[0], 1)) if shape else 1.0
    return rng.normal(0.0, scale, size=shape)


class ParameterStore:
    """Named float64 arrays with gradient slots and Adam moment buffers."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step_count: int = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered")
        v = np.asarray(value, dtype=np.float64)
        self.params[name] = v
        self.grads[name] = np.zeros_like(v)
        self.adam_m[name] = np.zeros_like(v)
        self.adam_v[name] = np.zeros_like(v)

    def add_normal(self, name: str, shape: tuple, rng: np.random.Generator) -> None:
        self.add(name, glorot_init(shape, rng))

    def add_zeros(self, name: str, shape: tuple) -> None:
        self.add(name, np.zeros(shape))

    def names(self) -> list[str]:
        return list(self.params.keys())

    def bind(self, tape: Tape) -> dict[str, Var]:
        """Create one named leaf per parameter on `tape`."""
        return {name: tape.leaf(value, name=name) for name, value in self.params.items()}

    def raw(self) -> dict[str, np.ndarray]:
        """Parameter view for tape-free inference."""
        return self.params

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def accumulate(self, grad_map: dict[str, np.ndarray], scale: float = 1.0) -> None:
        for name, g in grad_map.items():
            self.grads[name] += scale * g

    def grad_global_norm(self) -> float:
        total = 0.0
        for g in self.grads.values():
            total += float((g * g).sum())
        return math.sqrt(total)

    def clip_global_norm(self, max_norm: float) -> float:
        norm = self.grad_global_norm()
        if norm > max_norm > 0:
            factor = max_norm / norm
            for g in self.grads.values():
                g *= factor
        return norm

    def adam_step(self, lr: float = 1e-3, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8) -> None:
        """Bias-corrected Adam update from the accumulated gradients."""
        for name, g in self.grads.items():
            if not np.isfinite(g).all():
                raise NumericalError(f"NaN/Inf gradient in parameter {name!r}")
        self.step_count += 1
        t = self.step_count
        for name, g in self.grads.items():
            m = self.adam_m[name]
            v = self.adam_v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            m_hat = m / (1.0 - beta1 ** t)
            v_hat = v / (1.0 - beta2 ** t)
            self.params[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for name, value in self.params.items():
            out.add(name, value.copy())
            out.adam_m[name] = self.adam_m[name].copy()
            out.adam_v[name] = self.adam_v[name].copy()
        out.step_count = self.step_count
        return out
