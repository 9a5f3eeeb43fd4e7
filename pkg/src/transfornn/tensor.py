"""Dense tensors with define-by-run reverse-mode differentiation.

Every differentiable operation appends a node to the active :class:`Tape`
when at least one input requires a gradient.  :func:`backward` replays the
tape in reverse, so the tape order (execution order) is already a valid
topological order.

Storage is float32 by default.  Operations keep the dtype of their inputs,
which lets the gradient checker re-execute a whole model in float64.
"""

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DegenerateRowError, DimensionError

MAX_RANK = 3
LAYER_NORM_EPS = 1e-5


class Tensor:
    """A rank 0-3 array with an optional gradient buffer.

    Rank 0 is reserved for scalar losses; everything else is rank 1-3
    (batch x time x feature at most).
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.array(data, dtype=dtype if dtype is not None else np.float32)
        if arr.ndim > MAX_RANK:
            raise DimensionError(f"tensor rank {arr.ndim} exceeds {MAX_RANK}: shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad=False) -> "Tensor":
        # no copy, dtype preserved
        arr = np.asarray(arr)
        if arr.ndim > MAX_RANK:
            raise DimensionError(f"tensor rank {arr.ndim} exceeds {MAX_RANK}: shape {arr.shape}")
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = requires_grad
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered record of differentiable operations (one per thread)."""

    nodes: list = field(default_factory=list)

    def record(self, op, inputs, output, backward):
        self.nodes.append(Node(op, tuple(inputs), output, backward))

    def clear(self):
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)


class _State(threading.local):
    def __init__(self):
        self.tapes = [Tape()]
        self.enabled = True
        self.kinks = None


_state = _State()


def current_tape() -> Tape:
    return _state.tapes[-1]


@contextlib.contextmanager
def new_tape():
    """Record into a fresh tape for the duration of the block."""
    tape = Tape()
    _state.tapes.append(tape)
    try:
        yield tape
    finally:
        _state.tapes.pop()


@contextlib.contextmanager
def no_grad():
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def grad_enabled() -> bool:
    return _state.enabled


def _needs_grad(*inputs) -> bool:
    return _state.enabled and any(t.requires_grad for t in inputs)


def _emit(op, inputs, out_arr, backward) -> Tensor:
    track = _needs_grad(*inputs)
    out = Tensor._wrap(out_arr, requires_grad=track)
    if track:
        current_tape().record(op, inputs, out, backward)
    return out


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=like.dtype))


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a, b) if not isinstance(a, Tensor) else a
    b = _as_tensor(b, a)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _emit("add", (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b) if not isinstance(a, Tensor) else a
    b = _as_tensor(b, a)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _emit("sub", (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b) if not isinstance(a, Tensor) else a
    b = _as_tensor(b, a)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit("mul", (a, b), ad * bd,
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def sigmoid(x: Tensor) -> Tensor:
    # two-branch form avoids overflow in exp for large |x|
    xd = x.data
    e = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype, copy=False)
    return _emit("sigmoid", (x,), y, lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    xd = x.data
    if _state.kinks is not None:
        _state.kinks.append(xd > 0)
    y = np.maximum(xd, 0).astype(xd.dtype, copy=False)
    return _emit("relu", (x,), y, lambda g: (g * (xd > 0),))


_POINTWISE = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "add": add, "mul": mul}


def pointwise(kind: str, *operands) -> Tensor:
    """Dispatch an elementwise op by name (sigmoid, tanh, relu, add, mul)."""
    try:
        fn = _POINTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown pointwise kind {kind!r}") from None
    return fn(*operands)


# ---------------------------------------------------------------------------
# reductions and shape plumbing
# ---------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    shape, dt = x.shape, x.dtype
    return _emit("sum", (x,), np.asarray(x.data.sum(), dtype=dt),
                 lambda g: (np.broadcast_to(g, shape).astype(dt),))


def mean_all(x: Tensor) -> Tensor:
    shape, dt, n = x.shape, x.dtype, x.size
    return _emit("mean", (x,), np.asarray(x.data.mean(), dtype=dt),
                 lambda g: (np.broadcast_to(g / n, shape).astype(dt),))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _emit("reshape", (x,), y, lambda g: (g.reshape(old),))


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    if x.ndim < 2:
        raise DimensionError(f"transpose needs rank >= 2, got shape {x.shape}")
    return _emit("transpose", (x,), np.swapaxes(x.data, -1, -2),
                 lambda g: (np.swapaxes(g, -1, -2),))


def narrow(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice ``[start:stop]`` along the last axis."""
    shape, dt = x.shape, x.dtype

    def back(g):
        full = np.zeros(shape, dtype=dt)
        full[..., start:stop] = g
        return (full,)

    return _emit("narrow", (x,), x.data[..., start:stop], back)


def select(x: Tensor, index: int, axis: int = 1) -> Tensor:
    """Pick one slice along ``axis`` (drops that axis)."""
    shape, dt = x.shape, x.dtype

    def back(g):
        full = np.zeros(shape, dtype=dt)
        idx = [slice(None)] * len(shape)
        idx[axis] = index
        full[tuple(idx)] = g
        return (full,)

    return _emit("select", (x,), np.take(x.data, index, axis=axis), back)


def stack(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = list(xs)
    if not xs:
        raise DimensionError("stack of zero tensors")
    shape0 = xs[0].shape
    for t in xs[1:]:
        if t.shape != shape0:
            raise DimensionError(f"stack: shapes {shape0} and {t.shape} differ")
    y = np.stack([t.data for t in xs], axis=axis)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return _emit("stack", xs, y, back)


def take_rows(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-D table: ``out[..., :] = table[ids[...], :]``."""
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise DimensionError(f"take_rows expects a 2-D table, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = ids[(ids < 0) | (ids >= table.shape[0])][0]
        raise IndexError(f"token id {int(bad)} out of range for table with {table.shape[0]} rows")
    shape, dt = table.shape, table.dtype

    def back(g):
        full = np.zeros(shape, dtype=dt)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _emit("take_rows", (table,), table.data[ids], back)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(B, T, d) -> (B*heads, T, d/heads)."""
    b, t, d = x.shape
    if d % heads:
        raise DimensionError(f"feature dim {d} not divisible by {heads} heads")
    dh = d // heads
    y = x.data.reshape(b, t, heads, dh).transpose(0, 2, 1, 3).reshape(b * heads, t, dh)

    def back(g):
        return (g.reshape(b, heads, t, dh).transpose(0, 2, 1, 3).reshape(b, t, d),)

    return _emit("split_heads", (x,), y, back)


def merge_heads(x: Tensor, heads: int) -> Tensor:
    """(B*heads, T, dh) -> (B, T, heads*dh); inverse of :func:`split_heads`."""
    bh, t, dh = x.shape
    if bh % heads:
        raise DimensionError(f"leading dim {bh} not divisible by {heads} heads")
    b = bh // heads
    y = x.data.reshape(b, heads, t, dh).transpose(0, 2, 1, 3).reshape(b, t, heads * dh)

    def back(g):
        return (g.reshape(b, t, heads, dh).transpose(0, 2, 1, 3).reshape(bh, t, dh),)

    return _emit("merge_heads", (x,), y, back)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` may be 2-D (shared weight applied to every leading index of ``a``)
    or of the same rank as ``a`` (batched product).
    """
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    if b.ndim == 3 and (a.ndim != 3 or a.shape[0] != b.shape[0]):
        raise DimensionError(f"matmul: batched shapes {a.shape} and {b.shape} disagree")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            k = ad.shape[-1]
            gb = ad.reshape(-1, k).T @ g.reshape(-1, bd.shape[1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _emit("matmul", (a, b), ad @ bd, back)


def causal_mask(t: int) -> np.ndarray:
    """Boolean (t, t) mask; True where position i <= row position."""
    return np.tril(np.ones((t, t), dtype=bool))


def softmax_masked(scores: Tensor, mask) -> Tensor:
    """Row softmax over the entries where ``mask`` is True.

    Masked entries come out exactly 0.  Rows are shifted by their maximum
    over visible entries before exponentiation.
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    if not mask.any(axis=-1).all():
        raise DegenerateRowError("softmax row has no unmasked entries")
    s = scores.data
    row_max = np.where(mask, s, -np.inf).max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(np.where(mask, s - row_max, 0)), 0).astype(s.dtype, copy=False)
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _emit("softmax_masked", (scores,), p, back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match feature dim {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype, copy=False)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def back(g):
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit("layer_norm", (x, gain, bias), out, back)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Plain-array helper, log-sum-exp stabilized."""
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, targets, reduction: str = "mean") -> Tensor:
    """Negative log-softmax probability of ``targets``.

    ``reduction`` is ``"mean"`` (scalar), ``"sum"`` (scalar) or ``"none"``
    (one value per target position).
    """
    targets = np.asarray(targets)
    v = logits.shape[-1]
    if logits.shape[:-1] != targets.shape:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        bad = targets[(targets < 0) | (targets >= v)][0]
        raise IndexError(f"target id {int(bad)} out of range for vocabulary of size {v}")
    ld = logits.data
    logp = log_softmax(ld)
    nll = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    n = targets.size
    dt = ld.dtype

    def grad_logits(scale):
        p = np.exp(logp)
        np.put_along_axis(p, targets[..., None], np.take_along_axis(p, targets[..., None], axis=-1) - 1, axis=-1)
        return (p * scale).astype(dt, copy=False)

    if reduction == "none":
        return _emit("cross_entropy", (logits,), nll, lambda g: (grad_logits(g[..., None]),))
    if reduction == "sum":
        return _emit("cross_entropy", (logits,), np.asarray(nll.sum(), dtype=dt),
                     lambda g: (grad_logits(g),))
    if reduction == "mean":
        return _emit("cross_entropy", (logits,), np.asarray(nll.sum() / n, dtype=dt),
                     lambda g: (grad_logits(g / n),))
    raise ValueError(f"unknown reduction {reduction!r}")


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def backward(loss: Tensor, tape: Optional[Tape] = None):
    """Populate ``.grad`` of every tensor reachable from ``loss`` on ``tape``.

    Gradients accumulate into existing leaf buffers.  The tape is cleared
    afterwards.
    """
    tape = current_tape() if tape is None else tape
    if loss.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad or not any(n.output is loss for n in reversed(tape.nodes)):
        raise ContractError("loss was not produced through the tape")
    loss.grad = np.ones((), dtype=loss.dtype)
    for node in reversed(tape.nodes):
        g = node.output.grad
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            gi = np.asarray(gi, dtype=inp.dtype)
            if gi.shape != inp.shape:
                gi = _unbroadcast(gi, inp.shape)
            inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
    tape.clear()


@contextlib.contextmanager
def _watch_kinks():
    prev = _state.kinks
    _state.kinks = []
    try:
        yield _state.kinks
    finally:
        _state.kinks = prev


def _eval_with_pattern(f, x):
    with _watch_kinks() as signs:
        value = float(np.asarray(f(x).data, dtype=np.float64))
    return value, signs


def _same_pattern(a, b):
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def finite_difference_grad(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-3,
                           min_step: float = 1e-7) -> Tensor:
    """Central-difference gradient of scalar ``f`` with respect to ``x``.

    ``x`` is perturbed in place (so closures that captured it see the change)
    and promoted to float64 while probing; its original data is restored on
    exit.  For a fully 64-bit estimate every other input of ``f`` should be
    float64 as well.

    If a probe at ``x +/- h`` flips the sign of any ReLU input seen at ``x``
    the interval straddles a kink; that coordinate is re-probed with the step
    divided by 10 until the pattern is stable or ``min_step`` is reached.
    """
    orig = x.data
    work = orig.astype(np.float64)
    x.data = work
    flat = work.reshape(-1)
    out = np.zeros(flat.size, dtype=np.float64)
    try:
        with no_grad():
            _, base = _eval_with_pattern(f, x)
            for i in range(flat.size):
                keep = flat[i]
                step = h
                while True:
                    flat[i] = keep + step
                    fp, sp = _eval_with_pattern(f, x)
                    flat[i] = keep - step
                    fm, sm = _eval_with_pattern(f, x)
                    flat[i] = keep
                    if (_same_pattern(base, sp) and _same_pattern(base, sm)) or step / 10 < min_step:
                        break
                    step /= 10
                out[i] = (fp - fm) / (2.0 * step)
    finally:
        x.data = orig
    return Tensor(out.reshape(orig.shape), dtype=np.float64)


def relative_error(a, b, floor: float = 1e-4) -> np.ndarray:
    """Elementwise ``|a-b| / max(floor, |a|+|b|)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(floor, np.abs(a) + np.abs(b))
