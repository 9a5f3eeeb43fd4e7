"""Building blocks: embeddings, positional encoding, causal multi-head
attention, the post-norm Transformer layer and the LSTM layer.

All weights act on row vectors (``x @ W``), so a projection from ``n`` to
``m`` features is stored as an ``(n, m)`` matrix.
"""

import math
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, StateError
from .tensor import Tensor

INIT_RANGE = 0.1


def uniform_init(rng: np.random.Generator, *shape) -> np.ndarray:
    # drawn directly in float32 so vocabulary-sized tables stay affordable
    data = rng.random(shape, dtype=np.float32)
    data *= 2 * INIT_RANGE
    data -= INIT_RANGE
    return data


def _uniform(rng: np.random.Generator, *shape) -> Tensor:
    return Tensor._wrap(uniform_init(rng, *shape), requires_grad=True)


def _const(value, *shape) -> Tensor:
    return Tensor(np.full(shape, value, dtype=np.float32), requires_grad=True)


class Module:
    """Anything that owns parameter tensors."""

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]


class EmbeddingTable(Module):
    def __init__(self, vocab_size, d, tied_output=True, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = _uniform(rng, vocab_size, d)
        self.tied_output = tied_output

    @property
    def vocab_size(self):
        return self.weight.shape[0]

    @property
    def d(self):
        return self.weight.shape[1]


class PositionalEncoder:
    """Fixed sinusoidal table: sin on even columns, cos on odd columns."""

    def __init__(self, d, max_len=1024):
        self.d = d
        self.max_len = 0
        self._table = np.zeros((0, d))
        self._extend(max_len)

    def _extend(self, n):
        pos = np.arange(n, dtype=np.float64)[:, None]
        even = np.arange(0, self.d, 2, dtype=np.float64)
        angles = pos / np.power(10000.0, even / self.d)
        table = np.zeros((n, self.d))
        table[:, 0::2] = np.sin(angles)
        table[:, 1::2] = np.cos(angles[:, : self.d // 2])
        self._table = table
        self.max_len = n

    def table(self, length, dtype=np.float32) -> np.ndarray:
        if length > self.max_len:
            self._extend(max(length, 2 * self.max_len))
        return self._table[:length].astype(dtype)


def embed(tokens, table: EmbeddingTable, use_pos=True, scale=None,
          encoder: Optional[PositionalEncoder] = None) -> Tensor:
    """Rows ``scale * weight[token] + PE(position)``.

    ``scale`` defaults to ``sqrt(d)``.  Positions restart at 0 for every
    call, i.e. every window.
    """
    tokens = np.asarray(tokens)
    d = table.d
    if scale is None:
        scale = math.sqrt(d)
    out = T.take_rows(table.weight, tokens)
    if scale != 1.0:
        out = T.mul(out, scale)
    if use_pos:
        encoder = encoder if encoder is not None else PositionalEncoder(d, tokens.shape[-1])
        pe = encoder.table(tokens.shape[-1], dtype=table.weight.dtype)
        out = T.add(out, Tensor._wrap(pe))
    return out


class AttentionParams(Module):
    def __init__(self, d, rng):
        self.w_q = _uniform(rng, d, d)
        self.w_k = _uniform(rng, d, d)
        self.w_v = _uniform(rng, d, d)
        self.w_o = _uniform(rng, d, d)
        self.b_q = _const(0.0, d)
        self.b_k = _const(0.0, d)
        self.b_v = _const(0.0, d)
        self.b_o = _const(0.0, d)


def _as_batch(x: Tensor):
    if x.ndim == 2:
        return T.reshape(x, (1,) + x.shape), True
    return x, False


def causal_self_attention(z: Tensor, params: AttentionParams, heads: int,
                          causal=True, return_weights=False):
    """Multi-head scaled dot-product self-attention.

    Position ``t`` attends to positions ``i <= t``.  ``causal=False`` lifts
    the mask (used only to probe order-invariance).  Accepts ``(T, d)`` or
    ``(B, T, d)``; with ``return_weights`` also returns the
    ``(B*heads, T, T)`` weight array.
    """
    d = z.shape[-1]
    if heads < 1 or d % heads:
        raise ConfigError(f"model dim {d} is not divisible by {heads} heads")
    zb, squeeze = _as_batch(z)
    t = zb.shape[1]
    q = T.split_heads(T.add(T.matmul(zb, params.w_q), params.b_q), heads)
    k = T.split_heads(T.add(T.matmul(zb, params.w_k), params.b_k), heads)
    v = T.split_heads(T.add(T.matmul(zb, params.w_v), params.b_v), heads)
    scores = T.mul(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(d // heads))
    mask = T.causal_mask(t) if causal else np.ones((t, t), dtype=bool)
    weights = T.softmax_masked(scores, mask)
    h = T.merge_heads(T.matmul(weights, v), heads)
    out = T.add(T.matmul(h, params.w_o), params.b_o)
    if squeeze:
        out = T.reshape(out, out.shape[1:])
    if return_weights:
        return out, weights.data
    return out


class TransformerLayerParams(Module):
    def __init__(self, d, d_ff, rng):
        self.attn = AttentionParams(d, rng)
        self.w_ff1 = _uniform(rng, d, d_ff)
        self.b_ff1 = _const(0.0, d_ff)
        self.w_ff2 = _uniform(rng, d_ff, d)
        self.b_ff2 = _const(0.0, d)
        self.ln1_gain = _const(1.0, d)
        self.ln1_bias = _const(0.0, d)
        self.ln2_gain = _const(1.0, d)
        self.ln2_bias = _const(0.0, d)


def feed_forward(x: Tensor, params: TransformerLayerParams) -> Tensor:
    hidden = T.relu(T.add(T.matmul(x, params.w_ff1), params.b_ff1))
    return T.add(T.matmul(hidden, params.w_ff2), params.b_ff2)


def transformer_layer(z_prev: Tensor, params: TransformerLayerParams, heads: int) -> Tensor:
    """Post-norm layer: ``x = LN(attn(z) + z); out = LN(x + FF(x))``."""
    attn = causal_self_attention(z_prev, params.attn, heads)
    x = T.layer_norm(T.add(attn, z_prev), params.ln1_gain, params.ln1_bias)
    y = T.add(x, feed_forward(x, params))
    return T.layer_norm(y, params.ln2_gain, params.ln2_bias)


class LstmLayerParams(Module):
    """Gate blocks along the last axis are ordered input, forget, cell, output."""

    def __init__(self, d_in, hidden, rng):
        self.w_x = _uniform(rng, d_in, 4 * hidden)
        self.w_h = _uniform(rng, hidden, 4 * hidden)
        b = np.zeros(4 * hidden, dtype=np.float32)
        b[hidden:2 * hidden] = 1.0
        self.b = Tensor(b, requires_grad=True)

    @property
    def hidden(self):
        return self.w_h.shape[0]


def lstm_forward(x: Tensor, params: LstmLayerParams, state0=None):
    """Run one LSTM layer over ``(T, d_in)`` or ``(B, T, d_in)`` inputs.

    Returns ``(outputs, (h_T, c_T))``.  ``state0`` defaults to zeros; it must
    be ``(h, c)`` with shape ``(hidden,)`` or ``(B, hidden)`` matching ``x``.
    """
    xb, squeeze = _as_batch(x)
    batch, steps, _ = xb.shape
    n = params.hidden
    if state0 is None:
        zeros = np.zeros((batch, n), dtype=xb.dtype)
        h, c = Tensor._wrap(zeros), Tensor._wrap(zeros.copy())
    else:
        h, c = state0
        want = (n,) if squeeze else (batch, n)
        if h.shape != want or c.shape != want:
            raise StateError(f"LSTM state shapes {h.shape}/{c.shape} do not match expected {want}")
        if squeeze:
            h, c = T.reshape(h, (1, n)), T.reshape(c, (1, n))
    projected = T.add(T.matmul(xb, params.w_x), params.b)
    outputs = []
    for t in range(steps):
        gates = T.add(T.select(projected, t, axis=1), T.matmul(h, params.w_h))
        i = T.sigmoid(T.narrow(gates, 0, n))
        f = T.sigmoid(T.narrow(gates, n, 2 * n))
        g = T.tanh(T.narrow(gates, 2 * n, 3 * n))
        o = T.sigmoid(T.narrow(gates, 3 * n, 4 * n))
        c = T.add(T.mul(f, c), T.mul(i, g))
        h = T.mul(o, T.tanh(c))
        outputs.append(h)
    out = T.stack(outputs, axis=1)
    if squeeze:
        out = T.reshape(out, out.shape[1:])
        h, c = T.reshape(h, (n,)), T.reshape(c, (n,))
    return out, (h, c)


def output_logits(o: Tensor, table: EmbeddingTable, untied_proj: Optional[Tensor] = None) -> Tensor:
    """Project hidden rows to vocabulary logits (no bias)."""
    if table.tied_output and untied_proj is not None:
        raise ConfigError("tied embedding and an untied projection are both configured")
    if not table.tied_output and untied_proj is None:
        raise ConfigError("untied output requires a projection matrix")
    if table.tied_output:
        return T.matmul(o, T.transpose(table.weight))
    return T.matmul(o, untied_proj)
