import math

import numpy as np
import pytest

from transfornn import tensor as T
from transfornn.layers import AttentionParams, LstmLayerParams, TransformerLayerParams


def sigmoid64(x):
    return 1.0 / (1.0 + np.exp(-x))


def softmax64(row):
    e = np.exp(row - row.max())
    return e / e.sum()


def layer_norm64(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def attention_loop(z, p, heads, causal=True):
    """Position-by-position, head-by-head attention in float64."""
    z = np.asarray(z, dtype=np.float64)
    t_len, d = z.shape
    dh = d // heads
    wq, wk, wv, wo = (np.asarray(w.data, np.float64) for w in (p.w_q, p.w_k, p.w_v, p.w_o))
    bq, bk, bv, bo = (np.asarray(b.data, np.float64) for b in (p.b_q, p.b_k, p.b_v, p.b_o))
    q, k, v = z @ wq + bq, z @ wk + bk, z @ wv + bv
    out = np.zeros((t_len, d))
    for t in range(t_len):
        concat = np.zeros(d)
        for hd in range(heads):
            cols = slice(hd * dh, (hd + 1) * dh)
            visible = range(t + 1) if causal else range(t_len)
            scores = np.array([q[t, cols] @ k[i, cols] / math.sqrt(dh) for i in visible])
            w = softmax64(scores)
            for weight, i in zip(w, visible):
                concat[cols] += weight * v[i, cols]
        out[t] = concat @ wo + bo
    return out


def transformer_layer_loop(z, p, heads):
    z = np.asarray(z, dtype=np.float64)
    f = lambda a: np.asarray(a.data, np.float64)
    x = layer_norm64(attention_loop(z, p.attn, heads) + z, f(p.ln1_gain), f(p.ln1_bias))
    hidden = np.maximum(x @ f(p.w_ff1) + f(p.b_ff1), 0.0)
    y = x + hidden @ f(p.w_ff2) + f(p.b_ff2)
    return layer_norm64(y, f(p.ln2_gain), f(p.ln2_bias))


def lstm_loop(x, p, h0=None, c0=None):
    """Scalar-indexed LSTM recurrence in float64."""
    x = np.asarray(x, dtype=np.float64)
    wx, wh, b = (np.asarray(a.data, np.float64) for a in (p.w_x, p.w_h, p.b))
    n = wh.shape[0]
    h = np.zeros(n) if h0 is None else np.array(h0, np.float64)
    c = np.zeros(n) if c0 is None else np.array(c0, np.float64)
    outs = []
    for xt in x:
        h_new, c_new = np.zeros(n), np.zeros(n)
        for j in range(n):
            pre = [b[g * n + j] + sum(xt[i] * wx[i, g * n + j] for i in range(len(xt)))
                   + sum(h[i] * wh[i, g * n + j] for i in range(n)) for g in range(4)]
            i_g, f_g, o_g = sigmoid64(pre[0]), sigmoid64(pre[1]), sigmoid64(pre[3])
            g_g = math.tanh(pre[2])
            c_new[j] = f_g * c[j] + i_g * g_g
            h_new[j] = o_g * math.tanh(c_new[j])
        h, c = h_new, c_new
        outs.append(h)
    return np.array(outs), h, c


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def attention_params(rng):
    return AttentionParams(8, rng)


@pytest.fixture
def layer_params(rng):
    p = TransformerLayerParams(8, 12, rng)
    # non-trivial norms so the oracle exercises gain and bias
    p.ln1_gain.data = rng.uniform(0.5, 1.5, 8).astype(np.float32)
    p.ln2_bias.data = rng.uniform(-0.2, 0.2, 8).astype(np.float32)
    return p


@pytest.fixture
def lstm_params(rng):
    return LstmLayerParams(5, 4, rng)


def leaf(data, dtype=np.float64):
    return T.Tensor(data, requires_grad=True, dtype=dtype)
