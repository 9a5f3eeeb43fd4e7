import math

import numpy as np
import pytest

from transfornn import tensor as T
from transfornn.errors import ConfigError, StateError
from transfornn.layers import (
    AttentionParams,
    EmbeddingTable,
    LstmLayerParams,
    PositionalEncoder,
    TransformerLayerParams,
    causal_self_attention,
    embed,
    lstm_forward,
    output_logits,
    transformer_layer,
)
from transfornn.tensor import Tensor

from conftest import attention_loop, layer_norm64, lstm_loop, transformer_layer_loop


def as64(params):
    for _, p in params.named_parameters():
        p.data = p.data.astype(np.float64)
    return params


# -- embedding and positions ------------------------------------------------

def test_embed_without_positions_copies_rows():
    table = EmbeddingTable(4, 4)
    table.weight.data = np.eye(4, dtype=np.float32)
    out = embed([2, 0, 3], table, use_pos=False, scale=1.0).data
    assert np.array_equal(out, np.eye(4)[[2, 0, 3]])


def test_position_zero_row():
    table = EmbeddingTable(3, 4)
    table.weight.data[:] = 0
    assert embed([1], table, use_pos=True).data[0].tolist() == [0, 1, 0, 1]


def test_position_one_row():
    table = EmbeddingTable(3, 4)
    table.weight.data[:] = 0
    row = embed([1, 1], table).data[1]
    expect = [math.sin(1), math.cos(1), math.sin(0.01), math.cos(0.01)]
    assert np.abs(row - expect).max() < 1e-6


def test_embed_default_scale_is_sqrt_d():
    table = EmbeddingTable(5, 16, rng=np.random.default_rng(0))
    out = embed([3], table, use_pos=False).data[0]
    assert np.allclose(out, 4.0 * table.weight.data[3])


def test_encoder_formula_and_growth():
    enc = PositionalEncoder(6, max_len=4)
    tab = enc.table(10, dtype=np.float64)
    assert enc.max_len >= 10
    for pos in range(10):
        for i in range(3):
            freq = pos / 10000 ** (2 * i / 6)
            assert tab[pos, 2 * i] == pytest.approx(math.sin(freq), abs=1e-12)
            assert tab[pos, 2 * i + 1] == pytest.approx(math.cos(freq), abs=1e-12)


@pytest.mark.parametrize("d", [2, 3, 16])
def test_encoder_rows_distinct(d):
    tab = PositionalEncoder(d, 2000).table(2000, dtype=np.float64)
    sq = (tab ** 2).sum(1)
    dist = sq[:, None] + sq[None, :] - 2 * tab @ tab.T
    np.fill_diagonal(dist, 1)
    assert dist.min() > 0


def test_embed_out_of_range_id():
    with pytest.raises(IndexError):
        embed([0, 5], EmbeddingTable(5, 4))


# -- attention --------------------------------------------------------------

def test_single_position_returns_projected_value(attention_params):
    p = as64(attention_params)
    z = np.random.default_rng(0).normal(size=(1, 8))
    out = causal_self_attention(Tensor(z, dtype=np.float64), p, 2).data
    v = z @ p.w_v.data + p.b_v.data
    assert np.allclose(out, v @ p.w_o.data + p.b_o.data, atol=1e-12)


def test_identical_keys_give_uniform_weights(attention_params):
    p = as64(attention_params)
    p.w_k.data[:] = 0
    z = np.random.default_rng(1).normal(size=(3, 8))
    out, weights = causal_self_attention(Tensor(z, dtype=np.float64), p, 2, return_weights=True)
    assert np.allclose(weights[:, 2], 1 / 3)
    v = z @ p.w_v.data + p.b_v.data
    assert np.allclose(out.data[2], v.mean(0) @ p.w_o.data + p.b_o.data, atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_attention_matches_loop(seed):
    rng = np.random.default_rng(seed)
    p = AttentionParams(8, rng)
    for _, t in p.named_parameters():
        t.data = rng.normal(scale=0.5, size=t.shape).astype(np.float32)
    z = rng.normal(size=(4, 8))
    got = causal_self_attention(Tensor(z, dtype=np.float64), as64(p), 2).data
    assert np.abs(got - attention_loop(z, p, 2)).max() < 1e-5


def test_attention_weights_are_causal(attention_params):
    z = Tensor(np.random.default_rng(2).normal(size=(2, 6, 8)))
    _, w = causal_self_attention(z, attention_params, 4, return_weights=True)
    assert w.shape == (8, 6, 6)
    assert np.all(np.abs(w.sum(-1) - 1) < 1e-5)
    assert np.all(w[:, np.triu(np.ones((6, 6), bool), 1)] == 0)


def test_attention_head_divisibility(attention_params):
    with pytest.raises(ConfigError):
        causal_self_attention(Tensor(np.zeros((2, 8))), attention_params, 3)


def test_batched_attention_equals_per_sequence(attention_params):
    z = np.random.default_rng(3).normal(size=(3, 5, 8)).astype(np.float32)
    batched = causal_self_attention(Tensor(z), attention_params, 2).data
    for b in range(3):
        single = causal_self_attention(Tensor(z[b]), attention_params, 2).data
        assert np.allclose(batched[b], single, atol=1e-6)


def test_unmasked_attention_is_permutation_equivariant(attention_params):
    rng = np.random.default_rng(4)
    table = EmbeddingTable(10, 8, rng=rng)
    tokens = rng.integers(0, 10, size=6)
    perm = rng.permutation(6)

    def run(ids):
        z = embed(ids, table, use_pos=False)
        return causal_self_attention(z, attention_params, 2, causal=False).data

    base, shuffled = run(tokens), run(tokens[perm])
    assert np.allclose(shuffled, base[perm], atol=1e-5)
    assert np.allclose(shuffled.sum(0), base.sum(0), atol=1e-5)


# -- transformer layer ------------------------------------------------------

def test_degenerate_layer_is_double_norm(layer_params):
    p = as64(layer_params)
    for t in (p.attn.w_q, p.attn.w_k, p.attn.w_v, p.attn.w_o, p.w_ff1, p.w_ff2):
        t.data[:] = 0
    z = np.random.default_rng(5).normal(size=(3, 8))
    got = transformer_layer(Tensor(z, dtype=np.float64), p, 2).data
    inner = layer_norm64(z, p.ln1_gain.data, p.ln1_bias.data)
    assert np.allclose(got, layer_norm64(inner, p.ln2_gain.data, p.ln2_bias.data), atol=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_transformer_layer_matches_loop(seed):
    rng = np.random.default_rng(100 + seed)
    p = TransformerLayerParams(8, 12, rng)
    for _, t in p.named_parameters():
        t.data = (t.data + rng.normal(scale=0.3, size=t.shape)).astype(np.float32)
    z = rng.normal(size=(2, 8))
    got = transformer_layer(Tensor(z, dtype=np.float64), as64(p), 2).data
    assert np.abs(got - transformer_layer_loop(z, p, 2)).max() < 1e-5


def test_transformer_layer_is_causal_bitwise(layer_params):
    rng = np.random.default_rng(6)
    z = rng.normal(size=(6, 8)).astype(np.float32)
    base = transformer_layer(Tensor(z), layer_params, 2).data
    for t in range(6):
        edited = z.copy()
        edited[t] = rng.normal(size=8)
        out = transformer_layer(Tensor(edited), layer_params, 2).data
        assert np.array_equal(out[:t], base[:t])


# -- LSTM -------------------------------------------------------------------

def test_zero_lstm_outputs_zero():
    p = LstmLayerParams(3, 2, np.random.default_rng(0))
    for t in p.parameters():
        t.data[:] = 0
    out, (h, c) = lstm_forward(Tensor(np.ones((4, 3))), p)
    assert not out.data.any() and not h.data.any() and not c.data.any()


def test_lstm_scalar_hand_case():
    p = LstmLayerParams(1, 1, np.random.default_rng(0))
    p.w_x.data = np.array([[0, 0, 1, 0]], dtype=np.float64)
    p.w_h.data = np.zeros((1, 4))
    p.b.data = np.zeros(4)
    out, (h, c) = lstm_forward(Tensor([[2.0]], dtype=np.float64), p)
    c1 = 0.5 * math.tanh(2)
    assert c.data[0] == pytest.approx(c1, abs=1e-12) and abs(c1 - 0.4820) < 1e-4
    assert h.data[0] == pytest.approx(0.5 * math.tanh(c1), abs=1e-12)
    assert abs(h.data[0] - 0.2240) < 1e-4


def test_forget_bias_initialized_to_one(lstm_params):
    b = lstm_params.b.data
    assert np.all(b[4:8] == 1) and not b[:4].any() and not b[8:].any()


@pytest.mark.parametrize("seed", range(20))
def test_lstm_matches_scalar_loop(seed):
    rng = np.random.default_rng(200 + seed)
    p = LstmLayerParams(5, 4, rng)
    for t in p.parameters():
        t.data = rng.normal(scale=0.6, size=t.shape).astype(np.float32)
    x = rng.normal(size=(3, 5))
    h0, c0 = rng.normal(size=4), rng.normal(size=4)
    out, (h, c) = lstm_forward(Tensor(x, dtype=np.float64), as64(p),
                               (Tensor(h0, dtype=np.float64), Tensor(c0, dtype=np.float64)))
    ref_out, ref_h, ref_c = lstm_loop(x, p, h0, c0)
    assert np.abs(out.data - ref_out).max() < 1e-5
    assert np.abs(h.data - ref_h).max() < 1e-5 and np.abs(c.data - ref_c).max() < 1e-5


def test_lstm_state_carries_across_chunks(lstm_params):
    x = np.random.default_rng(7).normal(size=(2, 6, 5)).astype(np.float32)
    whole, _ = lstm_forward(Tensor(x), lstm_params)
    first, state = lstm_forward(Tensor(x[:, :4]), lstm_params)
    second, _ = lstm_forward(Tensor(x[:, 4:]), lstm_params, state)
    assert np.allclose(np.concatenate([first.data, second.data], 1), whole.data, atol=1e-6)


def test_lstm_bad_state_shape(lstm_params):
    bad = (Tensor(np.zeros(3)), Tensor(np.zeros(3)))
    with pytest.raises(StateError):
        lstm_forward(Tensor(np.zeros((2, 5))), lstm_params, bad)


def test_lstm_gradients(lstm_params):
    p = as64(lstm_params)
    x = Tensor(np.random.default_rng(8).normal(size=(2, 3, 5)), dtype=np.float64, requires_grad=True)

    def loss(_):
        out, _ = lstm_forward(x, p)
        return T.sum_all(T.mul(out, out))

    with T.new_tape() as tape:
        T.backward(loss(None), tape)
    for t in [x] + p.parameters():
        assert T.relative_error(t.grad, T.finite_difference_grad(loss, t).data).max() < 1e-3


# -- output projection ------------------------------------------------------

def test_tied_identity_logits():
    table = EmbeddingTable(4, 4)
    table.weight.data = np.eye(4, dtype=np.float32)
    assert np.array_equal(output_logits(Tensor(np.eye(4)[[1, 3]]), table).data, np.eye(4)[[1, 3]])


def test_tied_matches_untied_transpose():
    rng = np.random.default_rng(9)
    tied = EmbeddingTable(7, 4, rng=rng)
    untied = EmbeddingTable(7, 4, tied_output=False)
    o = Tensor(rng.normal(size=(3, 4)))
    proj = Tensor(tied.weight.data.T.copy())
    assert np.array_equal(output_logits(o, tied).data, output_logits(o, untied, proj).data)


def test_projection_matches_matmul():
    rng = np.random.default_rng(10)
    table = EmbeddingTable(6, 4, tied_output=False)
    o, proj = rng.normal(size=(5, 4)), rng.normal(size=(4, 6))
    got = output_logits(Tensor(o, dtype=np.float64), table, Tensor(proj, dtype=np.float64)).data
    assert np.allclose(got, o @ proj)


def test_projection_configuration_errors():
    o = Tensor(np.zeros((1, 4)))
    with pytest.raises(ConfigError):
        output_logits(o, EmbeddingTable(6, 4), Tensor(np.zeros((4, 6))))
    with pytest.raises(ConfigError):
        output_logits(o, EmbeddingTable(6, 4, tied_output=False))
