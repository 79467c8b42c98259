"""Tests for the gated conditioning layers and fused-sequence masks."""

import numpy as np
import pytest

from tempocast.conditioning import ConditioningLayer, default_insert_layers, fused_mask
from tempocast.errors import ConfigError
from tempocast.params import ParamRegistry, make_rng
from tempocast.tensor import Tensor


def layer(seed=0, width=8, heads=1, scope="sequence"):
    reg = ParamRegistry()
    c = ConditioningLayer(reg, 0, width, heads=heads, ffn_scope=scope, rng=make_rng(seed, 99))
    return c, reg


def rnd(seed, *shape):
    return make_rng(seed, 0).normal(size=shape)


def test_default_insert_layers():
    assert default_insert_layers(6) == [1, 3, 5]
    assert default_insert_layers(2) == [1]
    assert default_insert_layers(1) == [0]
    assert default_insert_layers(5) == [2, 4]
    assert default_insert_layers(8) == [1, 3, 5, 7]


def test_fused_mask_suffix_global():
    m = fused_mask(3, 2, "suffix-global")
    assert m.shape == (5, 5)
    # patch block is causal
    assert np.isneginf(m[0, 1]) and m[1, 0] == 0.0
    # every patch sees every token
    assert np.all(m[:3, 3:] == 0.0)
    # tokens never read patches, but see each other
    assert np.all(np.isneginf(m[3:, :3]))
    assert np.all(m[3:, 3:] == 0.0)


def test_fused_mask_prefix_is_plain_causal():
    m = fused_mask(3, 2, "prefix")
    want = np.zeros((5, 5))
    want[np.triu_indices(5, k=1)] = -np.inf
    assert np.array_equal(m, want)


def test_fused_mask_unknown_mode():
    with pytest.raises(ConfigError):
        fused_mask(3, 2, "bidirectional")


def test_gates_init_half():
    c, _ = layer()
    assert c.gates() == (0.5, 0.5)


def test_gate_value_tracks_parameter():
    c, _ = layer()
    c.gate_attn.data[...] = np.log(3.0)
    g1, g2 = c.gates()
    assert abs(g1 - 0.75) < 1e-12
    assert g2 == 0.5


def test_cross_attend_single_bank_row_broadcast():
    c, _ = layer(seed=1)
    tokens = Tensor(rnd(2, 3, 8))
    bank = Tensor(rnd(3, 1, 8))
    out = c.cross_attend(tokens, bank).data
    # one key: softmax weight is 1 and every token receives the same value row
    vrow = bank.data @ c.wv.data
    want = tokens.data + 0.5 * np.repeat(vrow, 3, axis=0)
    assert np.max(np.abs(out - want)) < 1e-12


def test_cross_attend_matches_numpy_oracle():
    c, _ = layer(seed=3)
    tokens = rnd(4, 2, 8)
    bank = rnd(5, 5, 8)
    mu = tokens.mean(axis=1, keepdims=True)
    var = ((tokens - mu) ** 2).mean(axis=1, keepdims=True)
    q = ((tokens - mu) / np.sqrt(var + 1e-5) * c.qn_g.data + c.qn_b.data) @ c.wq.data
    k = bank @ c.wk.data
    v = bank @ c.wv.data
    scores = q @ k.T / np.sqrt(8.0)
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    want = tokens + 0.5 * (e / e.sum(axis=1, keepdims=True)) @ v
    got = c.cross_attend(Tensor(tokens), Tensor(bank)).data
    assert np.max(np.abs(got - want)) < 1e-12


def test_cross_attend_multi_head_shapes():
    c, _ = layer(seed=6, heads=2)
    out = c.cross_attend(Tensor(rnd(7, 3, 8)), Tensor(rnd(8, 4, 8)))
    assert out.data.shape == (3, 8)


def test_gated_ffn_oracle():
    c, _ = layer(seed=9)
    h = rnd(10, 4, 8)
    mu = h.mean(axis=1, keepdims=True)
    var = ((h - mu) ** 2).mean(axis=1, keepdims=True)
    n = (h - mu) / np.sqrt(var + 1e-5) * c.fn_g.data + c.fn_b.data
    z = n @ c.w1.data + c.b1.data
    t = np.tanh(np.sqrt(2 / np.pi) * (z + 0.044715 * z**3))
    f = (0.5 * z * (1 + t)) @ c.w2.data + c.b2.data
    want = h + 0.5 * f
    got = c.gated_ffn(Tensor(h)).data
    assert np.max(np.abs(got - want)) < 1e-12


def test_apply_token_scope_leaves_patches_untouched():
    c, _ = layer(seed=11, scope="tokens")
    h = rnd(12, 5, 8)
    bank = rnd(13, 2, 8)
    out = c.apply(Tensor(h), Tensor(bank), 3, 2, "suffix-global").data
    assert np.array_equal(out[:3], h[:3])
    assert not np.array_equal(out[3:], h[3:])


def test_apply_sequence_scope_touches_patches():
    c, _ = layer(seed=14)
    h = rnd(15, 5, 8)
    bank = rnd(16, 2, 8)
    out = c.apply(Tensor(h), Tensor(bank), 3, 2, "suffix-global").data
    assert not np.array_equal(out[:3], h[:3])


def test_apply_prefix_layout():
    c, _ = layer(seed=17)
    h = rnd(18, 5, 8)
    bank = rnd(19, 2, 8)
    out = c.apply(Tensor(h), Tensor(bank), 3, 2, "prefix").data
    assert out.shape == (5, 8)
    # token rows come first in prefix layout; patch rows only get the ffn
    c2, _ = layer(seed=17, scope="tokens")
    out2 = c2.apply(Tensor(h), Tensor(bank), 3, 2, "prefix").data
    assert np.array_equal(out2[2:], h[2:])


def test_closed_attention_gate_blocks_bank_exactly():
    c, _ = layer(seed=20)
    c.gate_attn.data[...] = -np.inf
    h = Tensor(rnd(21, 5, 8))
    b1 = Tensor(rnd(22, 3, 8))
    b2 = Tensor(rnd(23, 3, 8))
    o1 = c.apply(h, b1, 3, 2, "suffix-global").data
    o2 = c.apply(h, b2, 3, 2, "suffix-global").data
    assert np.array_equal(o1, o2)


def test_zero_tokens_is_bank_independent():
    c, _ = layer(seed=24)
    h = Tensor(rnd(25, 3, 8))
    o1 = c.apply(h, Tensor(rnd(26, 2, 8)), 3, 0, "suffix-global").data
    o2 = c.apply(h, Tensor(rnd(27, 2, 8)), 3, 0, "suffix-global").data
    assert np.array_equal(o1, o2)


def test_width_heads_mismatch():
    reg = ParamRegistry()
    with pytest.raises(ConfigError):
        ConditioningLayer(reg, 0, 8, heads=3, rng=make_rng(0, 99))
