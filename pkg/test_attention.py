#!/usr/bin/env python
"""
Tests for MHA, MLA (training and absorbed inference paths), RoPE and KV-cache accounting
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

# Add parent directory to path
sys.path.append(str(Path(__file__).parent))

from attention import (
    AttentionConfig, InferenceCounters, LatentKVCache, MhaKVCache, MhaWeights, MlaWeights,
    cache_size_table, kv_cache_size, mha_decode_step, mha_forward, mla_decode_sequence,
    mla_forward_infer, mla_forward_train, rope_apply, rope_array
)
from tensor_core import ContractError, DimensionError, Tensor, gradcheck, mul, sum_


def rotate(vec: np.ndarray, position: int, head_dim: int, base: float = 10000.0) -> np.ndarray:
    """Pair rotation written out element by element"""
    out = np.array(vec, dtype=float)
    for start in range(0, len(vec), head_dim):
        for m in range(head_dim // 2):
            theta = position * base ** (-2.0 * m / head_dim)
            a, b = vec[start + 2 * m], vec[start + 2 * m + 1]
            out[start + 2 * m] = a * math.cos(theta) - b * math.sin(theta)
            out[start + 2 * m + 1] = a * math.sin(theta) + b * math.cos(theta)
    return out


def softmax(logits):
    e = np.exp(np.asarray(logits) - max(logits))
    return e / e.sum()


def mha_oracle(h: np.ndarray, w: MhaWeights, cfg: AttentionConfig) -> np.ndarray:
    T = h.shape[0]
    rows = []
    for t in range(T):
        heads = []
        for i in range(cfg.n_h):
            sl = slice(i * cfg.d_h, (i + 1) * cfg.d_h)
            q = w.w_q.data @ h[t]
            if cfg.mha_rope:
                q = rotate(q, t, cfg.d_h)
            logits, values = [], []
            for j in range(t + 1):
                k = w.w_k.data @ h[j]
                if cfg.mha_rope:
                    k = rotate(k, j, cfg.d_h)
                logits.append(q[sl] @ k[sl] / math.sqrt(cfg.d_h))
                values.append((w.w_v.data @ h[j])[sl])
            heads.append(sum(a * v for a, v in zip(softmax(logits), values)))
        rows.append(w.w_o.data @ np.concatenate(heads))
    return np.array(rows)


def mla_oracle(h: np.ndarray, w: MlaWeights, cfg: AttentionConfig) -> np.ndarray:
    T, d_h, d_r = h.shape[0], cfg.d_h, cfg.d_h_r
    rows = []
    for t in range(T):
        c_q = w.w_dq.data @ h[t]
        q_c = w.w_uq.data @ c_q
        q_r = rotate(w.w_qr.data @ c_q, t, d_r) if d_r else None
        heads = []
        for i in range(cfg.n_h):
            sl = slice(i * d_h, (i + 1) * d_h)
            logits, values = [], []
            for j in range(t + 1):
                c_kv = w.w_dkv.data @ h[j]
                k_c = (w.w_uk.data @ c_kv)[sl]
                logit = q_c[sl] @ k_c
                if d_r:
                    k_r = rotate(w.w_kr.data @ h[j], j, d_r)
                    logit += q_r[i * d_r:(i + 1) * d_r] @ k_r
                logits.append(logit / math.sqrt(d_h + d_r))
                values.append((w.w_uv.data @ c_kv)[sl])
            heads.append(sum(a * v for a, v in zip(softmax(logits), values)))
        rows.append(w.w_o.data @ np.concatenate(heads))
    return np.array(rows)


def random_config(rng: np.random.Generator) -> AttentionConfig:
    n_h = int(rng.integers(1, 4))
    d_h = int(rng.choice([2, 4, 6]))
    width = n_h * d_h
    return AttentionConfig(
        d=int(rng.integers(4, 25)),
        n_h=n_h,
        d_h=d_h,
        d_c=int(rng.integers(1, width + 1)),
        d_c_q=int(rng.integers(1, width)),
        d_h_r=int(rng.choice([0, 2, 4])),
        l=1,
    )


SMALL = AttentionConfig(d=16, n_h=2, d_h=4, d_c=8, d_c_q=6, d_h_r=2, l=1)


# -- rope ----------------------------------------------------------------

def test_rope_position_zero_is_identity():
    x = np.random.default_rng(0).standard_normal((3, 8))
    np.testing.assert_array_equal(rope_array(x, 0), x)


def test_rope_preserves_norm():
    rng = np.random.default_rng(1)
    for m in (1, 7, 300):
        x = rng.standard_normal(16)
        assert np.linalg.norm(rope_array(x, m)) == pytest.approx(np.linalg.norm(x), rel=1e-12)


@pytest.mark.parametrize("head_dim", [2, 8, 16])
def test_rope_depends_on_relative_position_only(head_dim):
    rng = np.random.default_rng(head_dim)
    q, k = rng.standard_normal(head_dim), rng.standard_normal(head_dim)
    i, j = 3, 11
    reference = rope_array(q, i) @ rope_array(k, j)
    for shift in (1, 5, 17):
        shifted = rope_array(q, i + shift) @ rope_array(k, j + shift)
        assert abs(shifted - reference) < 1e-10


def test_rope_per_head_layout_matches_written_out_rotation():
    x = np.random.default_rng(2).standard_normal(12)
    np.testing.assert_allclose(rope_array(x, 5, head_dim=4), rotate(x, 5, 4), atol=1e-14)


def test_rope_tape_and_array_paths_agree():
    x = np.random.default_rng(3).standard_normal((5, 8))
    positions = np.arange(5)
    np.testing.assert_array_equal(rope_apply(Tensor(x), positions, head_dim=4).data,
                                  rope_array(x, positions, head_dim=4))


def test_rope_rejects_odd_heads():
    with pytest.raises(DimensionError):
        rope_array(np.zeros(6), 1, head_dim=3)


# -- config --------------------------------------------------------------

def test_config_rejects_inconsistent_dims():
    with pytest.raises(ValidationError):
        AttentionConfig(d=8, n_h=2, d_h=4, d_c=9, d_c_q=4, d_h_r=2)
    with pytest.raises(ValidationError):
        AttentionConfig(d=8, n_h=2, d_h=4, d_c=4, d_c_q=8, d_h_r=2)
    with pytest.raises(ValidationError):
        AttentionConfig(d=8, n_h=2, d_h=4, d_c=4, d_c_q=4, d_h_r=3)


def test_config_allows_uncompressed_latent():
    assert AttentionConfig(d=8, n_h=2, d_h=4, d_c=8, d_c_q=4, d_h_r=2).d_c == 8


def test_weight_shapes_are_checked():
    weights = MlaWeights.init(SMALL, 0)
    weights.w_uk = Tensor(np.zeros((3, 3)))
    with pytest.raises(DimensionError):
        weights.validate(SMALL)


# -- mha -----------------------------------------------------------------

def test_mha_single_token_returns_projected_value():
    cfg = AttentionConfig(d=8, n_h=2, d_h=4, d_c=4, d_c_q=4, d_h_r=2)
    w = MhaWeights.init(cfg, 0, std=0.3)
    h = np.random.default_rng(0).standard_normal((1, 8))
    expected = w.w_o.data @ (w.w_v.data @ h[0])
    np.testing.assert_allclose(mha_forward(Tensor(h), w, cfg).data[0], expected, atol=1e-12)


def test_mha_identical_tokens_give_identical_rows():
    cfg = AttentionConfig(d=8, n_h=2, d_h=4, d_c=4, d_c_q=4, d_h_r=2)
    w = MhaWeights.init(cfg, 4, std=0.3)
    h = np.tile(np.random.default_rng(1).standard_normal(8), (5, 1))
    u = mha_forward(Tensor(h), w, cfg).data
    np.testing.assert_allclose(u, np.tile(u[0], (5, 1)), atol=1e-12)


@pytest.mark.parametrize("mha_rope", [True, False])
def test_mha_matches_loop_oracle(mha_rope):
    cfg = AttentionConfig(d=8, n_h=2, d_h=4, d_c=4, d_c_q=4, d_h_r=2, mha_rope=mha_rope)
    for seed in range(5):
        w = MhaWeights.init(cfg, seed, std=0.5)
        h = np.random.default_rng(seed).standard_normal((4, 8))
        np.testing.assert_allclose(mha_forward(Tensor(h), w, cfg).data, mha_oracle(h, w, cfg),
                                   rtol=1e-10, atol=1e-12)


def test_mha_attention_rows_sum_to_one():
    cfg = AttentionConfig(d=8, n_h=2, d_h=4, d_c=4, d_c_q=4, d_h_r=2)
    w = MhaWeights.init(cfg, 0, std=1.0)
    h = np.random.default_rng(0).standard_normal((6, 8))
    _, weights = mha_forward(Tensor(h), w, cfg, return_attention=True)
    for attn in weights:
        np.testing.assert_allclose(attn.data.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(np.triu(attn.data, k=1) == 0)


def test_mha_empty_and_bad_shapes():
    cfg = AttentionConfig(d=8, n_h=2, d_h=4, d_c=4, d_c_q=4, d_h_r=2)
    w = MhaWeights.init(cfg, 0)
    assert mha_forward(Tensor(np.zeros((0, 8))), w, cfg).shape == (0, 8)
    with pytest.raises(DimensionError):
        mha_forward(Tensor(np.zeros((3, 7))), w, cfg)


def test_mha_decode_steps_match_full_forward():
    cfg = AttentionConfig(d=8, n_h=2, d_h=4, d_c=4, d_c_q=4, d_h_r=2, l=1)
    w = MhaWeights.init(cfg, 2, std=0.5)
    h = np.random.default_rng(2).standard_normal((6, 8))
    cache = MhaKVCache(cfg)
    rows = np.stack([mha_decode_step(h[t], w, cfg, cache) for t in range(6)])
    np.testing.assert_allclose(rows, mha_forward(Tensor(h), w, cfg).data, rtol=1e-9, atol=1e-12)
    assert cache.stored_scalars() == 6 * kv_cache_size(cfg, "mha")


# -- mla -----------------------------------------------------------------

def test_mla_matches_straight_line_oracle():
    for seed in range(5):
        w = MlaWeights.init(SMALL, seed, std=0.5)
        h = np.random.default_rng(seed).standard_normal((5, SMALL.d))
        u, _ = mla_forward_train(Tensor(h), w, SMALL)
        np.testing.assert_allclose(u.data, mla_oracle(h, w, SMALL), rtol=1e-10, atol=1e-12)


def test_mla_without_decoupled_rope():
    cfg = AttentionConfig(d=16, n_h=2, d_h=4, d_c=8, d_c_q=6, d_h_r=0, l=1)
    w = MlaWeights.init(cfg, 0, std=0.5)
    assert w.w_kr is None and w.w_qr is None
    h = np.random.default_rng(0).standard_normal((4, 16))
    u, cache = mla_forward_train(Tensor(h), w, cfg)
    np.testing.assert_allclose(u.data, mla_oracle(h, w, cfg), rtol=1e-10, atol=1e-12)
    assert cache.stored_scalars(0) == 4 * 8


def test_mla_cache_growth():
    w = MlaWeights.init(SMALL, 0)
    for T in (1, 3, 7):
        h = np.random.default_rng(T).standard_normal((T, SMALL.d))
        _, cache = mla_forward_train(Tensor(h), w, SMALL)
        assert cache.length(0) == T
        assert cache.stored_scalars(0) == T * (SMALL.d_c + SMALL.d_h_r)
        assert cache.stored_scalars() == T * kv_cache_size(SMALL, "mla")


def test_mla_training_path_needs_empty_cache():
    w = MlaWeights.init(SMALL, 0)
    h = Tensor(np.random.default_rng(0).standard_normal((2, SMALL.d)))
    _, cache = mla_forward_train(h, w, SMALL)
    with pytest.raises(ContractError):
        mla_forward_train(h, w, SMALL, cache=cache)
    u, none = mla_forward_train(h, w, SMALL, emit_cache=False)
    assert none is None and u.shape == (2, SMALL.d)


def test_mla_attention_rows_sum_to_one():
    w = MlaWeights.init(SMALL, 1, std=1.0)
    h = np.random.default_rng(1).standard_normal((6, SMALL.d))
    _, _, weights = mla_forward_train(Tensor(h), w, SMALL, return_attention=True)
    assert len(weights) == SMALL.n_h
    for attn in weights:
        np.testing.assert_allclose(attn.data.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("variant", ["mha", "mla"])
def test_causality(variant):
    rng = np.random.default_rng(5)
    h = rng.standard_normal((6, SMALL.d))
    if variant == "mha":
        w = MhaWeights.init(SMALL, 5, std=0.5)
        run = lambda x: mha_forward(Tensor(x), w, SMALL).data
    else:
        w = MlaWeights.init(SMALL, 5, std=0.5)
        run = lambda x: mla_forward_train(Tensor(x), w, SMALL)[0].data
    base = run(h)
    for t in range(5):
        perturbed = h.copy()
        perturbed[t + 1] += rng.standard_normal(SMALL.d)
        out = run(perturbed)
        np.testing.assert_array_equal(out[:t + 1], base[:t + 1])
        assert not np.allclose(out[t + 1], base[t + 1])


def test_single_token_infer_equals_train():
    w = MlaWeights.init(SMALL, 3, std=0.5)
    h = np.random.default_rng(3).standard_normal((1, SMALL.d))
    u, _ = mla_forward_train(Tensor(h), w, SMALL)
    cache = LatentKVCache(SMALL)
    out = mla_forward_infer(h[0], w, SMALL, cache)
    np.testing.assert_allclose(out, u.data[0], rtol=1e-10, atol=1e-12)


def test_infer_equals_train_for_eight_tokens():
    w = MlaWeights.init(SMALL, 8, std=0.5)
    h = np.random.default_rng(8).standard_normal((8, SMALL.d))
    u, train_cache = mla_forward_train(Tensor(h), w, SMALL)
    rows, infer_cache = mla_decode_sequence(h, w, SMALL)
    np.testing.assert_allclose(rows, u.data, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(infer_cache.latents(0)[0], train_cache.latents(0)[0], atol=1e-12)
    np.testing.assert_allclose(infer_cache.latents(0)[1], train_cache.latents(0)[1], atol=1e-12)


def test_infer_equals_train_over_random_configs():
    rng = np.random.default_rng(2024)
    for draw in range(60):
        cfg = random_config(rng)
        w = MlaWeights.init(cfg, draw, std=0.5)
        h = rng.standard_normal((int(rng.integers(1, 9)), cfg.d))
        u, _ = mla_forward_train(Tensor(h), w, cfg)
        rows, _ = mla_decode_sequence(h, w, cfg)
        np.testing.assert_allclose(rows, u.data, rtol=1e-9, atol=1e-12, err_msg=f"draw {draw}: {cfg}")


def test_inference_reads_only_latents():
    w = MlaWeights.init(SMALL, 0)
    h = np.random.default_rng(0).standard_normal((5, SMALL.d))
    counters = InferenceCounters()
    mla_decode_sequence(h, w, SMALL, counters)
    per_token = SMALL.d_c + SMALL.d_h_r
    assert counters.steps == 5
    assert counters.latent_reads == [(s + 1) * per_token for s in range(5)]
    assert counters.full_width_reads == 0
    assert per_token < 2 * SMALL.width


def test_mha_decoding_counts_full_width_reads():
    cfg = AttentionConfig(d=8, n_h=2, d_h=4, d_c=4, d_c_q=4, d_h_r=2, l=1)
    w = MhaWeights.init(cfg, 2, std=0.5)
    h = np.random.default_rng(2).standard_normal((4, 8))
    counters = InferenceCounters()
    cache = MhaKVCache(cfg)
    for t in range(4):
        mha_decode_step(h[t], w, cfg, cache, counters=counters)
    assert counters.full_width_reads == 2 * cfg.width * (1 + 2 + 3 + 4)
    assert counters.steps == 0


def test_cache_keeps_every_row_in_order_as_it_grows():
    cache = LatentKVCache(SMALL)
    rng = np.random.default_rng(5)
    c_kv = rng.standard_normal((100, SMALL.d_c))
    k_r = rng.standard_normal((100, SMALL.d_h_r))
    for t in range(100):
        cache.append(0, c_kv[t], k_r[t])
        if t == 16:
            early = cache.latents(0)[0].copy()
    latents, rope_keys = cache.latents(0)
    np.testing.assert_array_equal(latents, c_kv)
    np.testing.assert_array_equal(rope_keys, k_r)
    np.testing.assert_array_equal(early, c_kv[:17])
    assert cache.length(0) == 100
    assert cache.stored_scalars(0) == 100 * (SMALL.d_c + SMALL.d_h_r)


def test_latent_cache_needs_decoupled_key():
    cache = LatentKVCache(SMALL)
    with pytest.raises(ContractError):
        cache.append(0, np.zeros(SMALL.d_c), None)
    with pytest.raises(DimensionError):
        cache.append(0, np.zeros(SMALL.d_c + 1), np.zeros(SMALL.d_h_r))


@pytest.mark.parametrize("seed", range(20))
def test_mla_gradients_match_finite_differences(seed):
    cfg = AttentionConfig(d=6, n_h=2, d_h=2, d_c=3, d_c_q=2, d_h_r=2, l=1)
    w = MlaWeights.init(cfg, seed, std=0.5)
    rng = np.random.default_rng(seed)
    h = Tensor(rng.standard_normal((3, 6)))
    cotangent = rng.standard_normal((3, 6))
    params = w.parameters()
    assert set(params) == {"w_dkv", "w_uk", "w_uv", "w_dq", "w_uq", "w_o", "w_qr", "w_kr"}
    errors = gradcheck(lambda: sum_(mul(mla_forward_train(h, w, cfg, emit_cache=False)[0], cotangent)), params)
    assert max(errors.values()) < 1e-4, errors


# -- cache accounting ----------------------------------------------------

def test_default_cache_sizes():
    cfg = AttentionConfig()
    assert kv_cache_size(cfg, "mha") == 256
    assert kv_cache_size(cfg, "mla") == 144


def test_mla_cache_is_four_and_a_half_head_dims_per_layer():
    for d_h in (4, 8, 12, 16, 32):
        for l in (1, 2, 3, 5):
            cfg = AttentionConfig(d=8, n_h=4, d_h=d_h, d_c=4 * d_h, d_c_q=d_h, d_h_r=d_h // 2, l=l)
            assert 2 * kv_cache_size(cfg, "mla") == 9 * d_h * l
            assert kv_cache_size(cfg, "mha") == 2 * 4 * d_h * l


def test_unknown_variant():
    with pytest.raises(ContractError):
        kv_cache_size(AttentionConfig(), "gqa")


def test_cache_size_table():
    table = cache_size_table(AttentionConfig(), seq_len=1024)
    assert list(table["variant"]) == ["mha", "mla"]
    assert list(table["scalars_per_token"]) == [256, 144]
    assert list(table["scalars_per_sequence"]) == [256 * 1024, 144 * 1024]
    assert table.loc[1, "per_token_over_d_h_l"] == 4.5
    assert table.loc[1, "ratio_to_mha"] == pytest.approx(144 / 256)
