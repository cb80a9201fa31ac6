"""
Multi-Head Latent Attention
Low-rank joint KV compression with decoupled RoPE; a training path on the tape and an
absorbed inference path that only ever reads cached latents
"""

import math
from typing import Optional, Tuple

import numpy as np

from attention.attention_config import AttentionConfig, MlaWeights
from attention.kv_cache import InferenceCounters, LatentKVCache
from attention.mha import causal_mask, check_hidden, head_slice
from attention.rope import rope_apply, rope_array
from tensor_core.errors import ContractError, DimensionError
from tensor_core.tensor import Tensor, concat, softmax_rows


def mla_forward_train(h: Tensor, w: MlaWeights, cfg: AttentionConfig,
                      cache: Optional[LatentKVCache] = None, layer: int = 0,
                      emit_cache: bool = True, return_attention: bool = False):
    """Full-sequence MLA on the tape.

    Returns (u, cache), or (u, cache, attention rows per head) when
    return_attention is set. With emit_cache=False nothing is cached and the
    cache slot is None.
    """
    T = check_hidden(h, cfg)
    w.validate(cfg)
    if emit_cache:
        if cache is None:
            cache = LatentKVCache(cfg, n_layers=max(cfg.l, layer + 1))
        if cache.length(layer) != 0:
            raise ContractError(f"training path needs an empty cache for layer {layer}")
    else:
        cache = None

    if T == 0:
        empty = Tensor(np.zeros((0, cfg.d)))
        return (empty, cache, []) if return_attention else (empty, cache)

    c_kv = h @ w.w_dkv.T
    k_c = c_kv @ w.w_uk.T
    v_c = c_kv @ w.w_uv.T
    c_q = h @ w.w_dq.T
    q_c = c_q @ w.w_uq.T

    d_h, d_r = cfg.d_h, cfg.d_h_r
    positions = np.arange(T)
    if d_r:
        q_r = rope_apply(c_q @ w.w_qr.T, positions, cfg.rope_base, head_dim=d_r)
        k_r = rope_apply(h @ w.w_kr.T, positions, cfg.rope_base)

    mask = causal_mask(T)
    scale = 1.0 / math.sqrt(d_h + d_r)
    heads, weights = [], []
    for i in range(cfg.n_h):
        sl = head_slice(i, d_h)
        if d_r:
            q_i = concat([q_c[:, sl], q_r[:, head_slice(i, d_r)]], axis=1)
            k_i = concat([k_c[:, sl], k_r], axis=1)
        else:
            q_i, k_i = q_c[:, sl], k_c[:, sl]
        attn = softmax_rows(q_i @ k_i.T, scale=scale, mask=mask)
        weights.append(attn)
        heads.append(attn @ v_c[:, sl])

    u = concat(heads, axis=1) @ w.w_o.T

    if cache is not None:
        for t in range(T):
            cache.append(layer, c_kv.data[t], k_r.data[t] if d_r else None)

    return (u, cache, weights) if return_attention else (u, cache)


def _absorbed_output(w: MlaWeights, cfg: AttentionConfig) -> np.ndarray:
    """W_o_i W_uv_i per head, shape [n_h, d, d_c]"""
    w_o = w.w_o.data.reshape(cfg.d, cfg.n_h, cfg.d_h)
    w_uv = w.w_uv.data.reshape(cfg.n_h, cfg.d_h, cfg.d_c)
    return np.einsum("dhk,hkc->hdc", w_o, w_uv)


def mla_forward_infer(new_token, w: MlaWeights, cfg: AttentionConfig,
                      cache: LatentKVCache, layer: int = 0,
                      counters: Optional[InferenceCounters] = None) -> np.ndarray:
    """Decode one token against the latent cache.

    The compressed logit q_c_i . (W_uk_i c_kv_j) is evaluated as
    (W_uk_i^T q_c_i) . c_kv_j, and the value path as (W_o_i W_uv_i) z_i with
    z_i the attention-weighted sum of cached latents.
    """
    h_t = np.asarray(new_token.data if isinstance(new_token, Tensor) else new_token).reshape(-1)
    if h_t.shape[0] != cfg.d:
        raise DimensionError(f"decode step: expected a token of width {cfg.d}, got {h_t.shape}")
    d_r = cfg.d_h_r
    position = cache.length(layer)

    c_kv = w.w_dkv.data @ h_t
    k_r = rope_array(w.w_kr.data @ h_t, position, cfg.rope_base) if d_r else None
    cache.append(layer, c_kv, k_r)
    latents, rope_keys = cache.latents(layer)
    if counters is not None:
        counters.record(latents.size + rope_keys.size)

    c_q = w.w_dq.data @ h_t
    q_c = (w.w_uq.data @ c_q).reshape(cfg.n_h, cfg.d_h)
    w_uk = w.w_uk.data.reshape(cfg.n_h, cfg.d_h, cfg.d_c)
    q_latent = np.einsum("hk,hkc->hc", q_c, w_uk)
    logits = q_latent @ latents.T
    if d_r:
        q_r = rope_array(w.w_qr.data @ c_q, position, cfg.rope_base, head_dim=d_r)
        logits = logits + q_r.reshape(cfg.n_h, d_r) @ rope_keys.T

    logits = logits / math.sqrt(cfg.d_h + d_r)
    logits -= logits.max(axis=1, keepdims=True)
    attn = np.exp(logits)
    attn /= attn.sum(axis=1, keepdims=True)

    z = attn @ latents
    return np.einsum("hdc,hc->d", _absorbed_output(w, cfg), z)


def mla_decode_sequence(h: np.ndarray, w: MlaWeights, cfg: AttentionConfig,
                        counters: Optional[InferenceCounters] = None
                        ) -> Tuple[np.ndarray, LatentKVCache]:
    """Run the inference path token by token over a [T, d] block from an empty cache"""
    h = np.asarray(h.data if isinstance(h, Tensor) else h)
    cache = LatentKVCache(cfg, n_layers=1)
    rows = [mla_forward_infer(h[t], w, cfg, cache, 0, counters) for t in range(h.shape[0])]
    out = np.stack(rows) if rows else np.zeros((0, cfg.d))
    return out, cache
