"""
Multi-Head Attention
Causal MHA baseline with optional RoPE on full queries and keys, plus its incremental decode step
"""

import math
from typing import List, Optional, Tuple, Union

import numpy as np

from attention.attention_config import AttentionConfig, MhaWeights
from attention.kv_cache import InferenceCounters, MhaKVCache
from attention.rope import rope_apply, rope_array
from tensor_core.errors import DimensionError
from tensor_core.tensor import Tensor, concat, softmax_rows


def causal_mask(T: int) -> np.ndarray:
    """mask[t, j] is True when position t may attend to position j (j <= t)"""
    return np.tril(np.ones((T, T), dtype=bool))


def check_hidden(h: Tensor, cfg: AttentionConfig) -> int:
    if h.ndim != 2 or h.shape[1] != cfg.d:
        raise DimensionError(f"attention input: expected shape (T, {cfg.d}), got {h.shape}")
    return h.shape[0]


def head_slice(i: int, width: int) -> slice:
    return slice(i * width, (i + 1) * width)


def mha_forward(h: Tensor, w: MhaWeights, cfg: AttentionConfig,
                return_attention: bool = False
                ) -> Union[Tensor, Tuple[Tensor, List[Tensor]]]:
    """u = W_o [o_1; ...; o_nh] with o_i = softmax(q_i k_i^T / sqrt(d_h)) v_i under a causal mask"""
    T = check_hidden(h, cfg)
    if T == 0:
        empty = Tensor(np.zeros((0, cfg.d)))
        return (empty, []) if return_attention else empty

    q = h @ w.w_q.T
    k = h @ w.w_k.T
    v = h @ w.w_v.T
    if cfg.mha_rope:
        positions = np.arange(T)
        q = rope_apply(q, positions, cfg.rope_base, head_dim=cfg.d_h)
        k = rope_apply(k, positions, cfg.rope_base, head_dim=cfg.d_h)

    mask = causal_mask(T)
    scale = 1.0 / math.sqrt(cfg.d_h)
    heads, weights = [], []
    for i in range(cfg.n_h):
        sl = head_slice(i, cfg.d_h)
        attn = softmax_rows(q[:, sl] @ k[:, sl].T, scale=scale, mask=mask)
        weights.append(attn)
        heads.append(attn @ v[:, sl])

    u = concat(heads, axis=1) @ w.w_o.T
    return (u, weights) if return_attention else u


def mha_decode_step(h_t: np.ndarray, w: MhaWeights, cfg: AttentionConfig,
                    cache: MhaKVCache, layer: int = 0,
                    counters: Optional[InferenceCounters] = None) -> np.ndarray:
    """One incremental MHA step; appends this token's key and value before attending"""
    h_t = np.asarray(h_t.data if isinstance(h_t, Tensor) else h_t).reshape(-1)
    if h_t.shape[0] != cfg.d:
        raise DimensionError(f"decode step: expected a token of width {cfg.d}, got {h_t.shape}")
    position = cache.length(layer)

    q = w.w_q.data @ h_t
    k = w.w_k.data @ h_t
    v = w.w_v.data @ h_t
    if cfg.mha_rope:
        q = rope_array(q, position, cfg.rope_base, head_dim=cfg.d_h)
        k = rope_array(k, position, cfg.rope_base, head_dim=cfg.d_h)
    cache.append(layer, k, v)
    keys, values = cache.entries(layer)
    if counters is not None:
        counters.record_full_width(keys.size + values.size)

    q_heads = q.reshape(cfg.n_h, cfg.d_h)
    k_heads = keys.reshape(-1, cfg.n_h, cfg.d_h)
    v_heads = values.reshape(-1, cfg.n_h, cfg.d_h)
    logits = np.einsum("hd,thd->ht", q_heads, k_heads) / math.sqrt(cfg.d_h)
    logits -= logits.max(axis=1, keepdims=True)
    attn = np.exp(logits)
    attn /= attn.sum(axis=1, keepdims=True)
    out = np.einsum("ht,thd->hd", attn, v_heads).reshape(-1)
    return w.w_o.data @ out
