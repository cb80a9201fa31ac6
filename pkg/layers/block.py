"""
Transformer Block
Pre-norm attention sublayer (MHA or MLA) followed by a dense or DeepSeekMoE FFN sublayer
"""

from dataclasses import dataclass
from typing import Dict, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from attention.attention_config import AttentionConfig, MhaWeights, MlaWeights
from attention.kv_cache import LatentKVCache, MhaKVCache
from attention.mha import mha_decode_step, mha_forward
from attention.mla import InferenceCounters, mla_forward_infer, mla_forward_train
from layers.norm import RMSNorm
from moe.moe_config import MoeLayerConfig
from moe.moe_layer import FeedForward, MoeExperts, moe_forward
from moe.router import RouterState
from tensor_core.errors import DimensionError
from tensor_core.tensor import Tensor, concat, no_grad


class BlockConfig(BaseModel):
    """Shape of one block; attention.d and moe.d must agree"""

    model_config = ConfigDict(extra='forbid', frozen=True)

    attention: AttentionConfig = Field(default_factory=AttentionConfig)
    attention_variant: Literal["mha", "mla"] = "mla"
    ffn: Literal["dense", "moe"] = "moe"
    moe: MoeLayerConfig = Field(default_factory=MoeLayerConfig)
    dense_inner: int = Field(default=128, gt=0, description="Inner dim of the dense FFN")
    init_std: float = Field(default=0.02, gt=0)

    @model_validator(mode='after')
    def _check_widths(self):
        if self.moe.d != self.attention.d:
            raise ValueError(f"moe.d={self.moe.d} differs from attention.d={self.attention.d}")
        return self

    @property
    def d(self) -> int:
        return self.attention.d


KVCache = Union[LatentKVCache, MhaKVCache]


@dataclass
class TransformerBlock:
    attn_norm: RMSNorm
    ffn_norm: RMSNorm
    attention: Union[MhaWeights, MlaWeights]
    experts: Optional[MoeExperts] = None
    router: Optional[RouterState] = None
    dense: Optional[FeedForward] = None

    @classmethod
    def init(cls, cfg: BlockConfig, seed: int, prefix: str) -> "TransformerBlock":
        weights_cls = MlaWeights if cfg.attention_variant == "mla" else MhaWeights
        attention = weights_cls.init(cfg.attention, seed, f"{prefix}.attn", cfg.init_std, zero_output=True)
        block = cls(attn_norm=RMSNorm.init(cfg.d, f"{prefix}.attn_norm"),
                    ffn_norm=RMSNorm.init(cfg.d, f"{prefix}.ffn_norm"),
                    attention=attention)
        if cfg.ffn == "moe":
            block.experts = MoeExperts.init(cfg.moe, seed, f"{prefix}.moe", cfg.init_std, zero_output=True)
            block.router = RouterState.init(cfg.moe, seed, f"{prefix}.router", cfg.init_std)
        else:
            block.dense = FeedForward.init(cfg.d, cfg.dense_inner, seed, f"{prefix}.ffn",
                                           cfg.moe.activation, cfg.init_std, zero_output=True)
        return block

    def parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        params = {}
        params.update(self.attn_norm.parameters(f"{prefix}attn_norm."))
        params.update(self.ffn_norm.parameters(f"{prefix}ffn_norm."))
        params.update(self.attention.parameters(f"{prefix}attn."))
        if self.experts is not None:
            params.update(self.experts.parameters(f"{prefix}moe."))
            params[f"{prefix}router.centroids"] = self.router.centroids
        if self.dense is not None:
            params.update(self.dense.parameters(f"{prefix}ffn."))
        return params

    def _attend(self, x: Tensor, cfg: BlockConfig) -> Tensor:
        if cfg.attention_variant == "mla":
            return mla_forward_train(x, self.attention, cfg.attention, emit_cache=False)[0]
        return mha_forward(x, self.attention, cfg.attention)

    def _feed_forward(self, u: Tensor, cfg: BlockConfig, record: bool) -> Tuple[Tensor, Tensor]:
        normed = self.ffn_norm(u)
        if self.experts is not None:
            return moe_forward(normed, self.experts, self.router, cfg.moe, residual=u, record=record)
        return u + self.dense(normed), Tensor(0.0)

    def forward(self, h: Tensor, seq_len: int, cfg: BlockConfig,
                record: bool = True) -> Tuple[Tensor, Tensor]:
        """h holds B sequences of seq_len tokens stacked as [B*seq_len, d].

        Attention runs per sequence; the FFN sublayer sees every token of the
        batch at once, so one call is one routing window.
        """
        if h.ndim != 2 or h.shape[1] != cfg.d or (seq_len and h.shape[0] % seq_len):
            raise DimensionError(f"block input {h.shape} is not a stack of {seq_len}-token sequences")
        normed = self.attn_norm(h)
        n_seq = h.shape[0] // seq_len if seq_len else 0
        pieces = [self._attend(normed[b * seq_len:(b + 1) * seq_len], cfg) for b in range(n_seq)]
        attn_out = pieces[0] if len(pieces) == 1 else concat(pieces, axis=0)
        return self._feed_forward(h + attn_out, cfg, record)

    def decode_step(self, h_t: np.ndarray, cfg: BlockConfig, cache: KVCache, layer: int,
                    counters: Optional[InferenceCounters] = None) -> np.ndarray:
        """Incremental step for one token using the KV cache of this block's layer"""
        with no_grad():
            normed = self.attn_norm(Tensor(h_t.reshape(1, -1))).data.reshape(-1)
            if cfg.attention_variant == "mla":
                attn_out = mla_forward_infer(normed, self.attention, cfg.attention, cache, layer, counters)
            else:
                attn_out = mha_decode_step(normed, self.attention, cfg.attention, cache, layer, counters)
            u = Tensor((h_t + attn_out).reshape(1, -1))
            out, _ = self._feed_forward(u, cfg, record=False)
        return out.data.reshape(-1)


def new_cache(cfg: BlockConfig, n_layers: int) -> KVCache:
    if cfg.attention_variant == "mla":
        return LatentKVCache(cfg.attention, n_layers=n_layers)
    return MhaKVCache(cfg.attention, n_layers=n_layers)
