"""
Attention Package
MHA baseline, Multi-Head Latent Attention, RoPE and KV-cache accounting
"""

from .attention_config import AttentionConfig, MhaWeights, MlaWeights
from .kv_cache import LatentKVCache, MhaKVCache, cache_size_table, kv_cache_size
from .mha import causal_mask, mha_decode_step, mha_forward
from .mla import InferenceCounters, mla_decode_sequence, mla_forward_infer, mla_forward_train
from .rope import rope_angles, rope_apply, rope_array

__all__ = [
    'AttentionConfig', 'MhaWeights', 'MlaWeights',
    'LatentKVCache', 'MhaKVCache', 'cache_size_table', 'kv_cache_size',
    'causal_mask', 'mha_decode_step', 'mha_forward',
    'InferenceCounters', 'mla_decode_sequence', 'mla_forward_infer', 'mla_forward_train',
    'rope_angles', 'rope_apply', 'rope_array'
]
