"""
Layers Package
Blocks shared by the main stack and the multi-token prediction depths
"""

from .norm import RMSNorm
from .head import Embedding, OutputHead
from .block import BlockConfig, TransformerBlock, new_cache

__all__ = ['RMSNorm', 'Embedding', 'OutputHead', 'BlockConfig', 'TransformerBlock', 'new_cache']
