"""
Embedding and Output Head
Token embedding table and the final-norm + projection head shared with the MTP depths
"""

from dataclasses import dataclass
from typing import Dict

import numpy as np

from layers.norm import RMSNorm
from tensor_core.errors import DimensionError
from tensor_core.streams import normal_param
from tensor_core.tensor import Tensor, take_rows


@dataclass
class Embedding:
    weight: Tensor

    @classmethod
    def init(cls, vocab_size: int, d: int, seed: int, std: float = 0.02) -> "Embedding":
        return cls(weight=normal_param(seed, "embedding.weight", (vocab_size, d), std))

    def __call__(self, token_ids) -> Tensor:
        ids = np.asarray(token_ids, dtype=np.int64).reshape(-1)
        if ids.size and (ids.min() < 0 or ids.max() >= self.weight.shape[0]):
            raise DimensionError(f"token id outside vocabulary of size {self.weight.shape[0]}")
        return take_rows(self.weight, ids)

    def parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        return {f"{prefix}weight": self.weight}


@dataclass
class OutputHead:
    """logits = W final_norm(h); W may be the embedding table itself"""

    norm: RMSNorm
    weight: Tensor
    tied: bool = False

    @classmethod
    def init(cls, vocab_size: int, d: int, seed: int, std: float = 0.02,
             embedding: Embedding = None) -> "OutputHead":
        norm = RMSNorm.init(d, "head.norm")
        if embedding is not None:
            return cls(norm=norm, weight=embedding.weight, tied=True)
        return cls(norm=norm, weight=normal_param(seed, "head.weight", (vocab_size, d), std))

    def __call__(self, h: Tensor) -> Tensor:
        return self.norm(h) @ self.weight.T

    def parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        params = self.norm.parameters(f"{prefix}norm.")
        if not self.tied:
            params[f"{prefix}weight"] = self.weight
        return params
