"""
RMS Norm Layer
"""

from dataclasses import dataclass
from typing import Dict

from tensor_core.streams import ones_param
from tensor_core.tensor import Tensor, rms_norm


@dataclass
class RMSNorm:
    weight: Tensor
    eps: float = 1e-6

    @classmethod
    def init(cls, d: int, prefix: str) -> "RMSNorm":
        return cls(weight=ones_param(f"{prefix}.weight", (d,)))

    def __call__(self, x: Tensor) -> Tensor:
        return rms_norm(x, self.weight, self.eps)

    def parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        return {f"{prefix}weight": self.weight}
