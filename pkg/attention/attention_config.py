"""
Attention Configuration and Weights
Dimensions for MHA/MLA and the projection matrices each variant owns
"""

from dataclasses import dataclass
from typing import Dict, Optional

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from tensor_core.errors import DimensionError
from tensor_core.streams import normal_param, zeros_param
from tensor_core.tensor import Tensor


class AttentionConfig(BaseModel):
    """Attention dimensions; d_c_q is the query latent dim and d_h_r the decoupled RoPE head dim"""

    model_config = ConfigDict(extra='forbid', frozen=True)

    d: int = Field(default=64, gt=0, description="Embedding dimension")
    n_h: int = Field(default=4, gt=0, description="Number of heads")
    d_h: int = Field(default=16, gt=0, description="Per-head dimension")
    d_c: int = Field(default=64, gt=0, description="KV latent dimension")
    d_c_q: int = Field(default=32, gt=0, description="Query latent dimension")
    d_h_r: int = Field(default=8, ge=0, description="Decoupled RoPE per-head dimension")
    l: int = Field(default=2, gt=0, description="Layer count, used for cache accounting")
    rope_base: float = Field(default=10000.0, gt=0)
    mha_rope: bool = Field(default=True, description="Standard RoPE on full q,k in the MHA baseline")

    @model_validator(mode='after')
    def _check_latent_dims(self):
        width = self.d_h * self.n_h
        if self.d_c > width:
            raise ValueError(f"d_c={self.d_c} must not exceed d_h*n_h={width}")
        if self.d_c_q >= width:
            raise ValueError(f"d_c_q={self.d_c_q} must be below d_h*n_h={width}")
        if self.d_h_r % 2:
            raise ValueError(f"d_h_r={self.d_h_r} must be even for RoPE")
        if self.d_c == width:
            logger.warning(f"d_c equals d_h*n_h={width}: the KV latent does not compress")
        return self

    @property
    def width(self) -> int:
        return self.d_h * self.n_h


@dataclass
class MhaWeights:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor

    @classmethod
    def init(cls, cfg: AttentionConfig, seed: int, prefix: str = "mha",
             std: float = 0.02, zero_output: bool = False) -> "MhaWeights":
        shapes = {"w_q": (cfg.width, cfg.d), "w_k": (cfg.width, cfg.d), "w_v": (cfg.width, cfg.d)}
        tensors = {key: normal_param(seed, f"{prefix}.{key}", shape, std) for key, shape in shapes.items()}
        if zero_output:
            tensors["w_o"] = zeros_param(f"{prefix}.w_o", (cfg.d, cfg.width))
        else:
            tensors["w_o"] = normal_param(seed, f"{prefix}.w_o", (cfg.d, cfg.width), std)
        weights = cls(**tensors)
        weights.validate(cfg)
        return weights

    def parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        return {f"{prefix}w_q": self.w_q, f"{prefix}w_k": self.w_k,
                f"{prefix}w_v": self.w_v, f"{prefix}w_o": self.w_o}

    def validate(self, cfg: AttentionConfig) -> None:
        expected = {"w_q": (cfg.width, cfg.d), "w_k": (cfg.width, cfg.d),
                    "w_v": (cfg.width, cfg.d), "w_o": (cfg.d, cfg.width)}
        _check_shapes(self, expected)


@dataclass
class MlaWeights:
    w_dkv: Tensor
    w_uk: Tensor
    w_uv: Tensor
    w_dq: Tensor
    w_uq: Tensor
    w_o: Tensor
    w_qr: Optional[Tensor] = None
    w_kr: Optional[Tensor] = None

    @staticmethod
    def shapes(cfg: AttentionConfig) -> Dict[str, tuple]:
        shapes = {
            "w_dkv": (cfg.d_c, cfg.d),
            "w_uk": (cfg.width, cfg.d_c),
            "w_uv": (cfg.width, cfg.d_c),
            "w_dq": (cfg.d_c_q, cfg.d),
            "w_uq": (cfg.width, cfg.d_c_q),
            "w_o": (cfg.d, cfg.width),
        }
        if cfg.d_h_r:
            shapes["w_qr"] = (cfg.d_h_r * cfg.n_h, cfg.d_c_q)
            shapes["w_kr"] = (cfg.d_h_r, cfg.d)
        return shapes

    @classmethod
    def init(cls, cfg: AttentionConfig, seed: int, prefix: str = "mla",
             std: float = 0.02, zero_output: bool = False) -> "MlaWeights":
        tensors = {}
        for key, shape in cls.shapes(cfg).items():
            if key == "w_o" and zero_output:
                tensors[key] = zeros_param(f"{prefix}.{key}", shape)
            else:
                tensors[key] = normal_param(seed, f"{prefix}.{key}", shape, std)
        weights = cls(**tensors)
        weights.validate(cfg)
        return weights

    def parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        names = ["w_dkv", "w_uk", "w_uv", "w_dq", "w_uq", "w_o", "w_qr", "w_kr"]
        return {f"{prefix}{name}": getattr(self, name) for name in names
                if getattr(self, name) is not None}

    def validate(self, cfg: AttentionConfig) -> None:
        _check_shapes(self, self.shapes(cfg))
        if not cfg.d_h_r and (self.w_qr is not None or self.w_kr is not None):
            raise DimensionError("d_h_r=0 but decoupled RoPE matrices were supplied")


def _check_shapes(weights, expected: Dict[str, tuple]) -> None:
    for name, shape in expected.items():
        tensor = getattr(weights, name)
        if tensor is None or tensor.shape != shape:
            actual = None if tensor is None else tensor.shape
            raise DimensionError(f"{name}: expected shape {shape}, got {actual}")
