"""
Rotary Position Embedding
Pairwise 2D rotations with frequencies base^(-2i/dim), applied per head
"""

from typing import Optional, Tuple, Union

import numpy as np

from tensor_core.errors import DimensionError
from tensor_core.tensor import Tensor, rotate_pairs

Positions = Union[int, np.ndarray]


def rope_angles(positions: Positions, head_dim: int, base: float, n_heads: int = 1
                ) -> Tuple[np.ndarray, np.ndarray]:
    """cos/sin tables of shape [..., n_heads*head_dim/2] for the given positions"""
    if head_dim % 2:
        raise DimensionError(f"RoPE needs an even head dimension, got {head_dim}")
    freqs = base ** (-2.0 * np.arange(head_dim // 2) / head_dim)
    freqs = np.tile(freqs, n_heads)
    angles = np.multiply.outer(np.asarray(positions, dtype=np.float64), freqs)
    return np.cos(angles), np.sin(angles)


def _layout(width: int, head_dim: Optional[int]) -> Tuple[int, int]:
    head_dim = width if head_dim is None else head_dim
    if head_dim % 2 or width % head_dim:
        raise DimensionError(f"RoPE: last extent {width} does not split into even heads of {head_dim}")
    return head_dim, width // head_dim


def rope_apply(x: Tensor, position: Positions, base: float = 10000.0,
               head_dim: Optional[int] = None) -> Tensor:
    """Rotate x[..., 2m] by position; an array of positions rotates row t by position[t]"""
    head_dim, n_heads = _layout(x.shape[-1], head_dim)
    cos, sin = rope_angles(position, head_dim, base, n_heads)
    return rotate_pairs(x, cos.astype(x.data.dtype), sin.astype(x.data.dtype))


def rope_array(x: np.ndarray, position: Positions, base: float = 10000.0,
               head_dim: Optional[int] = None) -> np.ndarray:
    """Tape-free variant for the decoding path"""
    head_dim, n_heads = _layout(x.shape[-1], head_dim)
    cos, sin = rope_angles(position, head_dim, base, n_heads)
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out
