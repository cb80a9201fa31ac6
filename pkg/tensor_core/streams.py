"""
Seeded Random Streams
Every parameter tensor draws from its own generator, keyed by (seed, name)
"""

import zlib
from typing import Sequence

import numpy as np

from tensor_core.tensor import Tensor


def param_stream(seed: int, name: str) -> np.random.Generator:
    """Independent PCG64 stream for one named consumer.

    The stream depends only on the run seed and the consumer name, so adding
    or reordering parameters never shifts the values drawn by the others.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(key,))))


def normal_param(seed: int, name: str, shape: Sequence[int], std: float) -> Tensor:
    values = param_stream(seed, name).normal(0.0, std, size=tuple(shape))
    return Tensor(values, requires_grad=True, name=name)


def zeros_param(name: str, shape: Sequence[int]) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), requires_grad=True, name=name)


def ones_param(name: str, shape: Sequence[int]) -> Tensor:
    return Tensor(np.ones(tuple(shape)), requires_grad=True, name=name)
