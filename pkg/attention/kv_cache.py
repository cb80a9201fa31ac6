"""
KV Cache Module
Latent (c_kv, k_r) cache for MLA, full key/value cache for MHA, and exact size accounting
"""

from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple

import numpy as np
import pandas as pd

from attention.attention_config import AttentionConfig
from tensor_core.errors import ContractError, DimensionError
from tensor_core.tensor import get_default_dtype

Variant = Literal["mha", "mla"]


def kv_cache_size(cfg: AttentionConfig, variant: Variant) -> int:
    """Cached scalars per token over all l layers"""
    if variant == "mha":
        return 2 * cfg.n_h * cfg.d_h * cfg.l
    if variant == "mla":
        return (cfg.d_c + cfg.d_h_r) * cfg.l
    raise ContractError(f"Unknown attention variant '{variant}'")


def cache_size_table(cfg: AttentionConfig, seq_len: int = 1024) -> pd.DataFrame:
    rows = []
    for variant in ("mha", "mla"):
        per_token = kv_cache_size(cfg, variant)
        rows.append({
            "variant": variant,
            "scalars_per_token": per_token,
            "scalars_per_sequence": per_token * seq_len,
            "per_token_over_d_h_l": per_token / (cfg.d_h * cfg.l),
        })
    table = pd.DataFrame(rows)
    table["ratio_to_mha"] = table["scalars_per_token"] / table.loc[0, "scalars_per_token"]
    return table


class _GrowingRows:
    """Append-only row store for one layer; capacity doubles when full"""

    def __init__(self, width: int, capacity: int = 16):
        self.width = width
        self._buffer = np.zeros((capacity, width), dtype=get_default_dtype())
        self._size = 0

    @property
    def rows(self) -> np.ndarray:
        return self._buffer[:self._size]

    def append(self, row: np.ndarray) -> None:
        row = np.asarray(row).reshape(-1)
        if row.shape[0] != self.width:
            raise DimensionError(f"cache row of width {row.shape[0]}, expected {self.width}")
        if self._size == self._buffer.shape[0]:
            grown = np.zeros((2 * max(self._size, 1), self.width), dtype=self._buffer.dtype)
            grown[:self._size] = self._buffer[:self._size]
            self._buffer = grown
        self._buffer[self._size] = row
        self._size += 1

    @property
    def capacity(self) -> int:
        return self._buffer.shape[0]

    def __len__(self) -> int:
        return self._size


@dataclass
class InferenceCounters:
    """Instrumentation for the decoding paths.

    latent_reads[s] is the number of compressed-cache scalars read at decode
    step s. full_width_reads totals the per-token key and value scalars of
    width d_h*n_h read from a cache: the MHA step adds to it, the absorbed
    MLA step never does.
    """

    latent_reads: List[int] = field(default_factory=list)
    full_width_reads: int = 0

    def record(self, scalars: int) -> None:
        self.latent_reads.append(int(scalars))

    def record_full_width(self, scalars: int) -> None:
        self.full_width_reads += int(scalars)

    @property
    def steps(self) -> int:
        return len(self.latent_reads)


class LatentKVCache:
    """Per layer, per token: c_kv [d_c] and the shared decoupled key k_r [d_h_r]"""

    def __init__(self, cfg: AttentionConfig, n_layers: Optional[int] = None):
        self.d_c = cfg.d_c
        self.d_h_r = cfg.d_h_r
        self.n_layers = n_layers if n_layers is not None else cfg.l
        self._c_kv: List[_GrowingRows] = [_GrowingRows(cfg.d_c) for _ in range(self.n_layers)]
        self._k_r: List[_GrowingRows] = [_GrowingRows(cfg.d_h_r) for _ in range(self.n_layers)]

    def append(self, layer: int, c_kv: np.ndarray, k_r: Optional[np.ndarray]) -> None:
        self._c_kv[layer].append(c_kv)
        if self.d_h_r:
            if k_r is None:
                raise ContractError("decoupled key missing for a cache with d_h_r > 0")
            self._k_r[layer].append(k_r)
        if len(self._k_r[layer]) and len(self._k_r[layer]) != len(self._c_kv[layer]):
            raise ContractError(f"layer {layer}: c_kv and k_r entry counts diverged")

    def length(self, layer: int = 0) -> int:
        return len(self._c_kv[layer])

    @property
    def token_count(self) -> int:
        return self.length(0)

    def latents(self, layer: int) -> Tuple[np.ndarray, np.ndarray]:
        return self._c_kv[layer].rows, self._k_r[layer].rows

    def scalars_per_token(self) -> int:
        return self.d_c + self.d_h_r

    def stored_scalars(self, layer: Optional[int] = None) -> int:
        layers = range(self.n_layers) if layer is None else [layer]
        return sum(self._c_kv[i].rows.size + self._k_r[i].rows.size for i in layers)


class MhaKVCache:
    """Per layer, per token: full keys and values [n_h*d_h] each"""

    def __init__(self, cfg: AttentionConfig, n_layers: Optional[int] = None):
        self.width = cfg.width
        self.n_layers = n_layers if n_layers is not None else cfg.l
        self._keys = [_GrowingRows(cfg.width) for _ in range(self.n_layers)]
        self._values = [_GrowingRows(cfg.width) for _ in range(self.n_layers)]

    def append(self, layer: int, key: np.ndarray, value: np.ndarray) -> None:
        self._keys[layer].append(key)
        self._values[layer].append(value)

    def length(self, layer: int = 0) -> int:
        return len(self._keys[layer])

    @property
    def token_count(self) -> int:
        return self.length(0)

    def entries(self, layer: int) -> Tuple[np.ndarray, np.ndarray]:
        return self._keys[layer].rows, self._values[layer].rows

    def scalars_per_token(self) -> int:
        return 2 * self.width

    def stored_scalars(self, layer: Optional[int] = None) -> int:
        layers = range(self.n_layers) if layer is None else [layer]
        return sum(self._keys[i].rows.size + self._values[i].rows.size for i in layers)
