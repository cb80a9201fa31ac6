"""
Expert Router
Softmax affinity gating over routed experts, Top-K selection and bias-adjusted routing
"""

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
from loguru import logger

from moe.moe_config import MoeLayerConfig, check_counts
from tensor_core.errors import ConfigError, DimensionError
from tensor_core.streams import normal_param
from tensor_core.tensor import Tensor, softmax_rows


@dataclass
class RouterState:
    """Centroids e_i, biases b_i and the load counters of the open accumulation window"""

    centroids: Tensor
    bias: np.ndarray
    routing_mode: str = "aux_loss"
    load_counts: np.ndarray = None
    affinity_sums: np.ndarray = None
    tokens: int = 0
    history: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        n_routed = self.centroids.shape[0]
        if self.load_counts is None:
            self.load_counts = np.zeros(n_routed, dtype=np.int64)
        if self.affinity_sums is None:
            self.affinity_sums = np.zeros(n_routed)

    @classmethod
    def init(cls, cfg: MoeLayerConfig, seed: int, prefix: str = "moe", std: float = 0.02) -> "RouterState":
        centroids = normal_param(seed, f"{prefix}.centroids", (cfg.n_routed, cfg.d), std)
        return cls(centroids=centroids, bias=np.zeros(cfg.n_routed), routing_mode=cfg.routing_mode)

    @property
    def n_routed(self) -> int:
        return self.centroids.shape[0]

    def record(self, mask: np.ndarray, scores: np.ndarray) -> None:
        self.load_counts += mask.sum(axis=0).astype(np.int64)
        self.affinity_sums += scores.sum(axis=0)
        self.tokens += mask.shape[0]

    def reset_window(self) -> None:
        self.load_counts = np.zeros(self.n_routed, dtype=np.int64)
        self.affinity_sums = np.zeros(self.n_routed)
        self.tokens = 0

    def mean_affinity(self) -> np.ndarray:
        """P_i over the open window"""
        return self.affinity_sums / max(self.tokens, 1)


@dataclass
class Routing:
    """Routing of a T-token block: affinities s [T, N_r], 0/1 mask and selected indices [T, K_r]"""

    scores: Tensor
    mask: np.ndarray
    selected: np.ndarray

    @property
    def gates(self) -> Tensor:
        """Gate values g_{i,t}: the original affinity where selected, 0 elsewhere"""
        return self.scores * self.mask


def top_k_indices(keys: np.ndarray, k: int) -> np.ndarray:
    """Per-row indices of the k largest keys; ties go to the lowest index"""
    return np.argsort(-keys, axis=1, kind="stable")[:, :k]


def route_tokens(u: Tensor, state: RouterState, cfg: MoeLayerConfig) -> Routing:
    if u.ndim != 2 or u.shape[1] != cfg.d:
        raise DimensionError(f"router input: expected shape (T, {cfg.d}), got {u.shape}")
    if state.centroids.shape != (cfg.n_routed, cfg.d):
        raise DimensionError(
            f"router centroids {state.centroids.shape} do not match ({cfg.n_routed}, {cfg.d})")
    check_counts(cfg)

    scores = softmax_rows(u @ state.centroids.T)
    keys = scores.data + state.bias if cfg.routing_mode == "loss_free" else scores.data
    selected = top_k_indices(keys, cfg.k_routed)
    mask = np.zeros(scores.shape, dtype=scores.data.dtype)
    np.put_along_axis(mask, selected, 1.0, axis=1)
    return Routing(scores=scores, mask=mask, selected=selected)


def route(u: Tensor, state: RouterState, cfg: MoeLayerConfig) -> Tuple[Dict[int, float], List[int]]:
    """Route a single token; returns gates of the selected routed experts and their indices"""
    block = u.reshape(1, -1) if u.ndim == 1 else u
    routing = route_tokens(block, state, cfg)
    selected = sorted(int(i) for i in routing.selected[0])
    gates = {i: float(routing.scores.data[0, i]) for i in selected}
    return gates, selected


def bias_update(state: RouterState, loads: np.ndarray, gamma: float) -> np.ndarray:
    """b_i -= gamma when expert i is above the mean load, += gamma when below"""
    if gamma < 0:
        raise ConfigError(f"bias step gamma={gamma} must be nonnegative")
    loads = np.asarray(loads, dtype=np.float64)
    if loads.shape != state.bias.shape:
        raise DimensionError(f"loads of shape {loads.shape} against {state.bias.shape} biases")
    if state.routing_mode != "loss_free":
        logger.debug("bias update skipped: router uses the auxiliary loss")
        return state.bias

    mean_load = loads.mean()
    step = np.where(loads > mean_load, -gamma, np.where(loads < mean_load, gamma, 0.0))
    state.bias = state.bias + step
    state.history.append(state.bias.copy())
    return state.bias
