"""
Load Balance Module
Expert-level auxiliary balance loss and load statistics
"""

from typing import Dict, Union

import numpy as np

from tensor_core.errors import ContractError, DimensionError
from tensor_core.tensor import Tensor, as_tensor


def load_fractions(mask: np.ndarray, k_routed: int) -> np.ndarray:
    """f_i = N'/(K' T) * number of tokens that selected expert i"""
    T, n_routed = mask.shape
    if T == 0:
        raise ContractError("load fractions over an empty token window")
    return n_routed / (k_routed * T) * mask.sum(axis=0)


def mean_affinity(scores: Tensor) -> Tensor:
    """P_i = (1/T) * sum_t s_{i,t}, kept on the tape"""
    if scores.shape[0] == 0:
        raise ContractError("mean affinity over an empty token window")
    return scores.mean(axis=0)


def balance_loss(f: np.ndarray, P: Union[Tensor, np.ndarray], alpha: float) -> Tensor:
    """alpha * sum_i f_i P_i; gradient flows through P only"""
    f = np.asarray(f, dtype=np.float64)
    P = as_tensor(P)
    if f.shape != P.shape:
        raise DimensionError(f"balance loss: f of shape {f.shape} against P of shape {P.shape}")
    return (P * f).sum() * alpha


def expert_balance_loss(mask: np.ndarray, scores: Tensor, alpha: float, k_routed: int) -> Tensor:
    return balance_loss(load_fractions(mask, k_routed), mean_affinity(scores), alpha)


def load_ratio(loads: np.ndarray) -> float:
    """max/mean expert load; 1.0 is perfectly balanced"""
    loads = np.asarray(loads, dtype=np.float64)
    mean_load = loads.mean() if loads.size else 0.0
    if mean_load <= 0:
        raise ContractError("load ratio needs at least one routed token")
    return float(loads.max() / mean_load)


def load_summary(loads: np.ndarray) -> Dict[str, float]:
    loads = np.asarray(loads, dtype=np.float64)
    total = loads.sum()
    share = loads / total if total else loads
    return {
        'tokens_routed': float(total),
        'load_min': float(share.min()) if loads.size else 0.0,
        'load_max': float(share.max()) if loads.size else 0.0,
        'load_cv': float(share.std() / share.mean()) if total else 0.0,
        'max_over_mean': load_ratio(loads) if total else 0.0,
    }
