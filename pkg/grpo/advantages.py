"""
Group-Relative Advantages
Outcome and process supervision, both normalized strictly within one group
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

import sys
from pathlib import Path
sys.path.append(str(Path(__file__).parent.parent))

from config import settings
from tensor_core.errors import ContractError

Step = Tuple[int, float]


def _normalize(values: np.ndarray, std_floor: float) -> np.ndarray:
    std = values.std()
    if std < std_floor:
        logger.debug(f"reward std {std:.3g} below floor {std_floor:g}: advantages set to 0")
        return np.zeros_like(values)
    return (values - values.mean()) / std


def outcome_advantages(rewards: Sequence[float], std_floor: Optional[float] = None) -> np.ndarray:
    """(r_i - mean(r)) / std(r) with the population std"""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.ndim != 1 or rewards.size < 2:
        raise ContractError(f"outcome advantages need a group of at least 2 rewards, got {rewards.size}")
    return _normalize(rewards, settings.std_floor if std_floor is None else std_floor)


def process_advantages(step_rewards: Sequence[Sequence[Step]], lengths: Sequence[int],
                       std_floor: Optional[float] = None) -> List[np.ndarray]:
    """Per-token advantages: token t of output i sums the normalized rewards of its steps ending at or after t.

    All step rewards of the group are normalized jointly.
    """
    if len(step_rewards) != len(lengths):
        raise ContractError(f"{len(step_rewards)} step lists for {len(lengths)} outputs")
    for i, steps in enumerate(step_rewards):
        if not steps:
            raise ContractError(f"output {i} has no reward steps")
        ends = [end for end, _ in steps]
        if any(b <= a for a, b in zip(ends, ends[1:])):
            raise ContractError(f"output {i}: step end indices {ends} are not strictly increasing")
        if ends[0] < 0 or ends[-1] >= lengths[i]:
            raise ContractError(f"output {i}: step ends {ends} fall outside {lengths[i]} tokens")

    flat = np.array([reward for steps in step_rewards for _, reward in steps], dtype=np.float64)
    normalized = _normalize(flat, settings.std_floor if std_floor is None else std_floor)

    advantages, offset = [], 0
    for steps, length in zip(step_rewards, lengths):
        per_token = np.zeros(length)
        positions = np.arange(length)
        for (end, _), value in zip(steps, normalized[offset:offset + len(steps)]):
            per_token[positions <= end] += value
        offset += len(steps)
        advantages.append(per_token)
    return advantages


def broadcast_outcome(advantages: np.ndarray, lengths: Sequence[int]) -> List[np.ndarray]:
    return [np.full(length, value) for value, length in zip(advantages, lengths)]
