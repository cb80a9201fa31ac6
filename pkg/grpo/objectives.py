"""
Policy Objectives
Rollout groups, the clipped PPO surrogate and the GRPO objective with a KL penalty
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from grpo.grpo_config import GrpoConfig
from tensor_core.errors import ContractError, NumericError
from tensor_core.tensor import Tensor, clip, exp, minimum, sub, sum_


@dataclass
class RolloutGroup:
    """G outputs for one question with their log-probabilities and advantages.

    logprobs are per-token pi_theta values on the tape; old_logprobs and
    ref_logprobs are constants recorded at sampling time. log_dists and
    ref_log_dists (full log-distributions per token) are only needed for the
    exact KL estimator.
    """

    prompt: Any
    outputs: List[Sequence[int]]
    logprobs: List[Tensor]
    old_logprobs: List[np.ndarray]
    ref_logprobs: List[np.ndarray]
    advantages: List[np.ndarray]
    rewards: Optional[np.ndarray] = None
    step_rewards: Optional[List[List[Tuple[int, float]]]] = None
    log_dists: Optional[List[Tensor]] = None
    ref_log_dists: Optional[List[np.ndarray]] = None

    @property
    def size(self) -> int:
        return len(self.outputs)

    def validate(self) -> None:
        if self.size < 2:
            raise ContractError(f"a rollout group needs at least 2 outputs, got {self.size}")
        columns = {"logprobs": self.logprobs, "old_logprobs": self.old_logprobs,
                   "ref_logprobs": self.ref_logprobs, "advantages": self.advantages}
        for name, values in columns.items():
            if len(values) != self.size:
                raise ContractError(f"{name} holds {len(values)} entries for {self.size} outputs")
            for i, value in enumerate(values):
                if np.shape(value)[0] != len(self.outputs[i]):
                    raise ContractError(
                        f"{name}[{i}] has {np.shape(value)[0]} entries for {len(self.outputs[i])} tokens")
            if any(np.isnan(np.asarray(v.data if isinstance(v, Tensor) else v)).any() for v in values):
                raise NumericError(f"NaN in {name}")


def clipped_surrogate(logprobs: Tensor, old_logprobs: np.ndarray, advantages: np.ndarray,
                      epsilon: float) -> Tuple[Tensor, np.ndarray]:
    """min(rho A, clip(rho, 1-eps, 1+eps) A) per token, plus where the clip was binding"""
    ratio = exp(logprobs - np.asarray(old_logprobs))
    unclipped = ratio * advantages
    clipped = clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantages
    return minimum(unclipped, clipped), clipped.data < unclipped.data


def sampled_kl(logprobs: Tensor, ref_logprobs: np.ndarray) -> Tensor:
    """pi_ref/pi - log(pi_ref/pi) - 1 on the sampled tokens"""
    log_ratio = sub(np.asarray(ref_logprobs), logprobs)
    return exp(log_ratio) - log_ratio - 1.0


def exact_kl(log_dist: Tensor, ref_log_dist: np.ndarray) -> Tensor:
    """sum_v pi(v) (log pi(v) - log pi_ref(v)) per token"""
    return sum_(exp(log_dist) * (log_dist - np.asarray(ref_log_dist)), axis=1)


def grpo_objective(group: RolloutGroup, cfg: GrpoConfig, stats: Optional[Dict[str, float]] = None) -> Tensor:
    """(1/G) sum_i (1/|o_i|) sum_t [surrogate_{i,t} - beta KL_{i,t}], to be maximized.

    When stats is given it receives the clip fraction, the mean KL estimate
    and the token count of this group.
    """
    group.validate()
    if cfg.kl_estimator == "exact" and (group.log_dists is None or group.ref_log_dists is None):
        raise ContractError("exact KL needs the full token distributions of both policies")

    total = None
    clipped_tokens, kl_sum, n_tokens = 0, 0.0, 0
    for i in range(group.size):
        if len(group.outputs[i]) == 0:
            raise ContractError(f"output {i} of the group is empty")
        surrogate, clipped = clipped_surrogate(group.logprobs[i], group.old_logprobs[i],
                                               group.advantages[i], cfg.epsilon)
        if cfg.kl_estimator == "exact":
            kl = exact_kl(group.log_dists[i], group.ref_log_dists[i])
        else:
            kl = sampled_kl(group.logprobs[i], group.ref_logprobs[i])
        per_output = (surrogate - kl * cfg.beta).mean() if cfg.beta else surrogate.mean()
        total = per_output if total is None else total + per_output

        clipped_tokens += int(clipped.sum())
        kl_sum += float(kl.data.sum())
        n_tokens += len(group.outputs[i])

    if stats is not None:
        stats["clip_fraction"] = clipped_tokens / n_tokens
        stats["kl"] = kl_sum / n_tokens
        stats["tokens"] = n_tokens
    return total / group.size


def ppo_objective(logprobs: Sequence[Tensor], old_logprobs: Sequence[np.ndarray],
                  advantages: Sequence[np.ndarray], cfg: GrpoConfig) -> Tensor:
    """Clipped surrogate with externally supplied advantages, per-sequence token mean then sequence mean"""
    if not logprobs:
        raise ContractError("PPO objective over zero sequences")
    total = None
    for lp, old, adv in zip(logprobs, old_logprobs, advantages):
        if np.isnan(lp.data).any() or np.isnan(np.asarray(old)).any():
            raise NumericError("NaN log-probabilities in the PPO objective")
        surrogate, _ = clipped_surrogate(lp, old, np.asarray(adv, dtype=np.float64), cfg.epsilon)
        total = surrogate.mean() if total is None else total + surrogate.mean()
    return total / len(logprobs)
