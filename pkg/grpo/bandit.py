"""
String Bandit Policy
Single-token policy over a fixed set of arms, used to exercise grpo_step end to end
"""

from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from loguru import logger

from grpo.grpo_config import GrpoConfig
from grpo.trainer import grpo_step
from tensor_core.optim import Optimizer
from tensor_core.tensor import Tensor, log_softmax_rows


class BanditPolicy:
    """Softmax over learnable arm logits; every completion is one token (the arm index)"""

    def __init__(self, n_arms: int = 10, logits: np.ndarray = None):
        values = np.zeros(n_arms) if logits is None else np.asarray(logits, dtype=np.float64)
        self.logits = Tensor(values, requires_grad=True, name="bandit.logits")

    @property
    def n_arms(self) -> int:
        return self.logits.shape[0]

    def probabilities(self) -> np.ndarray:
        z = self.logits.data - self.logits.data.max()
        p = np.exp(z)
        return p / p.sum()

    def sample(self, prompt: Any, n: int, rng: np.random.Generator) -> List[List[int]]:
        arms = rng.choice(self.n_arms, size=n, p=self.probabilities())
        return [[int(arm)] for arm in arms]

    def token_log_distributions(self, prompt: Any, outputs: Sequence[Sequence[int]]) -> List[Tensor]:
        row = log_softmax_rows(self.logits.reshape(1, self.n_arms))
        return [row for _ in outputs]

    def parameters(self) -> Dict[str, Tensor]:
        return {"bandit.logits": self.logits}

    def snapshot(self) -> "BanditPolicy":
        return BanditPolicy(logits=self.logits.data.copy())


def arm_reward(best_arm: int):
    def reward(prompt: Any, output: Sequence[int]) -> float:
        return 1.0 if len(output) == 1 and output[0] == best_arm else 0.0
    return reward


def exact_policy_kl(policy: BanditPolicy, reference: BanditPolicy) -> float:
    p, q = policy.probabilities(), reference.probabilities()
    return float(np.sum(p * (np.log(p) - np.log(q))))


def train_bandit(policy: BanditPolicy, best_arm: int, cfg: GrpoConfig, optimizer: Optimizer, seed: int,
                 max_steps: int = 500, target: float = 0.9, metrics: Optional[Any] = None,
                 stage_index: int = 0) -> int:
    """GRPO on a single fixed prompt until the best arm reaches `target` probability.

    Returns the number of steps taken. When given, `metrics` receives one row
    per step through log(stage_index, stage, step, values), e.g. a MetricsWriter.
    """
    rng = np.random.default_rng(seed)
    reference = policy.snapshot()
    reward = arm_reward(best_arm)
    for step in range(max_steps):
        result = grpo_step(policy, reference, ["q"], reward, cfg, optimizer, rng)
        best_prob = float(policy.probabilities()[best_arm])
        if metrics is not None:
            row = dict(result.metrics)
            row.update({"best_prob": best_prob, "policy_kl": exact_policy_kl(policy, reference)})
            metrics.log(stage_index, "bandit", step, row)
        if best_prob >= target:
            logger.info(f"Bandit reached p(arm {best_arm})={best_prob:.3f} after {step + 1} steps")
            return step + 1
    logger.warning(f"Bandit stopped at p(arm {best_arm})={policy.probabilities()[best_arm]:.3f} "
                   f"after {max_steps} steps")
    return max_steps
