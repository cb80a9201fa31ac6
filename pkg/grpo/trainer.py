"""
GRPO Trainer
Group sampling, scoring, advantage estimation and the gradient-ascent update
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Protocol, Sequence, Union

import numpy as np
from loguru import logger

from grpo.advantages import broadcast_outcome, outcome_advantages, process_advantages
from grpo.grpo_config import GrpoConfig
from grpo.objectives import RolloutGroup, grpo_objective
from tensor_core.errors import ContractError, RewardError
from tensor_core.optim import Optimizer, zero_grads
from tensor_core.tensor import Tensor, backward, no_grad, pick

RewardFn = Callable[[Any, Sequence[int]], Union[float, List]]


class Policy(Protocol):
    """What grpo_step needs from a policy"""

    def sample(self, prompt: Any, n: int, rng: np.random.Generator) -> List[List[int]]:
        """n independent completions (token id lists) for one prompt"""

    def token_log_distributions(self, prompt: Any, outputs: Sequence[Sequence[int]]) -> List[Tensor]:
        """Per output, the [|o_i|, V] log-softmax rows that generated each token"""

    def parameters(self) -> Dict[str, Tensor]:
        ...

    def snapshot(self) -> "Policy":
        """A frozen copy sharing no parameter storage"""


@dataclass
class GrpoStepResult:
    metrics: Dict[str, float]
    groups: List[RolloutGroup] = field(default_factory=list)


def _score(reward_fn: RewardFn, prompt: Any, outputs: List[List[int]], supervision: str):
    scores = []
    for output in outputs:
        try:
            value = reward_fn(prompt, output)
        except Exception as exc:
            logger.error(f"reward function failed on prompt {prompt!r}: {exc}")
            raise RewardError(f"reward function failed on prompt {prompt!r}: {exc}") from exc
        if supervision == "outcome":
            if value is None or not np.isfinite(float(value)):
                raise RewardError(f"reward function returned {value!r} for prompt {prompt!r}")
            value = float(value)
        scores.append(value)
    return scores


def _token_logprobs(dists: List[Tensor], outputs: Sequence[Sequence[int]]) -> List[Tensor]:
    return [pick(dist, np.asarray(output, dtype=np.int64)) for dist, output in zip(dists, outputs)]


def collect_groups(policy: Policy, ref_policy: Policy, prompts: Sequence[Any], reward_fn: RewardFn,
                   cfg: GrpoConfig, rng: np.random.Generator) -> List[Dict[str, Any]]:
    """Sample, score and compute advantages plus the frozen old/reference log-probabilities"""
    rollouts = []
    for prompt in prompts:
        with no_grad():
            outputs = policy.sample(prompt, cfg.group_size, rng)
        if any(len(output) == 0 for output in outputs):
            raise ContractError(f"policy produced an empty completion for prompt {prompt!r}")
        scores = _score(reward_fn, prompt, outputs, cfg.supervision)
        lengths = [len(output) for output in outputs]

        if cfg.supervision == "outcome":
            rewards = np.asarray(scores, dtype=np.float64)
            advantages = broadcast_outcome(outcome_advantages(rewards, cfg.std_floor), lengths)
            step_rewards = None
        else:
            step_rewards = [list(steps) for steps in scores]
            advantages = process_advantages(step_rewards, lengths, cfg.std_floor)
            rewards = np.asarray([sum(r for _, r in steps) for steps in step_rewards])

        with no_grad():
            old_dists = policy.token_log_distributions(prompt, outputs)
            ref_dists = ref_policy.token_log_distributions(prompt, outputs)
        rollouts.append({
            "prompt": prompt,
            "outputs": outputs,
            "rewards": rewards,
            "step_rewards": step_rewards,
            "advantages": advantages,
            "old_logprobs": [lp.data for lp in _token_logprobs(old_dists, outputs)],
            "ref_logprobs": [lp.data for lp in _token_logprobs(ref_dists, outputs)],
            "ref_log_dists": [dist.data for dist in ref_dists],
        })
    return rollouts


def grpo_step(policy: Policy, ref_policy: Policy, prompts: Sequence[Any], reward_fn: RewardFn,
              cfg: GrpoConfig, optimizer: Optimizer, rng: np.random.Generator) -> GrpoStepResult:
    """One GRPO iteration: G samples per prompt from the current (old) policy, then
    cfg.inner_epochs gradient-ascent updates of the group-averaged objective.

    A failing reward function aborts the step before any parameter changes.
    """
    rollouts = collect_groups(policy, ref_policy, prompts, reward_fn, cfg, rng)
    params = policy.parameters()

    stats: Dict[str, float] = {}
    for epoch in range(cfg.inner_epochs):
        zero_grads(params)
        groups, objective = [], None
        clipped, kl_total, tokens = 0.0, 0.0, 0
        for rollout in rollouts:
            dists = policy.token_log_distributions(rollout["prompt"], rollout["outputs"])
            group = RolloutGroup(
                prompt=rollout["prompt"],
                outputs=rollout["outputs"],
                logprobs=_token_logprobs(dists, rollout["outputs"]),
                old_logprobs=rollout["old_logprobs"],
                ref_logprobs=rollout["ref_logprobs"],
                advantages=rollout["advantages"],
                rewards=rollout["rewards"],
                step_rewards=rollout["step_rewards"],
                log_dists=dists,
                ref_log_dists=rollout["ref_log_dists"],
            )
            group_stats: Dict[str, float] = {}
            value = grpo_objective(group, cfg, group_stats)
            objective = value if objective is None else objective + value
            clipped += group_stats["clip_fraction"] * group_stats["tokens"]
            kl_total += group_stats["kl"] * group_stats["tokens"]
            tokens += group_stats["tokens"]
            groups.append(group)

        objective = objective / len(rollouts)
        if objective.requires_grad:
            backward(-objective)
        optimizer.step(params)
        stats = {"objective": objective.item(), "kl": kl_total / tokens, "clip_fraction": clipped / tokens}
        logger.debug(f"GRPO epoch {epoch}: objective={stats['objective']:.6f} kl={stats['kl']:.6f}")

    all_rewards = np.concatenate([rollout["rewards"] for rollout in rollouts])
    metrics = {
        "mean_reward": float(all_rewards.mean()),
        "kl": stats["kl"],
        "clip_fraction": stats["clip_fraction"],
        "objective": stats["objective"],
    }
    return GrpoStepResult(metrics=metrics, groups=groups)
