"""
GRPO Package
Group-relative advantages, PPO/GRPO objectives and the GRPO training step
"""

from .grpo_config import GrpoConfig
from .advantages import broadcast_outcome, outcome_advantages, process_advantages
from .objectives import (
    RolloutGroup, clipped_surrogate, exact_kl, grpo_objective, ppo_objective, sampled_kl
)
from .trainer import GrpoStepResult, Policy, collect_groups, grpo_step
from .bandit import BanditPolicy, arm_reward, exact_policy_kl, train_bandit

__all__ = [
    'GrpoConfig', 'broadcast_outcome', 'outcome_advantages', 'process_advantages',
    'RolloutGroup', 'clipped_surrogate', 'exact_kl', 'grpo_objective', 'ppo_objective',
    'sampled_kl', 'GrpoStepResult', 'Policy', 'collect_groups', 'grpo_step',
    'BanditPolicy', 'arm_reward', 'exact_policy_kl', 'train_bandit'
]
