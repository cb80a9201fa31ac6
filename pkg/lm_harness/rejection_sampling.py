"""
Rejection Sampling
Sample many completions per prompt and keep the ones a rule-based reward accepts
"""

from typing import Callable, List, Optional, Sequence

import numpy as np
from loguru import logger

from lm_harness.policy import LanguageModelPolicy
from lm_harness.sft import Record
from tensor_core.errors import RewardError


def keep_correct(reward: float) -> bool:
    return reward >= 1.0


def rejection_sample(policy: LanguageModelPolicy, prompts: Sequence[str], reward_fn: Callable[[str, str], float],
                     n_per_prompt: int, rng: np.random.Generator,
                     keep_rule: Optional[Callable[[float], bool]] = None) -> List[Record]:
    """(prompt, completion) records surviving keep_rule, exact duplicates removed.

    Prompts are processed in order and completions keep their sampling order,
    so the result depends only on the policy, the prompts and rng.
    """
    keep_rule = keep_rule or keep_correct
    records, seen = [], set()
    sampled = 0
    for prompt in prompts:
        for output in policy.sample(prompt, n_per_prompt, rng):
            completion = policy.tokenizer.decode(output)
            sampled += 1
            try:
                reward = float(reward_fn(prompt, completion))
            except Exception as exc:
                raise RewardError(f"reward function failed on prompt {prompt!r}: {exc}") from exc
            if not keep_rule(reward) or (prompt, completion) in seen:
                continue
            seen.add((prompt, completion))
            records.append((prompt, completion))

    if not records:
        logger.warning(f"Rejection sampling kept none of {sampled} completions; the dataset is empty")
    else:
        logger.info(f"Rejection sampling kept {len(records)} of {sampled} completions")
    return records


def survivor_fraction(policy: LanguageModelPolicy, prompts: Sequence[str], reward_fn: Callable[[str, str], float],
                      n_per_prompt: int, seed: int) -> float:
    """Share of sampled completions that pass, duplicates counted; used to compare checkpoints on equal seeds"""
    rng = np.random.default_rng(seed)
    passed = total = 0
    for prompt in prompts:
        for output in policy.sample(prompt, n_per_prompt, rng):
            total += 1
            passed += keep_correct(float(reward_fn(prompt, policy.tokenizer.decode(output))))
    return passed / max(total, 1)
