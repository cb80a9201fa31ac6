"""
Language Model Policy
Adapts ToyModel to the GRPO policy protocol: string prompts in, token-id completions out
"""

from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from lm_harness.model import ToyModel
from lm_harness.rewards import reward_reasoning_step
from lm_harness.tokenizer import THINK_CLOSE, CharTokenizer
from tensor_core.tensor import Tensor


class LanguageModelPolicy:
    def __init__(self, model: ToyModel, tokenizer: CharTokenizer, max_new_tokens: int = 24,
                 temperature: float = 1.0):
        self.model = model
        self.tokenizer = tokenizer
        self.max_new_tokens = max_new_tokens
        self.temperature = temperature

    def sample(self, prompt: str, n: int, rng: np.random.Generator) -> List[List[int]]:
        prompt_ids = self.tokenizer.encode(prompt)
        return [self.model.decode(prompt_ids, self.max_new_tokens, rng, self.temperature,
                                  stop_id=self.tokenizer.terminator_id)
                for _ in range(n)]

    def token_log_distributions(self, prompt: str, outputs: Sequence[Sequence[int]]) -> List[Tensor]:
        return self.model.completion_log_distributions(self.tokenizer.encode(prompt), outputs,
                                                       pad_id=self.tokenizer.terminator_id)

    def parameters(self) -> Dict[str, Tensor]:
        """Main-model parameters; the MTP depths take no part in post-training"""
        return self.model.parameters(include_mtp=False)

    def snapshot(self) -> "LanguageModelPolicy":
        return LanguageModelPolicy(self.model.snapshot(), self.tokenizer, self.max_new_tokens, self.temperature)

    def complete(self, prompt: str, rng: np.random.Generator = None, greedy: bool = True) -> str:
        ids = self.model.decode(self.tokenizer.encode(prompt), self.max_new_tokens, rng,
                                0.0 if greedy else self.temperature, stop_id=self.tokenizer.terminator_id)
        return self.tokenizer.decode(ids)


def text_reward(tokenizer: CharTokenizer, reward: Callable[[str, str], float]) -> Callable[[str, Sequence[int]], float]:
    """Lift a (prompt, completion text) reward to the token-id signature grpo_step calls"""

    def score(prompt: str, output: Sequence[int]) -> float:
        return reward(prompt, tokenizer.decode(output))

    return score


def text_step_reward(tokenizer: CharTokenizer, reward: Callable[[str, str], float]
                     ) -> Callable[[str, Sequence[int]], List[Tuple[int, float]]]:
    """Process-supervision rewards for a completion: (end index, reward) per reasoning step.

    The think span is one step, ending at the first closing tag and scored by
    reward_reasoning_step; the whole completion is the final step, scored by
    `reward`. Without a closing tag before the last token there is only the final step.
    """
    close_id = tokenizer.index.get(THINK_CLOSE)

    def score(prompt: str, output: Sequence[int]) -> List[Tuple[int, float]]:
        last = len(output) - 1
        final = (last, reward(prompt, tokenizer.decode(output)))
        closes = [i for i, token in enumerate(output) if token == close_id]
        if not closes or closes[0] >= last:
            return [final]
        end = closes[0]
        return [(end, reward_reasoning_step(prompt, tokenizer.decode(output[:end + 1]))), final]

    return score
