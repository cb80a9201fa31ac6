"""
Evaluation Helpers
Validation loss on fixed windows and greedy arithmetic accuracy / format compliance
"""

from typing import Dict

import numpy as np

from lm_harness.corpus import Corpus
from lm_harness.policy import LanguageModelPolicy
from lm_harness.rewards import reward_accuracy, reward_format
from lm_harness.tasks import sample_problems
from tensor_core.tensor import cross_entropy, no_grad

EVAL_SEED = 12345


def validation_loss(policy: LanguageModelPolicy, corpus: Corpus, seq_len: int, max_windows: int = 32) -> float:
    """Main next-token loss averaged over the leading validation windows"""
    windows = corpus.validation_windows(seq_len, max_windows)
    model = policy.model
    with no_grad():
        logits = model.forward(windows[:, :-1])
        return cross_entropy(logits, windows[:, 1:].reshape(-1)).item()


def arithmetic_eval(policy: LanguageModelPolicy, n_problems: int = 64, seed: int = EVAL_SEED,
                    max_digits: int = 3) -> Dict[str, float]:
    """Greedy completions of a fixed problem set, scored by the accuracy and format rewards"""
    problems = sample_problems(seed, n_problems, max_digits)
    accuracy, formatted = [], []
    for problem in problems:
        completion = policy.complete(problem.prompt, greedy=True)
        accuracy.append(reward_accuracy(problem.prompt, completion))
        formatted.append(reward_format(completion))
    return {"accuracy": float(np.mean(accuracy)), "format_rate": float(np.mean(formatted)),
            "problems": n_problems}
