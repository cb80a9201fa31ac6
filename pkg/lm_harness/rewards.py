"""
Rule-Based Rewards
Accuracy, format, language consistency and a brevity proxy, selectable by name
"""

import re
from typing import Callable, Dict, Optional

from lm_harness.tasks import parse_prompt
from lm_harness.tokenizer import THINK_CLOSE, THINK_OPEN
from tensor_core.errors import ConfigError, ContractError

ANSWER_PATTERN = re.compile(r"^-?\d+$")
FORMAT_PATTERN = re.compile(f"^{re.escape(THINK_OPEN)}(.*?){re.escape(THINK_CLOSE)}(.+)$", re.DOTALL)
DEFAULT_TARGET_CHARSET = "0123456789+-="


def _strip_terminator(completion: str) -> str:
    return completion[:-1] if completion.endswith("\n") else completion


def extract_answer(completion: str) -> str:
    """Text after the last closing think tag, or the whole completion when there is none"""
    text = _strip_terminator(completion)
    if THINK_CLOSE in text:
        text = text.rsplit(THINK_CLOSE, 1)[1]
    return text.strip()


def think_span(completion: str) -> Optional[str]:
    text = _strip_terminator(completion)
    start = text.find(THINK_OPEN)
    end = text.find(THINK_CLOSE, start + len(THINK_OPEN)) if start >= 0 else -1
    if start < 0 or end < 0:
        return None
    return text[start + len(THINK_OPEN):end]


def reward_accuracy(prompt: str, completion: str) -> float:
    problem = parse_prompt(prompt)
    if problem is None:
        raise ContractError(f"prompt {prompt!r} is not an arithmetic task")
    answer = extract_answer(completion)
    if not ANSWER_PATTERN.match(answer):
        return 0.0
    return 1.0 if int(answer) == problem.answer else 0.0


def reward_reasoning_step(prompt: str, completion: str) -> float:
    """1 when the think span closes on the right result: the text after its last "=" is the answer"""
    problem = parse_prompt(prompt)
    if problem is None:
        raise ContractError(f"prompt {prompt!r} is not an arithmetic task")
    span = think_span(completion)
    if not span or "=" not in span:
        return 0.0
    result = span.rsplit("=", 1)[1].strip()
    if not ANSWER_PATTERN.match(result):
        return 0.0
    return 1.0 if int(result) == problem.answer else 0.0


def reward_format(completion: str) -> float:
    """1 for exactly one leading <think>...</think> pair followed by a nonempty answer"""
    text = _strip_terminator(completion)
    if text.count(THINK_OPEN) != 1 or text.count(THINK_CLOSE) != 1:
        return 0.0
    match = FORMAT_PATTERN.match(text)
    if not match or not match.group(2).strip():
        return 0.0
    return 1.0


def reward_language_consistency(completion: str, target_charset: str = DEFAULT_TARGET_CHARSET) -> float:
    """Fraction of think-span symbols drawn from target_charset; 0 without a nonempty span"""
    span = think_span(completion)
    if not span:
        return 0.0
    allowed = set(target_charset)
    return sum(ch in allowed for ch in span) / len(span)


def reward_brevity(completion: str, max_len: int = 24) -> float:
    """1 up to max_len symbols, falling linearly to 0 at twice that length"""
    length = len(_strip_terminator(completion).replace(THINK_OPEN, "<").replace(THINK_CLOSE, ">"))
    if length <= max_len:
        return 1.0
    return max(0.0, 1.0 - (length - max_len) / max_len)


REWARDS: Dict[str, Callable[..., float]] = {
    "accuracy": lambda prompt, completion, **_: reward_accuracy(prompt, completion),
    "format": lambda prompt, completion, **_: reward_format(completion),
    "language_consistency": lambda prompt, completion, target_charset=DEFAULT_TARGET_CHARSET, **_:
        reward_language_consistency(completion, target_charset),
    "brevity": lambda prompt, completion, brevity_len=24, **_: reward_brevity(completion, brevity_len),
}


class CompositeReward:
    """Weighted sum of registered rewards"""

    def __init__(self, weights: Dict[str, float], target_charset: str = DEFAULT_TARGET_CHARSET,
                 brevity_len: int = 24):
        if not weights:
            raise ConfigError("a composite reward needs at least one component")
        unknown = sorted(set(weights) - set(REWARDS))
        if unknown:
            raise ConfigError(f"unknown reward(s) {unknown}; registered: {sorted(REWARDS)}")
        self.weights = dict(weights)
        self.options = {"target_charset": target_charset, "brevity_len": brevity_len}

    def components(self, prompt: str, completion: str) -> Dict[str, float]:
        return {name: REWARDS[name](prompt, completion, **self.options) for name in self.weights}

    def __call__(self, prompt: str, completion: str) -> float:
        parts = self.components(prompt, completion)
        return float(sum(self.weights[name] * parts[name] for name in self.weights))
