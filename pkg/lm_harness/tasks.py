"""
Arithmetic Task Family
Seeded 1-3 digit addition/subtraction problems with verifiable answers and template reasoning
"""

import re
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from lm_harness.tokenizer import THINK_CLOSE, THINK_OPEN

PROMPT_PATTERN = re.compile(r"^(\d{1,3})([+-])(\d{1,3})=$")


@dataclass(frozen=True)
class ArithmeticProblem:
    a: int
    op: str
    b: int

    @property
    def prompt(self) -> str:
        return f"{self.a}{self.op}{self.b}="

    @property
    def answer(self) -> int:
        return self.a + self.b if self.op == "+" else self.a - self.b

    def reasoning(self) -> str:
        """Well-formatted worked completion, without the terminator"""
        return f"{THINK_OPEN}{self.a}{self.op}{self.b}={self.answer}{THINK_CLOSE}{self.answer}"


def parse_prompt(prompt: str) -> Optional[ArithmeticProblem]:
    match = PROMPT_PATTERN.match(prompt)
    if not match:
        return None
    return ArithmeticProblem(int(match.group(1)), match.group(2), int(match.group(3)))


def sample_problem(rng: np.random.Generator, max_digits: int = 3) -> ArithmeticProblem:
    digits_a, digits_b = rng.integers(1, max_digits + 1, size=2)
    a = int(rng.integers(0, 10 ** int(digits_a)))
    b = int(rng.integers(0, 10 ** int(digits_b)))
    op = "+" if rng.random() < 0.5 else "-"
    return ArithmeticProblem(a, op, b)


def sample_problems(seed: int, n: int, max_digits: int = 3) -> List[ArithmeticProblem]:
    rng = np.random.default_rng(seed)
    return [sample_problem(rng, max_digits) for _ in range(n)]


def cold_start_records(seed: int, n: int, max_digits: int = 3) -> List[Tuple[str, str]]:
    """(prompt, completion) pairs of template reasoning, completions ending in the terminator"""
    return [(p.prompt, p.reasoning() + "\n") for p in sample_problems(seed, n, max_digits)]
