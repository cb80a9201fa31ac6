"""
Corpus Module
Plain UTF-8 text or a synthetic generator, tokenized and split into train/validation
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from lm_harness.tasks import sample_problem
from lm_harness.tokenizer import CharTokenizer
from tensor_core.errors import ConfigError, ContractError

UNIFORM_ALPHABET = "abcdefghijklmnopqrstuvwxyz"


class CorpusConfig(BaseModel):
    """Either a text file path or a synthetic generator"""

    model_config = ConfigDict(extra='forbid', frozen=True)

    path: Optional[Path] = None
    synthetic: Optional[Literal["arithmetic", "uniform"]] = "arithmetic"
    n_chars: int = Field(default=200_000, gt=0, description="Length of a synthetic corpus")
    val_fraction: float = Field(default=0.1, gt=0, lt=1)
    think_fraction: float = Field(default=0.5, ge=0, le=1,
                                  description="Share of arithmetic lines written with think tags")
    max_digits: int = Field(default=3, ge=1, le=3)


def arithmetic_text(n_chars: int, seed: int, think_fraction: float = 0.5, max_digits: int = 3) -> str:
    """Lines like '12+7=19' and '12+7=<think>12+7=19</think>19' until n_chars is reached"""
    rng = np.random.default_rng(seed)
    lines, size = [], 0
    while size < n_chars:
        problem = sample_problem(rng, max_digits)
        if rng.random() < think_fraction:
            line = problem.prompt + problem.reasoning() + "\n"
        else:
            line = f"{problem.prompt}{problem.answer}\n"
        lines.append(line)
        size += len(line)
    return "".join(lines)


def uniform_text(n_chars: int, seed: int, alphabet: str = UNIFORM_ALPHABET) -> str:
    rng = np.random.default_rng(seed)
    return "".join(rng.choice(list(alphabet), size=n_chars))


@dataclass
class Corpus:
    text: str
    tokenizer: CharTokenizer
    ids: np.ndarray
    split: int
    seed: int = 0

    @classmethod
    def from_text(cls, text: str, val_fraction: float = 0.1, seed: int = 0,
                  tokenizer: Optional[CharTokenizer] = None) -> "Corpus":
        if not text:
            raise ContractError("corpus is empty")
        tokenizer = tokenizer or CharTokenizer.build([text])
        ids = np.asarray(tokenizer.encode(text), dtype=np.int64)
        split = int(round(len(ids) * (1.0 - val_fraction)))
        return cls(text=text, tokenizer=tokenizer, ids=ids, split=split, seed=seed)

    @property
    def train_ids(self) -> np.ndarray:
        return self.ids[:self.split]

    @property
    def val_ids(self) -> np.ndarray:
        return self.ids[self.split:]

    def sample_batch(self, rng: np.random.Generator, batch_size: int, seq_len: int,
                     split: str = "train") -> np.ndarray:
        """[batch_size, seq_len+1] windows drawn uniformly from one split"""
        source = self.train_ids if split == "train" else self.val_ids
        if len(source) < seq_len + 1:
            raise ContractError(f"{split} split of {len(source)} tokens is shorter than a window of {seq_len + 1}")
        starts = rng.integers(0, len(source) - seq_len, size=batch_size)
        return np.stack([source[s:s + seq_len + 1] for s in starts])

    def validation_windows(self, seq_len: int, max_windows: int = 32) -> np.ndarray:
        """Non-overlapping validation windows in file order"""
        source = self.val_ids
        count = min(max_windows, (len(source) - 1) // seq_len)
        if count < 1:
            raise ContractError(f"validation split of {len(source)} tokens has no window of {seq_len + 1}")
        return np.stack([source[i * seq_len:i * seq_len + seq_len + 1] for i in range(count)])


def load_corpus(cfg: CorpusConfig, seed: int, tokenizer: Optional[CharTokenizer] = None,
                extra_symbols: str = "") -> Corpus:
    """Read or generate the corpus text. A new vocabulary also covers extra_symbols."""
    if cfg.path is not None:
        path = Path(cfg.path)
        if not path.is_file():
            raise ConfigError(f"corpus file not found: {path}")
        text = path.read_text(encoding="utf-8")
        source = str(path)
    elif cfg.synthetic == "arithmetic":
        text = arithmetic_text(cfg.n_chars, seed, cfg.think_fraction, cfg.max_digits)
        source = "synthetic arithmetic"
    elif cfg.synthetic == "uniform":
        text = uniform_text(cfg.n_chars, seed)
        source = "synthetic uniform"
    else:
        raise ConfigError("corpus needs either a path or a synthetic generator")

    if tokenizer is None:
        base = UNIFORM_ALPHABET if cfg.synthetic == "uniform" and cfg.path is None else text
        tokenizer = CharTokenizer.build([base, extra_symbols])
    corpus = Corpus.from_text(text, cfg.val_fraction, seed, tokenizer)
    logger.info(f"Loaded corpus ({source}): {len(corpus.ids)} tokens, vocabulary {corpus.tokenizer.size}")
    return corpus
