"""
Character Tokenizer
Sorted character vocabulary with the think tags as atomic symbols
"""

import re
from typing import Iterable, List, Sequence

from tensor_core.errors import ContractError

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
TERMINATOR = "\n"
SPECIAL_TOKENS = (THINK_OPEN, THINK_CLOSE)

_TAG_SPLIT = re.compile(f"({re.escape(THINK_OPEN)}|{re.escape(THINK_CLOSE)})")


def split_symbols(text: str) -> List[str]:
    """Characters of text, except that each think tag stays one symbol"""
    symbols = []
    for piece in _TAG_SPLIT.split(text):
        if piece in SPECIAL_TOKENS:
            symbols.append(piece)
        else:
            symbols.extend(piece)
    return symbols


class CharTokenizer:
    def __init__(self, vocab: Sequence[str]):
        if len(set(vocab)) != len(vocab):
            raise ContractError("tokenizer vocabulary has duplicate symbols")
        self.vocab = list(vocab)
        self.index = {symbol: i for i, symbol in enumerate(self.vocab)}

    @classmethod
    def build(cls, texts: Iterable[str]) -> "CharTokenizer":
        """Sorted, deduplicated characters of texts, then the newline terminator and the tags"""
        chars = set()
        for text in texts:
            chars.update(s for s in split_symbols(text) if s not in SPECIAL_TOKENS)
        chars.add(TERMINATOR)
        return cls(sorted(chars) + list(SPECIAL_TOKENS))

    @property
    def size(self) -> int:
        return len(self.vocab)

    @property
    def terminator_id(self) -> int:
        return self.index[TERMINATOR]

    def encode(self, text: str) -> List[int]:
        ids = []
        for symbol in split_symbols(text):
            if symbol not in self.index:
                raise ContractError(f"symbol {symbol!r} is not in the vocabulary")
            ids.append(self.index[symbol])
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.vocab[int(i)] for i in ids)
