from __future__ import annotations

import re
from collections import Counter
from collections.abc import Iterable, Sequence
from typing import Any

from pydantic import BaseModel, Field, PrivateAttr, model_validator


PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>")
DEFAULT_MAX_LEN = 150

_WORD = re.compile(r"\w+|[^\w\s]")


class Vocabulary(BaseModel):
    """Dense token list; the index of a token is its id."""

    tokens: list[str] = Field(default_factory=lambda: list(RESERVED_TOKENS))
    _ids: dict[str, int] = PrivateAttr(default_factory=dict)

    @model_validator(mode="after")
    def validate_tokens(self) -> "Vocabulary":
        if tuple(self.tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ValueError(f"Vocabulary must start with the reserved tokens {RESERVED_TOKENS}.")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("Vocabulary tokens must be unique.")
        return self

    def model_post_init(self, context: Any) -> None:
        self._ids = {token: index for index, token in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def token_of(self, token_id: int) -> str:
        return self.tokens[token_id] if 0 <= token_id < len(self.tokens) else RESERVED_TOKENS[UNK]

    def to_config(self) -> dict[str, Any]:
        return {"tokens": list(self.tokens)}


def split_words(text: str) -> list[str]:
    """Lowercased words and single-character punctuation tokens."""
    return _WORD.findall((text or "").lower())


def tokenize(vocab: Vocabulary, text: str, max_len: int = DEFAULT_MAX_LEN) -> list[int]:
    """``[BOS, ids..., EOS]``, truncated to ``max_len`` with the final EOS kept."""
    if max_len < 2:
        raise ValueError(f"max_len must leave room for BOS and EOS, got {max_len}.")
    body = [vocab.id_of(word) for word in split_words(text)]
    return [BOS, *body[: max_len - 2], EOS]


def detokenize(vocab: Vocabulary, ids: Sequence[int]) -> str:
    return " ".join(vocab.token_of(int(token_id)) for token_id in ids if token_id not in (PAD, BOS, EOS))


def build_vocabulary(texts: Iterable[str], min_freq: int = 1) -> Vocabulary:
    """Reserved ids first, then words by descending frequency, ties lexicographic."""
    counts = Counter(word for text in texts for word in split_words(text))
    words = sorted((word for word, count in counts.items() if count >= min_freq), key=lambda word: (-counts[word], word))
    return Vocabulary(tokens=[*RESERVED_TOKENS, *(word for word in words if word not in RESERVED_TOKENS)])
