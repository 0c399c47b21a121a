"""Token vocabulary and caption sequences.

Index layout is fixed: 0 <pad>, 1 <bos>, 2 <eos>, 3 <unk>, then content
tokens in insertion order. Captions carry their sentinels explicitly; the
"length" of a caption counts content tokens only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

DEFAULT_MAX_LEN = 19


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ValueError(f"vocabulary must start with {RESERVED_TOKENS}")
        # a reserved-only vocabulary (V=4) is loadable; models additionally
        # require at least one content token (see ModelDims)
        self.tokens = tokens
        self.index: dict[str, int] = {}
        for i, tok in enumerate(tokens):
            if tok in self.index:
                raise ValueError(f"duplicate token {tok!r} at index {i}")
            self.index[tok] = i

    @classmethod
    def build(cls, content_tokens: Iterable[str]) -> "Vocabulary":
        """Vocabulary from content tokens, first occurrence fixing the order."""
        tokens = list(RESERVED_TOKENS)
        seen = set(tokens)
        for tok in content_tokens:
            if tok not in seen:
                seen.add(tok)
                tokens.append(tok)
        return cls(tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK)

    def encode_words(self, words: Sequence[str]) -> list[int]:
        return [self.id_of(w) for w in words]

    def decode_ids(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


@dataclass(frozen=True)
class Caption:
    """<bos> ... <eos> token-id sequence."""

    token_ids: tuple[int, ...]

    def __post_init__(self):
        ids = self.token_ids
        if len(ids) < 2 or ids[0] != BOS or ids[-1] != EOS:
            raise ValueError("caption must start with <bos> and end with <eos>")
        body = ids[1:-1]
        if BOS in body or EOS in body:
            raise ValueError("caption sentinels must be unique")

    @classmethod
    def from_content(cls, content_ids: Sequence[int]) -> "Caption":
        return cls((BOS,) + tuple(int(i) for i in content_ids) + (EOS,))

    @classmethod
    def from_words(cls, words: Sequence[str], vocab: Vocabulary) -> "Caption":
        return cls.from_content(vocab.encode_words(words))

    @property
    def content_ids(self) -> tuple[int, ...]:
        return self.token_ids[1:-1]

    @property
    def length(self) -> int:
        return len(self.content_ids)

    @property
    def is_degenerate(self) -> bool:
        """True when decoding stopped before emitting any content token."""
        return self.length == 0

    def validate(self, max_len: int = DEFAULT_MAX_LEN) -> None:
        if not 1 <= self.length <= max_len:
            raise ValueError(
                f"caption content length {self.length} outside [1, {max_len}]"
            )

    def to_words(self, vocab: Vocabulary) -> list[str]:
        return vocab.decode_ids(self.content_ids)

    def to_text(self, vocab: Vocabulary) -> str:
        return " ".join(self.to_words(vocab))
