"""Text normalization, vocabularies and fixed-length token sequences."""
from __future__ import annotations

import re
import string
from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import EmptyCaptionError

Level = Literal["word", "char"]

PUNCTUATION = ".,;:!?'\"()-"
DEFAULT_ALPHABET = string.ascii_lowercase + string.digits + " " + PUNCTUATION
DEFAULT_MAX_LEN = {"word": 30, "char": 201}

PAD_ID = 0
PAD = "<pad>"
UNK = "<unk>"

_WS = re.compile(r"\s+")
# punctuation is split off into its own word-level tokens (apostrophes stay
# inside words so "bird's" is one token)
_WORD_PUNCT = re.compile(r"([.,;:!?\"()\-])")


def normalize_text(raw: str, level: Level = "char", alphabet: str = DEFAULT_ALPHABET) -> str:
    """Lowercase and restrict ``raw`` to ``alphabet``.

    At char level characters outside the alphabet are dropped; at word level
    they act as separators and punctuation is spaced out into its own token.
    Whitespace runs collapse to one space.
    """
    allowed = set(alphabet)
    text = _WS.sub(" ", raw.lower())
    if level == "char":
        text = "".join(ch for ch in text if ch in allowed)
    elif level == "word":
        text = "".join(ch if ch in allowed else " " for ch in text)
        text = _WORD_PUNCT.sub(r" \1 ", text)
    else:
        raise ValueError(f"unknown level {level!r}")
    return _WS.sub(" ", text).strip()


def split_tokens(normalized: str, level: Level) -> list[str]:
    if level == "char":
        return list(normalized)
    return normalized.split()


class Vocabulary:
    """Word table: id 0 is padding, id 1 the unknown-word token."""

    level: Level = "word"

    def __init__(self, words: Iterable[str]):
        self.words: list[str] = [PAD, UNK]
        for w in words:
            if w not in (PAD, UNK):
                self.words.append(w)
        if len(set(self.words)) != len(self.words):
            raise ValueError("vocabulary words must be unique")
        self.index = {w: i for i, w in enumerate(self.words)}
        self.unk_id = 1

    @classmethod
    def build(cls, texts: Iterable[str], alphabet: str = DEFAULT_ALPHABET) -> "Vocabulary":
        seen: set[str] = set()
        for t in texts:
            seen.update(normalize_text(t, "word", alphabet).split())
        return cls(sorted(seen))

    def __len__(self) -> int:
        return len(self.words)

    def id_of(self, token: str) -> int:
        return self.index.get(token, self.unk_id)

    def token_of(self, idx: int) -> str:
        return self.words[idx]

    def to_list(self) -> list[str]:
        return self.words[2:]


class Alphabet:
    """Character table: id 0 is padding, then the alphabet in order."""

    level: Level = "char"

    def __init__(self, chars: str = DEFAULT_ALPHABET):
        if len(set(chars)) != len(chars):
            raise ValueError("alphabet characters must be unique")
        self.chars = chars
        self.index = {c: i + 1 for i, c in enumerate(chars)}

    def __len__(self) -> int:
        return len(self.chars) + 1

    def id_of(self, token: str) -> int:
        return self.index[token]

    def token_of(self, idx: int) -> str:
        return self.chars[idx - 1]


@dataclass(frozen=True)
class TextSequence:
    token_ids: np.ndarray
    true_length: int
    level: Level

    @property
    def max_len(self) -> int:
        return len(self.token_ids)


def tokenize(raw: str, level: Level, table: Vocabulary | Alphabet, max_len: int | None = None,
             alphabet: str | None = None) -> TextSequence:
    if max_len is None:
        max_len = DEFAULT_MAX_LEN[level]
    if alphabet is None:
        alphabet = table.chars if isinstance(table, Alphabet) else DEFAULT_ALPHABET
    tokens = split_tokens(normalize_text(raw, level, alphabet), level)
    if not tokens:
        raise EmptyCaptionError(f"caption is empty after normalization: {raw!r}")
    ids = np.zeros(max_len, dtype=np.int64)
    tokens = tokens[:max_len]
    ids[:len(tokens)] = [table.id_of(t) for t in tokens]
    return TextSequence(ids, len(tokens), level)


def detokenize(seq: TextSequence, table: Vocabulary | Alphabet) -> str:
    tokens = [table.token_of(int(i)) for i in seq.token_ids[:seq.true_length]]
    return ("" if seq.level == "char" else " ").join(tokens)


def stack_sequences(seqs: Sequence[TextSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Batch sequences into an id matrix [B x max_len] and a length vector."""
    ids = np.stack([s.token_ids for s in seqs])
    lengths = np.array([s.true_length for s in seqs], dtype=np.int64)
    return ids, lengths
