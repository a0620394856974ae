"""Tokenization, vocabulary construction, and term-frequency vectors."""

from __future__ import annotations

import string
from collections import Counter
from typing import Iterable

import numpy as np

UNK_ID = 0
PAD_ID = 1
NUM_RESERVED = 2

_STRIP_CHARS = string.punctuation


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation.

    Tokens that are pure punctuation strip down to nothing and drop out.
    Interior punctuation (["don't"], hyphens) is preserved.
    """
    tokens = []
    for piece in text.lower().split():
        word = piece.strip(_STRIP_CHARS)
        if word:
            tokens.append(word)
    return tokens


class Vocabulary:
    """Word-to-id mapping with reserved ids 0 (unknown) and 1 (padding)."""

    def __init__(self, words: list[str]):
        self.words = list(words)
        self._ids = {w: i + NUM_RESERVED for i, w in enumerate(self.words)}
        if len(self._ids) != len(self.words):
            raise ValueError("duplicate word in vocabulary")

    def __len__(self):
        return len(self.words) + NUM_RESERVED

    def __contains__(self, word: str) -> bool:
        return word in self._ids

    def id_of(self, word: str) -> int:
        return self._ids.get(word, UNK_ID)

    def word_of(self, idx: int) -> str:
        if idx == UNK_ID:
            return "<unk>"
        if idx == PAD_ID:
            return "<pad>"
        return self.words[idx - NUM_RESERVED]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for w in self.words:
                fh.write(w + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            words = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(words)


def build_vocabulary(
    corpus: Iterable[str], min_count: int = 1, max_size: int = 50_000
) -> Vocabulary:
    """Count tokens over the corpus and keep the most frequent words.

    Ordering is fully deterministic: descending count, then lexicographic.
    """
    counts = Counter()
    n_texts = 0
    for text in corpus:
        n_texts += 1
        counts.update(tokenize(text))
    if n_texts == 0:
        raise ValueError("empty corpus")
    kept = [(w, c) for w, c in counts.items() if c >= min_count]
    kept.sort(key=lambda wc: (-wc[1], wc[0]))
    return Vocabulary([w for w, _ in kept[:max_size]])


def encode(text: str, vocab: Vocabulary) -> list[int]:
    """Token ids for a text; out-of-vocabulary words map to the unknown id."""
    return [vocab.id_of(w) for w in tokenize(text)]


def tf_vector_dense(ids: list[int], dim: int, counts: bool = False) -> np.ndarray:
    """Term-frequency vector over real words (reserved ids contribute nothing).

    Entry j covers vocabulary word j (token id j + 2). By default entries
    are binary presence indicators; with ``counts`` they are occurrence
    counts.
    """
    v = np.zeros(dim)
    for i in ids:
        if i >= NUM_RESERVED:
            if counts:
                v[i - NUM_RESERVED] += 1.0
            else:
                v[i - NUM_RESERVED] = 1.0
    return v


def tf_vector(ids: list[int], vocab: Vocabulary, counts: bool = False) -> np.ndarray:
    return tf_vector_dense(ids, len(vocab) - NUM_RESERVED, counts)
