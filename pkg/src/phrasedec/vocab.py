"""Tokenizer, vocabulary and word embedding tables."""

from __future__ import annotations

import re
from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from .core import Parameter, init_uniform

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SEP = "<sep>"
RESERVED = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

_PUNCT = re.compile(r"([.?!,])")


def tokenize(text: str) -> list[str]:
    """Lowercase, split punctuation (. ? ! ,) off as tokens, split on whitespace."""
    return _PUNCT.sub(r" \1 ", text.lower()).split()


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:4]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]


def build_vocab(corpus: Iterable[str | Sequence[str]], min_count: int = 1,
                extra_tokens: Sequence[str] = ()) -> Vocabulary:
    """Reserved tokens first, then tokens by descending count (ties alphabetical).

    Corpus items may be raw strings (tokenized here) or token lists.
    `extra_tokens` are appended after the counted tokens if missing.
    """
    counts: Counter[str] = Counter()
    n_items = 0
    for item in corpus:
        n_items += 1
        counts.update(tokenize(item) if isinstance(item, str) else item)
    if n_items == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    for tok in RESERVED:
        counts.pop(tok, None)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    tokens = list(RESERVED) + kept
    for tok in extra_tokens:
        if tok not in tokens:
            tokens.append(tok)
    return Vocabulary(tokens)


class EmbeddingTable:
    """Input word embeddings (|V| x d_emb) and output embeddings (|V| x d_out)."""

    def __init__(self, vocab_size: int, d_emb: int, d_out: int, rng: np.random.Generator | None = None,
                 prefix: str = ""):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input = Parameter(prefix + "emb_in", init_uniform(rng, (vocab_size, d_emb)), sparse_rows=True)
        self.output = Parameter(prefix + "emb_out", init_uniform(rng, (vocab_size, d_out)))

    @property
    def d_emb(self) -> int:
        return self.input.shape[1]

    def embed(self, idx: int) -> np.ndarray:
        if not 0 <= idx < self.input.shape[0]:
            raise IndexError(f"token id {idx} out of range for vocabulary of {self.input.shape[0]}")
        return self.input.value[idx].copy()

    def embed_word_zero(self) -> np.ndarray:
        return np.zeros(self.d_emb)
