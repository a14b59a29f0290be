"""Parallel-corpus loading, vocabulary, id encoding, splitting and batching."""

from __future__ import annotations

import logging
import re
import string
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .model import END_ID, NUM_RESERVED, PAD_ID, START_ID, UNK_ID, DataError
from .numerics import RngState, rng_integers, rng_permutation

log = logging.getLogger(__name__)

RESERVED_TOKENS = ("<pad>", "<start>", "<end>", "<unk>")

_PUNCT = re.compile(r"[^\w\s'’]")
_LOOSE_APOSTROPHE = re.compile(r"(?<!\w)['’]|['’](?!\w)")


def tokenize(text: str) -> list[str]:
    """Lowercase, drop punctuation (keeping apostrophes inside words), split on whitespace."""
    text = _PUNCT.sub(" ", text.lower())
    text = _LOOSE_APOSTROPHE.sub(" ", text)
    return text.replace("_", " ").split()


class ParallelCorpus(list):
    """List of ``(source, target)`` string pairs; ``skipped`` counts malformed lines."""

    def __init__(self, pairs=(), skipped: int = 0):
        super().__init__(pairs)
        self.skipped = skipped


def load_parallel_corpus(path) -> ParallelCorpus:
    """Read UTF-8 ``source<TAB>target`` lines.

    Columns after the second (e.g. attribution fields) are ignored. Lines
    without a tab, or with an empty side, are skipped and counted.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read corpus {path}: {exc}") from exc
    pairs, skipped = [], 0
    for line in text.splitlines():
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) < 2 or not cols[0].strip() or not cols[1].strip():
            skipped += 1
            continue
        pairs.append((cols[0].strip(), cols[1].strip()))
    if skipped:
        log.warning("%s: skipped %d malformed line(s)", path, skipped)
    if not pairs:
        raise DataError(f"{path}: no valid tab-separated pairs")
    return ParallelCorpus(pairs, skipped)


@dataclass
class Vocabulary:
    """Token/id maps with ids 0..3 reserved for pad, start, end, unk."""

    tokens: list[str]

    def __post_init__(self):
        if tuple(self.tokens[:NUM_RESERVED]) != RESERVED_TOKENS:
            raise ValueError("vocabulary must start with the reserved tokens")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def encode(self, text: str) -> list[int]:
        return [self.id_of(t) for t in tokenize(text)]

    def decode(self, ids: Iterable[int], strip_special: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip_special and i in (PAD_ID, START_ID, END_ID):
                continue
            out.append(self.tokens[i])
        return out


def build_vocab(sentences: Iterable[str], cap: int) -> Vocabulary:
    """Keep the ``cap − 4`` most frequent tokens; equal counts are ordered lexicographically."""
    if cap < NUM_RESERVED + 1:
        raise ValueError(f"vocabulary cap must be >= 5, got {cap}")
    counts: Counter[str] = Counter()
    n = 0
    for s in sentences:
        counts.update(tokenize(s))
        n += 1
    if n == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(list(RESERVED_TOKENS) + [t for t, _ in ranked[: cap - NUM_RESERVED]])


def build_vocabs(pairs: Sequence[tuple[str, str]], cap: int) -> tuple[Vocabulary, Vocabulary]:
    """Separate source and target vocabularies, each capped at ``cap``."""
    return build_vocab((s for s, _ in pairs), cap), build_vocab((t for _, t in pairs), cap)


def _pad(ids: list[int], max_len: int) -> np.ndarray:
    ids = ids[:max_len]
    return np.array(ids + [PAD_ID] * (max_len - len(ids)), dtype=np.int64)


def encode_source(text: str, vocab: Vocabulary, max_len: int) -> np.ndarray:
    return _pad(vocab.encode(text), max_len)


def encode_pair(
    pair: tuple[str, str], src_vocab: Vocabulary, tgt_vocab: Vocabulary, max_len: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(src, tgt_in, tgt_out)``, each right-padded with 0 to ``max_len``.

    ``tgt_in`` is ``[start] + target`` and ``tgt_out`` is ``target + [end]``,
    both truncated, so ``tgt_out`` is ``tgt_in`` shifted left by one.
    """
    src = encode_source(pair[0], src_vocab, max_len)
    tgt = tgt_vocab.encode(pair[1])
    return src, _pad([START_ID] + tgt, max_len), _pad(tgt + [END_ID], max_len)


@dataclass
class Batch:
    src_ids: np.ndarray  # [B, L]
    tgt_in_ids: np.ndarray
    tgt_out_ids: np.ndarray

    def __len__(self) -> int:
        return self.src_ids.shape[0]


@dataclass
class EncodedSplit:
    """Stacked id matrices for one dataset split."""

    src: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray

    def __len__(self) -> int:
        return self.src.shape[0]

    @classmethod
    def from_pairs(cls, pairs, src_vocab, tgt_vocab, max_len) -> "EncodedSplit":
        rows = [encode_pair(p, src_vocab, tgt_vocab, max_len) for p in pairs]
        if not rows:
            empty = np.zeros((0, max_len), dtype=np.int64)
            return cls(empty, empty.copy(), empty.copy())
        src, tin, tout = (np.stack(c) for c in zip(*rows))
        return cls(src, tin, tout)

    def batches(self, batch_size: int, order: np.ndarray | None = None) -> Iterator[Batch]:
        idx = np.arange(len(self)) if order is None else order
        for start in range(0, len(idx), batch_size):
            sel = idx[start : start + batch_size]
            yield Batch(self.src[sel], self.tgt_in[sel], self.tgt_out[sel])


def split_dataset(pairs: Sequence, fractions=(0.7, 0.15, 0.15), seed: int = 0):
    """Seeded shuffle, then contiguous train/val/test slices."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    n = len(pairs)
    order = rng_permutation(RngState(seed), n)
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    shuffled = [pairs[i] for i in order]
    return shuffled[:n_train], shuffled[n_train : n_train + n_val], shuffled[n_train + n_val :]


def copy_task_tokens(vocab_size: int) -> list[str]:
    """Surface forms for the ``vocab_size − 4`` non-reserved copy-task symbols."""
    m = vocab_size - NUM_RESERVED
    if m <= len(string.ascii_lowercase):
        return list(string.ascii_lowercase[:m])
    return [f"w{i}" for i in range(m)]


def make_copy_task(
    vocab_size: int, seq_len: int, n: int, seed: int = 0, min_len: int | None = None
) -> list[tuple[str, str]]:
    """``n`` random sequences over the non-reserved symbols, paired with themselves.

    Lengths are drawn uniformly from ``min_len..seq_len`` (all ``seq_len`` by default).
    """
    if vocab_size < NUM_RESERVED + 1:
        raise ValueError(f"copy task needs vocab_size >= 5, got {vocab_size}")
    min_len = seq_len if min_len is None else min_len
    if not 1 <= min_len <= seq_len:
        raise ValueError(f"need 1 <= min_len <= seq_len, got {min_len}, {seq_len}")
    names = copy_task_tokens(vocab_size)
    rng = RngState(seed)
    draws = rng_integers(rng, 0, len(names), (n, seq_len))
    lengths = rng_integers(rng, min_len, seq_len + 1, n) if min_len < seq_len else np.full(n, seq_len)
    pairs = []
    for row, length in zip(draws, lengths):
        s = " ".join(names[i] for i in row[:length])
        pairs.append((s, s))
    return pairs
