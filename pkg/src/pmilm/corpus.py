"""Vocabulary, id streams, unigram noise distribution and BPTT batching."""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

EOS = "<eos>"
UNK = "<unk>"
SPECIALS = (EOS, UNK)


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    id_to_token: tuple[str, ...]
    counts: np.ndarray
    token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mapping = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(mapping) != len(self.id_to_token):
            raise CorpusError("duplicate tokens in vocabulary")
        for tok in SPECIALS:
            if tok not in mapping:
                raise CorpusError(f"vocabulary is missing special token {tok}")
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (len(self.id_to_token),) or (counts < 0).any():
            raise CorpusError("counts must be one non-negative integer per token")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "token_to_id", mapping)

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def lookup(self, tokens: Iterable[str]) -> list[int]:
        unk = self.unk_id
        return [self.token_to_id.get(tok, unk) for tok in tokens]

    def fingerprint(self) -> str:
        """sha256 over the ordered token list (counts excluded)."""
        h = hashlib.sha256()
        for tok in self.id_to_token:
            h.update(tok.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()

    def save(self, path: str | Path) -> None:
        from pmilm.io import atomic_write_text

        lines = [f"{tok}\t{int(c)}\n" for tok, c in zip(self.id_to_token, self.counts)]
        atomic_write_text(path, "".join(lines))

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens, counts = [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, sep, count = line.rpartition("\t")
                if not sep:
                    raise CorpusError(f"{path}:{lineno}: expected token<TAB>count")
                tokens.append(tok)
                counts.append(int(count))
        return cls(tuple(tokens), np.array(counts, dtype=np.int64))


def build_vocab(tokens: Iterable[str], max_size: int = 10000, min_count: int = 1) -> Vocabulary:
    """Keep the ``max_size - 2`` most frequent tokens seen at least ``min_count`` times.

    ``<eos>`` and ``<unk>`` always occupy ids 0 and 1. Literal occurrences of the
    special strings in the input are counted against the specials, which is how
    pre-unked corpora such as PTB keep their ``<unk>`` statistics. Ties in
    frequency keep first-occurrence order.
    """
    if max_size < 2:
        raise CorpusError("max_size must leave room for the two special tokens")
    if min_count < 1:
        raise CorpusError("min_count must be >= 1")
    # Counter preserves insertion order, and sorted() is stable
    freq = Counter(tokens)
    special_counts = [freq.pop(tok, 0) for tok in SPECIALS]
    ranked = sorted(
        ((tok, c) for tok, c in freq.items() if c >= min_count),
        key=lambda item: -item[1],
    )[: max_size - len(SPECIALS)]
    id_to_token = SPECIALS + tuple(tok for tok, _ in ranked)
    counts = special_counts + [c for _, c in ranked]
    return Vocabulary(id_to_token, np.array(counts, dtype=np.int64))


def read_lines(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def tokens_of(lines: Iterable[str]) -> Iterator[str]:
    for line in lines:
        yield from line.split()


def encode(lines: Iterable[str], vocab: Vocabulary, append_eos_per_line: bool = True) -> np.ndarray:
    """Map whitespace-tokenized lines to an id stream.

    Out-of-vocabulary tokens become ``unk_id``. With ``append_eos_per_line`` every
    line (blank ones included) is terminated by ``eos_id``.
    """
    if isinstance(lines, str):
        lines = lines.splitlines()
    ids: list[int] = []
    eos = vocab.eos_id
    for line in lines:
        ids.extend(vocab.lookup(line.split()))
        if append_eos_per_line:
            ids.append(eos)
    return np.array(ids, dtype=np.int64)


def decode(ids: Iterable[int], vocab: Vocabulary) -> list[str]:
    """Inverse of :func:`encode`: split the stream into lines at every ``<eos>``."""
    lines, current = [], []
    eos = vocab.eos_id
    for i in ids:
        if i == eos:
            lines.append(" ".join(current))
            current = []
        else:
            current.append(vocab.id_to_token[i])
    if current:
        lines.append(" ".join(current))
    return lines


@dataclass(frozen=True)
class UnigramDistribution:
    probs: np.ndarray
    counts: np.ndarray
    smoothing_exponent: float = 1.0

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        counts = np.asarray(self.counts, dtype=np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    def __len__(self) -> int:
        return len(self.probs)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_counts(cls, counts, exponent: float = 1.0) -> "UnigramDistribution":
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 1 or (counts < 0).any():
            raise CorpusError("counts must be a 1-d array of non-negative integers")
        if exponent <= 0:
            raise CorpusError("smoothing exponent must be positive")
        if counts.sum() == 0:
            raise CorpusError("cannot build a unigram distribution from all-zero counts")
        weights = np.where(counts > 0, counts.astype(np.float64) ** exponent, 0.0)
        return cls(weights / weights.sum(), counts, float(exponent))

    def floored(self) -> "UnigramDistribution":
        """Test-time copy in which zero-count ids get mass 1/(N + |V|), renormalized."""
        if (self.counts > 0).all():
            return self
        floor = 1.0 / (self.total + len(self.counts))
        probs = np.where(self.counts > 0, self.probs, floor)
        return UnigramDistribution(probs / probs.sum(), self.counts, self.smoothing_exponent)


def unigram_distribution(vocab: Vocabulary, ids: Sequence[int], exponent: float = 1.0) -> UnigramDistribution:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise CorpusError("unigram distribution needs a non-empty id stream")
    counts = np.bincount(ids, minlength=len(vocab))
    if counts.size != len(vocab):
        raise CorpusError("id stream contains ids outside the vocabulary")
    return UnigramDistribution.from_counts(counts, exponent)


class BatchPlan:
    """B parallel contiguous streams walked in windows of ``bptt_len`` tokens.

    Iterating yields ``(inputs, targets)`` pairs of shape ``(B, T)``; the final
    window of an epoch may be shorter so that every stream position except the
    last one is used as an input exactly once.
    """

    def __init__(self, streams: np.ndarray, bptt_len: int):
        self.streams = streams
        self.bptt_len = bptt_len
        self.cursor = 0

    @property
    def batch_size(self) -> int:
        return self.streams.shape[0]

    @property
    def num_steps(self) -> int:
        usable = self.streams.shape[1] - 1
        return -(-usable // self.bptt_len)

    @property
    def num_tokens(self) -> int:
        return self.batch_size * (self.streams.shape[1] - 1)

    def reset(self) -> None:
        self.cursor = 0

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        self.reset()
        last = self.streams.shape[1] - 1
        while self.cursor < last:
            end = min(self.cursor + self.bptt_len, last)
            inputs = self.streams[:, self.cursor : end]
            targets = self.streams[:, self.cursor + 1 : end + 1]
            self.cursor = end
            yield inputs, targets


def make_batches(ids: Sequence[int], batch_size: int, bptt_len: int) -> BatchPlan:
    ids = np.asarray(ids, dtype=np.int64)
    if batch_size < 1 or bptt_len < 1:
        raise CorpusError("batch_size and bptt_len must be positive")
    need = batch_size * (bptt_len + 1)
    if ids.size < need:
        raise CorpusError(
            f"corpus has {ids.size} tokens; batch_size={batch_size}, bptt_len={bptt_len} "
            f"needs at least {need}"
        )
    length = ids.size // batch_size
    streams = ids[: batch_size * length].reshape(batch_size, length)
    return BatchPlan(streams, bptt_len)
