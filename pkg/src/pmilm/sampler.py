"""Walker/Vose alias tables for O(1) noise-word sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from pmilm.corpus import UnigramDistribution


@dataclass(frozen=True)
class AliasTable:
    prob: np.ndarray
    alias: np.ndarray

    @property
    def size(self) -> int:
        return len(self.prob)

    def implied_probs(self) -> np.ndarray:
        """Probability of each id under the table: own cell plus aliased overflow."""
        n = self.size
        mass = self.prob.copy()
        np.add.at(mass, self.alias, 1.0 - self.prob)
        return mass / n


def build_alias(dist: UnigramDistribution | np.ndarray) -> AliasTable:
    probs = np.asarray(getattr(dist, "probs", dist), dtype=np.float64)
    n = len(probs)
    if n == 0 or probs.min() < 0 or probs.sum() <= 0:
        raise ValueError("alias table needs a non-empty, non-negative distribution")
    scaled = probs * (n / probs.sum())
    prob = np.zeros(n)
    alias = np.arange(n, dtype=np.int64)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        lo = small.pop()
        hi = large.pop()
        prob[lo] = scaled[lo]
        alias[lo] = hi
        scaled[hi] = (scaled[hi] + scaled[lo]) - 1.0
        (small if scaled[hi] < 1.0 else large).append(hi)
    # leftovers are 1.0 up to rounding; a true zero must stay unreachable
    top = int(np.argmax(probs))
    for i in large + small:
        if probs[i] > 0:
            prob[i] = 1.0
        else:
            prob[i] = 0.0
            alias[i] = top
    prob.setflags(write=False)
    alias.setflags(write=False)
    return AliasTable(prob, alias)


def draw(table: AliasTable, rng: np.random.Generator, n: int | tuple[int, ...]) -> np.ndarray:
    """``n`` i.i.d. ids (``n`` may be a shape). Repeats are allowed."""
    shape = (n,) if isinstance(n, (int, np.integer)) else tuple(n)
    if math.prod(shape) < 1:
        raise ValueError("must draw at least one sample")
    cells = rng.integers(0, table.size, size=shape)
    coins = rng.random(size=shape)
    return np.where(coins < table.prob[cells], cells, table.alias[cells])


def log_prob(dist: UnigramDistribution, word_id) -> float | np.ndarray:
    """Natural log of p(w); raises if any requested word has zero probability."""
    p = dist.probs[word_id]
    if np.any(p <= 0):
        bad = np.atleast_1d(word_id)[np.atleast_1d(p) <= 0][:5]
        raise ValueError(f"zero noise probability for word id(s) {bad.tolist()}; NCE score undefined")
    return np.log(p)
