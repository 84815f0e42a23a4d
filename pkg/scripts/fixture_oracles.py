"""Counting oracles for the fixture corpus, computed without the pmilm package.

Prints the targets frozen into the acceptance tests:

* unigram perplexity of each held-out split, with p(w) = n_w / N from train
  (``<eos>`` counted once per line);
* the analytic perplexity of the generating chain, exp of its entropy rate
  under the stationary distribution;
* the empirical perplexity of the test split under the true chain.
"""

import math
from collections import Counter
from pathlib import Path

import numpy as np

FIXTURE = Path(__file__).resolve().parents[1] / "src/pmilm/data/fixture"


def tokens(split):
    return [t for line in (FIXTURE / f"{split}.txt").read_text().splitlines() for t in line.split() + ["<eos>"]]


def main():
    train = tokens("train")
    counts = Counter(train)
    n = len(train)
    for split in ("valid", "test"):
        held = tokens(split)
        nll = -sum(math.log(counts[t] / n) for t in held) / len(held)
        print(f"unigram perplexity {split}: {math.exp(nll)!r}")

    rows = (FIXTURE / "transitions.tsv").read_text().splitlines()
    names = rows[0].split("\t")[1:]
    P = np.array([[float(x) for x in row.split("\t")[1:]] for row in rows[1:]])
    evals, evecs = np.linalg.eig(P.T)
    pi = np.real(evecs[:, np.argmin(np.abs(evals - 1))])
    pi /= pi.sum()
    entropy = -float(np.sum(pi[:, None] * P * np.log(P)))
    print(f"chain perplexity (entropy rate): {math.exp(entropy)!r}")

    index = {name: i for i, name in enumerate(names)}
    test = tokens("test")
    prev = index["<eos>"]
    nll = 0.0
    for t in test:
        nll -= math.log(P[prev, index[t]])
        prev = index[t]
    print(f"chain perplexity on test split: {math.exp(nll / len(test))!r}")


if __name__ == "__main__":
    main()
