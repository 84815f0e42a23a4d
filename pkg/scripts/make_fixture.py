"""Regenerate the bundled Markov-chain fixture corpus.

48 word types plus <eos> form the states of a first-order chain. Each state
sends 85% of its mass to four successors (Dirichlet weights) and spreads
the rest uniformly. Streams are cut into lines at <eos>.
"""

import argparse
from pathlib import Path

import numpy as np

N_WORDS = 48
SIZES = {"train": 50_000, "valid": 5_000, "test": 5_000}


def transition_matrix(rng):
    n = N_WORDS + 1
    P = np.full((n, n), 0.15 / n)
    for i in range(n):
        succ = rng.choice(n, size=4, replace=False)
        P[i, succ] += 0.85 * rng.dirichlet(np.ones(4))
    return P / P.sum(axis=1, keepdims=True)


def sample_stream(P, rng, n_tokens, start):
    eos = P.shape[0] - 1
    out, state = [], start
    while len(out) < n_tokens or state != eos:
        state = rng.choice(P.shape[0], p=P[state])
        out.append(state)
    return out, state


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=Path(__file__).resolve().parents[1] / "src/pmilm/data/fixture")
    ap.add_argument("--seed", type=int, default=20170601)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    P = transition_matrix(rng)
    names = [f"w{i:02d}" for i in range(N_WORDS)] + ["<eos>"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "transitions.tsv", "w") as fh:
        fh.write("\t".join(["from"] + names) + "\n")
        for i, row in enumerate(P):
            fh.write("\t".join([names[i]] + [repr(float(x)) for x in row]) + "\n")
    state = N_WORDS  # every split starts right after a sentence boundary
    for split, size in SIZES.items():
        stream, state = sample_stream(P, rng, size, state)
        lines, cur = [], []
        for s in stream:
            if s == N_WORDS:
                lines.append(" ".join(cur))
                cur = []
            else:
                cur.append(names[s])
        (out / f"{split}.txt").write_text("\n".join(lines) + "\n")
        print(split, len(stream), "tokens", len(lines), "lines")


if __name__ == "__main__":
    main()
