"""Brute-force checks of the theory on small enumerable joint distributions.

Contexts here are single symbols rather than LSTM states, so every quantity
(PMI matrix, expected objective, NCE posterior) can be computed exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, logsumexp


@dataclass(frozen=True)
class JointCounts:
    """Co-occurrence counts ``n[w, c]``; rows are words, columns contexts."""

    n: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.n, dtype=np.float64)
        if n.ndim != 2 or (n < 0).any() or n.sum() <= 0:
            raise ValueError("joint counts must be a non-negative, non-empty matrix")
        object.__setattr__(self, "n", n)

    @property
    def joint(self) -> np.ndarray:
        return self.n / self.n.sum()

    @property
    def p_w(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    @property
    def p_c(self) -> np.ndarray:
        return self.joint.sum(axis=0)

    @property
    def p_w_given_c(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.joint / self.p_c[None, :]


def random_joint(rng: np.random.Generator, n_words: int, n_contexts: int | None = None) -> JointCounts:
    n_contexts = n_words if n_contexts is None else n_contexts
    return JointCounts(rng.dirichlet(np.ones(n_words * n_contexts)).reshape(n_words, n_contexts))


def exact_pmi_matrix(counts: JointCounts, k: float = 1.0) -> np.ndarray:
    """log(p(w|c) / (k p(w))); NaN where the pair never co-occurs."""
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log(counts.p_w_given_c / (k * counts.p_w[:, None]))
    pmi[counts.n <= 0] = np.nan
    return pmi


def expected_neg_objective(W: np.ndarray, C: np.ndarray, counts: JointCounts, k: float) -> float:
    """Expectation of the negative-sampling objective, marginal-factorized form."""
    S = W @ C.T
    positive = float((counts.joint * log_expit(S)).sum())
    negative = float(counts.p_w @ log_expit(-S) @ counts.p_c)
    return positive + k * negative


def expected_neg_objective_pairwise(W: np.ndarray, C: np.ndarray, counts: JointCounts, k: float) -> float:
    """Same quantity as :func:`expected_neg_objective`, one (w, c) pair at a time."""
    joint, p_w, p_c = counts.joint, counts.p_w, counts.p_c
    total = 0.0
    for w in range(W.shape[0]):
        for c in range(C.shape[0]):
            s = float(W[w] @ C[c])
            log_sig_pos = -math.log1p(math.exp(-s)) if s >= 0 else s - math.log1p(math.exp(s))
            log_sig_neg = log_sig_pos - s
            total += joint[w, c] * log_sig_pos + k * p_w[w] * p_c[c] * log_sig_neg
    return total


def expected_neg_gradient(W: np.ndarray, C: np.ndarray, counts: JointCounts, k: float) -> tuple[np.ndarray, np.ndarray]:
    S = W @ C.T
    G = counts.joint * expit(-S) - k * np.outer(counts.p_w, counts.p_c) * expit(S)
    return G @ C, G.T @ W


@dataclass(frozen=True)
class PmiOptimumResult:
    deviation: float
    grad_norm: float
    iterations: int
    converged: bool
    objective: float


def verify_pmi_optimum(
    counts: JointCounts,
    k: float,
    d: int,
    seed: int = 0,
    step: float = 0.5,
    tol: float = 1e-7,
    max_iter: int = 1_000_000,
    init_scale: float = 0.1,
) -> PmiOptimumResult:
    """Maximise the expected objective by full-batch gradient ascent.

    Reports the largest |w.c - pmi_k(w, c)| over co-occurring pairs. With
    ``d >= min(|V|, |Vc|)`` the dot-product matrix can match PMI exactly, so the
    deviation measures how close the optimum sits to the PMI matrix.
    """
    rng = np.random.default_rng(seed)
    W = rng.normal(scale=init_scale, size=(counts.n.shape[0], d))
    C = rng.normal(scale=init_scale, size=(counts.n.shape[1], d))
    joint = counts.joint
    noise = k * np.outer(counts.p_w, counts.p_c)
    grad_norm = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        S = W @ C.T
        G = joint * expit(-S) - noise * expit(S)
        gW = G @ C
        gC = G.T @ W
        grad_norm = math.sqrt(float(np.vdot(gW, gW) + np.vdot(gC, gC)))
        if grad_norm < tol:
            break
        W += step * gW
        C += step * gC
    pmi = exact_pmi_matrix(counts, k)
    defined = ~np.isnan(pmi)
    deviation = float(np.abs((W @ C.T)[defined] - pmi[defined]).max())
    return PmiOptimumResult(deviation, grad_norm, it, grad_norm < tol, expected_neg_objective(W, C, counts, k))


def nce_posterior_error(model_logits: np.ndarray, noise_probs: np.ndarray, k: float) -> float:
    """Max |sigmoid score - exact mixture posterior| over the vocabulary.

    ``model_logits`` are w.c + b_w; the model distribution uses the exact
    partition function Z_c = sum_w exp(w.c + b_w).
    """
    logits = np.asarray(model_logits, dtype=np.float64)
    noise = np.asarray(noise_probs, dtype=np.float64)
    log_z = logsumexp(logits)
    score = expit(logits - log_z - np.log(noise * k))
    p_model = np.exp(logits - log_z)
    true_part = p_model / (k + 1)
    noise_part = k * noise / (k + 1)
    posterior = true_part / (true_part + noise_part)
    return float(np.abs(score - posterior).max())


def verify_nce_posterior(n_instances: int = 100, vocab_size: int = 5, k: float = 3, seed: int = 0) -> float:
    """Worst :func:`nce_posterior_error` over random instances with vocabulary <= 10."""
    if not 1 <= vocab_size <= 10:
        raise ValueError("vocab_size must be between 1 and 10")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        logits = rng.normal(scale=2.0, size=vocab_size)
        noise = rng.dirichlet(np.ones(vocab_size))
        worst = max(worst, nce_posterior_error(logits, noise, k))
    return worst


def conditional_from_pmi(pmi: np.ndarray, p_w: np.ndarray) -> np.ndarray:
    """Normalise exp(pmi) p(w) over words for each context column."""
    logits = pmi + np.log(p_w)[:, None]
    return np.exp(logits - logsumexp(logits, axis=0, keepdims=True))
