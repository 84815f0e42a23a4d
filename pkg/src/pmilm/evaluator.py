"""Normalised test-time distributions, sequence log-probabilities and perplexity.

PMI-LM:  log p(w|c) = w.c + log p(w) - logsumexp_v(v.c + log p(v))
NCE-LM:  log p(w|c) = w.c + b_w      - logsumexp_v(v.c + b_v)

Scoring a stream starts from a zero LSTM state with ``<eos>`` as the
conditioning token, so every token of the stream (including the first) is
predicted and counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from pmilm.corpus import UnigramDistribution, Vocabulary
from pmilm.model import LstmState, ModelParams, forward

# logits computed per block of contexts to bound memory (rows x |V|)
_BLOCK = 256


@dataclass(frozen=True)
class ConditionalDist:
    log_probs: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


def _log_prior(params: ModelParams, mode: str, dist: UnigramDistribution | None) -> np.ndarray:
    if mode == "pmi":
        if dist is None:
            raise ValueError("PMI-mode scoring needs the unigram distribution")
        probs = dist.floored().probs
        if len(probs) != params.output_embed.shape[0]:
            raise ValueError("unigram distribution and output embeddings disagree on |V|")
        return np.log(probs)
    if mode == "nce":
        if params.nce_bias is None:
            raise ValueError("NCE-mode scoring needs an nce_bias vector")
        return params.nce_bias
    raise ValueError(f"unknown mode {mode!r}")


def log_conditionals(params: ModelParams, contexts: np.ndarray, mode: str, dist: UnigramDistribution | None) -> np.ndarray:
    """Row-normalised log p(.|c) for an ``n x d`` block of contexts."""
    prior = _log_prior(params, mode, dist)
    out = np.empty((contexts.shape[0], params.output_embed.shape[0]))
    for lo in range(0, contexts.shape[0], _BLOCK):
        logits = contexts[lo : lo + _BLOCK] @ params.output_embed.T + prior
        out[lo : lo + _BLOCK] = logits - logsumexp(logits, axis=1, keepdims=True)
    return out


def conditional_distribution(params: ModelParams, c: np.ndarray, mode: str, dist: UnigramDistribution | None = None) -> ConditionalDist:
    return ConditionalDist(log_conditionals(params, np.atleast_2d(c), mode, dist)[0])


@dataclass
class StreamState:
    """Recurrent state plus the last token read, for resuming a scored stream."""

    lstm: LstmState
    prev: np.ndarray  # (B,) ids


def initial_stream_state(params: ModelParams, batch_size: int, start_id: int) -> StreamState:
    hidden = params.lstm_b[0].shape[0] // 4
    zeros = [np.zeros((batch_size, hidden)) for _ in params.lstm_W]
    return StreamState(LstmState(zeros, [z.copy() for z in zeros]), np.full(batch_size, start_id, dtype=np.int64))


def token_log_probs(
    params: ModelParams,
    ids: np.ndarray,
    mode: str,
    dist: UnigramDistribution | None,
    start_id: int = 0,
    state: StreamState | None = None,
    window: int = 64,
) -> tuple[np.ndarray, StreamState]:
    """Per-token log p(id_t | prefix) for one stream (1-d ids) or independent streams (2-d).

    ``start_id`` is the token read before the first one (``<eos>`` in practice);
    pass the returned state back in to continue the same stream.
    """
    ids = np.asarray(ids, dtype=np.int64)
    single = ids.ndim == 1
    grid = ids[None, :] if single else ids
    B, N = grid.shape
    if state is None:
        state = initial_stream_state(params, B, start_id)
    out = np.empty((B, N))
    lstm, prev = state.lstm, state.prev
    for lo in range(0, N, window):
        hi = min(N, lo + window)
        inputs = np.concatenate([prev[:, None], grid[:, lo : hi - 1]], axis=1)
        ctx, lstm, _ = forward(params, inputs, lstm, train_mode=False)
        logp = log_conditionals(params, ctx.reshape(B * (hi - lo), -1), mode, dist)
        flat_targets = grid[:, lo:hi].reshape(-1)
        out[:, lo:hi] = logp[np.arange(flat_targets.size), flat_targets].reshape(B, hi - lo)
        prev = grid[:, hi - 1].copy()
    new_state = StreamState(lstm, prev)
    return (out[0] if single else out), new_state


def sequence_log_prob(params, ids, mode, dist, start_id: int = 0, state: StreamState | None = None) -> float:
    logp, _ = token_log_probs(params, ids, mode, dist, start_id, state)
    return float(logp.sum())


def perplexity(params, ids, mode, dist, start_id: int = 0) -> float:
    ids = np.asarray(ids)
    if ids.size == 0:
        raise ValueError("perplexity of an empty stream is undefined")
    return math.exp(-sequence_log_prob(params, ids, mode, dist, start_id) / ids.size)


def unigram_perplexity(ids: np.ndarray, dist: UnigramDistribution) -> float:
    """Perplexity of a context-free model that predicts p(w) everywhere."""
    logp = np.log(dist.floored().probs)[np.asarray(ids)]
    return math.exp(-float(logp.mean()))


def top_k_predictions(
    params: ModelParams,
    prefix: np.ndarray,
    mode: str,
    dist: UnigramDistribution | None,
    k: int,
    vocab: Vocabulary | None = None,
    start_id: int = 0,
) -> list[tuple[str | int, float]]:
    """The ``k`` most probable next words after ``prefix``; ties go to the lower id."""
    prefix = np.asarray(prefix, dtype=np.int64)
    state = initial_stream_state(params, 1, start_id)
    inputs = np.concatenate([[start_id], prefix])[None, :]
    ctx, _, _ = forward(params, inputs, state.lstm, train_mode=False)
    probs = conditional_distribution(params, ctx[0, -1], mode, dist).probs
    k = min(k, probs.size)
    order = np.lexsort((np.arange(probs.size), -probs))[:k]
    label = (lambda i: vocab.id_to_token[i]) if vocab is not None else int
    return [(label(i), float(probs[i])) for i in order]


def format_report(name: str, mode: str, n_tokens: int, total_log_prob: float) -> str:
    ppl = math.exp(-total_log_prob / n_tokens)
    return (
        f"dataset\t{name}\n"
        f"mode\t{mode}\n"
        f"tokens\t{n_tokens}\n"
        f"log_prob\t{total_log_prob:.6f}\n"
        f"perplexity\t{ppl:.4f}\n"
    )
