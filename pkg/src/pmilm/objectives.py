"""Sampled binary objectives shared by PMI-LM (negative sampling) and NCE-LM.

Both maximise  sum_{w,c} [log s(w,c) + sum_i log(1 - s(u_i, c))]  with
s = sigmoid(logit); the models differ only in the logit:

    PMI:  w.c
    NCE:  w.c + b_w - log(k p(w))        (log Z_c fixed at 0)

The value reported here is the negated objective divided by a normaliser
(the token count by default), so it is minimised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from pmilm.corpus import UnigramDistribution
from pmilm.model import ModelParams, SparseRows
from pmilm.sampler import log_prob

# bounds the B*T*k*d noise-vector gather
_CHUNK_ELEMENTS = 1 << 22


class PmiScore:
    has_bias = False

    def offset(self, params: ModelParams, ids: np.ndarray) -> np.ndarray | float:
        return 0.0


class NceScore:
    has_bias = True

    def __init__(self, dist: UnigramDistribution, k: int):
        self.dist = dist
        self.k = k
        self._log_k = math.log(k)

    def offset(self, params: ModelParams, ids: np.ndarray) -> np.ndarray:
        if params.nce_bias is None:
            raise ValueError("NCE objective needs a model with an nce_bias vector")
        return params.nce_bias[ids] - (self._log_k + log_prob(self.dist, ids))


@dataclass
class StepLoss:
    value: float
    total: float
    grad_context: np.ndarray
    grad_output: SparseRows
    grad_bias: SparseRows | None = None


def common_form(
    score,
    params: ModelParams,
    context: np.ndarray,
    targets: np.ndarray,
    noise: np.ndarray,
    normalizer: float | None = None,
) -> StepLoss:
    """Loss and gradients for a ``B x T`` window of context vectors.

    ``noise`` is either ``B x T x k`` (fresh samples per token) or ``(k,)``
    (one set shared by the whole window). Repeated noise ids each contribute
    their own term. ``normalizer`` defaults to ``B * T``.
    """
    B, T, d = context.shape
    n = B * T
    norm = float(n if normalizer is None else normalizer)
    C = context.reshape(n, d)
    tgt = np.asarray(targets).reshape(n)
    noise = np.asarray(noise)
    shared = noise.ndim == 1
    if not shared:
        noise = noise.reshape(n, -1)
    k = noise.shape[-1]
    E = params.output_embed

    total = 0.0
    grad_C = np.empty_like(C)
    pos_coef = np.empty(n)
    neg_coef = np.empty((n, k))

    if shared:
        U = E[noise]
        neg_off = score.offset(params, noise)
    step = n if shared else max(1, _CHUNK_ELEMENTS // (k * d))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        c = C[lo:hi]
        w_t = E[tgt[lo:hi]]
        pos = np.einsum("nd,nd->n", c, w_t) + score.offset(params, tgt[lo:hi])
        if shared:
            neg = c @ U.T + neg_off
        else:
            U_chunk = E[noise[lo:hi]]
            neg = np.einsum("nd,nkd->nk", c, U_chunk) + score.offset(params, noise[lo:hi])
        total -= float(log_expit(pos).sum() + log_expit(-neg).sum())
        gp = -expit(-pos) / norm
        gn = expit(neg) / norm
        pos_coef[lo:hi] = gp
        neg_coef[lo:hi] = gn
        if shared:
            grad_C[lo:hi] = gp[:, None] * w_t + gn @ U
        else:
            grad_C[lo:hi] = gp[:, None] * w_t + np.einsum("nk,nkd->nd", gn, U_chunk)

    # output rows: positive rows get gp * c, noise rows gn * c
    if shared:
        noise_rows = neg_coef.T @ C
        grad_output = SparseRows.accumulate(
            np.concatenate([tgt, noise]), np.concatenate([pos_coef[:, None] * C, noise_rows])
        )
        noise_ids, noise_coef = noise, neg_coef.sum(axis=0)
    else:
        ids = np.concatenate([tgt, noise.reshape(-1)])
        vals = np.concatenate([pos_coef[:, None] * C, (neg_coef[:, :, None] * C[:, None, :]).reshape(n * k, d)])
        grad_output = SparseRows.accumulate(ids, vals)
        noise_ids, noise_coef = noise.reshape(-1), neg_coef.reshape(-1)

    grad_bias = None
    if score.has_bias:
        grad_bias = SparseRows.accumulate(
            np.concatenate([tgt, noise_ids]), np.concatenate([pos_coef, noise_coef])
        )
    return StepLoss(total / norm, total, grad_C.reshape(B, T, d), grad_output, grad_bias)


def neg_loss(context, targets, noise, params: ModelParams, normalizer=None) -> StepLoss:
    """Negative-sampling (word2vec NEG) loss with logit w.c."""
    return common_form(PmiScore(), params, context, targets, noise, normalizer)


def nce_loss(context, targets, noise, params: ModelParams, dist: UnigramDistribution, k: int, normalizer=None) -> StepLoss:
    return common_form(NceScore(dist, k), params, context, targets, noise, normalizer)


def make_score(mode: str, dist: UnigramDistribution | None = None, k: int | None = None):
    if mode == "pmi":
        return PmiScore()
    if mode == "nce":
        return NceScore(dist, k)
    raise ValueError(f"unknown mode {mode!r}")
