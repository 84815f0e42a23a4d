"""Truncated-BPTT training loop, optimizers and learning-rate schedule."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from pmilm import checkpoint as ckpt_io
from pmilm.config import TrainConfig
from pmilm.corpus import UnigramDistribution, make_batches
from pmilm.evaluator import perplexity
from pmilm.model import LstmState, ModelConfig, ModelParams, NonFiniteError, SparseRows, backward, forward, iter_grads
from pmilm.objectives import common_form, make_score
from pmilm.sampler import build_alias, draw

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


def make_rngs(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for parameter init, dropout masks and noise draws."""
    children = np.random.SeedSequence(seed).spawn(3)
    return {name: np.random.Generator(np.random.PCG64(s)) for name, s in zip(("init", "dropout", "noise"), children)}


def lr_schedule(config: TrainConfig, epoch: int) -> float:
    """Constant ``lr`` through ``decay_start_epoch``, then divided by ``decay_factor`` per epoch."""
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    if epoch <= config.decay_start_epoch:
        return config.lr
    return config.lr / config.decay_factor ** (epoch - config.decay_start_epoch)


def global_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in iter_grads(grads)))


def clip_gradients(grads: dict, max_norm: float) -> dict:
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise TrainingDiverged(f"gradient norm is {norm}")
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: (g.scale(scale) if isinstance(g, SparseRows) else g * scale) for k, g in grads.items()}


def _named(params: ModelParams | dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return params.named() if isinstance(params, ModelParams) else params


def sgd_step(params: ModelParams | dict[str, np.ndarray], grads: dict, lr: float) -> None:
    """In place: p -= lr * g, touching only the listed rows of row-sparse gradients."""
    named = _named(params)
    for name, g in grads.items():
        p = named[name]
        if isinstance(g, SparseRows):
            p[g.ids] -= lr * g.values
        else:
            p -= lr * g


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        out["adam.t"] = np.array([self.t], dtype=np.float64)
        return out


def adam_step(
    params: ModelParams | dict[str, np.ndarray],
    grads: dict,
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """Bias-corrected Adam, applied densely (moments of untouched rows still decay)."""
    named = _named(params)
    state.t += 1
    corr1 = 1.0 - beta1**state.t
    corr2 = 1.0 - beta2**state.t
    for name, p in named.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif isinstance(g, SparseRows):
            g = g.to_dense(p.shape)
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)
    return state


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    valid_ppl: float | None
    seconds: float
    tokens_per_sec: float

    def log_line(self) -> str:
        ppl = "nan" if self.valid_ppl is None else f"{self.valid_ppl:.4f}"
        return f"{self.epoch}\t{self.lr:.6g}\t{self.train_loss:.6f}\t{ppl}\t{self.tokens_per_sec:.1f}"


@dataclass
class TrainStats:
    epochs: list[EpochStats] = field(default_factory=list)
    tokens_seen: int = 0
    best_valid_ppl: float | None = None
    last_checkpoint: Path | None = None
    best_checkpoint: Path | None = None


def train(
    params: ModelParams,
    model_config: ModelConfig,
    config: TrainConfig,
    train_ids: np.ndarray,
    dist: UnigramDistribution,
    valid_ids: np.ndarray | None = None,
    *,
    rngs: dict[str, np.random.Generator] | None = None,
    out_dir: str | Path | None = None,
    vocab_hash: str = "",
    eos_id: int = 0,
    on_checkpoint: Callable[[Path, int], None] | None = None,
) -> TrainStats:
    """Train ``params`` in place.

    Each step runs forward, samples noise, evaluates the objective for
    ``model_config.mode``, back-propagates through the window, clips the global
    gradient norm and applies the optimizer. LSTM state is carried across
    windows and reset at the start of every epoch. With ``out_dir`` set, a
    checkpoint is written after each epoch (``epoch_NNN.ckpt``) and whenever
    validation perplexity improves (``best.ckpt``); the per-epoch log goes to
    ``train.log``.
    """
    if len(dist) != model_config.vocab_size:
        raise ValueError("noise distribution and model disagree on vocabulary size")
    rngs = rngs or make_rngs(config.seed)
    mode, k = model_config.mode, model_config.k
    score = make_score(mode, dist, k)
    table = build_alias(dist)
    plan = make_batches(train_ids, config.batch_size, config.bptt_len)
    adam = AdamState() if config.optimizer == "adam" else None
    out = Path(out_dir) if out_dir is not None else None
    log_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "train.log"
        log_path.write_text("epoch\tlr\ttrain_loss\tvalid_ppl\ttokens_per_sec\n")
    stats = TrainStats()

    def snapshot(epoch: int) -> ckpt_io.Checkpoint:
        return ckpt_io.Checkpoint(
            model_config=model_config,
            params=params,
            vocab_hash=vocab_hash,
            unigram_counts=dist.counts,
            noise_exponent=dist.smoothing_exponent,
            epoch=epoch,
            train_config=config.to_dict(),
            optimizer_state=adam.to_arrays() if adam is not None else {},
        )

    for epoch in range(1, config.epochs + 1):
        lr = lr_schedule(config, epoch)
        state = LstmState.zeros(model_config, config.batch_size)
        started = time.perf_counter()
        loss_sum, n_tok = 0.0, 0
        for step, (inputs, targets) in enumerate(plan):
            B, T = inputs.shape
            try:
                ctx, state, tape = forward(params, inputs, state, True, rngs["dropout"], model_config.dropout)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"epoch {epoch}, step {step}: {exc}") from exc
            noise_shape = (k,) if config.share_noise else (B, T, k)
            noise = draw(table, rngs["noise"], noise_shape)
            normalizer = B * T if config.loss_normalization == "token" else B
            result = common_form(score, params, ctx, targets, noise, normalizer)
            if not math.isfinite(result.total):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}")
            grads = backward(params, tape, result.grad_context)
            grads["output_embed"] = result.grad_output
            if result.grad_bias is not None:
                grads["nce_bias"] = result.grad_bias
            grads = clip_gradients(grads, config.clip_norm)
            if adam is None:
                sgd_step(params, grads, lr)
            else:
                adam_step(params, grads, adam, lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
            loss_sum += result.total
            n_tok += B * T
        elapsed = time.perf_counter() - started
        stats.tokens_seen += n_tok
        valid_ppl = None
        if valid_ids is not None and len(valid_ids):
            valid_ppl = perplexity(params, valid_ids, mode, dist, start_id=eos_id)
        es = EpochStats(epoch, lr, loss_sum / n_tok, valid_ppl, elapsed, n_tok / max(elapsed, 1e-9))
        stats.epochs.append(es)
        log.info("epoch %s", es.log_line())
        if out is not None:
            with open(log_path, "a") as fh:
                fh.write(es.log_line() + "\n")
            path = out / f"epoch_{epoch:03d}.ckpt"
            ckpt_io.save(snapshot(epoch), path)
            stats.last_checkpoint = path
            if on_checkpoint:
                on_checkpoint(path, epoch)
        if valid_ppl is not None and (stats.best_valid_ppl is None or valid_ppl < stats.best_valid_ppl):
            stats.best_valid_ppl = valid_ppl
            if out is not None:
                best = out / "best.ckpt"
                ckpt_io.save(snapshot(epoch), best)
                stats.best_checkpoint = best
                if on_checkpoint:
                    on_checkpoint(best, epoch)
    return stats
