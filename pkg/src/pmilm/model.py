"""Embedding lookup + stacked LSTM context encoder with hand-written truncated BPTT.

The context vector for predicting ``targets[b, t]`` is the top LSTM layer's
hidden state after reading ``inputs[b, t]``. Output word vectors live in a
separate table of the same width, so a word/context score is a plain dot
product with no projection layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy.special import expit

from pmilm.corpus import UnigramDistribution
from pmilm.sampler import log_prob

MODES = ("pmi", "nce")


class NonFiniteError(FloatingPointError):
    pass


class TapeReuseError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden: int = 300
    layers: int = 2
    d: int | None = None
    dropout: float = 0.5
    k: int = 100
    mode: str = "pmi"
    init_scale: float = 0.05
    forget_bias: float = 1.0

    def __post_init__(self):
        if self.d is None:
            object.__setattr__(self, "d", self.hidden)
        if self.d != self.hidden:
            raise ValueError(f"embedding size d={self.d} must equal hidden size {self.hidden}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.layers < 1 or self.hidden < 1 or self.vocab_size < 1:
            raise ValueError("layers, hidden and vocab_size must be positive")

    def layer_input_size(self, layer: int) -> int:
        return self.d if layer == 0 else self.hidden


@dataclass
class SparseRows:
    """Row-sparse gradient: ``values[j]`` belongs to row ``ids[j]``; ids are unique."""

    ids: np.ndarray
    values: np.ndarray

    @classmethod
    def accumulate(cls, ids: np.ndarray, values: np.ndarray) -> "SparseRows":
        ids = np.asarray(ids)
        values = values.reshape((ids.size,) + values.shape[ids.ndim :])
        ids = ids.reshape(-1)
        uniq, inverse = np.unique(ids, return_inverse=True)
        out = np.zeros((uniq.size,) + values.shape[1:], dtype=values.dtype)
        np.add.at(out, inverse, values)
        return cls(uniq, out)

    def to_dense(self, shape) -> np.ndarray:
        dense = np.zeros(shape)
        dense[self.ids] = self.values
        return dense

    def scale(self, factor: float) -> "SparseRows":
        return SparseRows(self.ids, self.values * factor)

    def sq_norm(self) -> float:
        return float(np.vdot(self.values, self.values))


def merge_sparse(*parts: SparseRows) -> SparseRows:
    ids = np.concatenate([p.ids for p in parts])
    values = np.concatenate([p.values for p in parts])
    return SparseRows.accumulate(ids, values)


@dataclass
class ModelParams:
    input_embed: np.ndarray
    lstm_W: list[np.ndarray]
    lstm_b: list[np.ndarray]
    output_embed: np.ndarray
    nce_bias: np.ndarray | None = None

    def named(self) -> dict[str, np.ndarray]:
        out = {"input_embed": self.input_embed}
        for l, (W, b) in enumerate(zip(self.lstm_W, self.lstm_b)):
            out[f"lstm.{l}.W"] = W
            out[f"lstm.{l}.b"] = b
        out["output_embed"] = self.output_embed
        if self.nce_bias is not None:
            out["nce_bias"] = self.nce_bias
        return out

    @classmethod
    def from_named(cls, arrays: dict[str, np.ndarray]) -> "ModelParams":
        layers = sum(1 for name in arrays if name.endswith(".W"))
        return cls(
            input_embed=arrays["input_embed"],
            lstm_W=[arrays[f"lstm.{l}.W"] for l in range(layers)],
            lstm_b=[arrays[f"lstm.{l}.b"] for l in range(layers)],
            output_embed=arrays["output_embed"],
            nce_bias=arrays.get("nce_bias"),
        )

    def copy(self) -> "ModelParams":
        return ModelParams.from_named({k: v.copy() for k, v in self.named().items()})

    @staticmethod
    def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
        h, V = config.hidden, config.vocab_size
        shapes = {"input_embed": (V, config.d)}
        for l in range(config.layers):
            shapes[f"lstm.{l}.W"] = (config.layer_input_size(l) + h, 4 * h)
            shapes[f"lstm.{l}.b"] = (4 * h,)
        shapes["output_embed"] = (V, config.d)
        if config.mode == "nce":
            shapes["nce_bias"] = (V,)
        return shapes


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Uniform(-init_scale, init_scale) weights; forget-gate bias ``config.forget_bias``.

    NCE mode adds a per-word bias initialised to -log|V| (with Z_c fixed at 1
    this starts every word at the uniform log-probability).
    """
    s, h, V = config.init_scale, config.hidden, config.vocab_size
    input_embed = rng.uniform(-s, s, size=(V, config.d))
    Ws, bs = [], []
    for l in range(config.layers):
        Ws.append(rng.uniform(-s, s, size=(config.layer_input_size(l) + h, 4 * h)))
        b = np.zeros(4 * h)
        b[h : 2 * h] = config.forget_bias
        bs.append(b)
    output_embed = rng.uniform(-s, s, size=(V, config.d))
    nce_bias = np.full(V, -math.log(V)) if config.mode == "nce" else None
    return ModelParams(input_embed, Ws, bs, output_embed, nce_bias)


@dataclass
class LstmState:
    h: list[np.ndarray]
    c: list[np.ndarray]

    @classmethod
    def zeros(cls, config: ModelConfig, batch_size: int) -> "LstmState":
        shape = (batch_size, config.hidden)
        return cls([np.zeros(shape) for _ in range(config.layers)], [np.zeros(shape) for _ in range(config.layers)])

    def copy(self) -> "LstmState":
        return LstmState([x.copy() for x in self.h], [x.copy() for x in self.c])


@dataclass
class _LayerCache:
    x: np.ndarray          # B x T x d_in, after dropout
    mask: np.ndarray | None
    h_prev: np.ndarray     # B x T x h
    c_prev: np.ndarray
    gates: np.ndarray      # B x T x 4h, activated (i, f, o sigmoid; g tanh)
    tanh_c: np.ndarray


@dataclass
class Tape:
    inputs: np.ndarray
    layers: list[_LayerCache]
    used: bool = field(default=False)


def _dropout_mask(rng, shape, rate):
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def forward(
    params: ModelParams,
    inputs: np.ndarray,
    state: LstmState,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    dropout: float = 0.0,
) -> tuple[np.ndarray, LstmState, Tape]:
    """Run the encoder over a ``B x T`` window of ids.

    Returns the ``B x T x d`` context vectors, the final state (fresh arrays, so the
    caller's ``state`` is untouched) and a tape for :func:`backward`. Dropout is
    applied to every layer's input in train mode only; the top output is never
    dropped.
    """
    inputs = np.asarray(inputs)
    B, T = inputs.shape
    use_dropout = train_mode and dropout > 0.0
    if use_dropout and rng is None:
        raise ValueError("dropout in train mode needs an rng")
    x = params.input_embed[inputs]
    caches = []
    new_h, new_c = [], []
    for l, (W, b) in enumerate(zip(params.lstm_W, params.lstm_b)):
        h_size = b.shape[0] // 4
        mask = None
        if use_dropout:
            mask = _dropout_mask(rng, x.shape, dropout)
            x = x * mask
        d_in = x.shape[2]
        if state.h[l].shape != (B, h_size):
            raise ValueError(f"layer {l} state has shape {state.h[l].shape}, expected {(B, h_size)}")
        W_x, W_h = W[:d_in], W[d_in:]
        pre = x @ W_x + b
        gates = np.empty((B, T, 4 * h_size))
        h_prev = np.empty((B, T, h_size))
        c_prev = np.empty((B, T, h_size))
        tanh_c = np.empty((B, T, h_size))
        out = np.empty((B, T, h_size))
        h, c = state.h[l], state.c[l]
        for t in range(T):
            h_prev[:, t] = h
            c_prev[:, t] = c
            a = pre[:, t] + h @ W_h
            g = gates[:, t]
            g[:, : 3 * h_size] = expit(a[:, : 3 * h_size])
            g[:, 3 * h_size :] = np.tanh(a[:, 3 * h_size :])
            i, f, o, cand = (g[:, j * h_size : (j + 1) * h_size] for j in range(4))
            c = f * c + i * cand
            tc = np.tanh(c)
            h = o * tc
            tanh_c[:, t] = tc
            out[:, t] = h
        if not np.isfinite(out).all():
            bad = int(np.argmax(~np.isfinite(out).all(axis=(0, 2))))
            raise NonFiniteError(f"non-finite activation at step {bad} of layer {l}")
        caches.append(_LayerCache(x, mask, h_prev, c_prev, gates, tanh_c))
        new_h.append(h.copy())
        new_c.append(c.copy())
        x = out
    return x, LstmState(new_h, new_c), Tape(inputs, caches)


def backward(params: ModelParams, tape: Tape, grad_context: np.ndarray) -> dict[str, np.ndarray | SparseRows]:
    """Reverse pass through the window recorded on ``tape``.

    No gradient is sent into the state the window started from. A tape can be
    consumed once.
    """
    if tape.used:
        raise TapeReuseError("tape already consumed by a previous backward call")
    tape.used = True
    grads: dict[str, np.ndarray | SparseRows] = {}
    d_out = np.asarray(grad_context, dtype=np.float64)
    for l in reversed(range(len(tape.layers))):
        cache = tape.layers[l]
        W = params.lstm_W[l]
        B, T, four_h = cache.gates.shape
        hs = four_h // 4
        d_in = cache.x.shape[2]
        W_h = W[d_in:]
        d_pre = np.empty((B, T, four_h))
        dh_next = np.zeros((B, hs))
        dc_next = np.zeros((B, hs))
        for t in reversed(range(T)):
            g = cache.gates[:, t]
            i, f, o, cand = (g[:, j * hs : (j + 1) * hs] for j in range(4))
            tc = cache.tanh_c[:, t]
            dh = d_out[:, t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            da = d_pre[:, t]
            da[:, :hs] = dc * cand * i * (1.0 - i)
            da[:, hs : 2 * hs] = dc * cache.c_prev[:, t] * f * (1.0 - f)
            da[:, 2 * hs : 3 * hs] = dh * tc * o * (1.0 - o)
            da[:, 3 * hs :] = dc * i * (1.0 - cand * cand)
            dc_next = dc * f
            dh_next = da @ W_h.T
        flat = d_pre.reshape(B * T, four_h)
        dW = np.empty_like(W)
        dW[:d_in] = cache.x.reshape(B * T, d_in).T @ flat
        dW[d_in:] = cache.h_prev.reshape(B * T, hs).T @ flat
        grads[f"lstm.{l}.W"] = dW
        grads[f"lstm.{l}.b"] = flat.sum(axis=0)
        d_out = d_pre @ W[:d_in].T
        if cache.mask is not None:
            d_out = d_out * cache.mask
    grads["input_embed"] = SparseRows.accumulate(tape.inputs, d_out)
    return grads


def score_pmi(params: ModelParams, c: np.ndarray, w_id) -> float | np.ndarray:
    """Pre-sigmoid PMI-LM score: the plain dot product of word and context vectors."""
    return params.output_embed[w_id] @ c


def score_nce(params: ModelParams, c: np.ndarray, w_id, dist: UnigramDistribution, k: int) -> float | np.ndarray:
    """Pre-sigmoid NCE-LM score with log Z_c = 0: w.c + b_w - log(k p(w))."""
    if params.nce_bias is None:
        raise ValueError("NCE scoring needs a model with an nce_bias vector")
    return params.output_embed[w_id] @ c + params.nce_bias[w_id] - (math.log(k) + log_prob(dist, w_id))


def iter_grads(grads: dict) -> Iterator[np.ndarray]:
    for g in grads.values():
        yield g.values if isinstance(g, SparseRows) else g
