import math
from pathlib import Path

import numpy as np
import pytest

from pmilm.corpus import UnigramDistribution, build_vocab, encode, read_lines, tokens_of, unigram_distribution
from pmilm.model import LstmState, ModelConfig, ModelParams, SparseRows, backward, forward, init_params
from pmilm.objectives import common_form, make_score

FIXTURE_DIR = Path(__file__).resolve().parents[1] / "src" / "pmilm" / "data" / "fixture"


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def reference_lstm(params: ModelParams, inputs, h0, c0):
    """Scalar, loop-per-element LSTM used only as a test oracle.

    Gate columns are laid out (input, forget, output, candidate). Returns a
    nested list ctx[b][t][j] and the final (h, c) per layer.
    """
    B, T = len(inputs), len(inputs[0])
    layers = len(params.lstm_W)
    hs = params.lstm_b[0].shape[0] // 4
    h = [[list(map(float, h0[l][b])) for b in range(B)] for l in range(layers)]
    c = [[list(map(float, c0[l][b])) for b in range(B)] for l in range(layers)]
    ctx = [[None] * T for _ in range(B)]
    for b in range(B):
        for t in range(T):
            x = [float(v) for v in params.input_embed[inputs[b][t]]]
            for l in range(layers):
                W, bias = params.lstm_W[l], params.lstm_b[l]
                z = x + h[l][b]
                a = [bias[j] + sum(z[r] * W[r, j] for r in range(len(z))) for j in range(4 * hs)]
                new_c, new_h = [], []
                for j in range(hs):
                    i_g = _sigmoid(a[j])
                    f_g = _sigmoid(a[hs + j])
                    o_g = _sigmoid(a[2 * hs + j])
                    g_g = math.tanh(a[3 * hs + j])
                    cj = f_g * c[l][b][j] + i_g * g_g
                    new_c.append(cj)
                    new_h.append(o_g * math.tanh(cj))
                c[l][b], h[l][b] = new_c, new_h
                x = new_h
            ctx[b][t] = x
    return ctx, h, c


def finite_difference(fn, arr: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``arr`` (mutated in place, restored)."""
    out = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + eps
        hi = fn()
        arr[idx] = orig - eps
        lo = fn()
        arr[idx] = orig
        out[idx] = (hi - lo) / (2 * eps)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / (np.abs(a) + np.abs(b) + 1e-8)


class SmallProblem:
    """A random model + window + noise on which losses and gradients are compared."""

    def __init__(self, mode, seed=0, V=11, h=4, B=2, T=3, k=3, layers=2, init_scale=0.5, dropout=0.0):
        rng = np.random.default_rng(seed)
        self.config = ModelConfig(vocab_size=V, hidden=h, layers=layers, dropout=dropout, k=k, mode=mode, init_scale=init_scale)
        self.params = init_params(self.config, rng)
        if mode == "nce":
            self.params.nce_bias += rng.normal(scale=0.5, size=V)
        self.dist = UnigramDistribution.from_counts(rng.integers(1, 10, size=V))
        self.inputs = rng.integers(0, V, size=(B, T))
        self.targets = rng.integers(0, V, size=(B, T))
        self.noise = rng.integers(0, V, size=(B, T, k))
        self.state = LstmState(
            [rng.normal(scale=0.5, size=(B, h)) for _ in range(layers)],
            [rng.normal(scale=0.5, size=(B, h)) for _ in range(layers)],
        )
        self.score = make_score(mode, self.dist, k)
        self.dropout_seed = seed + 100

    def _forward(self):
        rng = np.random.default_rng(self.dropout_seed)
        train = self.config.dropout > 0
        return forward(self.params, self.inputs, self.state, train, rng, self.config.dropout)

    def loss(self) -> float:
        ctx, _, _ = self._forward()
        return common_form(self.score, self.params, ctx, self.targets, self.noise).value

    def analytic(self) -> dict[str, np.ndarray]:
        ctx, _, tape = self._forward()
        step = common_form(self.score, self.params, ctx, self.targets, self.noise)
        grads = backward(self.params, tape, step.grad_context)
        grads["output_embed"] = step.grad_output
        if step.grad_bias is not None:
            grads["nce_bias"] = step.grad_bias
        named = self.params.named()
        return {
            name: (g.to_dense(named[name].shape) if isinstance(g, SparseRows) else g) for name, g in grads.items()
        }


@pytest.fixture
def small_problem():
    return SmallProblem


@pytest.fixture(scope="session")
def fixture_corpus():
    train = read_lines(FIXTURE_DIR / "train.txt")
    valid = read_lines(FIXTURE_DIR / "valid.txt")
    test = read_lines(FIXTURE_DIR / "test.txt")
    vocab = build_vocab(tokens_of(train), 50, 1)
    train_ids = encode(train, vocab)
    return {
        "vocab": vocab,
        "train": train_ids,
        "valid": encode(valid, vocab),
        "test": encode(test, vocab),
        "dist": unigram_distribution(vocab, train_ids),
    }


@pytest.fixture(scope="session")
def trained_fixture(fixture_corpus):
    """Both model variants trained with the bundled fixture recipe: (params, stats, seconds) per mode."""
    import time

    from pmilm.config import load_config, split_config
    from pmilm.trainer import make_rngs, train

    corpus = fixture_corpus
    out = {}
    for mode in ("pmi", "nce"):
        started = time.perf_counter()
        model_config, train_config = split_config(load_config("fixture"), len(corpus["vocab"]), mode)
        rngs = make_rngs(train_config.seed)
        params = init_params(model_config, rngs["init"])
        stats = train(
            params, model_config, train_config, corpus["train"], corpus["dist"], corpus["valid"], rngs=rngs
        )
        out[mode] = (params, stats, time.perf_counter() - started)
    return out


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts at the end of the run, one line per criterion."""
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(module.RESULTS.values()):
        terminalreporter.write_line(line)
