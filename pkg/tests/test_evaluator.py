import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SmallProblem, reference_lstm
from pmilm.config import TrainConfig
from pmilm.corpus import UnigramDistribution, build_vocab, encode, unigram_distribution
from pmilm.evaluator import (
    conditional_distribution,
    format_report,
    log_conditionals,
    perplexity,
    sequence_log_prob,
    token_log_probs,
    top_k_predictions,
    unigram_perplexity,
)
from pmilm.model import ModelConfig, init_params
from pmilm.trainer import make_rngs, train


def _zero(params):
    for arr in params.named().values():
        arr[...] = 0.0
    return params


def _model(mode, V=10, h=3, seed=0):
    cfg = ModelConfig(vocab_size=V, hidden=h, layers=1, dropout=0.0, k=2, mode=mode, init_scale=0.5)
    return init_params(cfg, np.random.default_rng(seed))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["pmi", "nce"]), st.floats(0.1, 20.0))
def test_conditionals_are_normalised(seed, mode, scale):
    p = SmallProblem(mode, seed=seed, V=13)
    c = np.random.default_rng(seed).normal(scale=scale, size=(8, 4))
    probs = np.exp(log_conditionals(p.params, c, mode, p.dist))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    assert (probs >= 0).all()


@pytest.mark.parametrize("mode", ["pmi", "nce"])
def test_matches_brute_force_renormalisation(mode):
    p = SmallProblem(mode, seed=4, V=7)
    c = np.random.default_rng(1).normal(size=4)
    prior = np.log(p.dist.probs) if mode == "pmi" else p.params.nce_bias
    raw = [math.exp(float(p.params.output_embed[w] @ c) + prior[w]) for w in range(7)]
    expected = [r / sum(raw) for r in raw]
    got = conditional_distribution(p.params, c, mode, p.dist).probs
    np.testing.assert_allclose(got, expected, atol=1e-10, rtol=0)


def test_zero_model_pmi_is_unigram():
    p = SmallProblem("pmi", V=9)
    _zero(p.params)
    got = conditional_distribution(p.params, np.zeros(4), "pmi", p.dist).probs
    np.testing.assert_allclose(got, p.dist.probs, atol=1e-12, rtol=0)


def test_zero_model_nce_with_uniform_bias_is_uniform():
    p = SmallProblem("nce", V=9)
    _zero(p.params)
    p.params.nce_bias[:] = -math.log(9)
    got = conditional_distribution(p.params, np.zeros(4), "nce", p.dist).probs
    np.testing.assert_allclose(got, 1 / 9, atol=1e-12, rtol=0)


def test_single_token_sequence_is_its_log_prob():
    p = SmallProblem("pmi", V=9)
    _zero(p.params)
    assert sequence_log_prob(p.params, [5], "pmi", p.dist) == pytest.approx(math.log(p.dist.probs[5]), abs=1e-12)


def test_pmi_handles_zero_count_words_via_floor():
    params = _zero(_model("pmi", V=4))
    dist = UnigramDistribution.from_counts([5, 0, 3, 2])
    logp = sequence_log_prob(params, [1, 1], "pmi", dist)
    assert math.isfinite(logp)
    # floor 1/(N+|V|) renormalised: (1/14) / (1 + 1/14) = 1/15
    assert logp == pytest.approx(2 * math.log(1 / 15), rel=1e-12)


@pytest.mark.parametrize("mode", ["pmi", "nce"])
def test_matches_step_by_step_reference(mode):
    p = SmallProblem(mode, seed=9, V=11, layers=2)
    ids = [3, 7, 0, 10, 2, 2]
    start = 0
    # scalar reference: run the LSTM one token at a time from a zero state
    h = np.zeros((2, 1, 4))
    c = np.zeros((2, 1, 4))
    prior = np.log(p.dist.floored().probs) if mode == "pmi" else p.params.nce_bias
    total, prev = 0.0, start
    for w in ids:
        out, h, c = reference_lstm(p.params, [[prev]], h, c)
        h, c = np.array(h), np.array(c)
        ctx = np.array(out[0][0])
        logits = [float(p.params.output_embed[v] @ ctx) + prior[v] for v in range(11)]
        z = math.log(sum(math.exp(x) for x in logits))
        total += logits[w] - z
        prev = w
    assert sequence_log_prob(p.params, ids, mode, p.dist, start_id=start) == pytest.approx(total, abs=1e-10)


@pytest.mark.parametrize("mode", ["pmi", "nce"])
def test_state_carry_across_halves(mode):
    p = SmallProblem(mode, seed=2, V=11)
    ids = np.random.default_rng(0).integers(0, 11, size=41)
    whole, _ = token_log_probs(p.params, ids, mode, p.dist, window=7)
    first, state = token_log_probs(p.params, ids[:20], mode, p.dist, window=7)
    second, _ = token_log_probs(p.params, ids[20:], mode, p.dist, state=state, window=5)
    np.testing.assert_allclose(np.r_[first, second], whole, atol=1e-10)


def test_batched_streams_match_sequential():
    p = SmallProblem("nce", seed=5, V=11)
    grid = np.random.default_rng(3).integers(0, 11, size=(4, 25))
    batched, _ = token_log_probs(p.params, grid, "nce", p.dist)
    for row in range(4):
        alone, _ = token_log_probs(p.params, grid[row], "nce", p.dist)
        np.testing.assert_allclose(batched[row], alone, atol=1e-6)


def test_uniform_model_perplexity_is_vocab_size():
    params = _zero(_model("nce", V=10))
    params.nce_bias[:] = 0.0
    ids = np.random.default_rng(0).integers(0, 10, size=200)
    assert perplexity(params, ids, "nce", None) == pytest.approx(10.0, rel=1e-12)


def test_zero_model_perplexity_is_unigram_perplexity():
    line = "a a a b b c d <unk>"
    vocab = build_vocab(line.split(), max_size=10)
    train_ids = encode([line], vocab)
    dist = unigram_distribution(vocab, train_ids)
    test_ids = encode(["a b c a d"], vocab)
    params = _zero(_model("pmi", V=len(vocab)))
    # count-based: -mean log p(w) with p(w) = count/9 (eos counted once, no zero counts)
    probs = {"a": 3 / 9, "b": 2 / 9, "c": 1 / 9, "d": 1 / 9, "<eos>": 1 / 9}
    expected = math.exp(-sum(math.log(probs[t]) for t in "a b c a d <eos>".split()) / 6)
    assert perplexity(params, test_ids, "pmi", dist) == pytest.approx(expected, rel=1e-12)
    assert unigram_perplexity(test_ids, dist) == pytest.approx(expected, rel=1e-12)


def test_empty_stream_perplexity_is_an_error():
    params = _zero(_model("pmi"))
    with pytest.raises(ValueError):
        perplexity(params, [], "pmi", UnigramDistribution.from_counts(np.ones(10, dtype=int)))


def test_top_k_order_and_ties():
    params = _zero(_model("pmi", V=6))
    dist = UnigramDistribution.from_counts([1, 3, 2, 3, 0, 1])
    top = top_k_predictions(params, [2, 3], "pmi", dist, k=4)
    assert [i for i, _ in top] == [1, 3, 2, 0]
    probs = [p for _, p in top]
    assert probs == sorted(probs, reverse=True)
    everything = top_k_predictions(params, [], "pmi", dist, k=6)
    assert sum(p for _, p in everything) == pytest.approx(1.0, abs=1e-9)
    assert len(top_k_predictions(params, [1], "pmi", dist, k=50)) == 6


def test_top_k_uses_vocab_labels():
    vocab = build_vocab("x y y".split(), max_size=10)
    params = _zero(_model("pmi", V=len(vocab)))
    dist = UnigramDistribution.from_counts(vocab.counts + 1)
    assert top_k_predictions(params, [], "pmi", dist, 1, vocab)[0][0] == "y"


def test_format_report():
    text = format_report("test.txt", "pmi", 4, 4 * math.log(0.5))
    assert text.splitlines() == [
        "dataset\ttest.txt",
        "mode\tpmi",
        "tokens\t4",
        f"log_prob\t{4 * math.log(0.5):.6f}",
        "perplexity\t2.0000",
    ]


@pytest.mark.parametrize("mode", ["pmi", "nce"])
def test_learns_alternating_pattern(mode):
    # a few filler lines give every id (including <unk>) some training signal, so no
    # NCE bias is left at its initial value
    lines = ["a b a b a b a b a b"] * 60 + ["c <unk> d"] * 6
    order = np.random.default_rng(0).permutation(len(lines))
    vocab = build_vocab(" ".join(lines).split(), max_size=10)
    ids = encode([lines[i] for i in order], vocab)
    dist = unigram_distribution(vocab, ids)
    model = ModelConfig(vocab_size=len(vocab), hidden=16, layers=1, dropout=0.0, k=5, mode=mode)
    config = TrainConfig(optimizer="adam", lr=0.05, epochs=6, batch_size=4, bptt_len=10, seed=3)
    rngs = make_rngs(config.seed)
    params = init_params(model, rngs["init"])
    train(params, model, config, ids, dist, rngs=rngs)
    a, b = vocab.token_to_id["a"], vocab.token_to_id["b"]
    top = top_k_predictions(params, [a, b, a, b, a], mode, dist, k=1)
    assert top[0][0] == b and top[0][1] > 0.9


@pytest.mark.parametrize("mode", ["pmi", "nce"])
def test_trained_fixture_normalises_on_real_contexts(mode, trained_fixture, fixture_corpus):
    params, _, _ = trained_fixture[mode]
    ids = fixture_corpus["test"][:500]
    from pmilm.model import LstmState, forward

    cfg_h = params.lstm_b[0].shape[0] // 4
    ctx, _, _ = forward(params, ids[None, :], LstmState([np.zeros((1, cfg_h))], [np.zeros((1, cfg_h))]))
    probs = np.exp(log_conditionals(params, ctx[0], mode, fixture_corpus["dist"]))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
