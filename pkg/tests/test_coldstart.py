import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualemb import cli
from dualemb.coldstart import ColdStartRequest, default_norm_cap, infer, objective, tokens_to_ids
from dualemb.sampler import build_table
from dualemb.store import EmbeddingStore


def word_store(words):
    words = np.asarray(words, dtype=np.float64)
    s = EmbeddingStore.init(1, 1, len(words), 0, words.shape[1], dtype=np.float64)
    s.word[...] = words
    return s


def test_lagrange_optimum():
    s = word_store([[1.0, 0.0], [0.0, 1.0]])
    req = ColdStartRequest((0,), steps=200, step_size=1.0, norm_cap=1.0)
    z = infer(req, s, fixed_negatives=[np.array([1])])
    assert np.abs(z - np.array([1.0, -1.0]) / np.sqrt(2)).max() < 1e-3


def test_zero_steps_returns_token_mean():
    s = word_store([[0.2, 0.0], [0.0, 0.4], [1.0, 1.0]])
    z = infer(ColdStartRequest((0, 1), steps=0, norm_cap=10.0), s, fixed_negatives=[np.array([2])] * 2)
    assert np.allclose(z, [0.1, 0.2])


def test_default_cap_is_95th_percentile():
    s = EmbeddingStore.init(100, 1, 1, 0, 3, seed=2)
    norms = np.linalg.norm(s.item_in.astype(np.float64), axis=1)
    assert default_norm_cap(s) == pytest.approx(np.percentile(norms, 95))


def test_needs_tokens_and_negatives():
    s = word_store([[1.0, 0.0]])
    with pytest.raises(ValueError):
        infer(ColdStartRequest(()), s, fixed_negatives=[])
    with pytest.raises(ValueError):
        infer(ColdStartRequest((0,)), s)


def test_unknown_tokens_dropped_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        ids = tokens_to_ids(["a", "zzz", "b"], {"a": 0, "b": 1})
    assert ids == (0, 1)
    assert "zzz" in caplog.text


def random_problem(seed, n_words=8, dim=4, n_tok=3):
    rng = np.random.default_rng(seed)
    s = word_store(rng.normal(size=(n_words, dim)))
    toks = tuple(int(t) for t in rng.choice(n_words, size=n_tok, replace=False))
    negs = [rng.choice(np.setdiff1d(np.arange(n_words), [t]), size=5) for t in toks]
    return s, toks, negs


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 3.0), st.integers(0, 50))
def test_norm_never_exceeds_cap(seed, cap, steps):
    s, toks, _ = random_problem(seed)
    sampler = build_table(np.ones(len(s.word)) * 100)
    z = infer(ColdStartRequest(toks, steps=steps, norm_cap=cap), s, sampler, np.random.default_rng(seed))
    assert np.linalg.norm(z) <= cap * (1 + 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_objective_non_decreasing_with_fixed_negatives(seed):
    s, toks, negs = random_problem(seed)
    values = []
    for steps in range(0, 30):
        z = infer(ColdStartRequest(toks, steps=steps, step_size=0.05, norm_cap=2.0), s, fixed_negatives=negs)
        values.append(objective(z, s.word, toks, negs))
    assert all(b >= a - 1e-10 for a, b in zip(values, values[1:]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.permutations(range(3)))
def test_token_order_irrelevant(seed, perm):
    s, toks, negs = random_problem(seed)
    req = ColdStartRequest(toks, steps=20, norm_cap=2.0)
    a = infer(req, s, fixed_negatives=negs)
    b = infer(ColdStartRequest(tuple(toks[p] for p in perm), steps=20, norm_cap=2.0), s,
              fixed_negatives=[negs[p] for p in perm])
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_tokens_of_a_trained_item_point_back_to_it(synthetic):
    store, vocab = synthetic.store, synthetic.vocab
    from dualemb.trainer import build_samplers, TrainConfig
    from dualemb.corpus import build_observations

    obs = build_observations(synthetic.events[0], synthetic.split)
    words = build_samplers(obs, vocab, TrainConfig()).words
    rng = np.random.default_rng(0)
    unit = store.item_in / np.linalg.norm(store.item_in, axis=1, keepdims=True)
    hits = 0
    items = rng.choice(vocab.n_items, size=20, replace=False)
    for i in items:
        toks = tuple(int(w) for w in vocab.tokens_of_item(int(i)))
        z = infer(ColdStartRequest(toks), store, words, rng)
        cos = unit @ (z / np.linalg.norm(z))
        others = np.delete(cos, i)
        hits += cos[i] >= np.percentile(others, 95)
    assert hits == len(items)


def test_held_out_items_beat_jaccard(cold_pipeline):
    cfg, out = cold_pipeline
    m = cli.cmd_evaluate(cfg, out).metrics
    assert m["auc_infer"] > m["auc_jaccard"]
