import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgmcmc.errors import DomainError, NumericError, ParseError
from sgmcmc.lda import (DocumentBatch, LdaConfig, exact_topic_expectations, gibbs_conditional,
                        gibbs_topic_expectations, ingest_documents, iter_gibbs, lda_stochastic_grad, perplexity,
                        read_documents, reflect_positive, riemannian_metric, synthetic_corpus, topic_word,
                        write_documents, _pad, doc_tokens)


def test_single_topic_takes_every_token():
    theta = np.array([[0.2, 0.5, 0.3]])
    nkw, nk = gibbs_topic_expectations(theta, {0: 2, 2: 3}, 0.1, 3, 1, np.random.default_rng(0))
    np.testing.assert_array_equal(nkw, [[2.0, 0.0, 3.0]])
    assert nk[0] == 5.0


def test_single_word_conditional():
    # rows already sum to one, so beta equals theta
    p = gibbs_conditional(topic_word(np.array([[0.3, 0.7], [0.1, 0.9]])), [0, 0], 0, 0.5)
    np.testing.assert_allclose(p, [0.75, 0.25], atol=1e-12)


def test_single_word_gibbs_frequency():
    theta = np.array([[0.3, 0.7], [0.1, 0.9]])
    n = 10_000
    _, nk = gibbs_topic_expectations(theta, {0: 1}, 0.5, n, 0, np.random.default_rng(1))
    assert abs(nk[0] - 0.75) < 3 * np.sqrt(0.75 * 0.25 / n)


def test_two_word_document_matches_enumeration():
    theta = np.array([[0.6, 0.2, 0.2], [0.1, 0.5, 0.4]])
    doc = {0: 1, 1: 1}
    exact_nkw, exact_nk = exact_topic_expectations(theta, doc, 0.3)
    n = 20_000
    draws = [s.nkw(3) for s in iter_gibbs(topic_word(theta), doc_tokens(doc)[None], 0.3, n, np.random.default_rng(2))]
    means = np.array(draws[:n // 100 * 100]).reshape(100, -1, 2, 3).mean(axis=1)
    se = means.std(axis=0, ddof=1) / np.sqrt(100)
    assert np.all(np.abs(means.mean(axis=0) - exact_nkw) <= 3 * se + 1e-12)
    np.testing.assert_allclose(exact_nk.sum(), 2.0)


def test_gibbs_zero_normalizer():
    theta = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(NumericError):
        gibbs_conditional(theta, [0, 0], 1, 0.1)


def test_prior_only_gradient():
    cfg = LdaConfig(K=2, W=3, alpha=0.5)
    theta = np.array([[0.5, 1.0, 2.0], [1.0, 1.0, 1.0]])
    g = lda_stochastic_grad(theta, DocumentBatch([]), cfg)
    np.testing.assert_allclose(g, -((0.5 - 1.0) / theta - 1.0), atol=1e-15)
    cfg1 = LdaConfig(K=2, W=3, alpha=1.0)
    np.testing.assert_array_equal(-lda_stochastic_grad(theta, DocumentBatch([]), cfg1), -1.0)


def test_hand_evaluated_gradient_entry():
    cfg = LdaConfig(K=1, W=2, alpha=1.0, m=1, corpus_size=1)
    g = lda_stochastic_grad(np.ones((1, 2)), DocumentBatch([{0: 2, 1: 1}]), cfg, np.random.default_rng(0))
    assert -g[0, 0] == pytest.approx(-0.5, abs=1e-12)
    assert -g[0, 1] == pytest.approx(-1.0 + (1.0 - 1.5), abs=1e-12)


def test_gradient_rejects_nonpositive_theta():
    cfg = LdaConfig(K=1, W=2)
    with pytest.raises(DomainError):
        lda_stochastic_grad(np.array([[1.0, 0.0]]), DocumentBatch([]), cfg)
    with pytest.raises(DomainError):
        riemannian_metric(np.array([-1.0]))


def test_gibbs_gradient_agrees_with_enumeration():
    rng = np.random.default_rng(3)
    cfg = LdaConfig(K=2, W=3, alpha=0.5, gamma=0.2, m=3, corpus_size=6, burn_in=2, samples=4)
    theta = np.array([[0.8, 0.3, 0.5], [0.2, 1.1, 0.4]])
    batch = DocumentBatch([{0: 1, 1: 1}, {2: 2}, {1: 1}])
    exact = lda_stochastic_grad(theta, batch, cfg, method="exact")
    reps = np.array([lda_stochastic_grad(theta, batch, cfg, rng) for _ in range(3000)])
    se = reps.std(axis=0, ddof=1) / np.sqrt(len(reps))
    assert np.all(np.abs(reps.mean(axis=0) - exact) <= 3 * se + 1e-12)


def test_metric_entries():
    m = riemannian_metric(np.array([[4.0, 0.25]]))
    np.testing.assert_array_equal(m.inv_sqrt, [[2.0, 0.5]])
    np.testing.assert_array_equal(m.sgrhmc_correction, [[0.25, 1.0]])
    np.testing.assert_array_equal(m.inv_sqrt * m.inv_sqrt, m.inv)
    np.testing.assert_array_equal(m.sgrld_gamma, 1.0)


def test_reflection_values():
    np.testing.assert_array_equal(reflect_positive([-0.5, 0.3, 0.0]), [0.5, 0.3, 1e-10])


def test_uniform_topics_give_vocabulary_size():
    cfg = LdaConfig(K=3, W=10)
    docs = DocumentBatch([{0: 3, 4: 2, 9: 5}, {1: 4, 2: 4}])
    assert perplexity(np.ones((3, 10)), docs, cfg, np.random.default_rng(0)) == pytest.approx(10.0, rel=1e-12)


def test_concentrated_topic_beats_uniform():
    cfg = LdaConfig(K=1, W=10)
    docs = DocumentBatch([{0: 4, 1: 4}])
    theta = np.full((1, 10), 1e-6)
    theta[0, :2] = 1.0
    assert perplexity(theta, docs, cfg, np.random.default_rng(0)) <= 10.0


def test_short_documents_warn():
    cfg = LdaConfig(K=1, W=4)
    with pytest.warns(UserWarning, match="too short"):
        perplexity(np.ones((1, 4)), DocumentBatch([{0: 1}, {1: 2}]), cfg, np.random.default_rng(0))


def test_true_topics_beat_uniform():
    corpus = synthetic_corpus(rng=0)
    cfg = LdaConfig(K=5, W=100)
    heldout = corpus.docs[:50]
    true = perplexity(corpus.beta, heldout, cfg, np.random.default_rng(1))
    flat = perplexity(np.ones((5, 100)), heldout, cfg, np.random.default_rng(1))
    assert true <= 0.9 * flat


def test_ingest_line():
    (batch,) = ingest_documents(io.StringIO("0 3:2 7:1\n"))
    assert batch.docs == [{3: 2, 7: 1}] and batch.ids == [0]


def test_ingest_empty_and_batches(tmp_path):
    p = tmp_path / "empty.txt"
    p.write_text("")
    assert list(ingest_documents(p)) == []
    lines = [f"{i} {i}:1\n" for i in range(5)]
    assert [len(b) for b in ingest_documents(lines, batch_size=2)] == [2, 2, 1]


def test_ingest_errors():
    with pytest.raises(ParseError, match="line 2"):
        list(ingest_documents(["0 1:1\n", "1 2-3\n"]))
    with pytest.raises(ParseError):
        list(ingest_documents(["0 12:1\n"], W=10))


def test_corpus_round_trip(tmp_path):
    corpus = synthetic_corpus(rng=7)
    a = write_documents(tmp_path / "a.txt", corpus.docs)
    back = read_documents(a, W=100)
    b = write_documents(tmp_path / "b.txt", back)
    assert a.read_bytes() == b.read_bytes()
    assert len(back) == 500 and back.docs == corpus.docs.docs


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4))
def test_gibbs_count_consistency(seed, K):
    rng = np.random.default_rng(seed)
    W = 6
    beta = topic_word(rng.gamma(1.0, size=(K, W)) + 1e-3)
    docs = [rng.integers(W, size=rng.integers(1, 9)) for _ in range(3)]
    tokens = _pad(docs)
    for state in iter_gibbs(beta, tokens, 0.1, 3, rng):
        ndkw = state.ndkw(W)
        np.testing.assert_array_equal(ndkw.sum(axis=2), state.ndk)
        np.testing.assert_array_equal(state.ndk.sum(axis=1), [len(d) for d in docs])
        assert np.all((state.z[state.mask] >= 0) & (state.z[state.mask] < K))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_conditional_and_simplex_normalization(seed):
    rng = np.random.default_rng(seed)
    theta = rng.gamma(0.5, size=(4, 7)) + 1e-8
    beta = topic_word(theta)
    np.testing.assert_allclose(beta.sum(axis=1), 1.0, atol=1e-12)
    p = gibbs_conditional(beta, rng.integers(0, 5, size=4), int(rng.integers(7)), 0.1)
    assert abs(p.sum() - 1.0) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=10))
def test_reflection_keeps_positive(values):
    assert np.all(reflect_positive(values) > 0)
