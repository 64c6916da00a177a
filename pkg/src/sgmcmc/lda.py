"""Expanded-mean latent Dirichlet allocation as a stochastic-gradient backend.

Topic-word weights are unconstrained positive ``theta`` (``K x W``) with
``beta_k = theta_k / sum_w theta_kw`` and independent ``Gamma(alpha, 1)``
priors.  Document-topic proportions are integrated out; the gradient needs
expected topic-assignment counts, which come from a short Gibbs run per
document with ``theta`` held fixed.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .errors import ConfigurationError, DomainError, NumericError, ParseError
from .presets import MetricSpec, reflect_values
from .state import EnergyModel

ENUMERATION_LIMIT = 1_000_000


@dataclass(frozen=True)
class LdaConfig:
    """Model and minibatch sizes.

    ``alpha`` is the Gamma shape of each ``theta_kw`` and ``gamma`` the
    symmetric Dirichlet parameter of the document-topic proportions.
    """

    K: int = 5
    W: int = 100
    alpha: float = 0.01
    gamma: float = 0.1
    m: int = 50
    burn_in: int = 2
    samples: int = 4
    corpus_size: int = 500

    def __post_init__(self):
        if min(self.K, self.W, self.m) < 1:
            raise ConfigurationError("K, W and m must be >= 1")
        if not (self.alpha > 0 and self.gamma > 0):
            raise ConfigurationError("alpha and gamma must be positive")
        if self.samples < 1 or self.burn_in < 0:
            raise ConfigurationError("need samples >= 1 and burn_in >= 0")
        if self.corpus_size < 1:
            raise ConfigurationError("corpus_size must be >= 1")


@dataclass
class DocumentBatch:
    """Bag-of-words documents, each a ``{word_id: count}`` mapping."""

    docs: list
    ids: list = field(default_factory=list)

    def __post_init__(self):
        if not self.ids:
            self.ids = list(range(len(self.docs)))
        if len(self.ids) != len(self.docs):
            raise ConfigurationError("ids and docs differ in length")
        for doc in self.docs:
            for w, c in doc.items():
                if int(w) < 0 or int(c) < 1:
                    raise ConfigurationError(f"invalid entry {w}:{c}")

    def __len__(self):
        return len(self.docs)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return DocumentBatch(self.docs[idx], self.ids[idx])
        return self.docs[idx]

    def subset(self, indices) -> "DocumentBatch":
        return DocumentBatch([self.docs[i] for i in indices], [self.ids[i] for i in indices])

    def check_vocab(self, W):
        for doc_id, doc in zip(self.ids, self.docs):
            if doc and max(doc) >= W:
                raise DomainError(f"document {doc_id} uses word id {max(doc)} outside a vocabulary of {W}")

    @property
    def n_tokens(self) -> int:
        return sum(sum(d.values()) for d in self.docs)


def doc_tokens(doc) -> np.ndarray:
    """Expand a count mapping into a token array ordered by word id."""
    if not doc:
        return np.zeros(0, dtype=np.int64)
    words = sorted(doc)
    return np.repeat(np.asarray(words, dtype=np.int64), [doc[w] for w in words])


def _pad(token_lists):
    L = max((len(t) for t in token_lists), default=0)
    out = np.full((len(token_lists), L), -1, dtype=np.int64)
    for i, t in enumerate(token_lists):
        out[i, :len(t)] = t
    return out


def topic_word(theta) -> np.ndarray:
    """``beta_kw = theta_kw / sum_w theta_kw``."""
    theta = np.asarray(theta, dtype=float)
    return theta / theta.sum(axis=1, keepdims=True)


def _check_positive(theta):
    if np.any(~(theta > 0)):
        bad = np.argwhere(~(theta > 0))[0]
        raise DomainError(f"theta must be strictly positive; entry {tuple(int(i) for i in bad)} is {theta[tuple(bad)]}")


# -- Gibbs sampling of topic assignments ------------------------------------------

def gibbs_conditional(beta, n_k, word, gamma) -> np.ndarray:
    """``p(z_j = k | rest) ∝ (gamma + n_k^{-j}) beta_{k, w_j}`` (``n_k`` already excludes token j)."""
    w = (gamma + np.asarray(n_k, dtype=float)) * np.asarray(beta)[:, word]
    total = w.sum()
    if not total > 0:
        raise NumericError(f"zero normalizer in topic conditional for word {word}")
    return w / total


@dataclass
class GibbsState:
    """Assignments for a padded token batch and their per-document topic counts."""

    tokens: np.ndarray
    z: np.ndarray
    ndk: np.ndarray
    K: int

    @property
    def mask(self):
        return self.tokens >= 0

    def ndkw(self, W) -> np.ndarray:
        out = np.zeros((self.tokens.shape[0], self.K, W))
        d, j = np.nonzero(self.mask)
        np.add.at(out, (d, self.z[d, j], self.tokens[d, j]), 1)
        return out

    def nkw(self, W) -> np.ndarray:
        out = np.zeros((self.K, W))
        m = self.mask
        np.add.at(out, (self.z[m], self.tokens[m]), 1)
        return out


def iter_gibbs(beta, tokens, gamma, n_sweeps, rng):
    """Yield the :class:`GibbsState` after each sweep.

    All documents are updated together, one token position at a time, using
    leave-one-out counts for the token being resampled.
    """
    beta = np.asarray(beta, dtype=float)
    K = beta.shape[0]
    n_docs, L = tokens.shape
    mask = tokens >= 0
    w = np.where(mask, tokens, 0)
    bw = np.moveaxis(beta[:, w], 0, -1)
    z = np.where(mask, rng.integers(K, size=(n_docs, L)), 0)
    ndk = np.zeros((n_docs, K))
    rows = np.arange(n_docs)
    for j in range(L):
        np.add.at(ndk, (rows, z[:, j]), mask[:, j])
    for _ in range(n_sweeps):
        u = rng.random((n_docs, L))
        for j in range(L):
            m = mask[:, j]
            if not m.any():
                continue
            zj = z[:, j]
            ndk[rows, zj] -= m
            prob = (gamma + ndk) * bw[:, j, :]
            cum = np.cumsum(prob, axis=1)
            total = cum[:, -1]
            if np.any(m & ~(total > 0)):
                raise NumericError(f"zero normalizer in topic conditional at token position {j}")
            new = np.minimum((cum < (u[:, j] * total)[:, None]).sum(axis=1), K - 1)
            new = np.where(m, new, zj)
            ndk[rows, new] += m
            z[:, j] = new
        yield GibbsState(tokens, z, ndk, K)


def _expectations_gibbs(beta, tokens, gamma, burn_in, samples, rng):
    K, W = beta.shape
    nkw = np.zeros((K, W))
    ndk = np.zeros((tokens.shape[0], K))
    for sweep, state in enumerate(iter_gibbs(beta, tokens, gamma, burn_in + samples, rng)):
        if sweep >= burn_in:
            nkw += state.nkw(W)
            ndk += state.ndk
    return nkw / samples, ndk / samples


def gibbs_topic_expectations(theta, doc, gamma, sweeps, burn_in, rng):
    """Expected ``n_kw`` (``K x W``) and ``n_k`` for one document, averaged over post-burn-in sweeps."""
    theta = np.asarray(theta, dtype=float)
    tokens = doc_tokens(doc)
    if tokens.size == 0:
        raise ConfigurationError("document is empty")
    if sweeps < 1:
        raise ConfigurationError("need at least one averaging sweep")
    nkw, ndk = _expectations_gibbs(topic_word(theta), tokens[None], gamma, burn_in, sweeps, rng)
    return nkw, ndk[0]


def exact_topic_expectations(theta, doc, gamma):
    """Expected counts by enumerating every assignment under the collapsed joint.

    The weight of an assignment is ``prod_k Gamma(gamma + n_k) prod_j beta_{z_j w_j}``.
    """
    beta = topic_word(theta)
    K, W = beta.shape
    tokens = doc_tokens(doc)
    if K ** tokens.size > ENUMERATION_LIMIT:
        raise ConfigurationError("document too long for exhaustive enumeration")
    logs = []
    configs = list(itertools.product(range(K), repeat=tokens.size))
    for zs in configs:
        nk = np.bincount(zs, minlength=K)
        logs.append(np.sum(gammaln(gamma + nk)) + np.sum(np.log(beta[list(zs), tokens])))
    logs = np.asarray(logs)
    wts = np.exp(logs - logs.max())
    wts /= wts.sum()
    nkw = np.zeros((K, W))
    nk = np.zeros(K)
    for wt, zs in zip(wts, configs):
        for k, w in zip(zs, tokens):
            nkw[k, w] += wt
            nk[k] += wt
    return nkw, nk


# -- gradient, metric, boundary -------------------------------------------------------

def lda_stochastic_grad(theta, batch: DocumentBatch, config: LdaConfig, rng=None, method="gibbs",
                        return_parts=False):
    """Minibatch gradient of the potential ``U = -log p(theta | x)``.

    The log-posterior gradient is ``(alpha-1)/theta - 1 + scale * sum_d
    E[n_dkw/theta_kw - n_dk./theta_k.]`` with ``scale = |S|/|S~|``; the negation
    is returned.  ``method='exact'`` replaces Gibbs with enumeration.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (config.K, config.W):
        raise ConfigurationError(f"theta must be {config.K}x{config.W}")
    _check_positive(theta)
    batch.check_vocab(config.W)
    docs = [d for d in batch.docs if d]
    nkw = np.zeros_like(theta)
    nk = np.zeros(config.K)
    if docs:
        if method == "gibbs":
            tokens = _pad([doc_tokens(d) for d in docs])
            nkw, ndk = _expectations_gibbs(topic_word(theta), tokens, config.gamma, config.burn_in, config.samples,
                                           rng if rng is not None else np.random.default_rng())
            nk = ndk.sum(axis=0)
        elif method == "exact":
            for d in docs:
                a, b = exact_topic_expectations(theta, d, config.gamma)
                nkw += a
                nk += b
        else:
            raise ConfigurationError(f"unknown expectation method {method!r}")
    scale = config.corpus_size / len(batch) if len(batch) else 0.0
    row = theta.sum(axis=1, keepdims=True)
    data = scale * (nkw / theta - nk[:, None] / row)
    grad_log_post = (config.alpha - 1.0) / theta - 1.0 + data
    if return_parts:
        return -grad_log_post, nkw, nk
    return -grad_log_post


@dataclass(frozen=True)
class RiemannianMetric:
    """Diagonal Fisher metric ``G^{-1} = diag(theta)`` and its derived pieces."""

    inv: np.ndarray
    inv_sqrt: np.ndarray
    sgrld_gamma: np.ndarray
    sgrhmc_correction: np.ndarray


def riemannian_metric(theta) -> RiemannianMetric:
    theta = np.asarray(theta, dtype=float)
    _check_positive(theta)
    root = np.sqrt(theta)
    return RiemannianMetric(theta.copy(), root, np.ones_like(theta), 0.5 / root)


def reflect_positive(theta) -> np.ndarray:
    """``theta -> |theta|`` with exact zeros moved to ``1e-10``."""
    return reflect_values(np.asarray(theta, dtype=float))


def lda_metric(config: LdaConfig) -> MetricSpec:
    return MetricSpec.fisher_lda(config.K * config.W)


def _no_energy(theta):
    raise ConfigurationError("the LDA posterior energy is not tractable; drive samplers with lda_stochastic_grad")


def lda_energy_model(config: LdaConfig) -> EnergyModel:
    """Flat ``K*W`` parameter model; only stochastic gradients are available."""
    return EnergyModel(_no_energy, config.K * config.W, name="lda")


@dataclass
class LdaGradient:
    """Gradient oracle over flat ``theta`` drawing a fresh minibatch per call."""

    corpus: DocumentBatch
    config: LdaConfig

    def __call__(self, theta_flat, rng):
        cfg = self.config
        m = min(cfg.m, len(self.corpus))
        idx = np.sort(rng.choice(len(self.corpus), size=m, replace=False))
        theta = np.asarray(theta_flat, dtype=float).reshape(cfg.K, cfg.W)
        return lda_stochastic_grad(theta, self.corpus.subset(idx), cfg, rng).ravel()


# -- perplexity ----------------------------------------------------------------

def perplexity(theta, heldout: DocumentBatch, config: LdaConfig, rng) -> float:
    """Document-completion perplexity.

    Each document's tokens are shuffled and split in half.  Topic proportions
    ``pi = (E[n_k] + gamma) / (n + K gamma)`` are estimated from Gibbs on the
    first half; the second half is scored with ``p(w) = sum_k pi_k beta_kw``
    and the result is ``exp(-mean log p(w))`` pooled over all scored tokens.
    """
    if len(heldout) == 0:
        raise ConfigurationError("held-out set is empty")
    theta = np.asarray(theta, dtype=float)
    _check_positive(theta)
    heldout.check_vocab(config.W)
    beta = topic_word(theta)
    firsts, seconds = [], []
    for doc_id, doc in zip(heldout.ids, heldout.docs):
        tokens = rng.permutation(doc_tokens(doc))
        half = tokens.size // 2
        if tokens.size - half == 0 or half == 0:
            warnings.warn(f"document {doc_id} is too short to split; skipped", stacklevel=2)
            continue
        firsts.append(tokens[:half])
        seconds.append(tokens[half:])
    if not firsts:
        raise ConfigurationError("no held-out document could be split")
    _, ndk = _expectations_gibbs(beta, _pad(firsts), config.gamma, config.burn_in, config.samples, rng)
    lens = np.array([len(t) for t in firsts], dtype=float)
    pi = (ndk + config.gamma) / (lens + config.K * config.gamma)[:, None]
    total = 0.0
    count = 0
    for p, second in zip(pi, seconds):
        total += np.sum(np.log(p @ beta[:, second]))
        count += second.size
    return float(np.exp(-total / count))


# -- corpus files --------------------------------------------------------------------

def parse_document_line(line, lineno=None, W=None):
    parts = line.split()
    try:
        doc_id = int(parts[0])
    except ValueError:
        raise ParseError(f"document id {parts[0]!r} is not an integer", lineno) from None
    doc = {}
    for item in parts[1:]:
        w, sep, c = item.partition(":")
        if not sep:
            raise ParseError(f"expected word_id:count, got {item!r}", lineno)
        try:
            w, c = int(w), int(c)
        except ValueError:
            raise ParseError(f"non-integer entry {item!r}", lineno) from None
        if w < 0 or c < 1:
            raise ParseError(f"invalid entry {item!r}", lineno)
        if W is not None and w >= W:
            raise ParseError(f"word id {w} outside vocabulary of size {W}", lineno)
        if w in doc:
            raise ParseError(f"word id {w} repeated", lineno)
        doc[w] = c
    return doc_id, doc


def ingest_documents(source, batch_size=None, W=None):
    """Stream :class:`DocumentBatch` objects from ``doc_id word:count ...`` lines.

    ``source`` is a path or an iterable of lines.  Blank lines are skipped.
    Without ``batch_size`` everything arrives as a single batch.
    """
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            yield from ingest_documents(fh.readlines(), batch_size, W)
        return
    docs, ids = [], []
    for lineno, line in enumerate(source, start=1):
        if not line.strip():
            continue
        doc_id, doc = parse_document_line(line, lineno, W)
        ids.append(doc_id)
        docs.append(doc)
        if batch_size and len(docs) == batch_size:
            yield DocumentBatch(docs, ids)
            docs, ids = [], []
    if docs:
        yield DocumentBatch(docs, ids)


def read_documents(source, W=None) -> DocumentBatch:
    docs, ids = [], []
    for batch in ingest_documents(source, None, W):
        docs += batch.docs
        ids += batch.ids
    return DocumentBatch(docs, ids)


def format_document(doc_id, doc) -> str:
    return " ".join([str(doc_id)] + [f"{w}:{doc[w]}" for w in sorted(doc)])


def write_documents(path, batch: DocumentBatch):
    Path(path).write_text("".join(format_document(i, d) + "\n" for i, d in zip(batch.ids, batch.docs)))
    return Path(path)


def write_vocabulary(path, tokens):
    Path(path).write_text("".join(f"{i}\t{t}\n" for i, t in enumerate(tokens)))
    return Path(path)


def read_vocabulary(path) -> list:
    vocab = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        idx, sep, token = line.partition("\t")
        if not sep or not idx.isdigit() or int(idx) != len(vocab):
            raise ParseError("expected consecutive word_id<TAB>token lines", lineno)
        vocab.append(token)
    return vocab


@dataclass(frozen=True)
class SyntheticCorpus:
    docs: DocumentBatch
    beta: np.ndarray
    proportions: np.ndarray


def synthetic_corpus(n_docs=500, K=5, W=100, gamma=0.1, eta=0.05, mean_length=80, rng=None) -> SyntheticCorpus:
    """Draw documents from LDA with known topics ``beta* ~ Dirichlet(eta)``."""
    rng = np.random.default_rng(rng)
    beta = rng.dirichlet(np.full(W, eta), size=K)
    props = rng.dirichlet(np.full(K, gamma), size=n_docs)
    docs = []
    for pi in props:
        n = max(2, int(rng.poisson(mean_length)))
        words = rng.choice(W, size=n, p=pi @ beta)
        counts = np.bincount(words, minlength=W)
        docs.append({int(w): int(counts[w]) for w in np.flatnonzero(counts)})
    return SyntheticCorpus(DocumentBatch(docs), beta, props)
