"""Frequency-weighted skip-gram item embeddings (w-item2vec) and exact k-NN.

Every ordered pair of positions ``(i, j)``, ``j != i``, inside a user's item
sequence contributes::

    theta * (theta * log s(w_i . v_j) + sum_k log s(-w_i . v_k))

where ``theta`` is the number of times the centre item occurs in that
sequence, ``w`` are target vectors, ``v`` context vectors and the ``v_k`` are
sampled negatives.  Training maximises the sum by stochastic ascent.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numba import njit

from .core import Corpus, ItemVocab

log = logging.getLogger(__name__)

LOG_EPS = 1e-10
WEIGHTINGS = ("witem2vec", "theta", "item2vec")
SIMILARITIES = ("cosine", "dot", "euclidean")


@dataclass(frozen=True)
class EmbedConfig:
    dim: int = 64
    negatives: int = 10
    epochs: int = 10
    learning_rate: float = 0.01
    window: int | None = None
    neg_exponent: float = 0.75
    seed: int = 0
    # "witem2vec": theta*(theta*pos + negs); "theta": theta*(pos + negs); "item2vec": theta = 1
    weighting: str = "witem2vec"
    theta_cap: int | None = None
    min_lr_ratio: float = 1e-4
    track_objective: bool = True

    def __post_init__(self):
        if self.dim < 1 or self.negatives < 1 or self.epochs < 1:
            raise ValueError("dim, negatives and epochs must all be >= 1")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be >= 1 or None")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class EmbeddingSpace:
    vocab: ItemVocab
    target: np.ndarray
    context: np.ndarray
    retrieval: str = "context"
    objective_log: list[float] = field(default_factory=list)
    online_objective_log: list[float] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.vocab)
        if self.target.shape != self.context.shape or self.target.shape[0] != n:
            raise ValueError("target and context must both be (vocab size, dim)")
        if self.retrieval not in ("context", "target"):
            raise ValueError("retrieval must be 'context' or 'target'")

    @property
    def dim(self) -> int:
        return self.context.shape[1]

    @property
    def vectors(self) -> np.ndarray:
        """The vector family used for prediction targets and retrieval."""
        return self.context if self.retrieval == "context" else self.target

    def vector(self, item_id: str) -> np.ndarray:
        return self.vectors[self.vocab.index(item_id)]


def item_frequency(items) -> Counter:
    return Counter(items)


def sigmoid(x):
    """Logistic function that never overflows in ``exp``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def _weights(theta: float, weighting: str) -> tuple[float, float]:
    if weighting == "witem2vec":
        return theta, theta
    if weighting == "theta":
        return theta, 1.0
    return 1.0, 1.0


def _check_dims(w, v_j, negs):
    w = np.asarray(w, dtype=np.float64)
    v_j = np.asarray(v_j, dtype=np.float64)
    negs = np.asarray(negs, dtype=np.float64).reshape(-1, w.shape[0]) if len(negs) else np.zeros((0, w.shape[0]))
    if w.ndim != 1 or v_j.shape != w.shape or negs.shape[1] != w.shape[0]:
        raise ValueError("w, v_j and negatives must share one dimension")
    return w, v_j, negs


def pair_objective(w, v_j, negs, theta: float = 1, weighting: str = "witem2vec") -> float:
    w, v_j, negs = _check_dims(w, v_j, negs)
    if theta < 1:
        raise ValueError("theta must be >= 1")
    outer, inner = _weights(theta, weighting)
    pos = np.log(max(sigmoid(w @ v_j), LOG_EPS))
    neg = np.log(np.maximum(sigmoid(-(negs @ w)), LOG_EPS)).sum()
    return float(outer * (inner * pos + neg))


def pair_gradients(w, v_j, negs, theta: float = 1, weighting: str = "witem2vec"):
    """Gradients of :func:`pair_objective` (ascent direction).

    Returns ``(d_w, d_vj, d_negs)`` with ``d_negs`` shaped like ``negs``.
    """
    w, v_j, negs = _check_dims(w, v_j, negs)
    outer, inner = _weights(theta, weighting)
    g_pos = outer * inner * sigmoid(-(w @ v_j))
    g_neg = -outer * sigmoid(negs @ w)
    d_w = g_pos * v_j + g_neg @ negs
    return d_w, g_pos * w, g_neg[:, None] * w


def sgns_objective(w, v_j, negs) -> float:
    """Plain negative-sampling log-likelihood ``log s(w.v_j) + sum log s(-w.v_k)``."""
    w, v_j, negs = _check_dims(w, v_j, negs)
    p = sigmoid(w @ v_j) * np.prod(sigmoid(-(negs @ w)))
    return float(np.log(max(p, LOG_EPS)))


class NegativeSampler:
    """Draws item indices with probability proportional to ``count ** exponent``."""

    def __init__(self, counts, exponent: float = 0.75, seed=0):
        counts = np.asarray(counts, dtype=np.float64)
        if counts.size == 0:
            raise ValueError("cannot sample negatives from an empty vocabulary")
        weights = counts**exponent
        self.probs = weights / weights.sum()
        self._cdf = np.cumsum(self.probs)
        self._cdf[-1] = 1.0
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def draw(self, size) -> np.ndarray:
        return np.searchsorted(self._cdf, self.rng.random(size), side="right")


def _window_bounds(k: int, i: int, window: int) -> tuple[int, int]:
    if window < 0:
        return 0, k
    return max(0, i - window), min(k, i + window + 1)


def count_pairs(k: int, window: int | None) -> int:
    w = -1 if window is None else window
    return sum(hi - lo - 1 for lo, hi in (_window_bounds(k, i, w) for i in range(k)))


@njit(cache=True)
def _sig(s):
    if s >= 0:
        return 1.0 / (1.0 + np.exp(-s))
    e = np.exp(s)
    return e / (1.0 + e)


@njit(cache=True)
def _sequence_pass(W, V, x, outer, inner, window, negs, lrs, update):
    """Stochastic ascent over every ``(i, j)`` pair of one sequence, in order.

    Each pair applies the exact pair gradient evaluated at the parameters
    left by the previous pair.  ``negs`` holds the pre-drawn negatives of
    each pair and ``lrs`` the learning rate of each centre position.
    Returns the summed pair objective, each pair scored before its update.
    """
    k = x.shape[0]
    dim = W.shape[1]
    n_neg = negs.shape[1]
    grad_w = np.empty(dim)
    g_neg = np.empty(n_neg)
    total = 0.0
    p = 0
    for i in range(k):
        if window < 0:
            lo, hi = 0, k
        else:
            lo, hi = max(0, i - window), min(k, i + window + 1)
        wi = x[i]
        lr = lrs[i]
        a, b = outer[i], inner[i]
        for j in range(lo, hi):
            if j == i:
                continue
            vj = x[j]
            s = 0.0
            for q in range(dim):
                s += W[wi, q] * V[vj, q]
            total += a * b * np.log(max(_sig(s), 1e-10))
            g_pos = a * b * _sig(-s)
            for q in range(dim):
                grad_w[q] = g_pos * V[vj, q]
            for e in range(n_neg):
                vk = negs[p, e]
                s = 0.0
                for q in range(dim):
                    s += W[wi, q] * V[vk, q]
                total += a * np.log(max(_sig(-s), 1e-10))
                g_neg[e] = -a * _sig(s)
                for q in range(dim):
                    grad_w[q] += g_neg[e] * V[vk, q]
            if update:
                for q in range(dim):
                    V[vj, q] += lr * g_pos * W[wi, q]
                for e in range(n_neg):
                    vk = negs[p, e]
                    for q in range(dim):
                        V[vk, q] += lr * g_neg[e] * W[wi, q]
                for q in range(dim):
                    W[wi, q] += lr * grad_w[q]
            p += 1
    return total


def _sequence_thetas(items: np.ndarray, cap: int | None) -> np.ndarray:
    _, inverse, counts = np.unique(items, return_inverse=True, return_counts=True)
    theta = counts[inverse].astype(np.float64)
    if cap is not None:
        theta = np.minimum(theta, cap)
    return theta


def _pair_weights(x: np.ndarray, cfg: EmbedConfig) -> tuple[np.ndarray, np.ndarray]:
    theta = _sequence_thetas(x, cfg.theta_cap)
    if cfg.weighting == "witem2vec":
        return theta, theta
    if cfg.weighting == "theta":
        return theta, np.ones_like(theta)
    return np.ones_like(theta), np.ones_like(theta)


def init_space(vocab: ItemVocab, dim: int, rng: np.random.Generator) -> EmbeddingSpace:
    target = rng.uniform(-0.5 / dim, 0.5 / dim, size=(len(vocab), dim))
    return EmbeddingSpace(vocab, target, np.zeros((len(vocab), dim)))


def _index_sequences(corpus: Corpus, vocab: ItemVocab) -> list[np.ndarray]:
    return [vocab.indices(s.item_ids) for s in corpus if len(s) >= 2]


def corpus_objective(space: EmbeddingSpace, corpus: Corpus, cfg: EmbedConfig, seed=0) -> float:
    """Mean pair objective over the corpus with fresh negatives, no updates."""
    sampler = NegativeSampler(space.vocab.counts, cfg.neg_exponent, seed)
    window = -1 if cfg.window is None else cfg.window
    total, pairs = 0.0, 0
    for x in _index_sequences(corpus, space.vocab):
        n = count_pairs(len(x), cfg.window)
        outer, inner = _pair_weights(x, cfg)
        negs = sampler.draw((n, cfg.negatives))
        total += _sequence_pass(space.target, space.context, x, outer, inner, window, negs,
                                np.zeros(len(x)), False)
        pairs += n
    return total / max(pairs, 1)


def _pair_index(k: int, window: int | None) -> tuple[np.ndarray, np.ndarray]:
    """Centre and context positions of every ordered pair, in visiting order."""
    ii, jj = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    keep = ii != jj
    if window is not None:
        keep &= np.abs(ii - jj) <= window
    return ii[keep], jj[keep]


def expected_objective(space: EmbeddingSpace, corpus: Corpus, cfg: EmbedConfig) -> float:
    """Mean pair objective with the negative term replaced by its expectation.

    ``cfg.negatives`` draws from the noise distribution contribute
    ``negatives * sum_k P(k) log s(-w_i . v_k)`` in expectation, which is
    computed exactly, so the value carries no sampling noise.
    """
    probs = NegativeSampler(space.vocab.counts, cfg.neg_exponent).probs
    scores = space.target @ space.context.T
    log_pos = np.log(np.maximum(sigmoid(scores), 1e-10))
    neg_term = cfg.negatives * (np.log(np.maximum(sigmoid(-scores), 1e-10)) @ probs)
    total, pairs = 0.0, 0
    for x in _index_sequences(corpus, space.vocab):
        outer, inner = _pair_weights(x, cfg)
        ii, jj = _pair_index(len(x), cfg.window)
        total += float(np.sum(outer[ii] * (inner[ii] * log_pos[x[ii], x[jj]] + neg_term[x[ii]])))
        pairs += len(ii)
    return total / max(pairs, 1)


def train_witem2vec(corpus: Corpus, cfg: EmbedConfig = EmbedConfig()) -> EmbeddingSpace:
    """Train target/context vectors for every item of ``corpus.vocab``.

    Pairs are visited in sequence order and each gets its own update with
    ``cfg.negatives`` fresh negatives.  The learning rate decays linearly per
    centre position to ``min_lr_ratio`` of its initial value.

    After every epoch ``objective_log`` records :func:`expected_objective`,
    the corpus objective with negatives integrated out, so epochs compare on
    equal terms.  ``online_objective_log`` keeps the mean of the pair
    objectives seen during the epoch, each taken just before its update.
    """
    if len(corpus) == 0 or len(corpus.vocab) == 0:
        raise ValueError("cannot train embeddings on an empty corpus")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    space = init_space(corpus.vocab, cfg.dim, rng)
    sampler = NegativeSampler(corpus.vocab.counts, cfg.neg_exponent, rng)
    window = -1 if cfg.window is None else cfg.window
    plans = [(x, count_pairs(len(x), cfg.window), *_pair_weights(x, cfg))
             for x in _index_sequences(corpus, corpus.vocab)]
    total_steps = max(sum(len(x) for x, *_ in plans) * cfg.epochs, 1)
    lr0 = cfg.learning_rate
    step = 0
    for epoch in range(cfg.epochs):
        total, pairs = 0.0, 0
        for u in rng.permutation(len(plans)):
            x, n, outer, inner = plans[u]
            lrs = lr0 * np.maximum(cfg.min_lr_ratio, 1.0 - (step + np.arange(len(x))) / total_steps)
            negs = sampler.draw((n, cfg.negatives))
            total += _sequence_pass(space.target, space.context, x, outer, inner, window, negs, lrs, True)
            pairs += n
            step += len(x)
        space.online_objective_log.append(total / max(pairs, 1))
        if cfg.track_objective:
            space.objective_log.append(expected_objective(space, corpus, cfg))
            log.info("w-item2vec epoch %d: objective %.5f", epoch + 1, space.objective_log[-1])
    return space


def similarity_scores(space: EmbeddingSpace, queries, similarity: str = "cosine") -> np.ndarray:
    """Scores of every item against each query row; higher is more similar."""
    if similarity not in SIMILARITIES:
        raise ValueError(f"similarity must be one of {SIMILARITIES}")
    M = space.vectors
    Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if Q.shape[1] != space.dim:
        raise ValueError(f"query dimension {Q.shape[1]} != space dimension {space.dim}")
    if similarity == "dot":
        return Q @ M.T
    if similarity == "euclidean":
        sq = (Q**2).sum(1)[:, None] - 2 * Q @ M.T + (M**2).sum(1)[None, :]
        return -np.sqrt(np.maximum(sq, 0.0))
    mn = np.linalg.norm(M, axis=1)
    qn = np.linalg.norm(Q, axis=1)
    denom = np.outer(qn, mn)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(denom > 0, (Q @ M.T) / np.where(denom > 0, denom, 1.0), 0.0)
    return out


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Row-wise top-k, descending score, ties broken by lower index."""
    scores = np.atleast_2d(scores)
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, :k]


def nearest_items(space: EmbeddingSpace, query, k: int, similarity: str = "cosine") -> list[tuple[str, float]]:
    n = len(space.vocab)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (space.dim,):
        raise ValueError(f"query must have shape ({space.dim},)")
    scores = similarity_scores(space, query, similarity)[0]
    idx = top_k_indices(scores, k)[0]
    return [(space.vocab.ids[i], float(scores[i])) for i in idx]


def knn_purity(space: EmbeddingSpace, labels: dict, k: int = 10, similarity: str = "cosine") -> float:
    """Mean share of each labelled item's k nearest other items carrying its label."""
    ids = [i for i in space.vocab.ids if i in labels]
    idx = space.vocab.indices(ids)
    lab = np.array([labels[space.vocab.ids[j]] for j in range(len(space.vocab))], dtype=object)
    scores = similarity_scores(space, space.vectors[idx], similarity)
    scores[np.arange(len(idx)), idx] = -np.inf
    nn = top_k_indices(scores, k)
    hits = [np.mean(lab[nn[r]] == lab[idx[r]]) for r in range(len(idx))]
    return float(np.mean(hits))


def export_embeddings(space: EmbeddingSpace, path, which: str | None = None) -> None:
    """Write ``item_id<TAB>c1<TAB>...<TAB>cd`` lines; floats round-trip exactly."""
    which = which or space.retrieval
    M = space.context if which == "context" else space.target
    with open(path, "w", encoding="utf-8") as fh:
        for item, row in zip(space.vocab.ids, M):
            fh.write(item + "\t" + "\t".join(repr(float(x)) for x in row) + "\n")


def _read_matrix(path) -> tuple[list[str], np.ndarray]:
    ids, rows = [], []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        ids.append(parts[0])
        rows.append([float(x) for x in parts[1:]])
    return ids, np.array(rows, dtype=np.float64)


def load_embeddings(context_path, target_path=None, counts=None) -> EmbeddingSpace:
    """Rebuild a space from exported context (and optionally target) vectors."""
    ids, context = _read_matrix(context_path)
    if target_path is not None and Path(target_path).exists():
        t_ids, target = _read_matrix(target_path)
        if t_ids != ids:
            raise ValueError("target and context exports list different items")
    else:
        target = np.zeros_like(context)
    if counts is None:
        counts = np.ones(len(ids), dtype=np.int64)
    return EmbeddingSpace(ItemVocab(tuple(ids), counts), target, context)


def with_retrieval(space: EmbeddingSpace, retrieval: str) -> EmbeddingSpace:
    return replace(space, retrieval=retrieval)
