"""Recall@K / MRR@K, the S-POP and Item-KNN baselines, and the evaluation protocols."""

from __future__ import annotations

import configparser
import io
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import Corpus, InteractionSequence


class EvaluationError(ValueError):
    pass


@dataclass
class EvalReport:
    recall: float
    mrr: float
    k: int
    cases: int
    breakdown: dict[str, "EvalReport"] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.mrr <= self.recall + 1e-15 and self.recall <= 1.0):
            raise EvaluationError(f"inconsistent metrics recall={self.recall} mrr={self.mrr}")


def rank_of(ranked: list, target) -> int | None:
    """1-based rank of ``target`` in ``ranked`` or ``None`` when absent."""
    try:
        return ranked.index(target) + 1
    except ValueError:
        return None


def _ranks(ranked_lists, targets, k) -> list[int | None]:
    if len(ranked_lists) != len(targets):
        raise EvaluationError("one target per ranked list is required")
    if len(targets) == 0:
        raise EvaluationError("cannot evaluate an empty case set")
    return [rank_of(list(r[:k]), t) for r, t in zip(ranked_lists, targets)]


def recall_from_ranks(ranks, k: int = 20) -> float:
    if len(ranks) == 0:
        raise EvaluationError("cannot evaluate an empty case set")
    return sum(1 for r in ranks if r is not None and r <= k) / len(ranks)


def mrr_from_ranks(ranks, k: int = 20) -> float:
    if len(ranks) == 0:
        raise EvaluationError("cannot evaluate an empty case set")
    return sum(1.0 / r for r in ranks if r is not None and r <= k) / len(ranks)


def recall_at_k(ranked_lists, targets, k: int = 20) -> float:
    return recall_from_ranks(_ranks(ranked_lists, targets, k), k)


def mrr_at_k(ranked_lists, targets, k: int = 20) -> float:
    return mrr_from_ranks(_ranks(ranked_lists, targets, k), k)


def report_from_ranks(ranks, k: int) -> EvalReport:
    return EvalReport(recall_from_ranks(ranks, k), mrr_from_ranks(ranks, k), k, len(ranks))


class Recommender:
    """Anything that ranks items for the event following a history."""

    def recommend(self, history: InteractionSequence, k: int) -> list[str]:
        raise NotImplementedError

    def recommend_positions(self, seq: InteractionSequence, positions, k: int) -> list[list[str]]:
        """Top-k for each 1-based position ``t`` given events ``1 .. t-1``."""
        return [self.recommend(seq.prefix(t - 1), k) for t in positions]


def s_pop(history: InteractionSequence, k: int) -> list[str]:
    """The user's own items by interaction count; ties keep first occurrence."""
    if len(history) == 0:
        raise EvaluationError("S-POP needs a non-empty history")
    counts = Counter(history.item_ids)
    order = list(dict.fromkeys(history.item_ids))
    order.sort(key=lambda item: -counts[item])
    return order[:k]


class SPop(Recommender):
    def recommend(self, history, k):
        return s_pop(history, k)

    def recommend_positions(self, seq, positions, k):
        out = []
        counts: Counter = Counter()
        first: dict[str, int] = {}
        done = 0
        for t in sorted(positions):
            for e in seq.events[done:t - 1]:
                counts[e.item_id] += 1
                first.setdefault(e.item_id, len(first))
            done = t - 1
            ranked = sorted(counts, key=lambda item: (-counts[item], first[item]))
            out.append((t, ranked[:k]))
        by_t = dict(out)
        return [by_t[t] for t in positions]


class ItemKNN(Recommender):
    """Cosine similarity between binary user-item columns, scored against the last item.

    An item is not its own neighbour (the diagonal is zeroed).  Ties are
    broken by vocabulary order.
    """

    def __init__(self, train: Corpus):
        if len(train) == 0:
            raise EvaluationError("Item-KNN needs a non-empty training corpus")
        self.vocab = train.vocab
        rows, cols = [], []
        for u, seq in enumerate(train):
            for j in set(self.vocab.indices(seq.item_ids).tolist()):
                rows.append(u)
                cols.append(j)
        R = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(train), len(self.vocab)))
        co = (R.T @ R).toarray()
        norms = np.sqrt(np.diag(co))
        denom = np.outer(norms, norms)
        sim = np.divide(co, denom, out=np.zeros_like(co), where=denom > 0)
        np.fill_diagonal(sim, 0.0)
        self.similarity_matrix = sim

    def similarity(self, a: str, b: str) -> float:
        return float(self.similarity_matrix[self.vocab.index(a), self.vocab.index(b)])

    def _rank_after(self, item: str, k: int) -> list[str]:
        if item not in self.vocab:
            return []
        row = self.similarity_matrix[self.vocab.index(item)]
        order = np.argsort(-row, kind="stable")[:k]
        return [self.vocab.ids[i] for i in order]

    def recommend(self, history, k):
        if len(history) == 0:
            return []
        return self._rank_after(history.events[-1].item_id, k)

    def recommend_positions(self, seq, positions, k):
        return [self._rank_after(seq.events[t - 2].item_id, k) if t >= 2 else [] for t in positions]


def _context_sequences(test: Corpus, train: Corpus | None):
    """``(full history, positions of the test events)`` per test user."""
    history = train.by_user() if train is not None else {}
    for seq in test:
        prior = history.get(seq.user_id)
        full = prior.extend(seq.events) if prior is not None else seq
        start = len(prior) if prior is not None else 1
        positions = list(range(start + 1, len(full) + 1))
        if positions:
            yield full, positions


def collect_ranks(recommender, test: Corpus, k: int = 20, train: Corpus | None = None):
    """Per test user, the rank of every test event (``None`` beyond ``k``)."""
    out = {}
    for full, positions in _context_sequences(test, train):
        lists = recommender.recommend_positions(full, positions, k)
        out[full.user_id] = [rank_of(list(r[:k]), full.events[t - 1].item_id) for r, t in zip(lists, positions)]
    return out


def evaluate(recommender, test: Corpus, k: int = 20, train: Corpus | None = None) -> EvalReport:
    """Rank every test-period event against the full candidate vocabulary.

    Context for a test event is the user's training history followed by the
    test events before it.
    """
    if len(test) == 0:
        raise EvaluationError("empty test corpus")
    ranks = [r for rs in collect_ranks(recommender, test, k, train).values() for r in rs]
    if not ranks:
        raise EvaluationError("test corpus yields no evaluation cases")
    return report_from_ranks(ranks, k)


def cold_start_eval(model, cold_users: Corpus, steps: int = 50, k: int = 20) -> list[EvalReport]:
    """Series of reports; entry ``s - 1`` scores the prediction of event ``s + 1`` from the first ``s``."""
    per_step: dict[int, list] = {}
    for seq in cold_users:
        positions = list(range(2, min(steps + 1, len(seq)) + 1))
        if not positions:
            continue
        lists = model.recommend_positions(seq, positions, k)
        for t, ranked in zip(positions, lists):
            per_step.setdefault(t - 1, []).append(rank_of(list(ranked[:k]), seq.events[t - 1].item_id))
    return [report_from_ranks(per_step[s], k) for s in sorted(per_step)]


def cohort_label(n: int, boundaries=(300, 500)) -> str:
    lo, hi = boundaries
    if n < lo:
        return f"[0,{lo})"
    if n <= hi:
        return f"[{lo},{hi}]"
    return f"({hi},inf)"


def history_length_cohorts(model, test: Corpus, train: Corpus, boundaries=(300, 500), k: int = 20) -> dict[str, EvalReport]:
    """Evaluate users grouped by training-history length; empty cohorts are absent."""
    lengths = {s.user_id: len(s) for s in train}
    groups: dict[str, list[InteractionSequence]] = {}
    for seq in test:
        groups.setdefault(cohort_label(lengths.get(seq.user_id, 0), boundaries), []).append(seq)
    out = {}
    for label in (cohort_label(0, boundaries), cohort_label(boundaries[0], boundaries), cohort_label(boundaries[1] + 1, boundaries)):
        if label in groups:
            sub = Corpus(tuple(groups[label]), test.num_behavior_types, test.vocab)
            out[label] = evaluate(model, sub, k, train)
    return out


def format_report(config: dict, results: dict[str, EvalReport], timings: dict[str, float] | None = None,
                  baselines: dict[str, dict] | None = None) -> str:
    """Key-value report with one section per result, breakdowns as subsections.

    ``[timings]`` is always the last section so reproducibility checks can
    compare everything before it.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for section, values in config.items():
        cp[f"config.{section}"] = {k: _fmt(v) for k, v in values.items()}
    for name, rep in results.items():
        cp[f"result.{name}"] = {"k": str(rep.k), "cases": str(rep.cases),
                                f"recall@{rep.k}": repr(rep.recall), f"mrr@{rep.k}": repr(rep.mrr)}
        for label, sub in rep.breakdown.items():
            cp[f"result.{name}.{label}"] = {"k": str(sub.k), "cases": str(sub.cases),
                                            f"recall@{sub.k}": repr(sub.recall), f"mrr@{sub.k}": repr(sub.mrr)}
    for name, values in (baselines or {}).items():
        cp[f"external.{name}"] = {k: _fmt(v) for k, v in values.items()}
    if timings is not None:
        cp["timings"] = {k: f"{v:.3f}" for k, v in timings.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def strip_timings(report_text: str) -> str:
    return report_text.split("[timings]")[0]


def parse_report(text: str) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(text)
    return {s: dict(cp[s]) for s in cp.sections()}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)
