"""Frequency filtering and the cut-time train/test split."""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Corpus, InteractionSequence, subcorpus, write_log


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class SplitResult:
    train: Corpus
    test: Corpus
    cold_start_users: Corpus
    cut_time: int
    # events at or after the cut, before test-side item filtering
    num_test_period_events: int


def preprocess(corpus: Corpus, min_user_len: int = 10, min_item_count: int = 5) -> Corpus:
    """Drop rare items, then short users; one pass of each."""
    keep_items = {item for item, n in zip(corpus.vocab.ids, corpus.vocab.counts) if n >= min_item_count}
    filtered = []
    for seq in corpus:
        events = tuple(e for e in seq.events if e.item_id in keep_items)
        if len(events) >= min_user_len:
            filtered.append(InteractionSequence(seq.user_id, events))
    return subcorpus(corpus, filtered)


def find_cut_time(timestamps: np.ndarray, train_fraction: float) -> int:
    """Smallest observed timestamp t* with at least ``train_fraction`` of events before it."""
    ts = np.sort(np.asarray(timestamps, dtype=np.int64))
    uniq = np.unique(ts)
    if len(uniq) < 2:
        raise SplitError("need at least two distinct timestamps to split")
    need = train_fraction * len(ts)
    before = np.searchsorted(ts, uniq, side="left")
    ok = np.nonzero(before >= need)[0]
    if len(ok) == 0:
        # no observed timestamp works: everything goes to train except the last instant
        return int(uniq[-1])
    return int(uniq[ok[0]])


def split_by_time(corpus: Corpus, train_fraction: float = 0.9) -> SplitResult:
    if not 0.0 < train_fraction < 1.0:
        raise SplitError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    all_ts = np.array([e.timestamp for s in corpus for e in s.events], dtype=np.int64)
    cut = find_cut_time(all_ts, train_fraction)

    train_seqs, tail_seqs = [], []
    for seq in corpus:
        head = tuple(e for e in seq.events if e.timestamp < cut)
        tail = tuple(e for e in seq.events if e.timestamp >= cut)
        if head:
            train_seqs.append(InteractionSequence(seq.user_id, head))
        if tail:
            tail_seqs.append(InteractionSequence(seq.user_id, tail))
    train = subcorpus(corpus, train_seqs)
    train_users = set(train.user_ids)

    test_seqs, cold_seqs = [], []
    for seq in tail_seqs:
        events = tuple(e for e in seq.events if e.item_id in train.vocab)
        if not events:
            continue
        target = test_seqs if seq.user_id in train_users else cold_seqs
        target.append(InteractionSequence(seq.user_id, events))
    return SplitResult(
        train=train,
        test=subcorpus(corpus, test_seqs),
        cold_start_users=subcorpus(corpus, cold_seqs),
        cut_time=cut,
        num_test_period_events=sum(len(s) for s in tail_seqs),
    )


def write_split(split: SplitResult, out_dir, extra: dict | None = None) -> Path:
    """Write train/test/cold-start logs and a ``manifest.ini``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_log(split.train, out / "train.csv")
    write_log(split.test, out / "test.csv")
    write_log(split.cold_start_users, out / "cold_start.csv")
    cp = configparser.ConfigParser()
    cp["split"] = {
        "cut_time": str(split.cut_time),
        "train": "train.csv",
        "test": "test.csv",
        "cold_start": "cold_start.csv",
        "num_behavior_types": str(split.train.num_behavior_types),
        "train_events": str(split.train.num_events),
        "test_events": str(split.test.num_events),
        "cold_start_events": str(split.cold_start_users.num_events),
        "test_period_events": str(split.num_test_period_events),
    }
    for section, values in (extra or {}).items():
        cp[section] = {k: str(v) for k, v in values.items()}
    path = out / "manifest.ini"
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)
    return path

