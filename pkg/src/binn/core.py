"""Interaction data model shared by every stage of the pipeline.

User and item identifiers are opaque strings at the boundary.  Numeric code
works on the dense indices assigned by :class:`ItemVocab`.
"""

from __future__ import annotations

import csv
import io
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

TIANCHI_BEHAVIORS = ("click", "collect", "cart", "purchase")
JD_BEHAVIORS = ("browse", "cart", "delete-to-cart", "purchase", "collect", "click")


class SchemaError(ValueError):
    """An event violates the configured behavior schema or log grammar."""


class VocabularyError(KeyError):
    """An item id is not part of the vocabulary in use."""


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    behavior: int
    timestamp: int

    def __post_init__(self):
        if self.timestamp < 0:
            raise SchemaError(f"negative timestamp {self.timestamp} for user {self.user_id!r}")


@dataclass(frozen=True)
class InteractionSequence:
    """One user's events, ordered by timestamp (ties keep input order)."""

    user_id: str
    events: tuple[Interaction, ...]

    def __post_init__(self):
        for a, b in zip(self.events, self.events[1:]):
            if b.timestamp < a.timestamp:
                raise ValueError(f"events of user {self.user_id!r} are not time ordered")
        for e in self.events:
            if e.user_id != self.user_id:
                raise ValueError(f"event of user {e.user_id!r} inside sequence of {self.user_id!r}")

    def __len__(self) -> int:
        return len(self.events)

    @property
    def item_ids(self) -> list[str]:
        return [e.item_id for e in self.events]

    @property
    def behaviors(self) -> list[int]:
        return [e.behavior for e in self.events]

    def prefix(self, n: int) -> "InteractionSequence":
        return InteractionSequence(self.user_id, self.events[:n])

    def extend(self, events: Iterable[Interaction]) -> "InteractionSequence":
        return InteractionSequence(self.user_id, self.events + tuple(events))


@dataclass(frozen=True)
class ItemVocab:
    """Item ids in dense-index order together with their global counts."""

    ids: tuple[str, ...]
    counts: np.ndarray
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "_index", {item: i for i, item in enumerate(self.ids)})
        if len(self._index) != len(self.ids):
            raise ValueError("duplicate item id in vocabulary")
        if counts.shape != (len(self.ids),):
            raise ValueError("one count per item is required")

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, item_id) -> bool:
        return item_id in self._index

    def __eq__(self, other) -> bool:
        if not isinstance(other, ItemVocab):
            return NotImplemented
        return self.ids == other.ids and np.array_equal(self.counts, other.counts)

    def index(self, item_id: str) -> int:
        try:
            return self._index[item_id]
        except KeyError:
            raise VocabularyError(f"unknown item {item_id!r}") from None

    def indices(self, item_ids: Iterable[str]) -> np.ndarray:
        return np.array([self.index(i) for i in item_ids], dtype=np.int64)

    def count(self, item_id: str) -> int:
        return int(self.counts[self.index(item_id)])

    @classmethod
    def from_counter(cls, counter: Counter) -> "ItemVocab":
        ids = tuple(sorted(counter))
        return cls(ids, np.array([counter[i] for i in ids], dtype=np.int64))


@dataclass(frozen=True)
class Corpus:
    sequences: tuple[InteractionSequence, ...]
    num_behavior_types: int
    vocab: ItemVocab

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self) -> Iterator[InteractionSequence]:
        return iter(self.sequences)

    @property
    def user_ids(self) -> list[str]:
        return [s.user_id for s in self.sequences]

    @property
    def num_events(self) -> int:
        return sum(len(s) for s in self.sequences)

    def events(self) -> list[Interaction]:
        return [e for s in self.sequences for e in s.events]

    def get(self, user_id: str) -> InteractionSequence | None:
        for s in self.sequences:
            if s.user_id == user_id:
                return s
        return None

    def by_user(self) -> dict[str, InteractionSequence]:
        return {s.user_id: s for s in self.sequences}


def encode_behavior(code: int, num_types: int) -> np.ndarray:
    """One-hot vector with a 1 at ``code - 1``; codes are 1-based."""
    if not 1 <= code <= num_types:
        raise SchemaError(f"behavior code {code} outside [1, {num_types}]")
    v = np.zeros(num_types)
    v[code - 1] = 1.0
    return v


def build_corpus(raw: Iterable[Interaction], num_behavior_types: int) -> Corpus:
    """Group events by user, sort each group stably by time and count items.

    Sequences are ordered by user id and item indices follow sorted item id,
    so the result does not depend on the order users or items first appear.
    """
    groups: dict[str, list[Interaction]] = defaultdict(list)
    counter: Counter = Counter()
    for e in raw:
        if not 1 <= e.behavior <= num_behavior_types:
            raise SchemaError(f"behavior code {e.behavior} outside [1, {num_behavior_types}]")
        groups[e.user_id].append(e)
        counter[e.item_id] += 1
    sequences = tuple(
        InteractionSequence(u, tuple(sorted(groups[u], key=lambda e: e.timestamp)))
        for u in sorted(groups)
    )
    return Corpus(sequences, num_behavior_types, ItemVocab.from_counter(counter))


def subcorpus(corpus: Corpus, sequences: Iterable[InteractionSequence]) -> Corpus:
    """Rebuild a corpus (and its vocabulary) from already-ordered sequences."""
    seqs = tuple(s for s in sequences if len(s))
    counter = Counter(e.item_id for s in seqs for e in s.events)
    return Corpus(seqs, corpus.num_behavior_types, ItemVocab.from_counter(counter))


def _is_int(text: str) -> bool:
    try:
        int(text)
    except ValueError:
        return False
    return True


def read_log(path, num_behavior_types: int, delimiter: str | None = None) -> Corpus:
    """Read ``user_id, item_id, behavior_code, timestamp`` lines.

    The delimiter is sniffed between comma and tab when not given.  A header
    line is skipped when its last two fields are not integers.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return build_corpus(parse_log(text, delimiter, source=str(path)), num_behavior_types)


def parse_log(text: str, delimiter: str | None = None, source: str = "<log>") -> list[Interaction]:
    if delimiter is None:
        first = text.split("\n", 1)[0]
        delimiter = "\t" if "\t" in first else ","
    events = []
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise SchemaError(f"{source}:{lineno}: expected 4 fields, got {len(row)}")
        user, item, behavior, ts = (c.strip() for c in row)
        if lineno == 1 and not (_is_int(behavior) and _is_int(ts)):
            continue
        if not (_is_int(behavior) and _is_int(ts)):
            raise SchemaError(f"{source}:{lineno}: behavior and timestamp must be integers")
        events.append(Interaction(user, item, int(behavior), int(ts)))
    return events


def write_log(corpus_or_events, path, delimiter: str = ",", header: bool = True) -> None:
    events = corpus_or_events.events() if isinstance(corpus_or_events, Corpus) else corpus_or_events
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        if header:
            writer.writerow(["user_id", "item_id", "behavior_code", "timestamp"])
        for e in events:
            writer.writerow([e.user_id, e.item_id, e.behavior, e.timestamp])
