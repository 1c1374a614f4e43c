"""Synthetic interaction logs with planted item clusters and user preferences.

Items are split into clusters.  Every item has a few fixed successors
inside its cluster, one set for users who prefer that cluster ("engaged")
and one for everybody else.  A user's log is a sequence of sessions whose
lengths are geometric, so a session boundary is equally likely at every
step.  Each step follows a successor with probability ``determinism`` and
otherwise lands somewhere new, as does the first event of a session.
Landings fall in the user's preferred cluster with probability
``preference_affinity`` and there hit one of the user's favourite items with
probability ``favorite_rate``.  Items from the preferred cluster are
collected, carted or purchased with probability ``signal``; every other
event is a click (behavior 1).

A ``new_user_fraction`` of users is only active in the final
``new_user_window`` of the time span, so a time split sees them as new.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Corpus, Interaction, build_corpus


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    num_users: int = 1000
    num_items: int = 300
    num_clusters: int = 3
    min_events: int = 40
    max_events: int = 80
    num_behavior_types: int = 4
    signal: float = 0.9
    determinism: float = 0.9
    preference_affinity: float = 0.6
    branching: int = 3
    paths: str = "engaged"
    num_favorites: int = 5
    favorite_rate: float = 0.8
    session_mean: float = 10.0
    new_user_fraction: float = 0.07
    new_user_window: float = 0.02
    time_span: int = 30 * 86400
    event_gap: int = 60
    seed: int = 0


@dataclass(frozen=True)
class SynthData:
    corpus: Corpus
    item_cluster: dict[str, int]
    user_cluster: dict[str, int]
    successors: dict[str, tuple[tuple[str, ...], ...]]


def _validate(cfg: SynthConfig):
    problems = []
    if cfg.num_users < 1 or cfg.num_items < 1 or cfg.num_clusters < 1:
        problems.append("num_users, num_items and num_clusters must be positive")
    if cfg.num_clusters > cfg.num_items:
        problems.append("more clusters than items")
    if not 1 <= cfg.min_events <= cfg.max_events:
        problems.append("need 1 <= min_events <= max_events")
    if cfg.session_mean < 1:
        problems.append("session_mean must be >= 1")
    if not 0.0 < cfg.new_user_window < 1.0:
        problems.append("new_user_window must lie in (0, 1)")
    if cfg.num_favorites < 0:
        problems.append("num_favorites must be >= 0")
    if cfg.num_behavior_types < 2:
        problems.append("at least two behavior types are needed (click plus one preference type)")
    for name in ("signal", "determinism", "preference_affinity", "new_user_fraction", "favorite_rate"):
        if not 0.0 <= getattr(cfg, name) <= 1.0:
            problems.append(f"{name} must lie in [0, 1]")
    if cfg.paths not in ("shared", "engaged", "preference"):
        problems.append(f"unknown path structure {cfg.paths!r}")
    if cfg.branching < 1:
        problems.append("branching must be >= 1")
    if cfg.time_span < 10 * cfg.max_events * cfg.event_gap:
        problems.append("time_span too short for the requested number of events")
    if problems:
        raise GenerationError("; ".join(problems))


def generate(cfg: SynthConfig = SynthConfig()) -> SynthData:
    _validate(cfg)
    rng = np.random.default_rng(cfg.seed)
    items = [f"i{j:04d}" for j in range(cfg.num_items)]
    cluster_of = rng.permutation(cfg.num_items) % cfg.num_clusters
    members = [np.flatnonzero(cluster_of == c) for c in range(cfg.num_clusters)]

    modes = {"shared": 1, "engaged": 2, "preference": cfg.num_clusters}[cfg.paths]
    successors = []
    for j in range(cfg.num_items):
        pool = members[cluster_of[j]]
        pool = pool[pool != j] if len(pool) > 1 else pool
        width = min(cfg.branching, len(pool) // modes) or 1
        picks = rng.choice(pool, size=min(width * modes, len(pool)), replace=False)
        successors.append([picks[m * width:(m + 1) * width] if len(picks) >= (m + 1) * width else picks[:width]
                           for m in range(modes)])

    def landing(preferred, favorites):
        if rng.random() < cfg.preference_affinity:
            if len(favorites) and rng.random() < cfg.favorite_rate:
                return int(rng.choice(favorites))
            c = preferred
        else:
            c = rng.integers(cfg.num_clusters)
        return int(rng.choice(members[c]))

    events = []
    user_cluster = {}
    n_new = int(round(cfg.new_user_fraction * cfg.num_users))
    new_users = set(rng.permutation(cfg.num_users)[:n_new].tolist())
    for u in range(cfg.num_users):
        user = f"u{u:05d}"
        preferred = int(rng.integers(cfg.num_clusters))
        user_cluster[user] = preferred
        pool = members[preferred]
        favorites = rng.choice(pool, size=min(cfg.num_favorites, len(pool)), replace=False)
        n = int(rng.integers(cfg.min_events, cfg.max_events + 1))
        lengths = []
        while sum(lengths) < n:
            lengths.append(min(n - sum(lengths), int(rng.geometric(1.0 / cfg.session_mean))))
        span = n * cfg.event_gap * 2
        lo = int((1.0 - cfg.new_user_window) * cfg.time_span) if u in new_users else 0
        hi = cfg.time_span - span
        starts = np.sort(rng.integers(lo, max(hi, lo + 1), size=len(lengths)))
        clock = -1
        for start, length in zip(starts, lengths):
            t = max(int(start), clock + cfg.event_gap)
            cur = landing(preferred, favorites)
            for step in range(length):
                if step > 0:
                    if rng.random() < cfg.determinism:
                        if cfg.paths == "preference":
                            mode = preferred
                        else:
                            mode = int(cfg.paths == "engaged" and cluster_of[cur] == preferred)
                        cur = int(rng.choice(successors[cur][mode]))
                    else:
                        cur = landing(preferred, favorites)
                if cluster_of[cur] == preferred and rng.random() < cfg.signal:
                    behavior = int(rng.integers(2, cfg.num_behavior_types + 1))
                else:
                    behavior = 1
                events.append(Interaction(user, items[cur], behavior, t))
                clock = t
                t += cfg.event_gap
    corpus = build_corpus(events, cfg.num_behavior_types)
    return SynthData(
        corpus=corpus,
        item_cluster={items[j]: int(cluster_of[j]) for j in range(cfg.num_items)},
        user_cluster=user_cluster,
        successors={items[j]: tuple(tuple(items[s] for s in row) for row in successors[j]) for j in range(cfg.num_items)},
    )


def memorization_corpus(num_users: int = 20, num_items: int = 30, length: int = 40,
                        num_behavior_types: int = 4, seed: int = 0) -> tuple[Corpus, dict[str, str]]:
    """Users walk one fixed cycle over all items, so the next item is a function of the last.

    Returns the corpus and the ``item -> next item`` rule.
    """
    rng = np.random.default_rng(seed)
    items = [f"m{j:03d}" for j in range(num_items)]
    cycle = rng.permutation(num_items)
    nxt = {int(cycle[k]): int(cycle[(k + 1) % num_items]) for k in range(num_items)}
    events = []
    for u in range(num_users):
        cur = int(rng.integers(num_items))
        for t in range(length):
            events.append(Interaction(f"u{u:03d}", items[cur], int(rng.integers(1, num_behavior_types + 1)), t))
            cur = nxt[cur]
    rule = {items[a]: items[b] for a, b in nxt.items()}
    return build_corpus(events, num_behavior_types), rule


def write_labels(data: SynthData, item_path, user_path) -> None:
    with open(item_path, "w", encoding="utf-8") as fh:
        for item, c in sorted(data.item_cluster.items()):
            fh.write(f"{item}\t{c}\n")
    with open(user_path, "w", encoding="utf-8") as fh:
        for user, c in sorted(data.user_cluster.items()):
            fh.write(f"{user}\t{c}\n")


def read_labels(path) -> dict[str, int]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                key, value = line.rstrip("\n").split("\t")
                out[key] = int(value)
    return out
