"""Non-neural session baselines: S-POP and session-kNN."""

from __future__ import annotations

import heapq
import math
from collections import Counter, defaultdict
from typing import Sequence

import numpy as np


class PopIndex:
    """Global item frequencies over training sessions."""

    def __init__(self, train_sessions: Sequence[Sequence[int]], n_items: int):
        self.counts = np.zeros(n_items, dtype=np.int64)
        for s in train_sessions:
            for i in s:
                self.counts[i] += 1
        # most popular first, ties by lower index
        self.order = np.lexsort((np.arange(n_items), -self.counts)).tolist()

    @property
    def n(self) -> int:
        return len(self.counts)


def spop_rank(session: Sequence[int], pop: PopIndex, k: int) -> list[int]:
    """In-session frequency, then global popularity, then index; padded with popular items."""
    if not session:
        raise ValueError("S-POP needs a non-empty session")
    local = Counter(session)
    ranked = sorted(local, key=lambda i: (-local[i], -pop.counts[i], i))
    k = min(k, pop.n)
    if len(ranked) < k:
        seen = set(ranked)
        for i in pop.order:
            if i not in seen:
                ranked.append(i)
                if len(ranked) == k:
                    break
    return ranked[:k]


def cosine_binary(a: set[int] | frozenset[int], b: set[int] | frozenset[int]) -> float:
    if not a or not b:
        return 0.0
    return len(a & b) / math.sqrt(len(a) * len(b))


class SessionIndex:
    """Inverted index item -> training sessions, for kNN candidate retrieval."""

    def __init__(self, train_sessions: Sequence[Sequence[int]]):
        self.sets = [frozenset(s) for s in train_sessions]
        self.postings: dict[int, list[int]] = defaultdict(list)
        for sid, items in enumerate(self.sets):
            for i in sorted(items):
                self.postings[i].append(sid)


def sknn_score(session: Sequence[int], index: SessionIndex, n_items: int,
               k_neighbors: int = 500) -> np.ndarray:
    """Sum of neighbor similarities for every item; neighbors are the top-k by binary cosine."""
    current = frozenset(session)
    candidates = sorted({sid for i in current for sid in index.postings.get(i, ())})
    sims = [(cosine_binary(current, index.sets[sid]), sid) for sid in candidates]
    # highest similarity first, ties by lower session id
    top = heapq.nsmallest(k_neighbors, sims, key=lambda t: (-t[0], t[1]))
    scores = np.zeros(n_items)
    for sim, sid in top:
        for i in index.sets[sid]:
            scores[i] += sim
    return scores


class SPop:
    name = "spop"

    def __init__(self, train_sessions: Sequence[Sequence[int]], n_items: int):
        self.pop = PopIndex(train_sessions, n_items)

    def predict_topk(self, session: Sequence[int], k: int) -> list[int]:
        return spop_rank(session, self.pop, k)


class SKNN:
    name = "sknn"

    def __init__(self, train_sessions: Sequence[Sequence[int]], n_items: int,
                 k_neighbors: int = 500):
        self.index = SessionIndex(train_sessions)
        self.n_items = n_items
        self.k_neighbors = k_neighbors

    def predict_topk(self, session: Sequence[int], k: int) -> list[int]:
        scores = sknn_score(session, self.index, self.n_items, self.k_neighbors)
        return np.argsort(-scores, kind="stable")[: min(k, self.n_items)].tolist()
