"""Heterogeneous hypergraph over price-level, item-ID and category nodes."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset import DataError, ItemCatalog


class NodeType(str, enum.Enum):
    PRICE = "price"
    ITEM = "id"
    CATEGORY = "cat"


class EdgeType(str, enum.Enum):
    FEATURE = "feature"
    PRICE = "price"
    SESSION = "session"


@dataclass(frozen=True, order=True)
class NodeRef:
    node_type: NodeType
    index: int


@dataclass(frozen=True)
class Hyperedge:
    edge_type: EdgeType
    members: frozenset[NodeRef]


@dataclass(frozen=True)
class Adjacency:
    """Flat (row, col) pairs sorted by row then col; row is the target node."""

    rows: np.ndarray
    cols: np.ndarray
    num_rows: int

    def of(self, row: int) -> list[int]:
        lo, hi = np.searchsorted(self.rows, [row, row + 1])
        return self.cols[lo:hi].tolist()

    def degree(self) -> np.ndarray:
        return np.bincount(self.rows, minlength=self.num_rows)


def _adjacency(pairs: Iterable[tuple[int, int]], num_rows: int) -> Adjacency:
    uniq = sorted(set(pairs))
    rows = np.array([r for r, _ in uniq], dtype=np.intp)
    cols = np.array([c for _, c in uniq], dtype=np.intp)
    return Adjacency(rows, cols, num_rows)


class HeteroHypergraph:
    def __init__(self, counts: dict[NodeType, int], edges: dict[EdgeType, list[Hyperedge]],
                 adjacency: dict[tuple[NodeType, NodeType], Adjacency]):
        self.counts = counts
        self.edges = edges
        self.adjacency = adjacency

    def adj(self, target: NodeType, source: NodeType) -> Adjacency:
        """Neighbors of type ``source`` for every node of type ``target``."""
        key = (target, source)
        if key not in self.adjacency:
            return _adjacency((), self.counts[target])
        return self.adjacency[key]

    def to_json(self) -> dict:
        return {
            "nodes": {t.value: n for t, n in self.counts.items()},
            "edges": {
                et.value: [sorted([m.node_type.value, m.index] for m in e.members) for e in edges]
                for et, edges in self.edges.items()
            },
        }

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")


def build(catalog: ItemCatalog, train_sessions: Sequence[Sequence[int]]) -> HeteroHypergraph:
    """Build the graph from catalog features and *training* sessions only.

    ``train_sessions`` holds item-index sequences.  Price and session
    hyperedges with fewer than two distinct members are dropped, and
    duplicate member sets are collapsed.
    """
    n, rho, n_cat = catalog.n, catalog.rho, catalog.n_categories
    if not catalog.levels or len(catalog.levels) != n:
        raise DataError("catalog has no price levels; run assign_levels first")
    level, cat = catalog.levels, catalog.item_category

    feature = [
        Hyperedge(EdgeType.FEATURE, frozenset({
            NodeRef(NodeType.ITEM, i),
            NodeRef(NodeType.PRICE, level[i]),
            NodeRef(NodeType.CATEGORY, cat[i]),
        }))
        for i in range(n)
    ]
    price_sets: dict[frozenset[int], None] = {}
    session_sets: dict[frozenset[int], None] = {}
    for items in train_sessions:
        for i in items:
            if not 0 <= i < n:
                raise DataError(f"session item {i} not in catalog of {n} items")
        ids = frozenset(items)
        levels = frozenset(level[i] for i in items)
        if len(ids) >= 2:
            session_sets.setdefault(ids, None)
        if len(levels) >= 2:
            price_sets.setdefault(levels, None)

    def edges_of(kind: EdgeType, node_type: NodeType, sets) -> list[Hyperedge]:
        return [
            Hyperedge(kind, frozenset(NodeRef(node_type, i) for i in members))
            for members in sets
        ]

    edges = {
        EdgeType.FEATURE: feature,
        EdgeType.PRICE: edges_of(EdgeType.PRICE, NodeType.PRICE, price_sets),
        EdgeType.SESSION: edges_of(EdgeType.SESSION, NodeType.ITEM, session_sets),
    }

    P, I, C = NodeType.PRICE, NodeType.ITEM, NodeType.CATEGORY
    item_item = [(a, b) for members in session_sets for a in members for b in members if a != b]
    adjacency = {
        (I, P): _adjacency(((i, level[i]) for i in range(n)), n),
        (I, C): _adjacency(((i, cat[i]) for i in range(n)), n),
        (I, I): _adjacency(item_item, n),
        (P, I): _adjacency(((level[i], i) for i in range(n)), rho),
        (P, C): _adjacency(((level[i], cat[i]) for i in range(n)), rho),
        (C, I): _adjacency(((cat[i], i) for i in range(n)), n_cat),
        (C, P): _adjacency(((cat[i], level[i]) for i in range(n)), n_cat),
    }
    return HeteroHypergraph({P: rho, I: n, C: n_cat}, edges, adjacency)


def neighbors(g: HeteroHypergraph, node: NodeRef, target_type: NodeType) -> set[NodeRef]:
    if not 0 <= node.index < g.counts[node.node_type]:
        raise IndexError(f"{node} out of range")
    return {NodeRef(target_type, j) for j in g.adj(node.node_type, target_type).of(node.index)}
