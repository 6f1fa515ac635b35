"""Mini-batch Adam training with best-on-validation checkpointing."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import ndcore as nd
from .dataset import Session, SplitDataset
from .hypergraph import HeteroHypergraph
from .metrics import evaluate
from .model import CoHHNRecommender, Hyperparams, forward, init_params, loss

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    best: nd.ParamStore
    last: nd.ParamStore
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def batch_loss(p: dict[str, nd.Tensor], graph: HeteroHypergraph, levels: Sequence[int],
               sessions: Sequence[Session], hp: Hyperparams):
    prefixes = [s.model_input(hp.max_len) for s in sessions]
    scores, _, _ = forward(p, graph, levels, prefixes, hp)
    return loss(scores, [s.label for s in sessions])


def mean_loss(store: nd.ParamStore, graph: HeteroHypergraph, levels: Sequence[int],
              sessions: Sequence[Session], hp: Hyperparams, batch: int = 100) -> float:
    """Average per-session loss without recording gradients."""
    p = store.leaves()
    total = 0.0
    for chunk in nd.iter_chunks(list(sessions), batch):
        total += float(batch_loss(p, graph, levels, chunk, hp).value)
    return total / max(len(sessions), 1)


def train(
    split: SplitDataset,
    graph: HeteroHypergraph,
    hp: Hyperparams,
    epochs: int,
    batch: int = 100,
    lr: float = 0.001,
    seed: int = 0,
    ks: Sequence[int] = (10, 20),
    select_by: str = "Prec@20",
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train from a fresh initialization derived from ``seed``.

    Each mini-batch runs one propagation over the full graph, scores the
    batch's sessions, sums their losses and takes one Adam step.
    """
    init_seed, shuffle_seed = np.random.SeedSequence(seed).generate_state(2)
    catalog = split.catalog
    store = init_params(hp, catalog.n, catalog.n_categories, int(init_seed))
    rng = np.random.default_rng(int(shuffle_seed))
    levels = catalog.levels
    train_sessions = list(split.train)
    best, best_key, best_epoch = store.copy(), None, 0
    history: list[dict] = []

    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train_sessions))
        total = 0.0
        for b, chunk in enumerate(nd.iter_chunks(order, batch)):
            sessions = [train_sessions[i] for i in chunk]
            with nd.recording() as tape:
                p = store.leaves()
                L = batch_loss(p, graph, levels, sessions, hp)
            value = float(L.value)
            if not np.isfinite(value):
                raise nd.NumericError(f"non-finite loss at epoch {epoch}, batch {b}: {value}")
            grads = nd.backward(tape, L)
            nd.adam_step(store, grads, lr=lr)
            total += value
        record = {"epoch": epoch, "train_loss": total / max(len(train_sessions), 1)}
        if split.valid:
            rec = CoHHNRecommender(store, graph, levels, hp)
            report = evaluate(rec, split.valid, ks, catalog, max_len=hp.max_len)
            record.update({f"valid_{k}": v for k, v in report.overall.items()})
            key = (report.overall.get(select_by, 0.0),
                   report.overall.get(select_by.replace("Prec", "MRR"), 0.0))
            if best_key is None or key > best_key:
                best, best_key, best_epoch = store.copy(), key, epoch
        else:
            best, best_epoch = store.copy(), epoch
        history.append(record)
        log.info("epoch %d loss %.5f", epoch, record["train_loss"])
        if on_epoch is not None:
            on_epoch(record)
    return TrainResult(best=best, last=store, history=history, best_epoch=best_epoch)


def write_history(path: str | Path, history: Sequence[dict]) -> None:
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in history))
