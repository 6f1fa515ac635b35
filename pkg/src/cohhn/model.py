"""Co-guided heterogeneous hypergraph network.

Forward pass, for a batch of session prefixes:

1. ``propagate``: ``r`` synchronous rounds of dual-channel aggregation over
   the whole graph (attention within a neighbor type, gated fusion across
   types) produce item, price-level and category embedding tables.
2. Per session, multi-head self-attention over the price-level embeddings
   gives the price preference; attention over item embeddings fused with
   reversed position embeddings gives the interest preference.
3. ``co_guide`` lets the two preferences gate each other.
4. ``score_items`` scores all items and normalizes with a softmax.

Sessions in a batch are grouped by length so every tensor is dense.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import ndcore as nd
from .dataset import MAX_LEN, ConfigError
from .hypergraph import Adjacency, HeteroHypergraph, NodeType

ABLATIONS = ("none", "no_price", "no_category", "price_as_feature_only", "no_coguide")

P_, I_, C_ = NodeType.PRICE, NodeType.ITEM, NodeType.CATEGORY
# (target, first source, second source) in gate order
FUSION_ORDER = {I_: (P_, C_), P_: (I_, C_), C_: (P_, I_)}


@dataclass(frozen=True)
class Hyperparams:
    d: int = 128
    heads: int = 4
    rho: int = 10
    r: int = 3
    max_len: int = MAX_LEN
    ablation: str = "none"
    raw_beta: bool = False

    def __post_init__(self):
        if self.d < 1 or self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"d={self.d} must be a positive multiple of heads={self.heads}")
        if self.r < 1:
            raise ConfigError(f"r must be >= 1, got {self.r}")
        if self.rho < 2:
            raise ConfigError(f"rho must be >= 2, got {self.rho}")
        if self.max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {self.max_len}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")

    @property
    def use_price(self) -> bool:
        return self.ablation != "no_price"

    @property
    def use_category(self) -> bool:
        return self.ablation != "no_category"

    @property
    def price_preference(self) -> bool:
        return self.ablation not in ("no_price", "price_as_feature_only")

    @property
    def coguide(self) -> bool:
        return self.price_preference and self.ablation != "no_coguide"

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(hp: Hyperparams, n_items: int, n_categories: int) -> dict[str, tuple[int, ...]]:
    d, h = hp.d, hp.heads
    shapes: dict[str, tuple[int, ...]] = {
        "emb.id": (n_items, d),
        "emb.price": (hp.rho, d),
        "emb.cat": (n_categories, d),
    }
    for target, sources in FUSION_ORDER.items():
        for source in sources:
            shapes[f"att.{target.value}.{source.value}"] = (d,)
    for target in FUSION_ORDER:
        shapes[f"gate.{target.value}.W"] = (d, 3 * d)
        shapes[f"gate.{target.value}.W1"] = (d, d)
        shapes[f"gate.{target.value}.W2"] = (d, d)
    for name in ("q", "k", "v"):
        shapes[f"sa.{name}"] = (h, d // h, d)
    shapes["pos"] = (hp.max_len, d)
    shapes["fuse.W"] = (d, 2 * d)
    shapes["fuse.b"] = (d,)
    shapes["int.A1"] = (d, d)
    shapes["int.A2"] = (d, d)
    shapes["int.b"] = (d,)
    shapes["int.u"] = (d,)
    for name in ("W1_pi", "W2_pi", "W1_r", "U1_r", "W2_r", "U2_r", "W_P", "U_P", "W_I", "U_I"):
        shapes[f"co.{name}"] = (d, d)
    shapes["co.b_c"] = (d,)
    shapes["co.b_j"] = (d,)
    return shapes


def init_params(hp: Hyperparams, n_items: int, n_categories: int, seed: int) -> nd.ParamStore:
    rng = np.random.default_rng(seed)
    store = nd.ParamStore()
    for name, shape in param_shapes(hp, n_items, n_categories).items():
        store.add(name, nd.init(shape, rng))
    return store


# ---------------------------------------------------------------- aggregation


def aggregate_type(adj: Adjacency, source: nd.Tensor, u: nd.Tensor, trace: dict | None = None,
                   key: str = "") -> nd.Tensor:
    """Attention-weighted sum of each target's neighbors of one type (zero if none)."""
    pooled, alpha = nd.segment_attention(source, u, adj.rows, adj.cols, adj.num_rows)
    if trace is not None:
        trace.setdefault("alpha", []).append((key, adj.rows, alpha))
    return pooled


def intra_type_aggregate(neighbor_embeds: nd.Tensor, u: nd.Tensor) -> nd.Tensor:
    """Single-target form: ``neighbor_embeds`` is (k, d); returns a d-vector."""
    k, d = neighbor_embeds.shape
    adj = Adjacency(np.zeros(k, dtype=np.intp), np.arange(k, dtype=np.intp), 1)
    return nd.reshape(aggregate_type(adj, neighbor_embeds, u), (d,))


def inter_type_aggregate(v: nd.Tensor, e1: nd.Tensor, e2: nd.Tensor, W: nd.Tensor, W1: nd.Tensor,
                         W2: nd.Tensor, trace: dict | None = None, key: str = "") -> nd.Tensor:
    """Gated fusion of two type embeddings into the node embedding; rows are nodes."""
    squeeze = v.value.ndim == 1
    if squeeze:
        v, e1, e2 = (nd.reshape(t, (1, t.shape[0])) for t in (v, e1, e2))
    g = nd.sigmoid(nd.linear(nd.concat([v, e1, e2], axis=-1), W) + nd.linear(e1, W1)
                   + nd.linear(e2, W2))
    if trace is not None:
        trace.setdefault("gate", []).append((key, g.value))
    h = v + g * e1 + (1.0 - g) * e2
    return nd.reshape(h, (h.shape[1],)) if squeeze else h


def propagate(graph: HeteroHypergraph, p: dict[str, nd.Tensor], hp: Hyperparams,
              trace: dict | None = None) -> dict[NodeType, nd.Tensor]:
    """Run ``hp.r`` synchronous aggregation rounds; returns h tables keyed by node type."""
    active = [I_] + ([P_] if hp.use_price else []) + ([C_] if hp.use_category else [])
    tables = {I_: p["emb.id"], P_: p["emb.price"], C_: p["emb.cat"]}
    tables = {t: tables[t] for t in active}

    item_adj = graph.adj(I_, I_)
    deg = item_adj.degree().astype(float)
    inv_deg = 1.0 / deg[item_adj.rows]

    for rnd in range(hp.r):
        new = {}
        for target in active:
            prev = tables[target]
            n_rows, d = prev.shape
            parts = []
            for source in FUSION_ORDER[target]:
                if source in tables:
                    u = p[f"att.{target.value}.{source.value}"]
                    parts.append(aggregate_type(graph.adj(target, source), tables[source], u,
                                                trace, f"{rnd}:{target.value}.{source.value}"))
                else:
                    parts.append(nd.Tensor(np.zeros((n_rows, d))))
            h = inter_type_aggregate(prev, parts[0], parts[1], p[f"gate.{target.value}.W"],
                                     p[f"gate.{target.value}.W1"], p[f"gate.{target.value}.W2"],
                                     trace, f"{rnd}:{target.value}")
            if target is I_:
                nb = nd.scale_rows(nd.index(tables[I_], item_adj.cols), nd.Tensor(inv_deg))
                h = h + nd.segment_sum(nb, item_adj.rows, item_adj.num_rows)
            new[target] = h
        tables = new
    if trace is not None:
        trace["h"] = {t.value: tab.value for t, tab in tables.items()}
    return tables


# ---------------------------------------------------------------- preferences


def extract_price_preference(E: nd.Tensor, p: dict[str, nd.Tensor], heads: int,
                             trace: dict | None = None) -> nd.Tensor:
    """Multi-head self-attention over (B, m, d) price embeddings; returns (B, d) at the last step."""
    B, m, d = E.shape
    if m == 0:
        raise ValueError("price preference needs at least one position")
    dh = d // heads

    def project(name):
        x = nd.linear(E, nd.reshape(p[name], (d, d)))
        x = nd.transpose(nd.reshape(x, (B, m, heads, dh)), (0, 2, 1, 3))
        return nd.reshape(x, (B * heads, m, dh))

    Q, K, V = project("sa.q"), project("sa.k"), project("sa.v")
    att = nd.softmax(nd.matmul(Q, nd.transpose(K, (0, 2, 1))) * (1.0 / math.sqrt(dh)))
    out = nd.reshape(nd.matmul(att, V), (B, heads, m, dh))
    S = nd.reshape(nd.transpose(out, (0, 2, 1, 3)), (B, m, d))
    if trace is not None:
        trace["self_attention"] = att.value.reshape(B, heads, m, m)
        trace["S_p"] = S.value
    return nd.take_last(S, axis=1)


def extract_interest_preference(H: nd.Tensor, p: dict[str, nd.Tensor], raw_beta: bool = False,
                                trace: dict | None = None) -> nd.Tensor:
    """Position-aware soft attention over (B, m, d) item embeddings; returns (B, d)."""
    B, m, d = H.shape
    if m == 0:
        raise ValueError("interest preference needs at least one position")
    if m > p["pos"].shape[0]:
        raise ValueError(f"session of length {m} exceeds position table")
    reversed_pos = np.tile(np.arange(m - 1, -1, -1), (B, 1))
    pos = nd.index(p["pos"], reversed_pos)
    v_star = nd.tanh(nd.add_bias(nd.linear(nd.concat([H, pos], axis=-1), p["fuse.W"]), p["fuse.b"]))
    v_bar = nd.mean(v_star, axis=1)
    ctx = nd.index(nd.linear(v_bar, p["int.A2"]), np.repeat(np.arange(B)[:, None], m, axis=1))
    hidden = nd.sigmoid(nd.add_bias(nd.linear(v_star, p["int.A1"]) + ctx, p["int.b"]))
    weights = nd.reshape(nd.linear(hidden, nd.reshape(p["int.u"], (1, d))), (B, m))
    beta = weights if raw_beta else nd.softmax(weights)
    if trace is not None:
        trace["v_star"] = v_star.value
        trace["beta"] = beta.value
        trace["beta_normalized"] = not raw_beta
    return nd.reshape(nd.matmul(nd.reshape(beta, (B, 1, m)), H), (B, d))


def co_guide(P_hat: nd.Tensor, I_hat: nd.Tensor, p: dict[str, nd.Tensor],
             trace: dict | None = None) -> tuple[nd.Tensor, nd.Tensor]:
    """Mutual gating of price and interest preferences; rows are sessions."""
    L = nd.linear
    m_c = nd.tanh(nd.add_bias(L(P_hat * I_hat, p["co.W1_pi"]), p["co.b_c"]))
    m_j = nd.tanh(nd.add_bias(L(P_hat + I_hat, p["co.W2_pi"]), p["co.b_j"]))
    r_P = nd.sigmoid(L(m_c, p["co.W1_r"]) + L(m_j, p["co.U1_r"]))
    r_I = nd.sigmoid(L(m_c, p["co.W2_r"]) + L(m_j, p["co.U2_r"]))
    m_P = nd.tanh(L(r_P * P_hat, p["co.W_P"]) + L((1.0 - r_I) * I_hat, p["co.U_P"]))
    m_I = nd.tanh(L(r_I * I_hat, p["co.W_I"]) + L((1.0 - r_P) * P_hat, p["co.U_I"]))
    P_out = m_P * (P_hat + m_I)
    I_out = m_I * (I_hat + m_P)
    if trace is not None:
        for key, t in (("m_c", m_c), ("m_j", m_j), ("r_P", r_P), ("r_I", r_I), ("m_P", m_P),
                       ("m_I", m_I), ("P_p", P_out), ("I_p", I_out)):
            trace[key] = t.value
    return P_out, I_out


def score_items(P: nd.Tensor | None, I: nd.Tensor, h_price: nd.Tensor | None, h_id: nd.Tensor,
                levels: Sequence[int] | None) -> tuple[nd.Tensor, nd.Tensor]:
    """Raw scores and softmax-normalized scores (B, n) over all items."""
    raw = nd.matmul(I, nd.transpose(h_id))
    if P is not None:
        raw = raw + nd.matmul(P, nd.transpose(nd.index(h_price, np.asarray(levels))))
    return raw, nd.softmax(raw)


def loss(scores: nd.Tensor, targets: Sequence[int]) -> nd.Tensor:
    """Binary cross-entropy against one-hot targets, summed over items and sessions."""
    onehot = np.zeros(scores.shape)
    onehot[np.arange(len(targets)), np.asarray(targets)] = 1.0
    T = nd.Tensor(onehot)
    pos = T * nd.log_clamped(scores)
    neg = (1.0 - T) * nd.log_clamped(1.0 - scores)
    return -nd.sum(pos + neg)


# ---------------------------------------------------------------- full pass


def forward(p: dict[str, nd.Tensor], graph: HeteroHypergraph, levels: Sequence[int],
            prefixes: Sequence[Sequence[int]], hp: Hyperparams, trace: bool = False):
    """Normalized scores for every prefix; returns (scores, raw, trace or None)."""
    tr: dict | None = {} if trace else None
    tables = propagate(graph, p, hp, tr)
    h_id, h_p = tables[I_], tables.get(P_)
    level_arr = np.asarray(levels, dtype=np.intp)

    prefixes = [tuple(s)[-hp.max_len:] for s in prefixes]
    if any(len(s) == 0 for s in prefixes):
        raise ValueError("every session prefix needs at least one item")
    groups: dict[int, list[int]] = {}
    for row, s in enumerate(prefixes):
        groups.setdefault(len(s), []).append(row)

    order: list[int] = []
    P_hats, I_hats = [], []
    group_traces = []
    for m in sorted(groups):
        rows = groups[m]
        order.extend(rows)
        ids = np.array([prefixes[r] for r in rows], dtype=np.intp)
        gtr: dict | None = {"rows": rows} if tr is not None else None
        I_hats.append(extract_interest_preference(nd.index(h_id, ids), p, hp.raw_beta, gtr))
        if hp.price_preference:
            E = nd.index(h_p, level_arr[ids])
            P_hats.append(extract_price_preference(E, p, hp.heads, gtr))
        if gtr is not None:
            group_traces.append(gtr)

    restore = np.argsort(np.asarray(order))
    I_hat = nd.index(nd.concat(I_hats, axis=0), restore)
    P_hat = nd.index(nd.concat(P_hats, axis=0), restore) if P_hats else None
    if tr is not None:
        tr["groups"] = group_traces
        tr["I_hat"] = I_hat.value
        if P_hat is not None:
            tr["P_hat"] = P_hat.value

    if hp.coguide:
        P_out, I_out = co_guide(P_hat, I_hat, p, tr)
    else:
        P_out, I_out = P_hat, I_hat
    raw, scores = score_items(P_out, I_out, h_p, h_id, levels)
    if tr is not None:
        tr["raw_scores"] = raw.value
        tr["scores"] = scores.value
    return scores, raw, tr


def check_invariants(trace: dict, loss_value: float | None = None, tol: float = 1e-12) -> None:
    """Raise AssertionError if any attention, gate or score invariant is violated."""
    for key, rows, alpha in trace.get("alpha", []):
        if alpha.size:
            sums = np.bincount(rows, weights=alpha)
            present = np.bincount(rows) > 0
            assert np.all(alpha >= 0), f"negative attention weight in {key}"
            assert np.allclose(sums[present], 1.0, atol=tol, rtol=0), f"alpha of {key} not normalized"
    for key, g in trace.get("gate", []):
        assert np.all((g > 0) & (g < 1)), f"gate {key} outside (0, 1)"
    for gtr in trace.get("groups", []):
        if "beta" in gtr and gtr.get("beta_normalized", True):
            assert np.all(gtr["beta"] >= 0)
            assert np.allclose(gtr["beta"].sum(axis=-1), 1.0, atol=tol, rtol=0), "beta not normalized"
        if "self_attention" in gtr:
            att = gtr["self_attention"]
            assert np.all(att >= 0)
            assert np.allclose(att.sum(axis=-1), 1.0, atol=tol, rtol=0), "self-attention not normalized"
    for key in ("r_P", "r_I"):
        if key in trace:
            assert np.all((trace[key] > 0) & (trace[key] < 1)), f"{key} outside (0, 1)"
    for key in ("m_c", "m_j", "m_P", "m_I"):
        if key in trace:
            assert np.all(np.abs(trace[key]) <= 1.0), f"{key} outside [-1, 1]"
    scores = trace["scores"]
    assert np.all(scores >= 0)
    assert np.allclose(scores.sum(axis=-1), 1.0, atol=tol, rtol=0), "scores not normalized"
    if loss_value is not None:
        assert loss_value >= 0, "negative loss"


def rank(scores: np.ndarray, k: int) -> np.ndarray:
    """Top-k item indices per row, ties broken by lower index."""
    k = min(k, scores.shape[-1])
    order = np.argsort(-scores, axis=-1, kind="stable")
    return order[..., :k]


class CoHHNRecommender:
    """Frozen-parameter inference wrapper."""

    def __init__(self, store: nd.ParamStore, graph: HeteroHypergraph, levels: Sequence[int],
                 hp: Hyperparams, batch_size: int = 256):
        self.store = store
        self.graph = graph
        self.levels = list(levels)
        self.hp = hp
        self.batch_size = batch_size

    def scores(self, prefixes: Sequence[Sequence[int]]) -> np.ndarray:
        p = self.store.leaves()
        out = []
        for chunk in nd.iter_chunks(list(prefixes), self.batch_size):
            scores, _, _ = forward(p, self.graph, self.levels, chunk, self.hp)
            out.append(scores.value)
        return np.concatenate(out, axis=0) if out else np.zeros((0, len(self.levels)))

    def predict_topk_batch(self, prefixes: Sequence[Sequence[int]], k: int) -> list[list[int]]:
        return rank(self.scores(prefixes), k).tolist()

    def predict_topk(self, session: Sequence[int], k: int) -> list[int]:
        return self.predict_topk_batch([session], k)[0]
