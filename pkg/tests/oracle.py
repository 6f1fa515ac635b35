"""Scalar reference forward pass written with ``math`` and nested lists only.

Independent of ``cohhn.model``: this rebuilds neighbor sets from the item
levels, categories and training sessions, then evaluates aggregation,
preference extraction, co-guiding and scoring one scalar at a time.  Matrix
parameters are row-major ``(out, in)`` lists applied as ``y_i = sum_j W_ij x_j``.
"""

from __future__ import annotations

import math


def dot(a, b):
    return math.fsum(x * y for x, y in zip(a, b))


def matvec(W, x):
    return [dot(row, x) for row in W]


def vadd(*vs):
    return [math.fsum(t) for t in zip(*vs)]


def vmul(a, b):
    return [x * y for x, y in zip(a, b)]


def vscale(c, a):
    return [c * x for x in a]


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def softmax(xs):
    top = max(xs)
    ex = [math.exp(x - top) for x in xs]
    total = math.fsum(ex)
    return [e / total for e in ex]


def attend(vectors, u):
    """Softmax(u . v) weighted sum; zero vector when there are no neighbors."""
    if not vectors:
        return None, []
    alpha = softmax([dot(u, v) for v in vectors])
    d = len(vectors[0])
    return [math.fsum(a * v[i] for a, v in zip(alpha, vectors)) for i in range(d)], alpha


def hand_params(shapes):
    """Deterministic, moderate-magnitude values: 0.6 sin(0.9 k + 0.37 j) for tensor j, entry k."""
    out = {}
    for j, (name, shape) in enumerate(sorted(shapes.items())):
        size = 1
        for s in shape:
            size *= s
        flat = [0.6 * math.sin(0.9 * (k + 1) + 0.37 * j) for k in range(size)]
        out[name] = _nest(flat, list(shape))
    return out


def _nest(flat, shape):
    if len(shape) == 1:
        return list(flat)
    step = len(flat) // shape[0]
    return [_nest(flat[i * step:(i + 1) * step], shape[1:]) for i in range(shape[0])]


def neighbor_lists(levels, cats, rho, n_cat, sessions):
    n = len(levels)
    nb = {
        ("id", "price"): [[levels[i]] for i in range(n)],
        ("id", "cat"): [[cats[i]] for i in range(n)],
        ("price", "id"): [[i for i in range(n) if levels[i] == p] for p in range(rho)],
        ("price", "cat"): [sorted({cats[i] for i in range(n) if levels[i] == p}) for p in range(rho)],
        ("cat", "id"): [[i for i in range(n) if cats[i] == c] for c in range(n_cat)],
        ("cat", "price"): [sorted({levels[i] for i in range(n) if cats[i] == c}) for c in range(n_cat)],
    }
    session_nb = [set() for _ in range(n)]
    for s in sessions:
        members = set(s)
        if len(members) < 2:
            continue
        for i in members:
            session_nb[i] |= members - {i}
    nb[("id", "id")] = [sorted(x) for x in session_nb]
    return nb


ORDER = {"id": ("price", "cat"), "price": ("id", "cat"), "cat": ("price", "id")}


def propagate(params, levels, cats, rho, n_cat, sessions, rounds):
    nb = neighbor_lists(levels, cats, rho, n_cat, sessions)
    tables = {"id": params["emb.id"], "price": params["emb.price"], "cat": params["emb.cat"]}
    d = len(tables["id"][0])
    record = {"alpha": {}, "gate": {}}
    for rnd in range(rounds):
        new = {}
        for t, sources in ORDER.items():
            rows = []
            for node, v in enumerate(tables[t]):
                parts = []
                for s in sources:
                    vecs = [tables[s][j] for j in nb[(t, s)][node]]
                    e, alpha = attend(vecs, params[f"att.{t}.{s}"])
                    record["alpha"][(rnd, t, s, node)] = alpha
                    parts.append(e if e is not None else [0.0] * d)
                e1, e2 = parts
                pre = vadd(matvec(params[f"gate.{t}.W"], v + e1 + e2),
                           matvec(params[f"gate.{t}.W1"], e1),
                           matvec(params[f"gate.{t}.W2"], e2))
                g = [sigmoid(x) for x in pre]
                record["gate"][(rnd, t, node)] = g
                h = vadd(v, vmul(g, e1), vmul([1.0 - x for x in g], e2))
                if t == "id" and nb[("id", "id")][node]:
                    others = nb[("id", "id")][node]
                    avg = [math.fsum(tables["id"][j][i] for j in others) / len(others)
                           for i in range(d)]
                    h = vadd(h, avg)
                rows.append(h)
            new[t] = rows
        tables = new
    return tables, record


def price_preference(E, params, heads):
    m, d = len(E), len(E[0])
    dh = d // heads
    flat = {k: [row for head in params[f"sa.{k}"] for row in head] for k in "qkv"}
    Q = [matvec(flat["q"], e) for e in E]
    K = [matvec(flat["k"], e) for e in E]
    V = [matvec(flat["v"], e) for e in E]
    S = [[0.0] * d for _ in range(m)]
    att_all = []
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        att = [softmax([dot(Q[j][sl], K[k][sl]) / math.sqrt(dh) for k in range(m)])
               for j in range(m)]
        att_all.append(att)
        for j in range(m):
            for i in range(dh):
                S[j][h * dh + i] = math.fsum(att[j][k] * V[k][h * dh + i] for k in range(m))
    return S[-1], S, att_all


def interest_preference(H, params):
    m = len(H)
    v_star = []
    for j, h in enumerate(H):
        pos = params["pos"][m - 1 - j]
        v_star.append([math.tanh(x + b)
                       for x, b in zip(matvec(params["fuse.W"], h + pos), params["fuse.b"])])
    v_bar = [math.fsum(col) / m for col in zip(*v_star)]
    ctx = matvec(params["int.A2"], v_bar)
    weights = []
    for vs in v_star:
        hidden = [sigmoid(x) for x in vadd(matvec(params["int.A1"], vs), ctx, params["int.b"])]
        weights.append(dot(params["int.u"], hidden))
    beta = softmax(weights)
    d = len(H[0])
    I_hat = [math.fsum(b * h[i] for b, h in zip(beta, H)) for i in range(d)]
    return I_hat, beta, v_star


def co_guide(P, I, params):
    c = {k[3:]: v for k, v in params.items() if k.startswith("co.")}
    m_c = [math.tanh(x) for x in vadd(matvec(c["W1_pi"], vmul(P, I)), c["b_c"])]
    m_j = [math.tanh(x) for x in vadd(matvec(c["W2_pi"], vadd(P, I)), c["b_j"])]
    r_P = [sigmoid(x) for x in vadd(matvec(c["W1_r"], m_c), matvec(c["U1_r"], m_j))]
    r_I = [sigmoid(x) for x in vadd(matvec(c["W2_r"], m_c), matvec(c["U2_r"], m_j))]
    m_P = [math.tanh(x) for x in vadd(matvec(c["W_P"], vmul(r_P, P)),
                                      matvec(c["U_P"], vmul([1 - x for x in r_I], I)))]
    m_I = [math.tanh(x) for x in vadd(matvec(c["W_I"], vmul(r_I, I)),
                                      matvec(c["U_I"], vmul([1 - x for x in r_P], P)))]
    P_out = vmul(m_P, vadd(P, m_I))
    I_out = vmul(m_I, vadd(I, m_P))
    return P_out, I_out, {"m_c": m_c, "m_j": m_j, "r_P": r_P, "r_I": r_I, "m_P": m_P, "m_I": m_I}


def score(P, I, h_price, h_id, levels):
    raw = [dot(I, h_id[i]) + (dot(P, h_price[levels[i]]) if P is not None else 0.0)
           for i in range(len(h_id))]
    return raw, softmax(raw)


def bce(scores, target):
    total = 0.0
    for j, y in enumerate(scores):
        if j == target:
            total -= math.log(max(y, 1e-12))
        else:
            total -= math.log(max(1.0 - y, 1e-12))
    return total


def full_forward(params, levels, cats, rho, n_cat, sessions, rounds, heads, prefix, target):
    tables, record = propagate(params, levels, cats, rho, n_cat, sessions, rounds)
    E = [tables["price"][levels[i]] for i in prefix]
    H = [tables["id"][i] for i in prefix]
    P_hat, S, att = price_preference(E, params, heads)
    I_hat, beta, v_star = interest_preference(H, params)
    P, I, co = co_guide(P_hat, I_hat, params)
    raw, scores = score(P, I, tables["price"], tables["id"], levels)
    return {
        "tables": tables, "record": record, "P_hat": P_hat, "S": S, "att": att,
        "I_hat": I_hat, "beta": beta, "v_star": v_star, "co": co, "P": P, "I": I,
        "raw": raw, "scores": scores, "loss": bce(scores, target),
    }
