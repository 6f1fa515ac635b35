"""Small dense tensor core with tape-based reverse-mode differentiation.

Every op computes its result eagerly with numpy (float64) and, when a
:class:`Tape` is active, records a closure that maps the output gradient to
the gradients of its inputs.  Shapes must match exactly; the only implicit
expansion is :func:`add_bias`, which adds a vector to the last axis.
"""

from __future__ import annotations

import contextlib
import json
import math
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    """Raised when an op receives incompatible shapes."""


class NumericError(ArithmeticError):
    """Raised when an op or a gradient produces NaN or Inf."""


class Tensor:
    __slots__ = ("value", "name", "parents", "backward_fn")

    def __init__(self, value, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.name = name
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, float(other))
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, -float(other))
        return add(self, scale(other, -1.0))

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Records ops in execution order, which is a valid topological order."""

    def __init__(self):
        self.nodes: list[Tensor] = []


_active: list[Tape] = []


@contextlib.contextmanager
def recording():
    tape = Tape()
    _active.append(tape)
    try:
        yield tape
    finally:
        _active.pop()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_reduce_sum = np.add.reduce


def _check_finite(op: str, value: np.ndarray) -> None:
    # NaN/Inf anywhere poisons the sum; cheaper than isfinite().all() on small arrays
    if not math.isfinite(_reduce_sum(value, axis=None)) and not np.isfinite(value).all():
        raise NumericError(f"{op}: non-finite values in output of shape {value.shape}")


def _emit(op: str, value: np.ndarray, parents: tuple[Tensor, ...], backward_fn,
          check: bool = True) -> Tensor:
    # Ops that only move values or squash them into a bounded range pass check=False:
    # their output is finite whenever their (already checked) inputs are.
    if check:
        _check_finite(op, value)
    out = Tensor(value)
    if _active:
        out.parents = parents
        out.backward_fn = backward_fn
        _active[-1].nodes.append(out)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- forward ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _emit("add", a.value + b.value, (a, b), lambda g: (g, g))


def add_scalar(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _emit("add_scalar", a.value + c, (a,), lambda g: (g,))


def add_bias(x, b) -> Tensor:
    """x[..., d] + b[d]."""
    x, b = as_tensor(x), as_tensor(b)
    if b.value.ndim != 1 or x.shape[-1:] != b.shape:
        raise ShapeError(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")
    lead = tuple(range(x.value.ndim - 1))
    return _emit("add_bias", x.value + b.value, (x, b), lambda g: (g, g.sum(axis=lead)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return _emit("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _emit("scale", a.value * c, (a,), lambda g: (g * c,))


def scale_rows(x, w) -> Tensor:
    """Multiply row ``i`` of ``x`` (first axis) by the scalar ``w[i]``."""
    x, w = as_tensor(x), as_tensor(w)
    if w.value.ndim != 1 or w.shape[0] != x.shape[0]:
        raise ShapeError(f"scale_rows: weights {w.shape} vs rows of {x.shape}")
    xv, wv = x.value, w.value
    expand = (slice(None),) + (None,) * (xv.ndim - 1)
    tail = tuple(range(1, xv.ndim))

    def back(g):
        return g * wv[expand], (g * xv).sum(axis=tail)

    return _emit("scale_rows", xv * wv[expand], (x, w), back)


def matmul(a, b) -> Tensor:
    """(m,k)@(k,n), or batched (B,m,k)@(B,k,n) with equal batch size."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    ok = av.ndim == bv.ndim and av.ndim in (2, 3) and av.shape[-1] == bv.shape[-2]
    if ok and av.ndim == 3:
        ok = av.shape[0] == bv.shape[0]
    if not ok:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def back(g):
        return g @ np.swapaxes(bv, -1, -2), np.swapaxes(av, -1, -2) @ g

    return _emit("matmul", av @ bv, (a, b), back)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.value.ndim))) if axes is None else tuple(axes)
    if sorted(axes) != list(range(a.value.ndim)):
        raise ShapeError(f"transpose: invalid axes {axes} for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    return _emit("transpose", np.transpose(a.value, axes), (a,),
                 lambda g: (np.transpose(g, inverse),), check=False)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    if math.prod(shape) != a.value.size:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}")
    orig = a.shape
    return _emit("reshape", a.value.reshape(shape), (a,), lambda g: (g.reshape(orig),),
                 check=False)


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    nd = parts[0].value.ndim
    ax = axis % nd
    for p in parts[1:]:
        if p.value.ndim != nd or any(p.shape[i] != parts[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {[q.shape for q in parts]}")
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _emit("concat", np.concatenate([p.value for p in parts], axis=ax), tuple(parts), back,
                 check=False)


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        if axis is None:
            return (np.full(shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _emit("sum", np.asarray(a.value.sum(axis=axis)), (a,), back)


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    count = a.value.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / count)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),), check=False)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.value)
    return _emit("tanh", t, (a,), lambda g: (g * (1.0 - t * t),), check=False)


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        e = np.exp(a.value)
    return _emit("exp", e, (a,), lambda g: (g * e,))


def log_clamped(a, floor: float = 1e-12) -> Tensor:
    """log(max(a, floor)); the gradient is zero where the floor is active."""
    a = as_tensor(a)
    x = a.value
    live = x > floor
    safe = np.where(live, x, floor)
    return _emit("log_clamped", np.log(safe), (a,), lambda g: (np.where(live, g / safe, 0.0),))


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    z = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", s, (a,), back, check=False)


def index(a, idx) -> Tensor:
    """Integer-array indexing along the first axis (embedding lookup / row selection).

    ``idx`` may have any shape; the result has shape ``idx.shape + a.shape[1:]``.
    """
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"index: indices out of range for first axis of {a.shape}")
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _emit("index", a.value[idx], (a,), back, check=False)


def take_last(a, axis: int = 1) -> Tensor:
    """Select the last position along ``axis`` (dropping that axis)."""
    a = as_tensor(a)
    shape = a.shape
    ax = axis % a.value.ndim

    def back(g):
        out = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        sl[ax] = -1
        out[tuple(sl)] = g
        return (out,)

    return _emit("take_last", np.take(a.value, -1, axis=ax), (a,), back, check=False)


def segment_softmax(x, segments, num_segments: int) -> Tensor:
    """Softmax of a flat vector within groups given by ``segments``."""
    x = as_tensor(x)
    seg = np.asarray(segments, dtype=np.intp)
    if x.value.ndim != 1 or seg.shape != x.shape:
        raise ShapeError(f"segment_softmax: values {x.shape} vs segments {seg.shape}")
    xv = x.value
    top = np.full(num_segments, -np.inf)
    np.maximum.at(top, seg, xv)
    e = np.exp(xv - top[seg]) if xv.size else xv.copy()
    total = np.zeros(num_segments)
    np.add.at(total, seg, e)
    s = e / total[seg] if xv.size else e

    def back(g):
        dot = np.zeros(num_segments)
        np.add.at(dot, seg, g * s)
        return (s * (g - dot[seg]),)

    return _emit("segment_softmax", s, (x,), back, check=False)


def segment_sum(x, segments, num_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``num_segments`` buckets; empty buckets are zero."""
    x = as_tensor(x)
    seg = np.asarray(segments, dtype=np.intp)
    if seg.ndim != 1 or seg.shape[0] != x.shape[0]:
        raise ShapeError(f"segment_sum: rows {x.shape} vs segments {seg.shape}")
    out = np.zeros((num_segments,) + x.shape[1:])
    np.add.at(out, seg, x.value)
    return _emit("segment_sum", out, (x,), lambda g: (g[seg],))


def segment_attention(x, u, rows, cols, num_rows: int) -> tuple[Tensor, np.ndarray]:
    """Attention pooling of neighbor rows of ``x`` for each target row.

    Pair ``e`` links target ``rows[e]`` to source row ``cols[e]``.  Weights are a
    softmax of ``u . x[cols[e]]`` within each target; targets without pairs get
    a zero row.  Returns the pooled (num_rows, d) tensor and the weights.
    Equivalent to index -> matmul -> segment_softmax -> scale_rows -> segment_sum,
    fused into one op.
    """
    x, u = as_tensor(x), as_tensor(u)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    xv, uv = x.value, u.value
    if xv.ndim != 2 or uv.shape != (xv.shape[1],) or rows.shape != cols.shape:
        raise ShapeError(f"segment_attention: x {x.shape}, u {u.shape}, pairs {rows.shape}")
    if cols.size and (cols.min() < 0 or cols.max() >= xv.shape[0]):
        raise ShapeError(f"segment_attention: column index out of range for {x.shape}")
    d = xv.shape[1]
    vals = xv[cols]
    logits = vals @ uv
    if cols.size:
        top = np.full(num_rows, -np.inf)
        np.maximum.at(top, rows, logits)
        e = np.exp(logits - top[rows])
        alpha = e / np.bincount(rows, weights=e, minlength=num_rows)[rows]
    else:
        alpha = logits.copy()
    out = np.zeros((num_rows, d))
    np.add.at(out, rows, vals * alpha[:, None])

    def back(g):
        g_rows = g[rows]
        g_alpha = np.einsum("ed,ed->e", g_rows, vals)
        inner = np.bincount(rows, weights=alpha * g_alpha, minlength=num_rows)
        g_logit = alpha * (g_alpha - inner[rows])
        g_vals = g_rows * alpha[:, None] + g_logit[:, None] * uv
        gx = np.zeros_like(xv)
        np.add.at(gx, cols, g_vals)
        return gx, g_logit @ vals

    return _emit("segment_attention", out, (x, u), back), alpha


def linear(x, weight) -> Tensor:
    """Apply ``weight`` (out x in) to each row vector of ``x`` (..., in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    xv, wv = x.value, weight.value
    if wv.ndim != 2 or xv.shape[-1] != wv.shape[1]:
        raise ShapeError(f"linear: weight {weight.shape} cannot act on {x.shape}")

    def back(g):
        gw = g.reshape(-1, wv.shape[0]).T @ xv.reshape(-1, wv.shape[1])
        return g @ wv, gw

    return _emit("linear", xv @ wv.T, (x, weight), back)


# ---------------------------------------------------------------- backward


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradients of scalar ``loss`` w.r.t. every named leaf reachable on ``tape``."""
    if loss.value.size != 1 or loss.value.ndim != 0:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    named: dict[str, np.ndarray] = {}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
            if parent.backward_fn is None:
                leaves[key] = parent
    for key, leaf in leaves.items():
        if leaf.name is None:
            continue
        g = grads[key]
        if not np.isfinite(g).all():
            raise NumericError(f"backward: non-finite gradient for {leaf.name!r}")
        named[leaf.name] = named[leaf.name] + g if leaf.name in named else g
    return named


# ---------------------------------------------------------------- parameters


def init(shape: Sequence[int], seed: int | np.random.Generator) -> np.ndarray:
    """Uniform in [-1/sqrt(d), 1/sqrt(d)] with d the last dimension."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(shape[-1])
    return rng.uniform(-bound, bound, size=tuple(shape))


class ParamStore:
    """Named parameters plus Adam moment estimates."""

    def __init__(self, params: dict[str, np.ndarray] | None = None):
        self.params: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> None:
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def leaves(self) -> dict[str, Tensor]:
        """Fresh named tensors for one forward pass."""
        return {name: Tensor(value, name=name) for name, value in self.params.items()}

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name in self.params:
            out.params[name] = self.params[name].copy()
            out.m[name] = self.m[name].copy()
            out.v[name] = self.v[name].copy()
        out.step = self.step
        return out


def adam_step(
    store: ParamStore,
    grads: dict[str, np.ndarray],
    lr: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamStore:
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in grads.items():
        p = store.params[name]
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient {g.shape} vs parameter {name!r} {p.shape}")
        m = store.m[name] = beta1 * store.m[name] + (1.0 - beta1) * g
        v = store.v[name] = beta2 * store.v[name] + (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store


def save_checkpoint(path: str | Path, store: ParamStore, meta: dict | None = None) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "step": store.step,
        "params": {
            name: {"shape": list(value.shape), "values": value.ravel().tolist()}
            for name, value in store.params.items()
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> tuple[ParamStore, dict]:
    payload = json.loads(Path(path).read_text())
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    store = ParamStore()
    for name, entry in payload["params"].items():
        store.add(name, np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"]))
    store.step = int(payload.get("step", 0))
    return store, payload.get("meta", {})


def numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``f`` w.r.t. ``x`` (modified in place, then restored)."""
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    grad = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * eps)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def iter_chunks(items: Sequence, size: int) -> Iterable[Sequence]:
    for start in range(0, len(items), size):
        yield items[start:start + size]
