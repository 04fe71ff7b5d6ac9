"""Dense tensors with reverse-mode automatic differentiation and AdamW.

The training stack needs three things from its numeric layer: tensors that
remember how they were produced, a backward pass that fills in parameter
gradients, and a clipped decoupled-weight-decay optimizer. NumPy supplies
the array arithmetic; the graph bookkeeping, the op gradients, and the
optimizer live here.

CPU only. float32 by default, float64 selectable per tensor for
high-precision gradient checks. Every op validates that its result is
finite: a NaN or Inf anywhere aborts the run instead of propagating.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NumericError",
    "Tensor",
    "no_grad",
    "tensor",
    "zeros",
    "ones",
    "randn",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "embedding",
    "gelu",
    "layer_norm",
    "causal_attention",
    "cross_entropy",
    "sum_all",
    "backward",
    "OptimHyper",
    "AdamWState",
    "AdamW",
    "clip_grad_norm_",
]


class NumericError(RuntimeError):
    """A non-finite value appeared in tensor data or gradients."""


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(arr: np.ndarray, context: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {context}")


class Tensor:
    """An n-d float array plus the bookkeeping for reverse-mode autodiff.

    `data` holds the values, `grad` (filled by `backward`) the gradient of
    the most recent scalar loss with respect to this tensor. Results of ops
    keep references to their parent tensors and a closure that routes the
    incoming gradient to them; leaves have neither.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        _check_finite(arr, "tensor data")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flags = "grad" if self.requires_grad else "const"
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, {flags})"


def tensor(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    # np.array copies, so callers keep ownership of the input buffer
    return Tensor(np.array(data, dtype=dtype), requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def randn(rng: np.random.Generator, shape, std: float = 1.0,
          requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(rng.normal(0.0, std, shape).astype(dtype), requires_grad=requires_grad)


# --- graph construction helpers ---------------------------------------------


def _make(out_data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(out_data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    if t.grad is None:
        # own the buffer: g may alias an array the closure reuses
        t.grad = np.array(g)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes that broadcasting expanded."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _same_dtype(*ts: Tensor) -> None:
    dt = ts[0].data.dtype
    for t in ts[1:]:
        if t.data.dtype != dt:
            raise ValueError(f"mixed dtypes in op: {dt} vs {t.data.dtype}")


# --- ops ---------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g * c)

    return _make(a.data * c, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-d @ 2-d or 3-d @ 3-d with equal batch dims (no batch broadcasting)."""
    _same_dtype(a, b)
    ad, bd = a.data, b.data
    if ad.ndim != bd.ndim or ad.ndim not in (2, 3):
        raise ValueError(f"matmul needs matching 2-d or 3-d operands, got {ad.shape} @ {bd.shape}")
    if ad.ndim == 3 and ad.shape[0] != bd.shape[0]:
        raise ValueError(f"matmul batch dims differ: {ad.shape} @ {bd.shape}")

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g @ bd.swapaxes(-1, -2))
        if b.requires_grad:
            _accumulate(b, ad.swapaxes(-1, -2) @ g)

    return _make(ad @ bd, (a, b), bwd)


def embedding(table: Tensor, ids) -> Tensor:
    """Row gather: out[i] = table[ids[i]]. Backward scatter-adds."""
    ids = np.asarray(ids)
    if ids.ndim != 1:
        raise ValueError(f"embedding ids must be 1-d, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ValueError("embedding id out of range")

    def bwd(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            _accumulate(table, gt)

    return _make(table.data[ids], (table,), bwd)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd * xd * xd)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def bwd(g):
        if x.requires_grad:
            dinner = _GELU_C * (1.0 + 3.0 * 0.044715 * xd * xd)
            dx = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner
            _accumulate(x, g * dx)

    return _make(out, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    _same_dtype(x, gain, bias)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    lead = tuple(range(xd.ndim - 1))

    def bwd(g):
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).sum(axis=lead))
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=lead))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            # dx = inv * (gx - mean(gx) - xhat * mean(gx * xhat))
            _accumulate(x, inv * (gx - m1 - xhat * m2))

    return _make(out, (x, gain, bias), bwd)


def causal_attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int) -> Tensor:
    """Multi-head scaled dot-product attention with a causal mask.

    Inputs are (T, d); position i attends to positions j <= i. The mask is
    applied internally (masked scores never softmax to nonzero weight), so
    no infinities enter tensor data.
    """
    _same_dtype(q, k, v)
    T, d = q.data.shape
    if d % n_heads:
        raise ValueError(f"embed dim {d} not divisible by {n_heads} heads")
    hd = d // n_heads
    sc = 1.0 / math.sqrt(hd)

    qh = q.data.reshape(T, n_heads, hd).transpose(1, 0, 2)   # (h, T, hd)
    kh = k.data.reshape(T, n_heads, hd).transpose(1, 0, 2)
    vh = v.data.reshape(T, n_heads, hd).transpose(1, 0, 2)

    scores = (qh @ kh.swapaxes(1, 2)) * sc                   # (h, T, T)
    # large-negative fill (not the dtype min: subtracting the row max from
    # the min would overflow); exp underflows to exactly 0 either way
    neg = np.finfo(scores.dtype).min / 4
    causal = np.tril(np.ones((T, T), dtype=bool))
    scores = np.where(causal, scores, neg)
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores[:, ~causal] = 0.0
    probs = scores / scores.sum(axis=-1, keepdims=True)      # rows sum to 1
    outh = probs @ vh
    out = outh.transpose(1, 0, 2).reshape(T, d)

    def bwd(g):
        gh = g.reshape(T, n_heads, hd).transpose(1, 0, 2)
        gp = gh @ vh.swapaxes(1, 2)
        gvh = probs.swapaxes(1, 2) @ gh
        # softmax backward; masked entries have probs == 0, so they stay 0
        gs = probs * (gp - (gp * probs).sum(axis=-1, keepdims=True))
        gqh = (gs @ kh) * sc
        gkh = (gs.swapaxes(1, 2) @ qh) * sc
        if q.requires_grad:
            _accumulate(q, gqh.transpose(1, 0, 2).reshape(T, d))
        if k.requires_grad:
            _accumulate(k, gkh.transpose(1, 0, 2).reshape(T, d))
        if v.requires_grad:
            _accumulate(v, gvh.transpose(1, 0, 2).reshape(T, d))

    return _make(out, (q, k, v), bwd)


def cross_entropy(logits: Tensor, targets, row_mask=None) -> Tensor:
    """Mean negative log-likelihood over the scored rows of (T, V) logits.

    `row_mask` (bool, shape (T,)) selects which rows are scored; None scores
    all rows. The mean is over scored rows only.
    """
    ld = logits.data
    t = np.asarray(targets)
    if ld.ndim != 2 or t.shape != (ld.shape[0],):
        raise ValueError(f"cross_entropy shapes: logits {ld.shape}, targets {t.shape}")
    if t.size and (t.min() < 0 or t.max() >= ld.shape[1]):
        raise ValueError("target id out of range")
    T = ld.shape[0]
    mask = np.ones(T, dtype=bool) if row_mask is None else np.asarray(row_mask, dtype=bool)
    n_scored = int(mask.sum())
    if n_scored == 0:
        raise ValueError("cross_entropy with no scored rows")

    m = ld.max(axis=-1, keepdims=True)
    z = np.exp(ld - m)
    zsum = z.sum(axis=-1, keepdims=True)
    probs = z / zsum
    logprob = (ld - m) - np.log(zsum)
    nll = -logprob[np.arange(T), t]
    loss = np.asarray(nll[mask].mean(), dtype=ld.dtype)

    def bwd(g):
        if logits.requires_grad:
            gl = probs.copy()
            gl[np.arange(T), t] -= 1.0
            gl[~mask] = 0.0
            gl *= g / n_scored
            _accumulate(logits, gl)

    return _make(loss, (logits,), bwd)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    def bwd(g):
        if x.requires_grad:
            _accumulate(x, np.broadcast_to(g, x.data.shape))

    return _make(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), bwd)


# --- backward ----------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Fills/accumulates `.grad` on every tensor reachable from `loss` that
    requires grad. Gradients add into existing buffers, so repeated calls
    accumulate across micro-batches until `zero_grad`.
    """
    if loss.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not require grad (built under no_grad or constant)")

    # Iterative DFS for topological order. A node popped while still open
    # would mean a cycle, which op construction cannot produce.
    order: list[Tensor] = []
    state: dict[int, int] = {}  # id -> 0 open, 1 done
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, finished = stack.pop()
        nid = id(node)
        if finished:
            state[nid] = 1
            order.append(node)
            continue
        st = state.get(nid)
        if st == 1:
            continue
        assert st != 0, "cycle in autodiff graph"
        state[nid] = 0
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and state.get(id(p)) != 1:
                stack.append((p, False))

    loss.grad = np.ones((), dtype=loss.data.dtype)
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


# --- optimizer ---------------------------------------------------------------


@dataclass
class OptimHyper:
    """AdamW hyperparameters. Defaults follow the reference training recipe."""
    learning_rate: float = 1e-6
    weight_decay: float = 1e-4
    max_grad_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.max_grad_norm <= 0:
            raise ValueError("max_grad_norm must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class AdamWState:
    """Per-parameter first/second moments plus the shared step counter."""
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class AdamW:
    """Decoupled-weight-decay Adam with bias correction over named tensors.

    Decay multiplies the pre-update parameter by (1 - lr * wd); the
    gradient update uses bias-corrected moments. Parameters whose grad is
    None are skipped entirely.
    """

    def __init__(self, params: dict[str, Tensor], hyper: OptimHyper | None = None):
        self.params = params
        self.hyper = hyper if hyper is not None else OptimHyper()
        self.state = AdamWState(
            step=0,
            m={k: np.zeros_like(t.data) for k, t in params.items()},
            v={k: np.zeros_like(t.data) for k, t in params.items()},
        )

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def step(self) -> None:
        h = self.hyper
        self.state.step += 1
        bc1 = 1.0 - h.beta1 ** self.state.step
        bc2 = 1.0 - h.beta2 ** self.state.step
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            m = self.state.m[name]
            v = self.state.v[name]
            m *= h.beta1
            m += (1.0 - h.beta1) * g
            v *= h.beta2
            v += (1.0 - h.beta2) * (g * g)
            if h.weight_decay:
                p.data -= (h.learning_rate * h.weight_decay) * p.data
            mhat = m / bc1
            vhat = v / bc2
            p.data -= h.learning_rate * mhat / (np.sqrt(vhat) + h.epsilon)


def clip_grad_norm_(tensors, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is <= max_norm.

    Returns the pre-scaling norm. Gradients of None are skipped; non-finite
    gradients raise NumericError. The norm is accumulated in float64 for a
    stable threshold decision regardless of parameter dtype.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    grads = [t.grad for t in tensors if t.grad is not None]
    total_sq = 0.0
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient in clip_grad_norm_")
        total_sq += float(np.sum(np.multiply(g, g, dtype=np.float64)))
    total = math.sqrt(total_sq)
    if total > max_norm:
        s = max_norm / total
        for g in grads:
            g *= s
    return total
