"""Reverse-mode automatic differentiation over dense float64 arrays.

The graph is define-by-run: every operation returns a fresh ``Tensor``
wired to its inputs, and ``Tensor.backward()`` replays the recorded graph
once in reverse topological order. Everything is float64; the project's
correctness bar is finite-difference agreement and single precision would
eat most of that error budget.

Shape discipline is strict. Binary elementwise operations require equal
shapes, the one exception being scalars (Python numbers or 0-d tensors).
Structured patterns (bias rows, tiling, gathers, batched reductions) are
spelled with dedicated operations so shape bugs fail loudly at the call
site instead of silently broadcasting.

Calling ``backward`` twice without clearing gradients adds the second
pass on top of the first; ``zero_grad`` resets a tensor to a clean slate.
Tensors whose value the loss never touches keep ``grad is None`` (read as
zero).
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from .rng import Xoshiro256StarStar


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NumericalError(ArithmeticError):
    """A value that must be finite is NaN or infinite."""


_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (pure inference)."""
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """Dense float64 array plus the bookkeeping reverse-mode AD needs.

    ``_parents`` and ``_bw`` record how the tensor was produced; ``_bw``
    maps the output gradient to one gradient per parent. Leaves have
    neither. ``requires_grad`` marks graph participation: it is set on
    leaves by the caller and propagates to results automatically.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bw", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._bw = None
        self.op = "leaf"

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...], bw, op: str) -> "Tensor":
        out = Tensor(data)
        out.requires_grad = True
        out._parents = parents
        out._bw = bw
        out.op = op
        return out

    # -- basic introspection --------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # -- gradient machinery ---------------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into ``grad`` for every graph node."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))

        flows: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flows.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = g
            else:
                node.grad += g
            if node._bw is None:
                continue
            for parent, pg in zip(node._parents, node._bw(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = flows.get(id(parent))
                if acc is None:
                    # Copy: backward closures may alias g or each other.
                    flows[id(parent)] = np.array(pg, dtype=np.float64)
                else:
                    acc += pg

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _recording(*tensors: Tensor) -> bool:
    return grad_enabled() and any(t.requires_grad for t in tensors)


def _assert_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{what} contains non-finite values")


# -- binary elementwise ---------------------------------------------------


def _scalar_mode(a: Tensor, b: Tensor, opname: str) -> str:
    if a.shape == b.shape:
        return "same"
    if a.ndim == 0:
        return "left"
    if b.ndim == 0:
        return "right"
    raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} differ (only scalar broadcast is allowed)")


def _reduce_to_scalar(g: np.ndarray) -> np.ndarray:
    return np.asarray(g.sum())


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mode = _scalar_mode(a, b, "add")
    out = a.data + b.data
    if not _recording(a, b):
        return Tensor(out)

    def bw(g):
        ga = _reduce_to_scalar(g) if mode == "left" else g
        gb = _reduce_to_scalar(g) if mode == "right" else g
        return ga, gb

    return Tensor._result(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mode = _scalar_mode(a, b, "sub")
    out = a.data - b.data
    if not _recording(a, b):
        return Tensor(out)

    def bw(g):
        ga = _reduce_to_scalar(g) if mode == "left" else g
        gb = _reduce_to_scalar(g) if mode == "right" else g
        return ga, -gb

    return Tensor._result(out, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mode = _scalar_mode(a, b, "mul")
    out = a.data * b.data
    if not _recording(a, b):
        return Tensor(out)
    ad, bd = a.data, b.data

    def bw(g):
        ga = g * bd
        gb = g * ad
        if mode == "left":
            ga = _reduce_to_scalar(ga)
        elif mode == "right":
            gb = _reduce_to_scalar(gb)
        return ga, gb

    return Tensor._result(out, (a, b), bw, "mul")


# -- unary elementwise -----------------------------------------------------


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    if not _recording(x):
        return Tensor(y)
    return Tensor._result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # tanh form is overflow-proof for large |x|.
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    if not _recording(x):
        return Tensor(y)
    return Tensor._result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(x) -> Tensor:
    x = as_tensor(x)
    y = np.maximum(x.data, 0.0)
    if not _recording(x):
        return Tensor(y)
    mask = x.data > 0.0  # subgradient 0 at the kink

    def bw(g):
        return (g * mask,)

    return Tensor._result(y, (x,), bw, "relu")


# -- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    out = a.data @ b.data
    if not _recording(a, b):
        return Tensor(out)
    ad, bd = a.data, b.data

    def bw(g):
        return g @ bd.T, ad.T @ g

    return Tensor._result(out, (a, b), bw, "matmul")


def add_bias(x, b) -> Tensor:
    """Row-wise bias: x is (R, C), b is (C,). Explicit so no silent broadcast."""
    x, b = as_tensor(x), as_tensor(b)
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: got {x.shape} and {b.shape}")
    out = x.data + b.data
    if not _recording(x, b):
        return Tensor(out)

    def bw(g):
        return g, g.sum(axis=0)

    return Tensor._result(out, (x, b), bw, "add_bias")


# -- reductions and shape plumbing -------------------------------------------


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 0:
        raise ShapeError("softmax needs at least one axis")
    ax = axis if axis >= 0 else x.ndim + axis
    if not 0 <= ax < x.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    if x.shape[ax] == 0:
        raise ShapeError(f"softmax: empty axis {axis} in shape {x.shape}")
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=ax, keepdims=True)
    if not _recording(x):
        return Tensor(y)

    def bw(g):
        dot = (g * y).sum(axis=ax, keepdims=True)
        return (y * (g - dot),)

    return Tensor._result(y, (x,), bw, "softmax")


def mean_along(x, axis: int) -> Tensor:
    x = as_tensor(x)
    ax = axis if axis >= 0 else x.ndim + axis
    if not 0 <= ax < x.ndim:
        raise ShapeError(f"mean_along: axis {axis} invalid for shape {x.shape}")
    n = x.shape[ax]
    if n == 0:
        raise ShapeError(f"mean_along: zero-length axis {axis} in shape {x.shape}")
    out = x.data.mean(axis=ax)
    if not _recording(x):
        return Tensor(out)
    shape = x.shape

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g / n, ax), shape).copy(),)

    return Tensor._result(out, (x,), bw, "mean_along")


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.data.sum())
    if not _recording(x):
        return Tensor(out)
    shape = x.shape

    def bw(g):
        return (np.full(shape, float(g), dtype=np.float64),)

    return Tensor._result(out, (x,), bw, "sum_all")


def concat(parts, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat of zero tensors")
    nd = parts[0].ndim
    ax = axis if axis >= 0 else nd + axis
    if not 0 <= ax < nd:
        raise ShapeError(f"concat: axis {axis} invalid for rank {nd}")
    base = list(parts[0].shape)
    for p in parts[1:]:
        if p.ndim != nd:
            raise ShapeError(f"concat: rank mismatch {parts[0].shape} vs {p.shape}")
        for d in range(nd):
            if d != ax and p.shape[d] != base[d]:
                raise ShapeError(f"concat: non-axis dims differ, {tuple(base)} vs {p.shape}")
    out = np.concatenate([p.data for p in parts], axis=ax)
    if not _recording(*parts):
        return Tensor(out)
    sizes = [p.shape[ax] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=ax))

    return Tensor._result(out, tuple(parts), bw, "concat")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)
    if not _recording(x):
        return Tensor(out)
    orig = x.shape

    def bw(g):
        return (g.reshape(orig),)

    return Tensor._result(out, (x,), bw, "reshape")


def slice_cols(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_cols: [{start}:{stop}] invalid for shape {x.shape}")
    out = x.data[:, start:stop].copy()
    if not _recording(x):
        return Tensor(out)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=np.float64)
        full[:, start:stop] = g
        return (full,)

    return Tensor._result(out, (x,), bw, "slice_cols")


def take_rows(m, indices) -> Tensor:
    """Gather rows of a (V, C) matrix by an integer index vector."""
    m = as_tensor(m)
    idx = np.asarray(indices, dtype=np.intp)
    if m.ndim != 2 or idx.ndim != 1:
        raise ShapeError(f"take_rows: got matrix {m.shape}, indices shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= m.shape[0]):
        raise ShapeError(f"take_rows: index out of range for {m.shape[0]} rows")
    out = m.data[idx]
    if not _recording(m):
        return Tensor(out)
    shape = m.shape

    def bw(g):
        full = np.zeros(shape, dtype=np.float64)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._result(out, (m,), bw, "take_rows")


def repeat_rows(x, k: int) -> Tensor:
    """Repeat each row k times consecutively: (B, C) -> (B*k, C)."""
    x = as_tensor(x)
    if x.ndim != 2 or k < 1:
        raise ShapeError(f"repeat_rows: shape {x.shape}, k={k}")
    out = np.repeat(x.data, k, axis=0)
    if not _recording(x):
        return Tensor(out)
    b, c = x.shape

    def bw(g):
        return (g.reshape(b, k, c).sum(axis=1),)

    return Tensor._result(out, (x,), bw, "repeat_rows")


def weighted_sum_rows(w, x) -> Tensor:
    """Batched convex combination: w is (R, M), x is (R, M, D) -> (R, D)."""
    w, x = as_tensor(w), as_tensor(x)
    if w.ndim != 2 or x.ndim != 3 or w.shape != x.shape[:2]:
        raise ShapeError(f"weighted_sum_rows: got weights {w.shape}, stack {x.shape}")
    out = np.einsum("rm,rmd->rd", w.data, x.data)
    if not _recording(w, x):
        return Tensor(out)
    wd, xd = w.data, x.data

    def bw(g):
        gw = np.einsum("rd,rmd->rm", g, xd)
        gx = wd[:, :, None] * g[:, None, :]
        return gw, gx

    return Tensor._result(out, (w, x), bw, "weighted_sum_rows")


def cross_entropy_rows(logits, targets, weights) -> Tensor:
    """Weighted token cross-entropy over rows of (B, V) logits.

    Returns sum_b weights[b] * (-log softmax(logits[b])[targets[b]]) as a
    scalar. Masking and any mean normalisation live in the weights.
    """
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.intp)
    w = np.asarray(weights, dtype=np.float64)
    if logits.ndim != 2 or t.shape != (logits.shape[0],) or w.shape != t.shape:
        raise ShapeError(
            f"cross_entropy_rows: logits {logits.shape}, targets {t.shape}, weights {w.shape}"
        )
    if t.size and (t.min() < 0 or t.max() >= logits.shape[1]):
        raise ShapeError(f"cross_entropy_rows: target id out of range for {logits.shape[1]} classes")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    rows = np.arange(z.shape[0])
    nll = lse[:, 0] - z[rows, t]
    out = np.asarray((w * nll).sum())
    if not _recording(logits):
        return Tensor(out)
    probs = np.exp(z - lse)

    def bw(g):
        d = probs * w[:, None]
        d[rows, t] -= w
        return (d * float(g),)

    return Tensor._result(out, (logits,), bw, "cross_entropy_rows")


# -- verification oracle ------------------------------------------------------


def grad_check(f, params, step: float = 1e-5, seed: int | None = None,
               max_coords: int | None = None) -> float:
    """Central-difference check of analytic gradients.

    ``f(params) -> scalar Tensor`` must be deterministic. Every coordinate
    of every tensor in ``params`` is probed (or a seeded random subset of
    ``max_coords`` per tensor, for large blocks); the result is the worst
    relative error  |a - n| / max(1e-8, |a| + |n|).

    Coordinates sitting exactly on a relu kink break the central
    difference; callers should perturb or reseed such inputs (random
    continuous draws hit the kink with probability zero).
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    plist = list(params.values()) if isinstance(params, dict) else list(params)

    for p in plist:
        p.zero_grad()
    loss = f(plist)
    if not np.isfinite(loss.item()):
        raise NumericalError("grad_check: f returned a non-finite value")
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in plist]

    worst = 0.0
    for p, a in zip(plist, analytic):
        flat = p.data.reshape(-1)
        n_coords = flat.size
        coords = range(n_coords)
        if max_coords is not None and n_coords > max_coords:
            rng = Xoshiro256StarStar(seed if seed is not None else 0)
            coords = sorted(rng.sample_indices(n_coords, max_coords))
        a_flat = a.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            with no_grad():
                f_plus = f(plist).item()
            flat[i] = orig - step
            with no_grad():
                f_minus = f(plist).item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericalError("grad_check: f returned a non-finite value under perturbation")
            numeric = (f_plus - f_minus) / (2.0 * step)
            denom = max(1e-8, abs(a_flat[i]) + abs(numeric))
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
    return worst
