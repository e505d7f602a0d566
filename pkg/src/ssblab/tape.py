"""Minimal reverse-mode autodiff kernel over float64 numpy arrays.

A :class:`Tape` records every primitive executed during a forward pass and
replays analytic backward rules in exact reverse order.  The op set is
deliberately small: dense linear algebra, a few activations, embedding
gather, concatenation, reductions, a gradient-reversal node, and the
composed losses the CTR models need.  No broadcasting rule beyond numpy's,
no dynamic shapes beyond the batch dimension, no attempt at performance
heroics: desk scale, 64-bit, deterministic.

Thread model: a tape and the values it produced belong to a single thread
for the duration of one forward/backward pass.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = ["GraphNumericsError", "Value", "Tape"]


class GraphNumericsError(RuntimeError):
    """Raised when a primitive produces NaN or Inf."""


class Value:
    """A shaped float64 array plus a gradient buffer of the same shape."""

    __slots__ = ("data", "grad")

    def __init__(self, data) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Value(shape={self.data.shape})"


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Value) else np.asarray(x, dtype=np.float64)


class Tape:
    """Ordered record of executed primitives; backward walks it in reverse.

    All ops accept :class:`Value` operands and, where noted, plain arrays
    or scalars treated as constants (no gradient flows into constants).
    """

    def __init__(self, check_numerics: bool = True) -> None:
        self._ops: list[Callable[[], None]] = []
        self.check_numerics = check_numerics
        self._closed = False

    # -- plumbing ---------------------------------------------------------

    def _out(self, op: str, data: np.ndarray, backward: Callable[[], None] | None) -> Value:
        if self._closed:
            raise RuntimeError("tape already consumed by backward(); build a new one")
        if self.check_numerics and not np.all(np.isfinite(data)):
            raise GraphNumericsError(f"non-finite output of primitive '{op}'")
        out = Value(data)
        if backward is not None:
            self._ops.append(backward)
        return out

    def backward(self, root: Value) -> None:
        """Accumulate gradients of `root` (a scalar) into every upstream Value."""
        if root.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {root.shape}")
        root.grad = np.ones_like(root.data)
        for op in reversed(self._ops):
            op()
        self._closed = True

    # -- elementwise arithmetic -------------------------------------------

    def add(self, a, b) -> Value:
        ad, bd = _data(a), _data(b)
        out = self._out("add", ad + bd, None)

        def bw() -> None:
            if isinstance(a, Value):
                a.grad += _unbroadcast(out.grad, a.data.shape)
            if isinstance(b, Value):
                b.grad += _unbroadcast(out.grad, b.data.shape)

        self._ops.append(bw)
        return out

    def sub(self, a, b) -> Value:
        ad, bd = _data(a), _data(b)
        out = self._out("sub", ad - bd, None)

        def bw() -> None:
            if isinstance(a, Value):
                a.grad += _unbroadcast(out.grad, a.data.shape)
            if isinstance(b, Value):
                b.grad -= _unbroadcast(out.grad, b.data.shape)

        self._ops.append(bw)
        return out

    def mul(self, a, b) -> Value:
        ad, bd = _data(a), _data(b)
        out = self._out("mul", ad * bd, None)

        def bw() -> None:
            if isinstance(a, Value):
                a.grad += _unbroadcast(out.grad * bd, a.data.shape)
            if isinstance(b, Value):
                b.grad += _unbroadcast(out.grad * ad, b.data.shape)

        self._ops.append(bw)
        return out

    def div(self, a, b) -> Value:
        ad, bd = _data(a), _data(b)
        with np.errstate(divide="ignore", invalid="ignore"):
            quot = ad / bd
        out = self._out("div", quot, None)

        def bw() -> None:
            if isinstance(a, Value):
                a.grad += _unbroadcast(out.grad / bd, a.data.shape)
            if isinstance(b, Value):
                b.grad += _unbroadcast(-out.grad * ad / (bd * bd), b.data.shape)

        self._ops.append(bw)
        return out

    def neg(self, a: Value) -> Value:
        out = self._out("neg", -a.data, None)
        self._ops.append(lambda: a.grad.__iadd__(-out.grad))
        return out

    def square(self, a: Value) -> Value:
        out = self._out("square", a.data * a.data, None)
        self._ops.append(lambda: a.grad.__iadd__(2.0 * a.data * out.grad))
        return out

    def sqrt(self, a: Value) -> Value:
        root = np.sqrt(a.data)
        out = self._out("sqrt", root, None)
        self._ops.append(lambda: a.grad.__iadd__(out.grad * 0.5 / root))
        return out

    def exp(self, a: Value) -> Value:
        e = np.exp(a.data)
        out = self._out("exp", e, None)
        self._ops.append(lambda: a.grad.__iadd__(out.grad * e))
        return out

    def log(self, a: Value) -> Value:
        out = self._out("log", np.log(a.data), None)
        self._ops.append(lambda: a.grad.__iadd__(out.grad / a.data))
        return out

    def clip(self, a: Value, lo: float, hi: float) -> Value:
        clipped = np.clip(a.data, lo, hi)
        inside = (a.data > lo) & (a.data < hi)
        out = self._out("clip", clipped, None)
        self._ops.append(lambda: a.grad.__iadd__(out.grad * inside))
        return out

    # -- activations -------------------------------------------------------

    def relu(self, a: Value) -> Value:
        out = self._out("relu", np.maximum(a.data, 0.0), None)
        self._ops.append(lambda: a.grad.__iadd__(out.grad * (a.data > 0)))
        return out

    def prelu(self, a: Value, slope: Value) -> Value:
        """Parametric relu; `slope` broadcasts against the last axis."""
        neg = a.data < 0
        out = self._out("prelu", np.where(neg, slope.data * a.data, a.data), None)

        def bw() -> None:
            a.grad += out.grad * np.where(neg, slope.data, 1.0)
            slope.grad += _unbroadcast(out.grad * np.where(neg, a.data, 0.0), slope.data.shape)

        self._ops.append(bw)
        return out

    def sigmoid(self, a: Value) -> Value:
        s = 1.0 / (1.0 + np.exp(-a.data))
        out = self._out("sigmoid", s, None)
        self._ops.append(lambda: a.grad.__iadd__(out.grad * s * (1.0 - s)))
        return out

    # -- linear algebra -----------------------------------------------------

    def matmul(self, a, b) -> Value:
        """a @ b with a of rank >= 2 and b 2-D; leading axes of a are batched."""
        ad, bd = _data(a), _data(b)
        out = self._out("matmul", ad @ bd, None)

        def bw() -> None:
            if isinstance(a, Value):
                a.grad += out.grad @ bd.T
            if isinstance(b, Value):
                b.grad += ad.reshape(-1, ad.shape[-1]).T @ out.grad.reshape(-1, out.grad.shape[-1])

        self._ops.append(bw)
        return out

    def transpose(self, a: Value) -> Value:
        out = self._out("transpose", a.data.T.copy(), None)
        self._ops.append(lambda: a.grad.__iadd__(out.grad.T))
        return out

    def affine(self, x: Value, w: Value, b: Value) -> Value:
        """x @ w + b (bias broadcast over leading axes)."""
        return self.add(self.matmul(x, w), b)

    # -- shape ops ----------------------------------------------------------

    def concat(self, parts: Sequence[Value], axis: int = -1) -> Value:
        datas = [p.data for p in parts]
        out = self._out("concat", np.concatenate(datas, axis=axis), None)
        sizes = [d.shape[axis] for d in datas]
        splits = np.cumsum(sizes)[:-1]

        def bw() -> None:
            for part, g in zip(parts, np.split(out.grad, splits, axis=axis)):
                part.grad += g

        self._ops.append(bw)
        return out

    def reshape(self, a: Value, shape: tuple[int, ...]) -> Value:
        out = self._out("reshape", a.data.reshape(shape), None)
        self._ops.append(lambda: a.grad.__iadd__(out.grad.reshape(a.data.shape)))
        return out

    def broadcast_to(self, a: Value, shape: tuple[int, ...]) -> Value:
        out = self._out("broadcast_to", np.broadcast_to(a.data, shape).copy(), None)
        self._ops.append(lambda: a.grad.__iadd__(_unbroadcast(out.grad, a.data.shape)))
        return out

    def take0(self, a: Value, idx: np.ndarray) -> Value:
        """Gather along axis 0 with an integer index array (embedding lookup,
        row selection).  Output shape is idx.shape + a.shape[1:]."""
        idx = np.asarray(idx)
        out = self._out("take0", a.data[idx], None)
        self._ops.append(lambda: np.add.at(a.grad, idx, out.grad))
        return out

    # -- reductions -----------------------------------------------------------

    def sum(self, a: Value, axis: int | None = None) -> Value:
        out = self._out("sum", np.sum(a.data, axis=axis), None)

        def bw() -> None:
            if axis is None:
                a.grad += out.grad
            else:
                a.grad += np.expand_dims(out.grad, axis)

        self._ops.append(bw)
        return out

    def mean0(self, a: Value) -> Value:
        """Mean over the batch (first) axis."""
        n = a.data.shape[0]
        return self.mul(self.sum(a, axis=0), 1.0 / n)

    def masked_mean0(self, a: Value, mask: np.ndarray) -> Value:
        """Mean over the rows selected by a binary mask (constant)."""
        mask = np.asarray(mask, dtype=np.float64)
        count = float(mask.sum())
        if count <= 0:
            raise ValueError("masked_mean0 over an empty selection")
        sel = self.mul(a, mask.reshape(mask.shape + (1,) * (a.data.ndim - 1)))
        return self.mul(self.sum(sel, axis=0), 1.0 / count)

    # -- fused ops ------------------------------------------------------------

    def masked_softmax(self, logits: Value, mask: np.ndarray) -> Value:
        """Row-wise softmax over positions where mask==1; all-masked rows
        yield an all-zero row (the empty-sequence convention)."""
        m = np.asarray(mask, dtype=np.float64)
        neg = np.where(m > 0, logits.data, -np.inf)
        shift = np.max(neg, axis=-1, keepdims=True)
        shift = np.where(np.isfinite(shift), shift, 0.0)
        num = np.exp(np.where(m > 0, logits.data - shift, -np.inf) * 1.0)
        num = np.where(m > 0, num, 0.0)
        denom = num.sum(axis=-1, keepdims=True)
        soft = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)
        out = self._out("masked_softmax", soft, None)

        def bw() -> None:
            dot = np.sum(out.grad * soft, axis=-1, keepdims=True)
            logits.grad += soft * (out.grad - dot)

        self._ops.append(bw)
        return out

    def gradient_reversal(self, a: Value, alpha: float) -> Value:
        """Identity in forward; backward emits -alpha * upstream, exactly."""
        if alpha < 0:
            raise ValueError("gradient reversal scale must be >= 0")
        out = self._out("gradient_reversal", a.data.copy(), None)
        self._ops.append(lambda: a.grad.__iadd__(-alpha * out.grad))
        return out

    # -- composed losses --------------------------------------------------------

    def binary_cross_entropy(self, pred: Value, target, reduction: str = "sum",
                             weights=None) -> Value:
        """-[y log p + (1-y) log(1-p)], with p clamped to [1e-7, 1-1e-7].

        `target` is a constant {0,1} array; optional `weights` scales each
        sample's term (inverse-propensity use).
        """
        t = np.asarray(_data(target))
        if not np.all((t == 0.0) | (t == 1.0)):
            raise ValueError("targets must be in {0, 1}")
        if reduction not in ("sum", "mean"):
            raise ValueError(f"unknown reduction {reduction!r}")
        p = self.clip(pred, 1e-7, 1.0 - 1e-7)
        pos = self.mul(self.log(p), t)
        negp = self.sub(1.0, p)
        neg = self.mul(self.log(negp), 1.0 - t)
        terms = self.neg(self.add(pos, neg))
        if weights is not None:
            terms = self.mul(terms, np.asarray(_data(weights)))
        total = self.sum(terms)
        if reduction == "mean":
            total = self.mul(total, 1.0 / t.size)
        return total

    def pearson_pairwise_penalty(self, p: Value, q: Value, eps: float = 1e-8) -> Value:
        """Sum of squared Pearson correlations between every column pair.

        Columns are centered in-batch; the denominator is the symmetric
        sqrt((var_i + eps)(var_j + eps)) so the statistic is scale-invariant
        in both arguments and defined for constant columns.
        """
        n = p.data.shape[0]
        if n < 2:
            raise ValueError("pearson penalty needs at least 2 rows")
        if q.data.shape[0] != n:
            raise ValueError("row counts must match")
        pc = self.sub(p, self.mean0(p))
        qc = self.sub(q, self.mean0(q))
        cov = self.matmul(self.transpose(pc), qc)          # (dp, dq)
        var_p = self.sum(self.square(pc), axis=0)          # (dp,)
        var_q = self.sum(self.square(qc), axis=0)          # (dq,)
        denom = self.sqrt(self.mul(self.reshape(self.add(var_p, eps), (-1, 1)),
                                   self.add(var_q, eps)))
        corr = self.div(cov, denom)
        return self.sum(self.square(corr))
