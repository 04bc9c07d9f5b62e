"""Dense tensor engine with reverse-mode automatic differentiation.

Tensors wrap row-major numpy arrays (float32 or float64). Operations on
tensors record a per-forward-pass tape; ``backward()`` on a scalar walks the
tape in reverse topological order and accumulates gradients into the leaves
that were created with ``requires_grad=True``. The tape is freed after
backward; leaf gradients accumulate until explicitly zeroed.

Design notes that matter for the rest of the package:

* Additive attention masks use the finite sentinel ``NEG_INF`` (-1e30)
  instead of a true -inf so no NaN can propagate through exp in 32-bit
  mode. ``masked_softmax`` zeroes masked positions explicitly, so blocked
  attention weights are *exactly* 0.0 and blocked information paths are
  bit-exactly dead, forward and backward.
* All reductions go through numpy's deterministic kernels: identical
  inputs give bit-identical outputs and gradients across runs.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DegenerateRowError, NumericError, ShapeError

# Additive-mask sentinel standing in for -inf. Any finite logit added to it
# is absorbed (|logit| << ulp(1e30)), so masked entries stay bit-identical
# regardless of the masked-out content.
NEG_INF = -1e30
_MASKED_THRESHOLD = -1e29

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_dtype(dtype) -> np.dtype:
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"unsupported dtype {dt}; use float32 or float64")
    return dt


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` over the axes that were introduced or expanded by
    broadcasting an operand of `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Row-major dense array with optional participation in the grad tape.

    ``grad`` is allocated (same shape, zero-filled) iff ``requires_grad``;
    intermediate results of taped ops carry parent links instead and their
    transient gradients live only inside ``backward``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, dtype=np.float32, requires_grad: bool = False):
        arr = np.asarray(data, dtype=_as_dtype(dtype))
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] | None = None
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.dtype)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # -- tape plumbing -------------------------------------------------------

    def _taped(self) -> bool:
        return self.requires_grad or self._parents is not None

    @staticmethod
    def _make(
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: Callable[[np.ndarray], None],
    ) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = False
        out.grad = None
        if _grad_enabled and any(p._taped() for p in parents):
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = None
            out._backward = None
        return out

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar. Leaf grads accumulate (repeat
        calls add); the tape is freed afterwards."""
        if self.data.size != 1:
            raise ContractError(
                f"backward() requires a scalar loss, got shape {self.shape}"
            )
        # Iterative topological order over the parent DAG.
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            if node._parents is not None:
                for p in node._parents:
                    if id(p) not in seen:
                        stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad += g
            if node._backward is None:
                continue
            node._backward_into(g, grads)
            # Free the tape as we go; leaves keep their accumulated grad.
            node._parents = None
            node._backward = None

    def _backward_into(self, g: np.ndarray, grads: dict[int, np.ndarray]) -> None:
        contribs = self._backward(g)
        for parent, contrib in zip(self._parents, contribs):
            if contrib is None or not parent._taped():
                continue
            acc = grads.get(id(parent))
            if acc is None:
                # Copy: backward closures may hand back views that alias the
                # incoming gradient, and the accumulator is mutated in place.
                grads[id(parent)] = contrib.astype(parent.dtype, copy=True)
            else:
                acc += contrib

    # -- arithmetic ----------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            if other.dtype != self.dtype:
                raise ShapeError(
                    f"dtype mismatch: {self.dtype.name} vs {other.dtype.name}"
                )
            return other
        return Tensor(np.asarray(other, dtype=self.dtype), dtype=self.dtype)

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        out = self.data + other.data
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            out,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Tensor":
        return (-self) + other

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        a, b = self, other
        return Tensor._make(
            a.data * b.data,
            (a, b),
            lambda g: (
                _unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = self._coerce(other)
        a, b = self, other
        return Tensor._make(
            a.data / b.data,
            (a, b),
            lambda g: (
                _unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
            ),
        )

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise ContractError("tensor exponents are not supported")
        e = float(exponent)
        out = self.data**e
        base = self.data
        return Tensor._make(
            out, (self,), lambda g: (g * e * base ** (e - 1.0),)
        )

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._make(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(old),)
        )

    def transpose(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ShapeError(f"transpose expects a matrix, got shape {self.shape}")
        return Tensor._make(
            np.ascontiguousarray(self.data.T), (self,), lambda g: (g.T,)
        )

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __getitem__(self, key) -> "Tensor":
        out = np.asarray(self.data[key], dtype=self.dtype)
        if out.ndim:
            # ascontiguousarray would promote 0-d to (1,), breaking scalar slots
            out = np.ascontiguousarray(out)
        shape = self.shape

        def bwd(g):
            full = np.zeros(shape, dtype=g.dtype)
            np.add.at(full, key, g)
            return (full,)

        return Tensor._make(out, (self,), bwd)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = self.data.sum(axis=axis, keepdims=keepdims)
        out = np.asarray(out, dtype=self.dtype)
        shape = self.shape

        def bwd(g):
            if axis is None:
                return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, shape).astype(g.dtype, copy=True),)

        return Tensor._make(out, (self,), bwd)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            n = self.data.size
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- pointwise nonlinearities ---------------------------------------------

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        base = self.data
        return Tensor._make(np.log(base), (self,), lambda g: (g / base,))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), lambda g: (g * (1.0 - out * out),))


class Parameter(Tensor):
    """Trainable leaf tensor with a unique dotted name path."""

    __slots__ = ("name",)

    def __init__(self, name: str, data, dtype=np.float32):
        super().__init__(data, dtype=dtype, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype.name})"


# -- free-function ops --------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors; dA = dC @ B^T, dB = A^T @ dC."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul expects matrices, got shapes {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.shape} @ {b.shape}"
        )
    if a.dtype != b.dtype:
        raise ShapeError(f"dtype mismatch: {a.dtype.name} vs {b.dtype.name}")
    out = a.data @ b.data
    ad, bd = a.data, b.data
    return Tensor._make(out, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along `axis`; backward splits the incoming gradient."""
    if not tensors:
        raise ContractError("concat of an empty sequence")
    dtype = tensors[0].dtype
    for t in tensors:
        if t.dtype != dtype:
            raise ShapeError("concat operands must share a dtype")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return Tensor._make(out, tuple(tensors), bwd)


def take_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of a matrix by integer id (embedding lookup)."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"take_rows expects a 1-d id list, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(
            f"row id out of range [0, {table.shape[0]}): {idx.min()}..{idx.max()}"
        )
    out = table.data[idx]
    shape = table.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._make(np.ascontiguousarray(out), (table,), bwd)


def masked_softmax(logits: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis of ``logits + mask``.

    `mask` is a plain array of {0, NEG_INF} broadcastable to ``logits``.
    Positions at the NEG_INF sentinel come out *exactly* 0.0 (they are zeroed
    explicitly rather than left to exp underflow), rows renormalize over the
    surviving entries, and the backward pass consequently sends exactly zero
    gradient through masked positions.
    """
    mask = np.asarray(mask, dtype=logits.dtype)
    blocked = mask <= _MASKED_THRESHOLD
    blocked = np.broadcast_to(blocked, np.broadcast_shapes(logits.shape, mask.shape))
    if blocked.all(axis=-1).any():
        rows = np.argwhere(blocked.all(axis=-1))
        raise DegenerateRowError(
            f"fully masked softmax row(s) at index {rows[0].tolist()}"
        )
    z = logits.data + mask
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    e = np.where(blocked, 0.0, e).astype(logits.dtype)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (_unbroadcast((g - dot) * out, logits.shape),)

    return Tensor._make(out, (logits,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row of the last axis to zero mean / unit variance,
    then scale by `gain` and shift by `bias`."""
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be positive, got {eps}")
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = (var + eps) ** -0.5
    return centered * inv * gain + bias


def gelu(x: Tensor) -> Tensor:
    # tanh approximation; smooth everywhere, so finite-difference checks
    # are well behaved.
    c = 0.7978845608028654  # sqrt(2/pi)
    inner = (x + (x * x * x) * 0.044715) * c
    return x * 0.5 * (inner.tanh() + 1.0)


def logsumexp(logits: Tensor) -> Tensor:
    """log(sum(exp(x))) over a 1-d tensor, max-shifted for stability."""
    m = float(logits.data.max())
    return (logits - m).exp().sum().log() + m


def cross_entropy_logits(logits: Tensor, target: int) -> Tensor:
    """Negative log-softmax probability of `target` under 1-d `logits`."""
    if logits.data.ndim != 1:
        raise ShapeError(f"cross_entropy expects a 1-d logit row, got {logits.shape}")
    v = logits.shape[0]
    if not 0 <= target < v:
        raise IndexError(f"target {target} out of range for vocab {v}")
    return logsumexp(logits) - logits[target]


def check_finite(t: Tensor, what: str) -> Tensor:
    if not np.isfinite(t.data).all():
        raise NumericError(f"non-finite values in {what}")
    return t


def randn(rng: np.random.Generator, shape, std: float = 1.0, dtype=np.float32):
    """Deterministic Gaussian init helper (always drawn in float64, then cast,
    so float32 and float64 models see the same underlying values)."""
    return (rng.standard_normal(shape) * std).astype(_as_dtype(dtype))


def parameters_of(obj) -> Iterable[Parameter]:
    """Yield Parameter attributes of a module-like object, in declaration order."""
    for value in vars(obj).values():
        if isinstance(value, Parameter):
            yield value
