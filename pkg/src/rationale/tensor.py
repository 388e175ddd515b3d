"""Dense float64 tensors with reverse-mode automatic differentiation.

Every real-valued quantity in this package (embeddings, attention scores,
losses) lives in a ``Tensor``: a numpy float64 array plus a gradient slot and
a backward rule linking it to the tensors it was computed from.  Calling
``backward()`` on a scalar tensor fills ``grad`` on every tensor that
contributed to it, visiting each node exactly once in reverse topological
order.

Gradients accumulate across calls; callers zero leaf gradients between
optimization steps.  Tensors are never mutated by forward ops, so independent
graphs can be evaluated concurrently; a single graph's backward runs on one
thread.

Broadcasting is deliberately limited to adding a bias row to a matrix and
combining with scalars; anything fancier raises ``ShapeError``.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """Operand values fall outside the operation's domain."""


# ---------------------------------------------------------------------------
# FLOP accounting (used by the cost-linearity checks on the windowed encoder)

class FlopCounter:
    """Accumulates an approximate multiply-accumulate count of executed ops."""

    def __init__(self) -> None:
        self.total = 0


_active_counters: list[FlopCounter] = []


def _count_flops(n: int) -> None:
    if _active_counters:
        for counter in _active_counters:
            counter.total += n


@contextmanager
def count_flops() -> Iterator[FlopCounter]:
    """Count FLOPs of tensor ops executed inside the ``with`` block."""
    counter = FlopCounter()
    _active_counters.append(counter)
    try:
        yield counter
    finally:
        _active_counters.remove(counter)


# ---------------------------------------------------------------------------

def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Tensor:
    """A node in a reverse-mode autodiff graph.

    ``data`` is a row-major float64 array of any rank (including 0-d
    scalars).  ``grad`` is allocated lazily on the backward pass and has the
    same shape as ``data``.  Leaf tensors (parameters, constants) have no
    parents; every op constructs a fresh tensor wired to its inputs.
    """

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data) -> None:
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: Callable[[np.ndarray], None],
        flops: int = 0,
    ) -> "Tensor":
        """Build a non-leaf tensor with a custom backward rule.

        ``backward`` receives the output gradient and must accumulate into
        the parents' ``grad`` via :func:`accumulate_grad`.
        """
        out = cls(data)
        out._parents = tuple(parents)
        out._backward = backward
        if flops:
            _count_flops(flops)
        return out

    # -- introspection ------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        kind = "leaf" if self._backward is None else "op"
        return f"Tensor(shape={self.shape}, {kind})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            data = self.data + float(other)

            def backward(g: np.ndarray) -> None:
                accumulate_grad(self, g)

            return Tensor.from_op(data, (self,), backward, flops=self.size)
        if isinstance(other, np.ndarray):
            other = np.asarray(other, dtype=np.float64)
            _check_add_shapes(self.shape, other.shape)
            data = self.data + other

            def backward(g: np.ndarray) -> None:
                accumulate_grad(self, g)

            return Tensor.from_op(data, (self,), backward, flops=self.size)
        if not isinstance(other, Tensor):
            return NotImplemented

        if other.ndim == 0:
            a, b = self, other
            data = a.data + b.data

            def backward(g: np.ndarray) -> None:
                accumulate_grad(a, g)
                accumulate_grad(b, g.sum())

            return Tensor.from_op(data, (a, b), backward, flops=self.size)
        if self.ndim == 0 and other.ndim > 0:
            return other + self

        _check_add_shapes(self.shape, other.shape)
        a, b = self, other
        if a.shape == b.shape:
            data = a.data + b.data

            def backward(g: np.ndarray) -> None:
                accumulate_grad(a, g)
                accumulate_grad(b, g)

        else:  # [m, n] + bias [n], broadcast over rows
            data = a.data + b.data

            def backward(g: np.ndarray) -> None:
                accumulate_grad(a, g)
                accumulate_grad(b, g.sum(axis=0))

        return Tensor.from_op(data, (a, b), backward, flops=self.size)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        data = -self.data

        def backward(g: np.ndarray) -> None:
            accumulate_grad(self, -g)

        return Tensor.from_op(data, (self,), backward, flops=self.size)

    def __sub__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return self + (-float(other))
        if isinstance(other, Tensor):
            return self + (-other)
        return NotImplemented

    def __rsub__(self, other) -> "Tensor":
        return (-self) + other

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            c = float(other)
            data = self.data * c

            def backward(g: np.ndarray) -> None:
                accumulate_grad(self, g * c)

            return Tensor.from_op(data, (self,), backward, flops=self.size)
        if isinstance(other, np.ndarray):
            const = np.asarray(other, dtype=np.float64)
            if const.shape != self.shape:
                raise ShapeError(f"elementwise multiply of shapes {self.shape} and {const.shape}")
            data = self.data * const

            def backward(g: np.ndarray) -> None:
                accumulate_grad(self, g * const)

            return Tensor.from_op(data, (self,), backward, flops=self.size)
        if not isinstance(other, Tensor):
            return NotImplemented

        a, b = self, other
        if b.ndim == 0 and a.ndim > 0:
            data = a.data * b.data

            def backward(g: np.ndarray) -> None:
                accumulate_grad(a, g * b.data)
                accumulate_grad(b, (g * a.data).sum())

            return Tensor.from_op(data, (a, b), backward, flops=2 * a.size)
        if a.ndim == 0 and b.ndim > 0:
            return b * a
        if a.shape != b.shape:
            raise ShapeError(f"elementwise multiply of shapes {a.shape} and {b.shape}")
        data = a.data * b.data

        def backward(g: np.ndarray) -> None:
            accumulate_grad(a, g * b.data)
            accumulate_grad(b, g * a.data)

        return Tensor.from_op(data, (a, b), backward, flops=2 * a.size)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return self * (1.0 / float(other))
        if not isinstance(other, Tensor):
            return NotImplemented
        a, b = self, other
        if b.ndim == 0:
            data = a.data / b.data

            def backward(g: np.ndarray) -> None:
                accumulate_grad(a, g / b.data)
                accumulate_grad(b, -(g * a.data).sum() / (b.data * b.data))

            return Tensor.from_op(data, (a, b), backward, flops=2 * a.size)
        if a.shape != b.shape:
            raise ShapeError(f"elementwise divide of shapes {a.shape} and {b.shape}")
        data = a.data / b.data

        def backward(g: np.ndarray) -> None:
            accumulate_grad(a, g / b.data)
            accumulate_grad(b, -g * a.data / (b.data * b.data))

        return Tensor.from_op(data, (a, b), backward, flops=2 * a.size)

    def __matmul__(self, other) -> "Tensor":
        if not isinstance(other, Tensor):
            return NotImplemented
        a, b = self, other
        if a.ndim != 2 or b.ndim != 2:
            raise ShapeError(f"matmul requires 2-D operands, got {a.shape} and {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
        data = a.data @ b.data

        def backward(g: np.ndarray) -> None:
            accumulate_grad(a, g @ b.data.T)
            accumulate_grad(b, a.data.T @ g)

        m, k = a.shape
        n = b.shape[1]
        return Tensor.from_op(data, (a, b), backward, flops=m * k * n)

    # -- activations --------------------------------------------------------

    def tanh(self) -> "Tensor":
        t = np.tanh(self.data)

        def backward(g: np.ndarray) -> None:
            accumulate_grad(self, g * (1.0 - t * t))

        return Tensor.from_op(t, (self,), backward, flops=2 * self.size)

    def sigmoid(self) -> "Tensor":
        s = _stable_sigmoid(self.data)

        def backward(g: np.ndarray) -> None:
            accumulate_grad(self, g * s * (1.0 - s))

        return Tensor.from_op(s, (self,), backward, flops=2 * self.size)

    def exp(self) -> "Tensor":
        e = np.exp(self.data)

        def backward(g: np.ndarray) -> None:
            accumulate_grad(self, g * e)

        return Tensor.from_op(e, (self,), backward, flops=self.size)

    def power(self, beta: float) -> "Tensor":
        """Elementwise x**beta for beta > 0 on nonnegative inputs."""
        if beta <= 0:
            raise DomainError(f"power exponent must be positive, got {beta}")
        if self.size and self.data.min() < 0:
            raise DomainError(
                f"power({beta}) on negative element (min {self.data.min()})"
            )
        data = self.data ** beta

        def backward(g: np.ndarray) -> None:
            # Subgradient 0 at x == 0 when beta < 1 (true derivative diverges).
            with np.errstate(divide="ignore", invalid="ignore"):
                d = beta * self.data ** (beta - 1.0)
            d = np.where(np.isfinite(d), d, 0.0)
            accumulate_grad(self, g * d)

        return Tensor.from_op(data, (self,), backward, flops=2 * self.size)

    def square(self) -> "Tensor":
        data = self.data * self.data

        def backward(g: np.ndarray) -> None:
            accumulate_grad(self, 2.0 * g * self.data)

        return Tensor.from_op(data, (self,), backward, flops=self.size)

    # -- reductions ---------------------------------------------------------

    def _check_reduce(self, axis: int | None) -> None:
        if axis is None:
            if self.size == 0:
                raise ShapeError("reduction over an empty tensor")
            return
        if not -self.ndim <= axis < self.ndim:
            raise ShapeError(f"axis {axis} invalid for shape {self.shape}")
        if self.shape[axis] == 0:
            raise ShapeError(f"reduction over empty axis {axis} of shape {self.shape}")

    def sum(self, axis: int | None = None) -> "Tensor":
        self._check_reduce(axis)
        data = self.data.sum(axis=axis)

        def backward(g: np.ndarray) -> None:
            if axis is None:
                accumulate_grad(self, np.broadcast_to(g, self.shape))
            else:
                accumulate_grad(self, np.broadcast_to(np.expand_dims(g, axis), self.shape))

        return Tensor.from_op(data, (self,), backward, flops=self.size)

    def mean(self, axis: int | None = None) -> "Tensor":
        self._check_reduce(axis)
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def _extremum(self, axis: int | None, use_max: bool) -> "Tensor":
        self._check_reduce(axis)
        argfn = np.argmax if use_max else np.argmin  # first occurrence: lowest index wins ties
        if axis is None:
            flat_idx = int(argfn(self.data))
            data = self.data.reshape(-1)[flat_idx]

            def backward(g: np.ndarray) -> None:
                full = np.zeros(self.size)
                full[flat_idx] = g
                accumulate_grad(self, full.reshape(self.shape))

            return Tensor.from_op(np.asarray(data), (self,), backward, flops=self.size)

        idx = argfn(self.data, axis=axis)
        data = np.take_along_axis(self.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

        def backward(g: np.ndarray) -> None:
            full = np.zeros_like(self.data)
            np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
            accumulate_grad(self, full)

        return Tensor.from_op(data, (self,), backward, flops=self.size)

    def min(self, axis: int | None = None) -> "Tensor":
        return self._extremum(axis, use_max=False)

    def max(self, axis: int | None = None) -> "Tensor":
        return self._extremum(axis, use_max=True)

    # -- shape manipulation --------------------------------------------------

    def reshape(self, shape) -> "Tensor":
        data = self.data.reshape(shape)

        def backward(g: np.ndarray) -> None:
            accumulate_grad(self, g.reshape(self.shape))

        return Tensor.from_op(data, (self,), backward)

    def transpose(self) -> "Tensor":
        if self.ndim != 2:
            raise ShapeError(f"transpose requires a 2-D tensor, got shape {self.shape}")
        data = self.data.T

        def backward(g: np.ndarray) -> None:
            accumulate_grad(self, g.T)

        return Tensor.from_op(data, (self,), backward)

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __getitem__(self, key) -> "Tensor":
        if isinstance(key, (list, np.ndarray)):
            key = np.asarray(key)
            if key.dtype == bool:
                raise ShapeError("boolean indexing is not supported")
        data = self.data[key]
        data = np.array(data, dtype=np.float64)  # detach views

        def backward(g: np.ndarray) -> None:
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)  # add.at: repeated indices accumulate
            accumulate_grad(self, full)

        return Tensor.from_op(data, (self,), backward)

    # -- backward -----------------------------------------------------------

    def backward(self) -> None:
        """Propagate d(self)/d(node) into every reachable node's ``grad``.

        ``self`` must hold exactly one element.  Gradients accumulate: call
        ``zero_grad()`` on leaves before reusing them in a new step.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar loss, got shape {self.shape}")

        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        accumulate_grad(self, np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def accumulate_grad(node: Tensor, g: np.ndarray) -> None:
    """Add ``g`` into ``node.grad``, allocating it on first touch."""
    if node.grad is None:
        node.grad = np.zeros_like(node.data)
    node.grad += g


def _check_add_shapes(a: tuple[int, ...], b: tuple[int, ...]) -> None:
    if a == b:
        return
    if len(a) == 2 and len(b) == 1 and a[1] == b[0]:
        return
    raise ShapeError(f"cannot add shapes {a} and {b} (only row-bias broadcast allowed)")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return a @ b


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; gradient splits back to each input."""
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            accumulate_grad(t, g[tuple(sl)])

    return Tensor.from_op(data, tuple(tensors), backward)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows ``table[ids]``; gradient scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got shape {table.shape}")
    n_rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
        raise DomainError(
            f"token id out of range [0, {n_rows}): ids span "
            f"[{ids.min()}, {ids.max()}]"
        )
    data = table.data[ids]

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        accumulate_grad(table, full)

    return Tensor.from_op(data, (table,), backward, flops=int(ids.size) * table.shape[1])


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax of a 2-D tensor.

    ``mask`` is an optional boolean array (True = position participates);
    masked positions get probability exactly 0.  Every row must keep at
    least one unmasked position.
    """
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows requires a 2-D tensor, got shape {x.shape}")
    z = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"mask shape {mask.shape} != input shape {x.shape}")
        if not mask.any(axis=1).all():
            raise DomainError("softmax row with every position masked")
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)

    def backward(g: np.ndarray) -> None:
        inner = (g * p).sum(axis=1, keepdims=True)
        accumulate_grad(x, p * (g - inner))

    return Tensor.from_op(p, (x,), backward, flops=5 * x.size)


def layer_norm_rows(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit variance, then scale and shift."""
    if x.ndim != 2:
        raise ShapeError(f"layer_norm_rows requires a 2-D tensor, got shape {x.shape}")
    n = x.shape[1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(
            f"gain/bias shapes {gain.shape}/{bias.shape} do not match row width {n}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    data = xhat * gain.data + bias.data

    def backward(g: np.ndarray) -> None:
        accumulate_grad(gain, (g * xhat).sum(axis=0))
        accumulate_grad(bias, g.sum(axis=0))
        gx = g * gain.data
        m1 = gx.mean(axis=1, keepdims=True)
        m2 = (gx * xhat).mean(axis=1, keepdims=True)
        accumulate_grad(x, (gx - m1 - xhat * m2) * inv_std)

    return Tensor.from_op(data, (x, gain, bias), backward, flops=8 * x.size)


def finite_difference_grad(
    f: Callable[[np.ndarray], float],
    theta: np.ndarray,
    eps: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of a deterministic scalar function.

    The independent oracle for ``backward``: evaluates
    ``(f(theta + eps*e_i) - f(theta - eps*e_i)) / (2*eps)`` per coordinate.
    """
    if eps <= 0:
        raise DomainError(f"finite difference step must be positive, got {eps}")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat = grad.reshape(-1)
    base = theta.reshape(-1)
    for i in range(base.size):
        bumped = base.copy()
        bumped[i] = base[i] + eps
        hi = f(bumped.reshape(theta.shape))
        bumped[i] = base[i] - eps
        lo = f(bumped.reshape(theta.shape))
        flat[i] = (hi - lo) / (2.0 * eps)
    return grad
