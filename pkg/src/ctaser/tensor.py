"""Dense float tensors with reverse-mode automatic differentiation.

A Tensor wraps a row-major numpy array (float32 by default, float64 for
gradient checking) and records the operations applied to it.  Calling
``backward()`` on a scalar result replays the recorded adjoint rules in
reverse topological order and accumulates ``.grad`` on every tensor that
has ``requires_grad`` set.

Masks are plain boolean numpy arrays, not tensors: they carry no gradient
and are first-class arguments to ``softmax`` and ``mean_axis`` so that
variable-length batches never leak padded positions into results or
gradients.
"""

from __future__ import annotations

import contextlib

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "MaskError",
    "tensor",
    "concat",
    "broadcast_to",
    "mean_axis",
    "softmax",
    "matmul",
    "make_node",
    "accumulate_grad",
    "no_grad",
    "finite_diff_check",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand shapes (or dtypes) are inconsistent with the operation."""


class MaskError(ValueError):
    """A mask leaves zero valid positions where at least one is required."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def accumulate_grad(t: "Tensor", g: np.ndarray) -> None:
    """Add an adjoint contribution to ``t.grad`` (no-op for constants)."""
    if not t.requires_grad:
        return
    if t.grad is None:
        # copy: the same buffer may be credited to several parents
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def make_node(data: np.ndarray, parents, backward) -> "Tensor":
    """Wrap ``data`` as the output of a custom primitive.

    ``backward(out_grad)`` must call :func:`accumulate_grad` for every
    parent it wants to credit.  Recording is skipped entirely when no
    parent requires a gradient or when inside :func:`no_grad`.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else np.float32)
        if arr.dtype not in _FLOAT_DTYPES:
            raise ShapeError(f"unsupported dtype {arr.dtype}; use float32 or float64")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # ------------------------------------------------------------------
    # introspection

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # ------------------------------------------------------------------
    # backward

    def backward(self) -> None:
        """Populate ``.grad`` for every reachable ``requires_grad`` tensor.

        The loss must be a single element.  The recorded graph is released
        afterwards (the tape is consumed); intermediate results cannot be
        backpropagated twice.
        """
        if self.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ShapeError("loss does not require grad; nothing to backpropagate")

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            # consume the tape: free graph references, keep leaf grads
            node._parents = ()
            node._backward = None

    # ------------------------------------------------------------------
    # arithmetic

    def _check_binary(self, other: "Tensor", op: str) -> None:
        if other.shape != self.shape:
            raise ShapeError(f"{op}: shape mismatch {self.shape} vs {other.shape}")
        if other.data.dtype != self.data.dtype:
            raise ShapeError(f"{op}: dtype mismatch {self.data.dtype} vs {other.data.dtype}")

    def __add__(self, other):
        if isinstance(other, Tensor):
            self._check_binary(other, "add")
            a, b = self, other

            def bwd(og):
                accumulate_grad(a, og)
                accumulate_grad(b, og)

            return make_node(a.data + b.data, (a, b), bwd)
        s = float(other)
        a = self
        return make_node(a.data + np.asarray(s, dtype=a.data.dtype), (a,), lambda og: accumulate_grad(a, og))

    __radd__ = __add__

    def __neg__(self):
        a = self
        return make_node(-a.data, (a,), lambda og: accumulate_grad(a, -og))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            self._check_binary(other, "sub")
            a, b = self, other

            def bwd(og):
                accumulate_grad(a, og)
                accumulate_grad(b, -og)

            return make_node(a.data - b.data, (a, b), bwd)
        return self.__add__(-float(other))

    def __rsub__(self, other):
        return (-self).__add__(float(other))

    def __mul__(self, other):
        a = self
        if isinstance(other, Tensor):
            self._check_binary(other, "mul")
            b = other

            def bwd(og):
                accumulate_grad(a, og * b.data)
                accumulate_grad(b, og * a.data)

            return make_node(a.data * b.data, (a, b), bwd)
        if isinstance(other, np.ndarray):
            # multiply by a constant array (dropout masks, padding masks)
            c = other.astype(a.data.dtype, copy=False)
            out = a.data * c
            if out.shape != a.shape:
                raise ShapeError(f"mul: constant of shape {other.shape} does not broadcast onto {a.shape}")
            return make_node(out, (a,), lambda og: accumulate_grad(a, og * c))
        s = float(other)
        return make_node(a.data * np.asarray(s, dtype=a.data.dtype), (a,), lambda og: accumulate_grad(a, og * s))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.__mul__(1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    # ------------------------------------------------------------------
    # shape manipulation

    def transpose(self, *axes):
        a = self
        if not axes:
            axes = tuple(reversed(range(a.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if sorted(axes) != list(range(a.ndim)):
            raise ShapeError(f"transpose: {axes} is not a permutation of {a.ndim} axes")
        inv = np.argsort(axes)
        return make_node(
            np.ascontiguousarray(a.data.transpose(axes)),
            (a,),
            lambda og: accumulate_grad(a, og.transpose(inv)),
        )

    @property
    def T(self):
        return self.transpose()

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        if shape.count(-1) == 1:
            known = int(np.prod([s for s in shape if s != -1]))
            if known == 0 or a.size % known:
                raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
            shape = tuple(a.size // known if s == -1 else s for s in shape)
        if int(np.prod(shape)) != a.size:
            raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
        in_shape = a.shape
        return make_node(
            a.data.reshape(shape),
            (a,),
            lambda og: accumulate_grad(a, og.reshape(in_shape)),
        )

    def narrow(self, axis: int, start: int, length: int):
        """Contiguous slice ``[start, start+length)`` along one axis."""
        a = self
        n = a.shape[axis]
        if start < 0 or length < 1 or start + length > n:
            raise ShapeError(f"narrow: [{start}, {start + length}) out of range for axis of extent {n}")
        idx = tuple(slice(None) if d != axis else slice(start, start + length) for d in range(a.ndim))

        def bwd(og):
            g = np.zeros_like(a.data)
            g[idx] = og
            accumulate_grad(a, g)

        return make_node(np.ascontiguousarray(a.data[idx]), (a,), bwd)

    # ------------------------------------------------------------------
    # reductions and nonlinearities

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        in_shape = a.shape
        axes = _normalize_axes(axis, a.ndim)

        def bwd(og):
            g = og
            if not keepdims and axes is not None:
                g = np.expand_dims(g, tuple(axes))
            accumulate_grad(a, np.broadcast_to(g, in_shape))

        return make_node(a.data.sum(axis=axes, keepdims=keepdims), (a,), bwd)

    def sigmoid(self):
        a = self
        # evaluated via tanh to stay finite for large |x|
        y = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
        return make_node(y, (a,), lambda og: accumulate_grad(a, og * (y * (1.0 - y))))

    def tanh(self):
        a = self
        y = np.tanh(a.data)
        return make_node(y, (a,), lambda og: accumulate_grad(a, og * (1.0 - y * y)))

    def exp(self):
        a = self
        y = np.exp(a.data)
        return make_node(y, (a,), lambda og: accumulate_grad(a, og * y))

    def log(self):
        a = self
        return make_node(np.log(a.data), (a,), lambda og: accumulate_grad(a, og / a.data))


def _normalize_axes(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(a % ndim for a in axis)
    if len(set(axes)) != len(axes):
        raise ShapeError(f"duplicate axes in {axis}")
    return axes


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"matmul: dtype mismatch {a.data.dtype} vs {b.data.dtype}")

    def bwd(og):
        accumulate_grad(a, og @ b.data.T)
        accumulate_grad(b, a.data.T @ og)

    return make_node(a.data @ b.data, (a, b), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate tensors along an existing axis."""
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat of zero tensors")
    axis = axis % ts[0].ndim
    base = list(ts[0].shape)
    for t in ts[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(o != b for d, (o, b) in enumerate(zip(other, base)) if d != axis):
            raise ShapeError(f"concat: incompatible shapes {ts[0].shape} vs {t.shape} along axis {axis}")
        if t.data.dtype != ts[0].data.dtype:
            raise ShapeError("concat: dtype mismatch")
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(og):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = tuple(slice(None) if d != axis else slice(lo, hi) for d in range(t.ndim))
            accumulate_grad(t, og[idx])

    return make_node(np.concatenate([t.data for t in ts], axis=axis), ts, bwd)


def broadcast_to(x: Tensor, shape) -> Tensor:
    """Broadcast a lower-rank (or size-1-axed) tensor across a larger shape."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError as e:
        raise ShapeError(f"cannot broadcast {x.shape} to {shape}") from e
    n_extra = len(shape) - x.ndim
    expanded = tuple(
        i for i in range(len(shape))
        if i < n_extra or x.shape[i - n_extra] == 1 and shape[i] != 1
    )

    def bwd(og):
        g = og.sum(axis=expanded, keepdims=True) if expanded else og
        accumulate_grad(x, g.reshape(x.shape))

    return make_node(np.ascontiguousarray(out), (x,), bwd)


def mean_axis(x: Tensor, axis: int, mask: np.ndarray | None = None) -> Tensor:
    """Arithmetic mean over one axis, restricted to mask-valid positions.

    ``mask`` is a boolean array broadcastable to ``x.shape``; masked
    positions are excluded from both numerator and denominator.
    """
    axis = axis % x.ndim
    if mask is None:
        n = x.shape[axis]

        def bwd(og):
            accumulate_grad(x, np.broadcast_to(np.expand_dims(og, axis), x.shape) / n)

        return make_node(x.data.mean(axis=axis), (x,), bwd)

    m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    count = m.sum(axis=axis)
    if np.any(count == 0):
        raise MaskError(f"mean_axis: zero valid positions along axis {axis}")
    mf = m.astype(x.data.dtype)
    y = (x.data * mf).sum(axis=axis) / count

    def bwd(og):
        g = np.expand_dims(og / count, axis)
        accumulate_grad(x, np.broadcast_to(g, x.shape) * mf)

    return make_node(y.astype(x.data.dtype, copy=False), (x,), bwd)


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax; masked entries come out exactly zero.

    Every slice along ``axis`` must keep at least one valid entry.
    """
    axis = axis % x.ndim
    xd = x.data
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        if np.any(~m.any(axis=axis)):
            raise MaskError(f"softmax: a slice along axis {axis} is fully masked")
        shifted = np.where(m, xd, -np.inf)
        shifted = shifted - shifted.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        e[~m] = 0.0
    else:
        e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)
    y = y.astype(xd.dtype, copy=False)

    def bwd(og):
        inner = (og * y).sum(axis=axis, keepdims=True)
        accumulate_grad(x, y * (og - inner))

    return make_node(y, (x,), bwd)


# ----------------------------------------------------------------------
# gradient checking


def finite_diff_check(f, params, eps: float = 1e-5) -> float:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` must be a deterministic closure over ``params`` (an iterable of
    tensors, or a name->Tensor mapping) returning a scalar Tensor.  Returns
    the maximum over all parameter elements of

        |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    """
    if isinstance(params, dict):
        params = list(params.values())
    else:
        params = list(params)
    for p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    with no_grad():
        for p, an in zip(params, analytic):
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = f().item()
                flat[i] = orig - eps
                f_minus = f().item()
                flat[i] = orig
                num = (f_plus - f_minus) / (2.0 * eps)
                ana = float(an.reshape(-1)[i])
                rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
                worst = max(worst, rel)
    return worst
