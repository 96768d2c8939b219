"""Dense-tensor substrate with reverse-mode automatic differentiation.

Tensors wrap numpy arrays and record backward closures on a dynamic tape as
operations execute. A scalar loss pushes gradients back to every leaf that
has ``requires_grad`` set; gradients accumulate across backward calls until
explicitly reset (see ``zero_grads``).

Precision contract: gradient checking is only reliable at float64, which is
the default dtype. Training builds may use float32 for speed.

Concurrency contract: tensors are immutable once created except gradient
buffers; one tape per worker, single-writer backward. The module-level
grad-enable flag makes graph construction single-threaded by design.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "make_op",
    "concat",
    "exp",
    "log",
    "tanh",
    "relu",
    "gelu",
    "softmax_rows",
    "layer_norm",
    "cross_entropy",
    "embedding",
    "dropout",
    "finite_difference_check",
    "zero_grads",
    "global_grad_norm",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (eval / generation fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A dense real-valued n-d array plus an optional same-shape gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
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

    def __repr__(self) -> str:
        flags = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flags}{nm})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def assert_finite(self) -> "Tensor":
        """Debug check: raise if any element is NaN or infinite."""
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in tensor {self.name or self.shape}")
        return self

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Push d(self)/d(leaf) into every requires_grad leaf. Scalar only.

        Gradients accumulate into ``.grad``; callers reset with ``zero_grads``
        before each optimization step.
        """
        if self.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                node.grad = None  # free intermediate grads; leaves keep theirs

    # ----- arithmetic -------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            a, b = self, other
            data = a.data + b.data

            def bwd(g):
                if a.requires_grad:
                    a._accum(_unbroadcast(g, a.shape))
                if b.requires_grad:
                    b._accum(_unbroadcast(g, b.shape))

            return make_op(data, (a, b), bwd)
        data = self.data + other

        def bwd_s(g):
            self._accum(g)

        return make_op(data, (self,), bwd_s)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            a, b = self, other
            data = a.data * b.data

            def bwd(g):
                if a.requires_grad:
                    a._accum(_unbroadcast(g * b.data, a.shape))
                if b.requires_grad:
                    b._accum(_unbroadcast(g * a.data, b.shape))

            return make_op(data, (a, b), bwd)
        data = self.data * other

        def bwd_s(g):
            self._accum(g * other)

        return make_op(data, (self,), bwd_s)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return self + (-other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division not supported; multiply by a reciprocal")
        return self * (1.0 / other)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents supported")
        x = self
        data = x.data ** p

        def bwd(g):
            x._accum(g * p * x.data ** (p - 1))

        return make_op(data, (x,), bwd)

    def matmul(self, other: "Tensor") -> "Tensor":
        """Matrix product; stacked leading dimensions broadcast."""
        a, b = self, other
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul needs 2-d operands, got {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} @ {b.shape}")

        if a.ndim > 2 and b.ndim == 2:
            # flatten leading dims into one gemm instead of a stacked loop
            lead = a.shape[:-1]
            a2 = a.data.reshape(-1, a.shape[-1])
            data = (a2 @ b.data).reshape(*lead, b.shape[-1])

            def bwd2(g):
                g2 = g.reshape(-1, g.shape[-1])
                if a.requires_grad:
                    a._accum((g2 @ b.data.T).reshape(a.shape))
                if b.requires_grad:
                    b._accum(a2.T @ g2)

            return make_op(data, (a, b), bwd2)

        try:
            data = a.data @ b.data
        except ValueError as e:  # leading dims not broadcastable
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}: {e}") from None

        def bwd(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

        return make_op(data, (a, b), bwd)

    __matmul__ = matmul

    # ----- shape ops --------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        x = self
        old = x.shape
        data = x.data.reshape(shape)

        def bwd(g):
            x._accum(g.reshape(old))

        return make_op(data, (x,), bwd)

    def transpose(self, *axes) -> "Tensor":
        x = self
        if not axes:
            perm = tuple(reversed(range(x.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            perm = tuple(axes[0])
        else:
            perm = tuple(axes)
        data = x.data.transpose(perm)
        inv = tuple(np.argsort(perm))

        def bwd(g):
            x._accum(g.transpose(inv))

        return make_op(data, (x,), bwd)

    def __getitem__(self, idx) -> "Tensor":
        # basic indexing only (ints / slices); backward scatters into zeros
        x = self
        data = x.data[idx]

        def bwd(g):
            buf = np.zeros_like(x.data)
            buf[idx] += g
            x._accum(buf)

        return make_op(data, (x,), bwd)

    # ----- reductions -------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        x = self
        data = x.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            x._accum(np.broadcast_to(gg, x.shape).copy())

        return make_op(data, (x,), bwd)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        x = self
        data = x.data.mean(axis=axis, keepdims=keepdims)
        count = x.size // max(data.size, 1)

        def bwd(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            x._accum(np.broadcast_to(gg, x.shape) / count)

        return make_op(data, (x,), bwd)


def make_op(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Wrap an op result; record the tape edge when gradients are live."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# ----- elementwise nonlinearities --------------------------------------------


def exp(x: Tensor) -> Tensor:
    data = np.exp(x.data)

    def bwd(g):
        x._accum(g * data)

    return make_op(data, (x,), bwd)


def log(x: Tensor) -> Tensor:
    data = np.log(x.data)

    def bwd(g):
        x._accum(g / x.data)

    return make_op(data, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)

    def bwd(g):
        x._accum(g * (1.0 - data * data))

    return make_op(data, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)

    def bwd(g):
        x._accum(g * (x.data > 0))

    return make_op(data, (x,), bwd)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x: Tensor) -> Tensor:
    """Gaussian-error linear unit, tanh approximation."""
    z = x.data
    u = _GELU_C * (z + 0.044715 * (z * z * z))
    t = np.tanh(u)
    data = 0.5 * z * (1.0 + t)

    def bwd(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * z * z)
        x._accum(g * (0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * du))

    return make_op(data, (x,), bwd)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                t._accum(p)

    return make_op(data, tuple(tensors), bwd)


# ----- fused neural-net primitives --------------------------------------------


def softmax_rows(x: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis, stabilized by row-max subtraction.

    ``mask`` is an optional boolean array (broadcastable to ``x``); masked-out
    entries are exactly zero in the output. A fully masked row is an error.
    """
    z = x.data
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not m.any(axis=-1).all():
            raise ValueError("softmax_rows: fully masked row")
        z = np.where(m, z, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    e = np.exp(z - zmax)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = np.sum(g * y, axis=-1, keepdims=True)
        x._accum(y * (g - dot))

    return make_op(y, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, shift_param: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean / unit-variance normalization over the last axis, then affine."""
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    dim = x.shape[-1]
    if gain.shape != (dim,) or shift_param.shape != (dim,):
        raise ShapeError(
            f"layer_norm: gain/shift shape {gain.shape}/{shift_param.shape} does not match dim {dim}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + shift_param.data

    def bwd(g):
        if gain.requires_grad:
            gain._accum((g * xhat).reshape(-1, dim).sum(axis=0))
        if shift_param.requires_grad:
            shift_param._accum(g.reshape(-1, dim).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accum(inv * (dxhat - m1 - xhat * m2))

    return make_op(data, (x, gain, shift_param), bwd)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over positions of -log softmax(logits)[target].

    ``logits`` is [positions, vocab]; ``targets`` an integer sequence of
    length ``positions``.
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [positions, vocab] logits, got {logits.shape}")
    t = np.asarray(targets, dtype=np.int64)
    n, vocab = logits.shape
    if t.shape != (n,):
        raise ShapeError(f"cross_entropy: {n} positions but {t.shape} targets")
    if t.size and (t.min() < 0 or t.max() >= vocab):
        bad = t[(t < 0) | (t >= vocab)][0]
        raise IndexError(f"target id {bad} out of range for vocab {vocab}")
    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=-1, keepdims=True)
    rows = np.arange(n)
    losses = np.log(sez[:, 0]) - (z - zmax)[rows, t]
    data = losses.mean()
    probs = ez / sez

    def bwd(g):
        gl = probs * (g / n)
        gl[rows, t] -= g / n
        logits._accum(gl)

    return make_op(data, (logits,), bwd)


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` by integer ids (any id-array shape)."""
    idx = np.asarray(ids)
    if idx.dtype.kind not in "iu":
        raise TypeError(f"embedding ids must be integers, got {idx.dtype}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        bad = idx[(idx < 0) | (idx >= table.shape[0])].flat[0]
        raise IndexError(f"token id {bad} out of range for table of {table.shape[0]} rows")
    data = table.data[idx]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        table._accum(gt)

    return make_op(data, (table,), bwd)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout: scale kept entries by 1/(1-p) at train time, identity at eval."""
    if not train or p <= 0.0:
        return x
    if not 0.0 < p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("dropout in train mode needs an rng for reproducibility")
    rdt = np.float32 if x.data.dtype == np.float32 else np.float64
    m = (rng.random(x.shape, dtype=rdt) >= p).astype(x.data.dtype)
    m /= 1.0 - p
    data = x.data * m

    def bwd(g):
        x._accum(g * m)

    return make_op(data, (x,), bwd)


# ----- gradient tooling -------------------------------------------------------


def zero_grads(tensors) -> None:
    """Explicit gradient reset; call before each backward-driven step."""
    for t in tensors:
        t.grad = None


def global_grad_norm(tensors) -> float:
    total = 0.0
    for t in tensors:
        if t.grad is not None:
            total += float(np.sum(t.grad * t.grad, dtype=np.float64))
    return float(np.sqrt(total))


def finite_difference_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps the tensor to a scalar Tensor and must be deterministic. The
    error for element i is |analytic_i - numeric_i| / max(1, |analytic_i|);
    the max over all elements is returned. Reliable at float64 only.
    """
    if h <= 0:
        raise ValueError("finite_difference_check: h must be positive")
    if not x.data.flags["C_CONTIGUOUS"]:
        x.data = np.ascontiguousarray(x.data)
    x.requires_grad = True
    x.grad = None
    loss = f(x)
    if loss.size != 1:
        raise ValueError("finite_difference_check: f must return a scalar")
    loss.backward()
    analytic = (
        x.grad.reshape(-1).astype(np.float64)
        if x.grad is not None
        else np.zeros(x.size, dtype=np.float64)
    )
    flat = x.data.reshape(-1)
    numeric = np.zeros(flat.size, dtype=np.float64)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(x).data)
            flat[i] = orig - h
            fm = float(f(x).data)
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * h)
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(rel.max()) if rel.size else 0.0
