"""Dense tensors with a reverse-mode gradient tape.

Every operation returns a fresh :class:`Tensor`. When at least one input
requires a gradient the result records its parents and a backward closure;
:func:`backward` walks that graph in reverse topological order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeError(ValueError):
    """Raised when operand shapes or geometries are incompatible."""


class Tensor:
    """An n-dimensional float array that can take part in the gradient tape."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32 if dtype is None else dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{grad})"

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, other)
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, -other)
        return sub(self, other)

    def __rsub__(self, other):
        return shift(scale(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.op = op
    tracked = any(p.requires_grad for p in parents)
    out.requires_grad = tracked
    if tracked:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


# ---------------------------------------------------------------------------
# linear algebra and elementwise ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of ``a`` (m x k) and ``b`` (k x n)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"matmul: dtype mismatch {a.dtype} vs {b.dtype}")
    A, B = a.data, b.data

    def backward(g):
        return (g @ B.T if a.requires_grad else None,
                A.T @ g if b.requires_grad else None)

    return _make(A @ B, (a, b), backward, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    A, B = a.data, b.data

    def backward(g):
        return (g * B if a.requires_grad else None,
                g * A if b.requires_grad else None)

    return _make(A * B, (a, b), backward, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "div")
    A, B = a.data, b.data
    out = A / B

    def backward(g):
        ga = g / B if a.requires_grad else None
        gb = -g * out / B if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), backward, "div")


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = a.dtype.type(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def shift(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data + a.dtype.type(c), (a,), lambda g: (g,), "shift")


def square(a: Tensor) -> Tensor:
    a = as_tensor(a)
    A = a.data
    return _make(A * A, (a,), lambda g: (2 * g * A,), "square")


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0).astype(a.dtype, copy=False), (a,),
                 lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split on sign so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(a.dtype, copy=False)
    return _make(s, (a,), lambda g: (g * s * (1 - s),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1 - t * t),), "tanh")


def identity(a: Tensor) -> Tensor:
    return as_tensor(a)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "none": identity,
}

_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, *args):
    """Dispatch a named pointwise op; ``scale`` takes ``(tensor, factor)``."""
    if op in ACTIVATIONS:
        (x,) = args
        return ACTIVATIONS[op](x)
    if op in _BINARY:
        return _BINARY[op](*args)
    if op == "scale":
        return scale(*args)
    raise ValueError(f"unknown elementwise op {op!r}")


def bias_add(x: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    """Add a 1-D bias along ``axis`` (last axis for dense, 1 for NCHW)."""
    x, b = as_tensor(x), as_tensor(b)
    ax = axis % x.ndim
    if b.ndim != 1 or b.shape[0] != x.shape[ax]:
        raise ShapeError(f"bias_add: bias {b.shape} does not fit axis {ax} of {x.shape}")
    shape = [1] * x.ndim
    shape[ax] = b.shape[0]
    reduce_axes = tuple(i for i in range(x.ndim) if i != ax)

    def backward(g):
        return g, (g.sum(axis=reduce_axes) if b.requires_grad else None)

    return _make(x.data + b.data.reshape(shape), (x, b), backward, "bias_add")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {src} to {tuple(shape)}") from exc
    return _make(out, (a,), lambda g: (g.reshape(src),), "reshape")


def tsum(a: Tensor) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return _make(np.asarray(a.data.sum(), dtype=a.dtype), (a,),
                 lambda g: (np.broadcast_to(g, src).copy(),), "sum")


def mean(a: Tensor) -> Tensor:
    a = as_tensor(a)
    src, n = a.shape, a.size
    return _make(np.asarray(a.data.mean(), dtype=a.dtype), (a,),
                 lambda g: (np.full(src, g / n, dtype=a.dtype),), "mean")


def mul_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Multiply by a constant array of the same shape (e.g. a dropout mask)."""
    a = as_tensor(a)
    c = np.asarray(c, dtype=a.dtype)
    if c.shape != a.shape:
        raise ShapeError(f"mul_const: shape mismatch {a.shape} vs {c.shape}")
    return _make(a.data * c, (a,), lambda g: (g * c,), "mul_const")


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of ``logits`` (N x K) against integer labels."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-D, got {logits.shape}")
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: labels shape {labels.shape} != ({n},)")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"cross_entropy: labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    rows = np.arange(n)
    loss = np.asarray(-logp[rows, labels].mean(), dtype=logits.dtype)

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1
        return (p * (g / n),)

    return _make(loss, (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------------------
# convolution family
# ---------------------------------------------------------------------------

def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def deconv_output_size(size: int, kernel: int, stride: int, padding: int,
                       output_padding: int = 0) -> int:
    return (size - 1) * stride - 2 * padding + kernel + output_padding


def _conv_forward(x, w, stride, padding):
    sh, sw = stride
    ph, pw = padding
    kh, kw = w.shape[2:]
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), win


def _conv_grad_input(g, w, x_shape, stride, padding):
    n, c, h, wd = x_shape
    sh, sw = stride
    ph, pw = padding
    kh, kw = w.shape[2:]
    ho, wo = g.shape[2:]
    dx = np.zeros((n, c, h + 2 * ph, wd + 2 * pw), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(g, w[:, :, i, j], axes=([1], [0]))  # n,ho,wo,c
            dx[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += \
                contrib.transpose(0, 3, 1, 2)
    return dx[:, :, ph:ph + h, pw:pw + wd]


def _conv_grad_weight(g, win):
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))


def conv2d(x: Tensor, w: Tensor, stride=1, padding=0) -> Tensor:
    """Cross-correlation of NCHW input with OIHW weights and zero padding."""
    x, w = as_tensor(x), as_tensor(w)
    stride, padding = _pair(stride), _pair(padding)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: incompatible input {x.shape} and weight {w.shape}")
    ho = conv_output_size(x.shape[2], w.shape[2], stride[0], padding[0])
    wo = conv_output_size(x.shape[3], w.shape[3], stride[1], padding[1])
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {w.shape[2:]} does not fit input {x.shape[2:]} "
                         f"with padding {padding}")
    out, win = _conv_forward(x.data, w.data, stride, padding)
    W, xs = w.data, x.shape

    def backward(g):
        gx = _conv_grad_input(g, W, xs, stride, padding) if x.requires_grad else None
        gw = _conv_grad_weight(g, win) if w.requires_grad else None
        return gx, gw

    return _make(out, (x, w), backward, "conv2d")


def deconv2d(x: Tensor, w: Tensor, stride=1, padding=0, output_padding=0) -> Tensor:
    """Transposed convolution; ``w`` has shape (C_in, C_out, kh, kw).

    Forward is the input-gradient of :func:`conv2d`, so the output spatial size
    is ``(H - 1) * stride - 2 * padding + k + output_padding``.
    """
    x, w = as_tensor(x), as_tensor(w)
    stride, padding = _pair(stride), _pair(padding)
    op = _pair(output_padding)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"deconv2d: incompatible input {x.shape} and weight {w.shape}")
    if op[0] >= stride[0] or op[1] >= stride[1]:
        raise ShapeError(f"deconv2d: output_padding {op} must be smaller than stride {stride}")
    n = x.shape[0]
    ho = deconv_output_size(x.shape[2], w.shape[2], stride[0], padding[0], op[0])
    wo = deconv_output_size(x.shape[3], w.shape[3], stride[1], padding[1], op[1])
    if ho < 1 or wo < 1:
        raise ShapeError(f"deconv2d: geometry yields empty output for input {x.shape}")
    out_shape = (n, w.shape[1], ho, wo)
    out = _conv_grad_input(x.data, w.data, out_shape, stride, padding)
    out = np.ascontiguousarray(out)
    X, W = x.data, w.data

    def backward(g):
        gx = gw = None
        if x.requires_grad or w.requires_grad:
            gx, win = _conv_forward(g, W, stride, padding)
            if w.requires_grad:
                gw = _conv_grad_weight(X, win)
        return (gx if x.requires_grad else None), gw

    return _make(out, (x, w), backward, "deconv2d")


def maxpool2d(x: Tensor, kernel=2, stride=None) -> Tensor:
    """Max pooling; gradient goes to the first maximum in row-major order."""
    x = as_tensor(x)
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else (kh, kw))
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d: expected NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if h < kh or w < kw:
        raise ShapeError(f"maxpool2d: kernel {(kh, kw)} larger than input {(h, w)}")
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    ho, wo = win.shape[2:4]
    flat = win.reshape(n, c, ho, wo, kh * kw)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    xs = x.shape

    def backward(g):
        dx = np.zeros(xs, dtype=g.dtype)
        ni, ci, hi, wi = np.indices((n, c, ho, wo), sparse=True)
        rows = hi * sh + arg // kw
        cols = wi * sw + arg % kw
        if sh >= kh and sw >= kw:
            dx[ni, ci, rows, cols] = g
        else:
            np.add.at(dx, (ni, ci, rows, cols), g)
        return (dx,)

    return _make(np.ascontiguousarray(out), (x,), backward, "maxpool2d")


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, wrt: Mapping) -> dict:
    """Gradients of a scalar ``loss`` with respect to each tensor in ``wrt``.

    ``wrt`` maps parameter ids to leaf tensors; the result maps the same ids to
    arrays. Parameters not reachable from ``loss`` get exact zeros.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones(loss.shape, dtype=loss.dtype)
        for node in reversed(_topo_order(loss)):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            del grads[id(node)]
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    out = {}
    for key, t in wrt.items():
        g = grads.get(id(t))
        out[key] = np.zeros_like(t.data) if g is None else g.astype(t.dtype, copy=False)
    return out


@dataclass
class GradCheckResult:
    passed: bool
    max_rel_error: float
    worst: tuple | None
    probes: int

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"grad_check {status}: max rel error {self.max_rel_error:.3e} "
                f"over {self.probes} probes, worst coordinate {self.worst}")


def grad_check(f: Callable[[dict], Tensor], params: Mapping[str, np.ndarray],
               step: float = 1e-5, tolerance: float = 1e-4, probes: int | None = None,
               seed: int = 0, abs_floor: float = 1e-6) -> GradCheckResult:
    """Compare reverse-mode gradients of ``f`` with central differences.

    ``f`` receives a dict of tensors keyed like ``params`` and returns a scalar.
    Relative error per coordinate is ``|a - n| / max(|a|, |n|, abs_floor)``.
    With ``probes`` set, that many coordinates are sampled at random; otherwise
    every coordinate is checked.
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    leaves = {k: Tensor(v, requires_grad=True) for k, v in base.items()}
    analytic = backward(f(leaves), leaves)

    coords = [(k, idx) for k, v in base.items() for idx in np.ndindex(v.shape)]
    if probes is not None and probes < len(coords):
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=probes, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    def evaluate(key, idx, delta):
        shifted = dict(base)
        arr = base[key].copy()
        arr[idx] += delta
        shifted[key] = arr
        return float(f({k: Tensor(v) for k, v in shifted.items()}).data)

    worst, worst_err = None, 0.0
    for key, idx in coords:
        num = (evaluate(key, idx, step) - evaluate(key, idx, -step)) / (2 * step)
        ana = float(analytic[key][idx])
        err = abs(ana - num) / max(abs(ana), abs(num), abs_floor)
        if err > worst_err or worst is None:
            worst, worst_err = (key, idx), err
    return GradCheckResult(worst_err < tolerance, worst_err, worst, len(coords))
