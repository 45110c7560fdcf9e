"""Dense NCHW tensors with a small reverse-mode tape.

Only the handful of operations the curve estimator needs are provided:
3x3 same-size convolution, ReLU, Tanh, channel concatenation, block means,
the quadratic curve step and fused scalar reductions used by the losses.
Every op preserves the dtype of its inputs, so running the whole graph on
float64 arrays gives the high-precision build used for gradient checks.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

# cap on the im2col scratch buffer, in bytes
_COLS_BUDGET = 64 * 1024 * 1024

_state = threading.local()


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class EmptyOutputError(ValueError):
    """A reduction would produce an empty tensor."""


class ContractError(RuntimeError):
    """An operation was called outside its contract."""


def branch(mask: np.ndarray) -> np.ndarray:
    """Route a kink decision (ReLU gate, sign of an absolute value).

    Normally returns ``mask`` unchanged. Inside :func:`record_branches` the
    mask is also logged; inside :func:`replay_branches` logged masks are
    returned instead, in call order, which pins every kink to the side it
    took in the recorded pass. Gradient checks rely on this to difference
    a single smooth piece of a piecewise-smooth function.
    """
    mode = getattr(_state, "branch_mode", None)
    if mode is None:
        return mask
    kind, log = mode
    if kind == "record":
        log.append(mask)
        return mask
    recorded = next(log)
    if recorded.shape != mask.shape:
        raise ContractError("replayed branch pattern does not match the graph")
    return recorded


def abs_sign(u: np.ndarray) -> np.ndarray:
    """sign(u) in u's dtype, routed through :func:`branch`; ``|u| == abs_sign(u) * u``."""
    return branch(u > 0).astype(u.dtype) - branch(u < 0).astype(u.dtype)


@contextlib.contextmanager
def record_branches() -> Iterator[list[np.ndarray]]:
    prev = getattr(_state, "branch_mode", None)
    log: list[np.ndarray] = []
    _state.branch_mode = ("record", log)
    try:
        yield log
    finally:
        _state.branch_mode = prev


@contextlib.contextmanager
def replay_branches(log: list[np.ndarray]) -> Iterator[None]:
    prev = getattr(_state, "branch_mode", None)
    _state.branch_mode = ("replay", iter(log))
    try:
        yield
    finally:
        _state.branch_mode = prev


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording for the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A dense array plus the bookkeeping needed to differentiate through it.

    ``data`` is never modified after construction. ``grad`` is the only
    mutable slot and is filled by :func:`backward` on leaves created with
    ``requires_grad=True``.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(
    data: np.ndarray,
    op: str,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap ``data`` as an op output, recording a tape node when needed."""
    out = Tensor(data)
    out.op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def custom_op(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    op: str = "scalar-reduce",
) -> Tensor:
    """Record an op whose gradient is supplied in closed form by the caller.

    ``backward_fn`` receives the upstream gradient and returns one array
    (or None) per parent, in order.
    """
    return _result(np.asarray(data), op, parents, backward_fn)


# ---------------------------------------------------------------------------
# convolution


def _check4(x: Tensor, name: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (batch, channels, height, width), got {x.shape}")


def _im2col_rows(xp: np.ndarray, r0: int, r1: int, width: int) -> np.ndarray:
    """Columns for output rows [r0, r1) of one zero-padded image (C, H+2, W+2)."""
    c = xp.shape[0]
    rows = r1 - r0
    cols = np.empty((c, 3, 3, rows, width), dtype=xp.dtype)
    for dy in range(3):
        for dx in range(3):
            cols[:, dy, dx] = xp[:, r0 + dy : r1 + dy, dx : dx + width]
    return cols.reshape(c * 9, rows * width)


def _row_chunk(channels: int, height: int, width: int, itemsize: int) -> int:
    per_row = channels * 9 * width * itemsize
    return max(1, min(height, _COLS_BUDGET // max(per_row, 1)))


def _conv_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    b, c, h, w = x.shape
    o = kernel.shape[0]
    k2 = kernel.reshape(o, c * 9)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.empty((b, o, h, w), dtype=np.result_type(x, kernel))
    step = _row_chunk(c, h, w, x.itemsize)
    for n in range(b):
        flat = out[n].reshape(o, h * w)
        for r0 in range(0, h, step):
            r1 = min(h, r0 + step)
            np.matmul(k2, _im2col_rows(xp[n], r0, r1, w), out=flat[:, r0 * w : r1 * w])
    if bias is not None:
        out += bias[None, :, None, None]
    return out


def _conv_kernel_grad(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    b, c, h, w = x.shape
    o = g.shape[1]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    gk = np.zeros((o, c * 9), dtype=g.dtype)
    step = _row_chunk(c, h, w, x.itemsize)
    for n in range(b):
        g2 = g[n].reshape(o, h * w)
        for r0 in range(0, h, step):
            r1 = min(h, r0 + step)
            gk += g2[:, r0 * w : r1 * w] @ _im2col_rows(xp[n], r0, r1, w).T
    return gk.reshape(o, c, 3, 3)


def _conv_backward(x: np.ndarray, kernel: np.ndarray, g: np.ndarray):
    # input gradient is a same-size convolution with the flipped, transposed kernel
    flipped = np.ascontiguousarray(kernel.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    gx = _conv_forward(g, flipped, None)
    gk = _conv_kernel_grad(x, g)
    gb = g.sum(axis=(0, 2, 3))
    return gx, gk, gb


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1 (spatial size preserved)."""
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    _check4(x, "input")
    _check4(kernel, "kernel")
    o, c, kh, kw = kernel.shape
    if (kh, kw) != (3, 3):
        raise ShapeError(f"only 3x3 kernels are supported, got {kh}x{kw}")
    if x.shape[1] != c:
        raise ShapeError(f"input has {x.shape[1]} channels but kernel expects {c}")
    if bias.shape != (o,):
        raise ShapeError(f"bias shape {bias.shape} does not match {o} output channels")

    xd, kd = x.data, kernel.data
    out = _conv_forward(xd, kd, bias.data)

    def backward_fn(g):
        gx, gk, gb = _conv_backward(xd, kd, g)
        return gx if x.requires_grad else None, gk, gb

    return _result(out, "conv2d", (x, kernel, bias), backward_fn)


# ---------------------------------------------------------------------------
# elementwise


def _relu_backward(mask: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * mask


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    mask = branch(xd > 0)
    return _result(np.where(mask, xd, 0).astype(xd.dtype), "relu", (x,), lambda g: (_relu_backward(mask, g),))


def _tanh_backward(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * (1 - y * y)


def tanh_act(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, "tanh", (x,), lambda g: (_tanh_backward(y, g),))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack ``b``'s channels after ``a``'s."""
    a, b = as_tensor(a), as_tensor(b)
    _check4(a, "a")
    _check4(b, "b")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ShapeError(f"cannot concatenate {a.shape} and {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return _result(out, "concat", (a, b), lambda g: (g[:, :ca], g[:, ca:]))


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Channels ``[start, stop)`` of a 4-D tensor."""
    x = as_tensor(x)
    _check4(x, "input")
    shape = x.shape

    def backward_fn(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return _result(x.data[:, start:stop], "slice", (x,), backward_fn)


def _curve_step_backward(i: np.ndarray, a: np.ndarray, g: np.ndarray):
    return g * (1 + a * (1 - 2 * i)), g * (i * (1 - i))


def curve_step(i: Tensor, a: Tensor) -> Tensor:
    """One quadratic curve application ``i + a*i*(1-i)``, elementwise."""
    i, a = as_tensor(i), as_tensor(a)
    if i.shape != a.shape:
        raise ShapeError(f"image {i.shape} and parameter map {a.shape} differ")
    idata, adata = i.data, a.data
    out = idata + adata * idata * (1 - idata)
    return _result(out, "curve-step", (i, a), lambda g: _curve_step_backward(idata, adata, g))


# ---------------------------------------------------------------------------
# reductions


def region_mean(x: Tensor, region: int) -> Tensor:
    """Means over non-overlapping ``region`` x ``region`` blocks, per channel.

    Rows and columns that do not fill a whole block are dropped.
    """
    x = as_tensor(x)
    _check4(x, "input")
    if region < 1:
        raise ValueError(f"region must be >= 1, got {region}")
    b, c, h, w = x.shape
    oh, ow = h // region, w // region
    if oh == 0 or ow == 0:
        raise EmptyOutputError(f"region {region} does not fit in a {h}x{w} image")
    if region == 1:
        return _result(x.data.copy(), "region-mean", (x,), lambda g: (g,))
    cropped = x.data[:, :, : oh * region, : ow * region]
    out = cropped.reshape(b, c, oh, region, ow, region).mean(axis=(3, 5))
    scale = 1.0 / (region * region)

    def backward_fn(g):
        gx = np.zeros_like(x.data, dtype=g.dtype)
        spread = np.repeat(np.repeat(g * scale, region, axis=2), region, axis=3)
        gx[:, :, : oh * region, : ow * region] = spread
        return (gx,)

    return _result(out.astype(x.dtype, copy=False), "region-mean", (x,), backward_fn)


def weighted_sum(terms: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
    """Scalar ``sum(w_k * t_k)`` over scalar tensors."""
    if len(terms) != len(weights):
        raise ShapeError("terms and weights differ in length")
    dtype = np.result_type(*[t.dtype for t in terms])
    total = np.zeros((), dtype=dtype)
    for t, wt in zip(terms, weights):
        if t.data.size != 1:
            raise ShapeError(f"weighted_sum expects scalars, got shape {t.shape}")
        total = total + dtype.type(wt) * t.data.reshape(())
    ws = [dtype.type(wt) for wt in weights]
    return _result(
        total.astype(dtype),
        "scalar-reduce",
        tuple(terms),
        lambda g: [(g * wt).reshape(t.shape) for t, wt in zip(terms, ws)],
    )


def sum_all(x: Tensor) -> Tensor:
    return _result(
        np.asarray(x.data.sum(), dtype=x.dtype),
        "scalar-reduce",
        (x,),
        lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),),
    )


def weighted_total(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(x * weights)``; a convenient probe for gradient checks."""
    wd = np.asarray(weights, dtype=x.dtype)
    if wd.shape != x.shape:
        raise ShapeError(f"weights {wd.shape} do not match tensor {x.shape}")
    return _result(
        np.asarray((x.data * wd).sum(), dtype=x.dtype),
        "scalar-reduce",
        (x,),
        lambda g: (g * wd,),
    )


# ---------------------------------------------------------------------------
# reverse pass


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


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss)/d(leaf) into ``.grad`` of every trainable leaf.

    Gradients accumulate across calls until :func:`zero_grads` is used.
    Returns a mapping from each reached leaf to its (accumulated) gradient.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: list[Tensor] = []
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.array(g, dtype=node.dtype, copy=True)
            else:
                node.grad = node.grad + g
            leaves.append(node)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return {leaf: leaf.grad for leaf in leaves}


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
