"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tape`` records every primitive applied while it is active; ``backward``
replays the tape once in reverse and accumulates vector-Jacobian products
into the gradients of all reachable tensors that ask for them.  Outside a
tape context every primitive is a plain numpy computation, which is the
fast path used for inference.

Everything is 64-bit.  There is no broadcasting inside the elementwise
primitives: callers broadcast explicitly (``broadcast_to``) so that every
recorded op has an unambiguous adjoint.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operands do not conform to a primitive's contract."""


class TapeError(RuntimeError):
    """Raised for misuse of the recording/backward machinery."""


class GradientError(RuntimeError):
    """Raised when an optimizer step finds missing gradients."""


_state = threading.local()


def _active_tape() -> Optional["Tape"]:
    return getattr(_state, "tape", None)


class Tensor:
    """A dense float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "name", "tape")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.tape: Optional[Tape] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        """A constant view of this value: no tape linkage, no gradient."""
        return Tensor(self.data)

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Small amount of operator sugar; the heavy lifting stays in the
    # module-level primitives so the tape sees uniform nodes.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __mul__(self, other):
        return multiply(self, other)


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Append-only record of primitive applications, replayed by backward()."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise TapeError("nested tapes are not supported")
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = None
        return False


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, out: Tensor, inputs: Sequence[Tensor],
            backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Attach a tape node when recording is active and gradients can flow."""
    tape = _active_tape()
    if tape is None:
        return out
    tracked = False
    for t in inputs:
        if t.tape is not None and t.tape is not tape:
            raise TapeError(f"{op}: input was produced on a different tape")
        if t.requires_grad or t.tape is tape:
            tracked = True
    if tracked:
        out.tape = tape
        tape.nodes.append(_Node(out, tuple(inputs), backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Populate gradients of every tracked tensor reachable from ``loss``.

    Values feeding multiple consumers receive the sum of all branch
    gradients.  The tape is replayed exactly once, in reverse.
    """
    tape = loss.tape
    if tape is None:
        raise TapeError("backward: loss was not produced on a live tape")
    if loss.data.size != 1:
        raise TapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")

    # id() keyed accumulation; keep the tensor alive alongside its gradient.
    pending: dict[int, list] = {id(loss): [loss, np.ones_like(loss.data)]}
    for node in reversed(tape.nodes):
        entry = pending.pop(id(node.out), None)
        if entry is None:
            continue
        grads = node.backward_fn(entry[1])
        for inp, g in zip(node.inputs, grads):
            if g is None:
                continue
            if inp.tape is tape:
                slot = pending.get(id(inp))
                if slot is None:
                    pending[id(inp)] = [inp, g.copy()]
                else:
                    slot[1] += g
            elif inp.requires_grad:
                if inp.grad is None:
                    inp.grad = g.copy()
                else:
                    inp.grad += g


# ---------------------------------------------------------------------------
# elementwise primitives


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("add", a, b)
    out = Tensor(a.data + b.data)
    return _record("add", out, (a, b), lambda g: (g, g))


def subtract(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("subtract", a, b)
    out = Tensor(a.data - b.data)
    return _record("subtract", out, (a, b), lambda g: (g, -g))


def multiply(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("multiply", a, b)
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data
    return _record("multiply", out, (a, b), lambda g: (g * bd, g * ad))


def divide(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("divide", a, b)
    out = Tensor(a.data / b.data)
    ad, bd, od = a.data, b.data, out.data
    return _record("divide", out, (a, b), lambda g: (g / bd, -g * od / bd))


def scale(a, alpha: float) -> Tensor:
    a = _as_tensor(a)
    alpha = float(alpha)
    out = Tensor(a.data * alpha)
    return _record("scale", out, (a,), lambda g: (g * alpha,))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.exp(a.data))
    od = out.data
    return _record("exp", out, (a,), lambda g: (g * od,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0.0
    out = Tensor(np.where(mask, a.data, 0.0))
    return _record("relu", out, (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0.0
    out = Tensor(np.where(mask, a.data, slope * a.data))
    return _record("leaky_relu", out, (a,), lambda g: (np.where(mask, g, slope * g),))


# ---------------------------------------------------------------------------
# shape primitives


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot view {a.data.shape} as {shape}")
    old_shape = a.data.shape
    out = Tensor(a.data.reshape(shape))
    return _record("reshape", out, (a,), lambda g: (g.reshape(old_shape),))


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(int(i) for i in np.argsort(axes))
    out = Tensor(a.data.transpose(axes))
    return _record("transpose", out, (a,), lambda g: (g.transpose(inv),))


def broadcast_to(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise ShapeError(f"broadcast_to: {a.data.shape} -> {shape}: {exc}") from None
    src_shape = a.data.shape
    out = Tensor(np.ascontiguousarray(data))

    def bw(g):
        # Sum out prepended axes, then axes that were expanded from 1.
        extra = g.ndim - len(src_shape)
        if extra:
            g = g.sum(axis=tuple(range(extra)))
        keep = tuple(i for i, s in enumerate(src_shape) if s == 1 and g.shape[i] != 1)
        if keep:
            g = g.sum(axis=keep, keepdims=True)
        return (g,)

    return _record("broadcast_to", out, (a,), bw)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(p) for p in parts]
    if not tensors:
        raise ShapeError("concat: no inputs")
    base = list(tensors[0].data.shape)
    axis = axis % len(base)
    for t in tensors[1:]:
        s = list(t.data.shape)
        s[axis] = base[axis]
        if s != base:
            raise ShapeError(f"concat: shapes {tensors[0].data.shape} and {t.data.shape} "
                             f"differ off axis {axis}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
                     for i in range(len(sizes)))

    return _record("concat", out, tensors, bw)


# ---------------------------------------------------------------------------
# reductions and loss


def _norm_axis(op: str, a: Tensor, axis: Optional[int]) -> Optional[int]:
    if axis is None:
        return None
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for shape {a.data.shape}")
    return axis % a.data.ndim


def reduce_sum(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axis = _norm_axis("reduce_sum", a, axis)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    src_shape = a.data.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, src_shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src_shape).copy(),)

    return _record("reduce_sum", out, (a,), bw)


def reduce_mean(a, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axis = _norm_axis("reduce_mean", a, axis)
    n = a.data.size if axis is None else a.data.shape[axis]
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    src_shape = a.data.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g / n, src_shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, src_shape).copy(),)

    return _record("reduce_mean", out, (a,), bw)


def mse_loss(pred, target) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    _check_same_shape("mse_loss", pred, target)
    diff = pred.data - target.data
    n = diff.size
    out = Tensor(np.asarray((diff * diff).sum() / n))

    def bw(g):
        base = (2.0 / n) * diff * g
        return (base, -base)

    return _record("mse_loss", out, (pred, target), bw)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product; 2-D each, or stacked 3-D against 3-D/2-D."""
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.ndim > 3 or bd.ndim > 3:
        raise ShapeError(f"matmul: unsupported ranks {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ: {ad.shape} @ {bd.shape}")
    if ad.ndim == 3 and bd.ndim == 3 and ad.shape[0] != bd.shape[0]:
        raise ShapeError(f"matmul: batch dimensions differ: {ad.shape} @ {bd.shape}")
    out = Tensor(np.matmul(ad, bd))

    def bw(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        if ad.ndim == 2 and ga.ndim == 3:
            ga = ga.sum(axis=0)
        if bd.ndim == 2 and gb.ndim == 3:
            gb = gb.sum(axis=0)
        return (ga, gb)

    return _record("matmul", out, (a, b), bw)


def linear(x, weight, bias=None) -> Tensor:
    """y = x @ weight.T + bias with weight stored [out, in]; fused node."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    xd, wd = x.data, weight.data
    if wd.ndim != 2 or xd.shape[-1] != wd.shape[1]:
        raise ShapeError(f"linear: input width {xd.shape} incompatible with weight {wd.shape}")
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, wd.shape[1])
    y = x2 @ wd.T
    inputs = [x, weight]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.data.shape != (wd.shape[0],):
            raise ShapeError(f"linear: bias shape {bias.data.shape} != ({wd.shape[0]},)")
        y = y + bias.data
        inputs.append(bias)
    out = Tensor(y.reshape(lead + (wd.shape[0],)))

    def bw(g):
        g2 = g.reshape(-1, wd.shape[0])
        gx = (g2 @ wd).reshape(xd.shape)
        gw = g2.T @ x2
        if bias is None:
            return (gx, gw)
        return (gx, gw, g2.sum(axis=0))

    return _record("linear", out, tuple(inputs), bw)


def softmax_axis(a, axis: int = -1) -> Tensor:
    """Numerically-stable softmax along ``axis`` (max is subtracted first)."""
    a = _as_tensor(a)
    axis = _norm_axis("softmax_axis", a, axis)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = Tensor(e / e.sum(axis=axis, keepdims=True))
    od = out.data

    def bw(g):
        dot = (g * od).sum(axis=axis, keepdims=True)
        return ((g - dot) * od,)

    return _record("softmax_axis", out, (a,), bw)


# ---------------------------------------------------------------------------
# gather / scatter over a fixed index set (graph neighborhoods)


def _fold_trailing(x: np.ndarray, keep: int) -> np.ndarray:
    return x.reshape(x.shape[:keep] + (-1,))


def gather(a, index: np.ndarray, num_sources: Optional[int] = None) -> Tensor:
    """Select rows along axis 1: out[:, e] = a[:, index[e]].

    ``index`` is a constant int array; the adjoint scatter-adds duplicate
    rows, implemented as a one-hot contraction so accumulation order is a
    fixed function of the shapes.
    """
    a = _as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if a.data.ndim < 2:
        raise ShapeError(f"gather: need at least 2 dims, got {a.data.shape}")
    n = a.data.shape[1]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise ShapeError(f"gather: index out of range for {n} rows")
    out = Tensor(np.ascontiguousarray(a.data[:, index]))
    src_shape = a.data.shape

    def bw(g):
        onehot = np.zeros((n, index.size))
        onehot[index, np.arange(index.size)] = 1.0
        g3 = _fold_trailing(g, 2)
        acc = np.einsum("ne,bed->bnd", onehot, g3)
        return (acc.reshape(src_shape),)

    return _record("gather", out, (a,), bw)


def segment_sum(a, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows along axis 1 into segments: out[:, s] = sum_{e: ids[e]=s} a[:, e]."""
    a = _as_tensor(a)
    ids = np.asarray(segment_ids, dtype=np.int64)
    if a.data.ndim < 2 or a.data.shape[1] != ids.size:
        raise ShapeError(f"segment_sum: {a.data.shape} vs {ids.size} segment ids")
    onehot = np.zeros((num_segments, ids.size))
    onehot[ids, np.arange(ids.size)] = 1.0
    a3 = _fold_trailing(a.data, 2)
    summed = np.einsum("se,bed->bsd", onehot, a3)
    out = Tensor(summed.reshape((a.data.shape[0], num_segments) + a.data.shape[2:]))

    def bw(g):
        return (np.ascontiguousarray(g[:, ids]),)

    return _record("segment_sum", out, (a,), bw)


# ---------------------------------------------------------------------------
# temporal (1-D) kernels


def conv1d(x, kernels, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [batch, in_ch, L] with kernels [out_ch, in_ch, K]."""
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    xd, kd = x.data, kernels.data
    if xd.ndim != 3 or kd.ndim != 3 or xd.shape[1] != kd.shape[1]:
        raise ShapeError(f"conv1d: input {xd.shape} vs kernels {kd.shape}")
    stride, padding = int(stride), int(padding)
    B, C, L = xd.shape
    O, _, K = kd.shape
    if L + 2 * padding < K:
        raise ShapeError(f"conv1d: input length {L} (+2*{padding} padding) shorter than "
                         f"kernel width {K}; need length >= {K - 2 * padding}")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    windows = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2)[:, :, ::stride]
    Lp = windows.shape[2]
    y = np.einsum("bclk,ock->bol", windows, kd)
    inputs = [x, kernels]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.data.shape != (O,):
            raise ShapeError(f"conv1d: bias shape {bias.data.shape} != ({O},)")
        y = y + bias.data[None, :, None]
        inputs.append(bias)
    out = Tensor(y)

    def bw(g):
        gk = np.einsum("bol,bclk->ock", g, windows)
        gxp = np.zeros_like(xp)
        for j in range(K):
            sl = slice(j, j + stride * (Lp - 1) + 1, stride)
            gxp[:, :, sl] += np.einsum("bol,oc->bcl", g, kd[:, :, j])
        gx = gxp[:, :, padding:padding + L] if padding else gxp
        if bias is None:
            return (gx, gk)
        return (gx, gk, g.sum(axis=(0, 2)))

    return _record("conv1d", out, tuple(inputs), bw)


def conv_transpose1d(x, kernels, bias=None, stride: int = 1) -> Tensor:
    """Adjoint of conv1d: [batch, in_ch, L] with kernels [in_ch, out_ch, K]
    to [batch, out_ch, (L-1)*stride + K]."""
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    xd, kd = x.data, kernels.data
    if xd.ndim != 3 or kd.ndim != 3 or xd.shape[1] != kd.shape[0]:
        raise ShapeError(f"conv_transpose1d: input {xd.shape} vs kernels {kd.shape}")
    stride = int(stride)
    B, C, L = xd.shape
    _, O, K = kd.shape
    Lout = (L - 1) * stride + K
    y = np.zeros((B, O, Lout))
    for j in range(K):
        y[:, :, j:j + stride * (L - 1) + 1:stride] += np.einsum("bcl,co->bol", xd, kd[:, :, j])
    inputs = [x, kernels]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.data.shape != (O,):
            raise ShapeError(f"conv_transpose1d: bias shape {bias.data.shape} != ({O},)")
        y = y + bias.data[None, :, None]
        inputs.append(bias)
    out = Tensor(y)

    def bw(g):
        gw = np.lib.stride_tricks.sliding_window_view(g, K, axis=2)[:, :, ::stride]
        gx = np.einsum("bolk,cok->bcl", gw, kd)
        gk = np.einsum("bcl,bolk->cok", xd, gw)
        if bias is None:
            return (gx, gk)
        return (gx, gk, g.sum(axis=(0, 2)))

    return _record("conv_transpose1d", out, tuple(inputs), bw)


def maxpool1d(x, window: int, stride: int) -> Tensor:
    """Per-window maximum; the adjoint routes gradient to the first maximal
    index of each window."""
    x = _as_tensor(x)
    xd = x.data
    if xd.ndim != 3:
        raise ShapeError(f"maxpool1d: need [batch, ch, L], got {xd.shape}")
    window, stride = int(window), int(stride)
    B, C, L = xd.shape
    if L < window:
        raise ShapeError(f"maxpool1d: length {L} shorter than window {window}")
    views = np.lib.stride_tricks.sliding_window_view(xd, window, axis=2)[:, :, ::stride]
    arg = views.argmax(axis=3)  # np.argmax returns the first maximum
    out = Tensor(np.take_along_axis(views, arg[..., None], axis=3)[..., 0])
    Lp = views.shape[2]

    def bw(g):
        gx = np.zeros_like(xd)
        pos = arg + stride * np.arange(Lp)[None, None, :]
        flat = gx.reshape(B * C, L)
        rows = np.repeat(np.arange(B * C), Lp)
        np.add.at(flat, (rows, pos.reshape(-1)), g.reshape(-1))
        return (gx,)

    return _record("maxpool1d", out, (x,), bw)


# ---------------------------------------------------------------------------
# generic dispatch (add/relu/... by name) and the optimizer

PRIMITIVES = {
    "add": add,
    "subtract": subtract,
    "multiply": multiply,
    "divide": divide,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "concat": concat,
    "reshape": reshape,
    "reduce_sum": reduce_sum,
    "reduce_mean": reduce_mean,
    "mse_loss": mse_loss,
    "matmul": matmul,
    "softmax_axis": softmax_axis,
}


def apply_primitive(kind: str, inputs: Sequence, **params) -> Tensor:
    """Apply a named primitive; the spelled-out functions above are the
    same operations with direct signatures."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    if kind == "concat":
        return fn(inputs, **params)
    return fn(*inputs, **params)


class Adam:
    """Adam with bias correction; clears gradients after each step."""

    def __init__(self, params: Sequence[Tensor], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        if not 0.0 < beta1 < 1.0 or not 0.0 < beta2 < 1.0:
            raise ValueError("betas must lie in (0, 1)")
        if learning_rate <= 0.0 or epsilon <= 0.0:
            raise ValueError("learning_rate and epsilon must be positive")
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.data) for p in self.params]
        self.second_moment = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise GradientError(f"adam_step: parameter {p.name or '<unnamed>'} has no gradient")
            if p.grad.shape != p.data.shape:
                raise GradientError(f"adam_step: gradient shape {p.grad.shape} != "
                                    f"parameter shape {p.data.shape} for {p.name}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for i, p in enumerate(self.params):
            g = p.grad
            m = self.first_moment[i]
            v = self.second_moment[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.epsilon)
            p.grad = None


def adam_step(state: Adam, params: Optional[Sequence[Tensor]] = None) -> None:
    """Functional form of ``Adam.step`` matching the substrate's op surface."""
    if params is not None and list(params) != state.params:
        raise GradientError("adam_step: state tracks a different parameter set")
    state.step()


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
