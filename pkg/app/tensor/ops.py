"""
Differentiable operations on `Tensor`.

Each op computes its forward value with numpy and registers a backward rule
through `make_node`. Composite layers (linear, conv1x1, global_avg_pool, l2
normalisation) are built from these primitives so they inherit the rules.
"""

from typing import Any, Optional, Sequence

import numpy as np

from app.tensor.tensor import Tensor, breakpoints_tracked, make_node, record_breakpoint_margin
from app.utils.error import InvalidInputError, NonFiniteError, ShapeError

ACTIVATIONS = ("sigmoid", "tanh", "relu", "gelu")
_GELU_K = float(np.sqrt(2.0 / np.pi))
_GELU_C = 0.044715


def as_tensor(value: Any) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast dimensions so `grad` matches `shape` again."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} do not broadcast")


# elementwise arithmetic


def add(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), backward, "add")


def sub(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), backward, "sub")


def mul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return make_node(a.data * b.data, (a, b), backward, "mul")


def div(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")

    def backward(g):
        return (
            unbroadcast(g / b.data, a.shape),
            unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return make_node(a.data / b.data, (a, b), backward, "div")


def neg(x: Tensor) -> Tensor:
    return make_node(-x.data, (x,), lambda g: (-g,), "neg")


def power(x: Tensor, exponent: float) -> Tensor:
    p = float(exponent)

    def backward(g):
        return (g * p * np.power(x.data, p - 1.0),)

    return make_node(np.power(x.data, p), (x,), backward, "power")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_node(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    return make_node(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    return make_node(y, (x,), lambda g: (g * 0.5 / y,), "sqrt")


def clamp(x: Tensor, low: Optional[float] = None, high: Optional[float] = None) -> Tensor:
    """Clip values; the gradient flows only where the input was inside the range."""
    lo = -np.inf if low is None else low
    hi = np.inf if high is None else high
    inside = (x.data >= lo) & (x.data <= hi)
    if breakpoints_tracked() and x.size:
        distance = np.minimum(np.abs(x.data - lo), np.abs(x.data - hi))
        record_breakpoint_margin(distance.min())
    return make_node(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clamp")


# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product [..,M,K] x [..,K,N] -> [..,M,N] with broadcast batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {list(a.shape)} by {list(b.shape)}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(
            f"matmul: batch dimensions of {list(a.shape)} and {list(b.shape)} do not broadcast"
        )

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return make_node(np.matmul(a.data, b.data), (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x [.., K] @ w [K, N] (+ b [N]); a 1-D x is treated as a single row."""
    if x.ndim == 1:
        out = matmul(reshape(x, (1, x.shape[0])), w)
        out = reshape(out, (w.shape[-1],))
    else:
        out = matmul(x, w)
    return out if b is None else add(out, b)


def conv1x1(x: Tensor, w: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Per-pixel channel map: x [C_in,H,W], w [C_out,C_in], bias [C_out] -> [C_out,H,W]."""
    if x.ndim != 3 or w.ndim != 2:
        raise ShapeError(f"conv1x1: expected x [C,H,W] and w [C_out,C_in], got {list(x.shape)} and {list(w.shape)}")
    c_in, h, wd = x.shape
    if w.shape[1] != c_in:
        raise ShapeError(f"conv1x1: weight expects {w.shape[1]} input channels, input has {c_in}")
    out = matmul(w, reshape(x, (c_in, h * wd)))
    if bias is not None:
        if bias.shape != (w.shape[0],):
            raise ShapeError(f"conv1x1: bias {list(bias.shape)} does not match {w.shape[0]} output channels")
        out = add(out, reshape(bias, (w.shape[0], 1)))
    return reshape(out, (w.shape[0], h, wd))


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    Stride-1 'same' convolution: x [C_in,H,W], w [C_out,C_in,k,k] with odd k.

    Lowered to a matrix product over im2col patches.
    """
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected x [C,H,W] and w [O,C,k,k], got {list(x.shape)} and {list(w.shape)}")
    c_out, c_in, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square and odd, got {k}x{k2}")
    if x.shape[0] != c_in:
        raise ShapeError(f"conv2d: weight expects {c_in} input channels, input has {x.shape[0]}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias {list(bias.shape)} does not match {c_out} output channels")
    _, h, wd = x.shape
    pad = k // 2
    padded = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(1, 2))
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(h * wd, c_in * k * k)
    w_mat = w.data.reshape(c_out, c_in * k * k)
    out = cols @ w_mat.T
    if bias is not None:
        out = out + bias.data
    value = out.T.reshape(c_out, h, wd)

    def backward(g):
        g_mat = g.reshape(c_out, h * wd).T
        gw = (g_mat.T @ cols).reshape(w.shape)
        gcols = (g_mat @ w_mat).reshape(h, wd, c_in, k, k)
        gpad = np.zeros_like(padded)
        for i in range(k):
            for j in range(k):
                gpad[:, i : i + h, j : j + wd] += gcols[:, :, :, i, j].transpose(2, 0, 1)
        gx = gpad[:, pad : pad + h, pad : pad + wd]
        gb = g.sum(axis=(1, 2)) if bias is not None else None
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    return make_node(value, parents, backward, "conv2d")


# reductions


def _normalize_axes(axis: Any, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    for a in axes:
        if not -ndim <= a < ndim:
            raise ShapeError(f"axis {a} out of range for {ndim}-d tensor")
    return tuple(sorted(a % ndim for a in axes))


def sum(x: Tensor, axis: Any = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_node(np.sum(x.data, axis=axes, keepdims=keepdims), (x,), backward, "sum")


def mean(x: Tensor, axis: Any = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise ShapeError(f"mean over empty axes of shape {list(x.shape)}")
    return div(sum(x, axis=axes, keepdims=keepdims), float(count))


def max(x: Tensor, axis: Any = None, keepdims: bool = False) -> Tensor:
    """Maximum along axes; ties share the gradient equally."""
    axes = _normalize_axes(axis, x.ndim)
    kept = np.max(x.data, axis=axes, keepdims=True)
    if breakpoints_tracked():
        _record_max_gap(x.data, axes)
    mask = (x.data == kept).astype(x.data.dtype)
    mask /= mask.sum(axis=axes, keepdims=True)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (mask * g,)

    value = kept if keepdims else np.squeeze(kept, axis=axes)
    return make_node(value, (x,), backward, "max")


def _record_max_gap(data: np.ndarray, axes: tuple[int, ...]) -> None:
    # gap between the largest and runner-up value of every reduced slice
    kept = data.ndim - len(axes)
    moved = np.moveaxis(data, axes, tuple(range(kept, data.ndim)))
    flat = moved.reshape(moved.shape[:kept] + (-1,))
    if flat.size and flat.shape[-1] >= 2:
        top = np.partition(flat, -2, axis=-1)
        record_breakpoint_margin((top[..., -1] - top[..., -2]).min())


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: [C,H,W] -> [C]."""
    if x.ndim != 3 or x.shape[1] < 1 or x.shape[2] < 1:
        raise ShapeError(f"global_avg_pool expects [C,H,W] with H,W >= 1, got {list(x.shape)}")
    return mean(x, axis=(1, 2))


# layout


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        value = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"cannot reshape {list(x.shape)} to {list(shape)}")
    return make_node(value, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose axes {axes} invalid for shape {list(x.shape)}")
    inverse = tuple(np.argsort(axes))
    return make_node(
        np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose"
    )


def getitem(x: Tensor, index: Any) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate in backward."""
    value = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return make_node(np.array(value), (x,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[d] != tensors[0].shape[d] for d in range(ndim) if d != axis
        ):
            raise ShapeError(
                f"concat: shapes {[list(t.shape) for t in tensors]} disagree off axis {axis}"
            )
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    value = np.concatenate([t.data for t in tensors], axis=axis)
    return make_node(value, tuple(tensors), backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack of an empty list")
    if any(t.shape != tensors[0].shape for t in tensors):
        raise ShapeError(f"stack: shapes differ {[list(t.shape) for t in tensors]}")

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    value = np.stack([t.data for t in tensors], axis=axis)
    return make_node(value, tuple(tensors), backward, "stack")


def roll(x: Tensor, shift: Sequence[int], axis: Sequence[int]) -> Tensor:
    """Cyclic shift; the gradient is the opposite shift."""
    shift, axis = tuple(shift), tuple(axis)
    back = tuple(-s for s in shift)
    return make_node(
        np.roll(x.data, shift, axis=axis), (x,), lambda g: (np.roll(g, back, axis=axis),), "roll"
    )


# normalisation and attention primitives


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax with max-subtraction; rows sum to one."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {list(x.shape)}")
    if np.isnan(x.data).any():
        raise NonFiniteError("softmax received NaN input")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return make_node(y, (x,), backward, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last dimension to zero mean and unit variance, then scale and shift."""
    dim = x.shape[-1]
    if gamma.shape != (dim,) or beta.shape != (dim,):
        raise ShapeError(
            f"layer_norm: gamma {list(gamma.shape)} / beta {list(beta.shape)} must be [{dim}]"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        dxhat = g * gamma.data
        gx = rstd * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, np.sum(g * xhat, axis=lead), np.sum(g, axis=lead)

    return make_node(xhat * gamma.data + beta.data, (x, gamma, beta), backward, "layer_norm")


def l2_normalize(x: Tensor, axis: int = -1, floor: float = 1e-8) -> Tensor:
    norm = sqrt(sum(x * x, axis=axis, keepdims=True))
    return div(x, clamp(norm, low=floor))


# activations


def sigmoid(x: Tensor, open_interval: bool = False) -> Tensor:
    """
    Logistic function in tanh form (exact 0.5 at zero, no overflow). With
    `open_interval` the result is kept strictly inside (0, 1) even where the
    active dtype would round it to 0 or 1.
    """
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    if open_interval:
        zero, one = y.dtype.type(0), y.dtype.type(1)
        y = np.clip(y, np.nextafter(zero, one), np.nextafter(one, zero))
    return make_node(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_node(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    if breakpoints_tracked() and x.size:
        record_breakpoint_margin(np.abs(x.data).min())
    return make_node(np.where(positive, x.data, 0.0), (x,), lambda g: (g * positive,), "relu")


def gelu(x: Tensor) -> Tensor:
    v = x.data
    t = np.tanh(_GELU_K * (v + _GELU_C * v**3))
    y = 0.5 * v * (1.0 + t)

    def backward(g):
        dt = (1.0 - t * t) * _GELU_K * (1.0 + 3.0 * _GELU_C * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * dt),)

    return make_node(y, (x,), backward, "gelu")


_ACTIVATION_FNS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "gelu": gelu}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        fn = _ACTIVATION_FNS[kind]
    except KeyError:
        raise InvalidInputError(f"Unknown activation kind '{kind}'. Expected one of {ACTIVATIONS}")
    return fn(x)
