"""Differentiable operators over :class:`Tensor`.

Volumes use the layout ``(K, C, N, W, H)``: batch, channels, time, width,
height. Convolutions are cross-correlations (no kernel flip).
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor, as_tensor

Triple = tuple[int, int, int]


def _triple(v) -> Triple:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * 3
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ValueError(f"expected 3 values, got {v!r}")
    return t  # type: ignore[return-value]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(a.data + b.data, "add", (a, b), bw)


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor.from_op(a.data - b.data, "sub", (a, b), bw)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        a = as_tensor(a)
        return Tensor.from_op(a.data * a.data.dtype.type(c), "scale", (a,), lambda g: (g * c,))
    a = as_tensor(a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor.from_op(a.data * b.data, "mul", (a, b), bw)


def square(x: Tensor) -> Tensor:
    return Tensor.from_op(x.data * x.data, "square", (x,), lambda g: (2.0 * g * x.data,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(np.where(mask, x.data, 0).astype(x.dtype), "relu", (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, clipped so the result stays strictly inside (0, 1)."""
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    fi = np.finfo(d.dtype)
    out = np.clip(out, fi.tiny, 1.0 - fi.epsneg).astype(d.dtype)
    return Tensor.from_op(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def neg_log_eps(x: Tensor, eps: float) -> Tensor:
    """Elementwise ``-ln(x + eps)``."""
    shifted = x.data + x.dtype.type(eps)
    if np.any(shifted <= 0):
        raise ValueError("neg_log_eps: x + eps must be positive everywhere")
    return Tensor.from_op(-np.log(shifted), "neg_log_eps", (x,), lambda g: (-g / shifted,))


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    # float64 accumulation keeps the reduction order-independent enough for
    # bitwise reproducibility across batch shapes of the same size
    val = np.asarray(x.data.astype(np.float64).mean(), dtype=x.dtype)
    return Tensor.from_op(val, "mean_all", (x,), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


def sum_all(x: Tensor) -> Tensor:
    val = np.asarray(x.data.astype(np.float64).sum(), dtype=x.dtype)
    return Tensor.from_op(val, "sum_all", (x,), lambda g: (np.full(x.shape, g, dtype=x.dtype),))


def mean_over_time(x: Tensor) -> Tensor:
    """Average a (K, C, N, W, H) tensor over N, keeping the axis: (K, C, 1, W, H)."""
    if x.ndim != 5:
        raise ValueError(f"mean_over_time expects 5-D input, got {x.shape}")
    n = x.shape[2]
    out = x.data.mean(axis=2, keepdims=True, dtype=np.float64).astype(x.dtype)
    return Tensor.from_op(out, "mean_over_time", (x,), lambda g: (np.broadcast_to(g / n, x.shape).astype(x.dtype),))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != b.ndim or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return Tensor.from_op(out, "concat_channels", (a, b), lambda g: (g[:, :ca], g[:, ca:]))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Tensor.from_op(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(x.shape),))


# ---------------------------------------------------------------------------
# convolution kernels on raw arrays
#
# _correlate:     out[k,o,p] = sum_{c,q} w[o,c,q] * xpad[k,c,p*s+q]
# _correlate_adj: adjoint of _correlate w.r.t. its input
# _correlate_dw:  gradient of _correlate w.r.t. its weight


def _window(a: int, s: int, n: int) -> slice:
    return slice(a, a + s * (n - 1) + 1, s)


def _correlate(xpad: np.ndarray, w: np.ndarray, stride: Triple) -> np.ndarray:
    K, C, Tp, Wp, Hp = xpad.shape
    O, _, kt, kw, kh = w.shape
    st, sw, sh = stride
    n_t, n_w, n_h = (Tp - kt) // st + 1, (Wp - kw) // sw + 1, (Hp - kh) // sh + 1
    acc = np.zeros((O, K, n_t, n_w, n_h), dtype=np.result_type(xpad, w))
    for a in range(kt):
        for b in range(kw):
            for c in range(kh):
                patch = xpad[:, :, _window(a, st, n_t), _window(b, sw, n_w), _window(c, sh, n_h)]
                acc += np.tensordot(w[:, :, a, b, c], patch, axes=(1, 1))
    return np.ascontiguousarray(acc.transpose(1, 0, 2, 3, 4))


def _correlate_adj(g: np.ndarray, w: np.ndarray, stride: Triple, padded_shape: tuple) -> np.ndarray:
    K, O, n_t, n_w, n_h = g.shape
    _, C, kt, kw, kh = w.shape
    st, sw, sh = stride
    out = np.zeros((C, K) + tuple(padded_shape[2:]), dtype=np.result_type(g, w))
    for a in range(kt):
        for b in range(kw):
            for c in range(kh):
                out[:, :, _window(a, st, n_t), _window(b, sw, n_w), _window(c, sh, n_h)] += np.tensordot(
                    w[:, :, a, b, c], g, axes=(0, 1)
                )
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3, 4))


def _correlate_dw(xpad: np.ndarray, g: np.ndarray, stride: Triple, kernel: Triple) -> np.ndarray:
    K, O, n_t, n_w, n_h = g.shape
    C = xpad.shape[1]
    kt, kw, kh = kernel
    st, sw, sh = stride
    dw = np.zeros((O, C, kt, kw, kh), dtype=np.result_type(xpad, g))
    for a in range(kt):
        for b in range(kw):
            for c in range(kh):
                patch = xpad[:, :, _window(a, st, n_t), _window(b, sw, n_w), _window(c, sh, n_h)]
                dw[:, :, a, b, c] = np.tensordot(g, patch, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    return dw


def _pad(x: np.ndarray, pad: Triple) -> np.ndarray:
    if pad == (0, 0, 0):
        return x
    pt, pw, ph = pad
    return np.pad(x, ((0, 0), (0, 0), (pt, pt), (pw, pw), (ph, ph)))


def _crop(x: np.ndarray, pad: Triple, shape: tuple) -> np.ndarray:
    pt, pw, ph = pad
    return x[:, :, pt : pt + shape[0], pw : pw + shape[1], ph : ph + shape[2]]


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """3-D cross-correlation of ``x`` (K, Cin, N, W, H) with ``weight`` (Cout, Cin, kt, kw, kh)."""
    stride, padding = _triple(stride), _triple(padding)
    if x.ndim != 5 or weight.ndim != 5:
        raise ValueError(f"conv3d expects 5-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv3d: input has {x.shape[1]} channels but weight expects {weight.shape[1]}")
    if min(stride) < 1:
        raise ValueError("conv3d: stride must be >= 1")
    kernel = weight.shape[2:]
    for n, p, k in zip(x.shape[2:], padding, kernel):
        if n + 2 * p < k:
            raise ValueError(f"conv3d: kernel {kernel} does not fit input {x.shape[2:]} with padding {padding}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"conv3d: bias shape {bias.shape} != ({weight.shape[0]},)")
    xpad = _pad(x.data, padding)
    out = _correlate(xpad, weight.data, stride)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1, 1)
    out = out.astype(x.dtype, copy=False)

    def bw(g):
        gx = _crop(_correlate_adj(g, weight.data, stride, xpad.shape), padding, x.shape[2:])
        gw = _correlate_dw(xpad, g, stride, kernel).astype(weight.dtype, copy=False)
        gb = g.sum(axis=(0, 2, 3, 4)).astype(bias.dtype) if bias is not None else None
        return np.ascontiguousarray(gx), gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, "conv3d", inputs, bw, stride=stride, padding=padding)


def conv_transpose3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Transposed 3-D convolution; ``weight`` is (Cin, Cout, kt, kw, kh).

    With the same weight this is the adjoint of :func:`conv3d`. Output extent
    per axis is ``(n - 1) * stride - 2 * padding + k``.
    """
    stride, padding = _triple(stride), _triple(padding)
    if x.ndim != 5 or weight.ndim != 5:
        raise ValueError(f"conv_transpose3d expects 5-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ValueError(f"conv_transpose3d: input has {x.shape[1]} channels but weight expects {weight.shape[0]}")
    if min(stride) < 1:
        raise ValueError("conv_transpose3d: stride must be >= 1")
    kernel = weight.shape[2:]
    full = tuple((n - 1) * s + k for n, s, k in zip(x.shape[2:], stride, kernel))
    out_ext = tuple(f - 2 * p for f, p in zip(full, padding))
    if min(out_ext) < 1:
        raise ValueError(f"conv_transpose3d: padding {padding} leaves empty output")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ValueError(f"conv_transpose3d: bias shape {bias.shape} != ({weight.shape[1]},)")
    full_shape = (x.shape[0], weight.shape[1]) + full
    out = _crop(_correlate_adj(x.data, weight.data, stride, full_shape), padding, out_ext)
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1, 1)
    out = out.astype(x.dtype, copy=False)

    def bw(g):
        gpad = _pad(g, padding)
        gx = _correlate(gpad, weight.data, stride)
        gw = _correlate_dw(gpad, x.data, stride, kernel).astype(weight.dtype, copy=False)
        gb = g.sum(axis=(0, 2, 3, 4)).astype(bias.dtype) if bias is not None else None
        return gx.astype(x.dtype, copy=False), gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, "conv_transpose3d", inputs, bw, stride=stride, padding=padding)


# ---------------------------------------------------------------------------
# pooling


def maxpool3d(x: Tensor, kernel, stride=None) -> tuple[Tensor, np.ndarray]:
    """Max over windows; returns values and flat argmax indices into N*W*H.

    Ties resolve to the lowest flat index inside the window.
    """
    kernel = _triple(kernel)
    stride = kernel if stride is None else _triple(stride)
    if x.ndim != 5:
        raise ValueError(f"maxpool3d expects 5-D input, got {x.shape}")
    ext = x.shape[2:]
    if any(k > n for k, n in zip(kernel, ext)):
        raise ValueError(f"maxpool3d: kernel {kernel} larger than input extent {ext}")
    out_ext = tuple((n - k) // s + 1 for n, k, s in zip(ext, kernel, stride))
    K, C = x.shape[:2]
    # candidates ordered (a, b, c) row-major, so argmax's first-hit rule gives
    # the lowest flat index on ties
    cands = []
    flat = []
    grid = np.indices(out_ext)
    for a in range(kernel[0]):
        for b in range(kernel[1]):
            for c in range(kernel[2]):
                cands.append(x.data[:, :, _window(a, stride[0], out_ext[0]), _window(b, stride[1], out_ext[1]), _window(c, stride[2], out_ext[2])])
                t = grid[0] * stride[0] + a
                w = grid[1] * stride[1] + b
                h = grid[2] * stride[2] + c
                flat.append((t * ext[1] + w) * ext[2] + h)
    stack = np.stack(cands, axis=0)
    which = np.argmax(stack, axis=0)
    values = np.take_along_axis(stack, which[None], axis=0)[0]
    flat_arr = np.stack(flat, axis=0)  # (kvol, *out_ext)
    idx = np.take_along_axis(np.broadcast_to(flat_arr[:, None, None], (len(flat), K, C) + out_ext), which[None], axis=0)[0]
    idx = idx.astype(np.int64)

    def bw(g):
        overlap = any(k > s for k, s in zip(kernel, stride))
        return (_scatter(g, idx, x.shape, accumulate=overlap),)

    out = Tensor.from_op(np.ascontiguousarray(values), "maxpool3d", (x,), bw, indices=idx, kernel=kernel, stride=stride)
    return out, idx


def _scatter(values: np.ndarray, idx: np.ndarray, shape: tuple, accumulate: bool = False) -> np.ndarray:
    K, C = shape[:2]
    out = np.zeros((K * C, int(np.prod(shape[2:]))), dtype=values.dtype)
    v = values.reshape(K * C, -1)
    i = idx.reshape(K * C, -1)
    rows = np.arange(K * C)[:, None]
    if accumulate:
        np.add.at(out, (rows, i), v)
    else:
        out[rows, i] = v
    return out.reshape(shape)


def maxunpool3d(values: Tensor, indices: np.ndarray, output_shape: Sequence[int]) -> Tensor:
    """Scatter ``values`` to the flat positions in ``indices``; zeros elsewhere."""
    output_shape = tuple(int(n) for n in output_shape)
    if len(output_shape) == 3:
        output_shape = values.shape[:2] + output_shape
    if values.shape != indices.shape:
        raise ValueError(f"maxunpool3d: values {values.shape} and indices {indices.shape} differ")
    if output_shape[:2] != values.shape[:2]:
        raise ValueError(f"maxunpool3d: output shape {output_shape} incompatible with {values.shape}")
    vol = int(np.prod(output_shape[2:]))
    if indices.size and (indices.min() < 0 or indices.max() >= vol):
        raise IndexError(f"maxunpool3d: index out of range for output volume {output_shape[2:]}")
    out = _scatter(values.data, indices, output_shape)
    K, C = values.shape[:2]

    def bw(g):
        flat = g.reshape(K, C, -1)
        return (np.take_along_axis(flat, indices.reshape(K, C, -1), axis=2).reshape(values.shape),)

    return Tensor.from_op(out, "maxunpool3d", (values,), bw, indices=indices)
