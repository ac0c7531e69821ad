"""Dense NCHW tensor kernels and their exact backward counterparts.

Tensors are plain numpy arrays in row-major (C) order: activations are
``(N, C, H, W)`` float32, conv weights ``(O, I, Kh, Kw)``. Everything is
generic over float width — training runs in float32, gradient checking
builds the same graph in float64.

The convolution ships in two forms: an optimized per-sample im2col + GEMM
path (:func:`conv2d_forward` / :func:`conv2d_backward`) and a deliberately
naive nested-loop reference (:func:`conv2d_forward_direct` /
:func:`conv2d_backward_direct`) kept as an independent oracle. The two
must never be merged.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    InternalConsistencyError,
    NumericFaultError,
    PreconditionError,
    ShapeError,
)


def element_count(shape) -> int:
    """Element count of a shape, validating every dim is a positive int."""
    n = 1
    for d in shape:
        if int(d) != d or d < 1:
            raise ShapeError(f"invalid dimension {d!r} in shape {tuple(shape)}")
        n *= int(d)
        if n > 2**62:
            raise ShapeError(f"shape {tuple(shape)} overflows the index type")
    return n


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    """Spatial output size: (size + 2*padding - kernel) // stride + 1."""
    if size + 2 * padding < kernel:
        raise ShapeError(
            f"spatial size {size} with padding {padding} is smaller than kernel {kernel}"
        )
    return (size + 2 * padding - kernel) // stride + 1


def check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericFaultError(f"non-finite values in {what}")


def _check_conv_args(x, weight, bias, stride, padding):
    if x.ndim != 4:
        raise ShapeError(f"conv input must be (N,C,H,W), got shape {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv weight must be (O,I,Kh,Kw), got shape {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"input channels {x.shape[1]} do not match weight channels {weight.shape[1]}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} does not match {weight.shape[0]} filters")
    if stride < 1 or padding < 0:
        raise PreconditionError(f"invalid stride={stride} / padding={padding}")


def _fill_cols(cols, xp_i, kh, kw, stride, out_h, out_w):
    # cols: (C, Kh, Kw, out_h, out_w) view filled from one padded sample.
    for ky in range(kh):
        for kx in range(kw):
            cols[:, ky, kx] = xp_i[
                :, ky : ky + stride * out_h : stride, kx : kx + stride * out_w : stride
            ]


def conv2d_forward(x, weight, bias, stride: int = 1, padding: int = 1) -> np.ndarray:
    """2-D cross-correlation with zero padding (im2col + GEMM per sample).

    out[n,o,y,x] = bias[o] + sum_{i,ky,kx} x[n,i,y*s+ky-p, x*s+kx-p] * weight[o,i,ky,kx]
    """
    _check_conv_args(x, weight, bias, stride, padding)
    n, ci, h, w = x.shape
    o, _, kh, kw = weight.shape
    out_h = conv_output_size(h, kh, stride, padding)
    out_w = conv_output_size(w, kw, stride, padding)

    xp = _pad_spatial(x, padding)
    wmat = np.ascontiguousarray(weight.reshape(o, ci * kh * kw))
    out = np.empty((n, o, out_h, out_w), dtype=x.dtype)
    cols = np.empty((ci, kh, kw, out_h, out_w), dtype=x.dtype)
    for i in range(n):
        _fill_cols(cols, xp[i], kh, kw, stride, out_h, out_w)
        out[i] = (wmat @ cols.reshape(ci * kh * kw, out_h * out_w)).reshape(o, out_h, out_w)
    if bias is not None:
        out += bias.reshape(1, o, 1, 1)
    check_finite(out, "conv2d_forward output")
    return out


def conv2d_backward(x, weight, grad_output, stride: int = 1, padding: int = 1):
    """Gradients of sum(grad_output * conv2d_forward(x, weight, bias)).

    Returns (grad_input, grad_weight, grad_bias); grad_bias[o] is the plain
    sum of grad_output over batch and spatial positions.
    """
    _check_conv_args(x, weight, None, stride, padding)
    n, ci, h, w = x.shape
    o, _, kh, kw = weight.shape
    out_h = conv_output_size(h, kh, stride, padding)
    out_w = conv_output_size(w, kw, stride, padding)
    if grad_output.shape != (n, o, out_h, out_w):
        raise ShapeError(
            f"grad_output shape {grad_output.shape} does not match forward output "
            f"{(n, o, out_h, out_w)}"
        )

    xp = _pad_spatial(x, padding)
    wmat = np.ascontiguousarray(weight.reshape(o, ci * kh * kw))
    grad_xp = np.zeros_like(xp)
    grad_wmat = np.zeros_like(wmat)
    cols = np.empty((ci, kh, kw, out_h, out_w), dtype=x.dtype)
    for i in range(n):
        g2 = grad_output[i].reshape(o, out_h * out_w)
        _fill_cols(cols, xp[i], kh, kw, stride, out_h, out_w)
        grad_wmat += g2 @ cols.reshape(ci * kh * kw, out_h * out_w).T
        gcols = (wmat.T @ g2).reshape(ci, kh, kw, out_h, out_w)
        for ky in range(kh):
            for kx in range(kw):
                grad_xp[i][
                    :, ky : ky + stride * out_h : stride, kx : kx + stride * out_w : stride
                ] += gcols[:, ky, kx]
    grad_bias = grad_output.sum(axis=(0, 2, 3))
    grad_input = grad_xp[:, :, padding : padding + h, padding : padding + w] if padding else grad_xp
    # Strip the padded border via a copy so callers own contiguous memory.
    return np.ascontiguousarray(grad_input), grad_wmat.reshape(weight.shape), grad_bias


def _pad_spatial(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_forward_direct(x, weight, bias, stride: int = 1, padding: int = 1) -> np.ndarray:
    """Reference convolution: seven nested loops straight from the definition.

    Independent of the im2col path by construction; only for small oracle
    instances.
    """
    _check_conv_args(x, weight, bias, stride, padding)
    n, ci, h, w = x.shape
    o, _, kh, kw = weight.shape
    out_h = conv_output_size(h, kh, stride, padding)
    out_w = conv_output_size(w, kw, stride, padding)
    out = np.zeros((n, o, out_h, out_w), dtype=x.dtype)
    for ni in range(n):
        for oi in range(o):
            for y in range(out_h):
                for xo in range(out_w):
                    acc = 0.0 if bias is None else float(bias[oi])
                    for i in range(ci):
                        for ky in range(kh):
                            for kx in range(kw):
                                iy = y * stride + ky - padding
                                ix = xo * stride + kx - padding
                                if 0 <= iy < h and 0 <= ix < w:
                                    acc += float(x[ni, i, iy, ix]) * float(weight[oi, i, ky, kx])
                    out[ni, oi, y, xo] = acc
    return out


def conv2d_backward_direct(x, weight, grad_output, stride: int = 1, padding: int = 1):
    """Reference gradients accumulated element by element from the definition."""
    _check_conv_args(x, weight, None, stride, padding)
    n, ci, h, w = x.shape
    o, _, kh, kw = weight.shape
    out_h = conv_output_size(h, kh, stride, padding)
    out_w = conv_output_size(w, kw, stride, padding)
    grad_input = np.zeros_like(x)
    grad_weight = np.zeros_like(weight)
    grad_bias = np.zeros(o, dtype=x.dtype)
    for ni in range(n):
        for oi in range(o):
            for y in range(out_h):
                for xo in range(out_w):
                    g = float(grad_output[ni, oi, y, xo])
                    grad_bias[oi] += g
                    for i in range(ci):
                        for ky in range(kh):
                            for kx in range(kw):
                                iy = y * stride + ky - padding
                                ix = xo * stride + kx - padding
                                if 0 <= iy < h and 0 <= ix < w:
                                    grad_input[ni, i, iy, ix] += g * float(weight[oi, i, ky, kx])
                                    grad_weight[oi, i, ky, kx] += g * float(x[ni, i, iy, ix])
    return grad_input, grad_weight, grad_bias


def maxpool2d_forward(x):
    """2x2 max pooling with stride 2.

    Returns ``(out, indices)`` where ``indices[n,c,wy,wx]`` is the flat
    row-major position (into the H*W plane) of the window maximum. Ties
    resolve to the lowest flat position.
    """
    if x.ndim != 4:
        raise ShapeError(f"pool input must be (N,C,H,W), got shape {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise PreconditionError(f"pooling requires even spatial dims, got {h}x{w}")
    oh, ow = h // 2, w // 2
    # Window-major layout: last axis holds the 2x2 window in row-major order,
    # so argmax's first-occurrence rule is exactly the tie-break contract.
    win = x.reshape(n, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, 4)
    local = win.argmax(axis=-1)
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    wy = np.arange(oh).reshape(oh, 1)
    wx = np.arange(ow).reshape(1, ow)
    indices = (2 * wy + local // 2) * w + (2 * wx + local % 2)
    return out, indices


def maxpool2d_backward(indices, grad_output, input_shape):
    """Route gradients to the recorded argmax positions; zeros elsewhere."""
    n, c, h, w = input_shape
    oh, ow = h // 2, w // 2
    if grad_output.shape != (n, c, oh, ow) or indices.shape != (n, c, oh, ow):
        raise ShapeError(
            f"grad_output {grad_output.shape} / indices {indices.shape} do not match "
            f"pooled shape {(n, c, oh, ow)}"
        )
    wy = np.arange(oh).reshape(oh, 1)
    wx = np.arange(ow).reshape(1, ow)
    dy = indices // w - 2 * wy
    dx = indices % w - 2 * wx
    if ((dy < 0) | (dy > 1) | (dx < 0) | (dx > 1)).any():
        raise InternalConsistencyError("pool indices fall outside their windows")
    local = 2 * dy + dx
    grad_win = np.zeros((n, c, oh, ow, 4), dtype=grad_output.dtype)
    np.put_along_axis(grad_win, local[..., None], grad_output[..., None], axis=-1)
    return (
        grad_win.reshape(n, c, oh, ow, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h, w)
        .copy()
    )


def global_avg_pool_forward(x) -> np.ndarray:
    """Spatial mean per channel: (N,C,H,W) -> (N,C)."""
    if x.ndim != 4:
        raise ShapeError(f"GAP input must be (N,C,H,W), got shape {x.shape}")
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(grad_output, spatial) -> np.ndarray:
    """Spread grad_output/(H*W) uniformly over the pooled positions."""
    h, w = spatial
    g = grad_output / np.asarray(h * w, dtype=grad_output.dtype)
    return np.ascontiguousarray(
        np.broadcast_to(g[:, :, None, None], grad_output.shape + (h, w))
    )


def matmul(a, b) -> np.ndarray:
    """Plain 2-D matrix product with an inner-dimension check."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def matmul_backward(a, b, grad_c):
    """Gradients of sum(grad_c * (a @ b)): (grad_c @ b.T, a.T @ grad_c)."""
    if grad_c.shape != (a.shape[0], b.shape[1]):
        raise ShapeError(f"grad shape {grad_c.shape} does not match {(a.shape[0], b.shape[1])}")
    return grad_c @ b.T, a.T @ grad_c
