"""Stateful layers: parameters, train/eval modes, forward/backward passes.

Each layer caches whatever its backward pass needs during forward, so the
usage contract is strictly forward-then-backward on a single owner thread.
Gradients accumulate into ``Param.grad``; call :meth:`zero_grads` (on the
model) between optimization steps.

All layers share one signature, ``forward(x, mode=Mode.TRAIN, rng=None)``,
even where mode/rng are irrelevant, so a heterogeneous stack can be driven
by a flat loop.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DegenerateStatisticsError,
    LabelingError,
    NumericFaultError,
    PreconditionError,
    ShapeError,
    StateError,
)
from .tensor_ops import check_finite


class Mode(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass
class Param:
    """A learnable tensor with its gradient and Adam moment buffers."""

    value: np.ndarray
    grad: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray

    @classmethod
    def zeros(cls, shape, dtype=np.float32) -> "Param":
        return cls(
            value=np.zeros(shape, dtype=dtype),
            grad=np.zeros(shape, dtype=dtype),
            adam_m=np.zeros(shape, dtype=dtype),
            adam_v=np.zeros(shape, dtype=dtype),
        )

    @property
    def shape(self):
        return self.value.shape


def he_std(fan_out: int) -> float:
    """Std of the He-initialized Gaussian: sqrt(2 / fan_out)."""
    if fan_out < 1:
        raise PreconditionError(f"fan_out must be positive, got {fan_out}")
    return math.sqrt(2.0 / fan_out)


def he_init(param: Param, fan_out: int, rng: np.random.Generator) -> None:
    """Fill with N(0, sqrt(2/fan_out)) draws; fan_out = Kh*Kw*O for conv weights."""
    std = he_std(fan_out)
    param.value[...] = (rng.standard_normal(param.shape) * std).astype(param.value.dtype)


LINEAR_INIT_STD = 0.01


def linear_init(param: Param, rng: np.random.Generator) -> None:
    """Small-Gaussian init for 2-D linear weights: N(0, std=0.01)."""
    if param.value.ndim != 2:
        raise PreconditionError(f"linear init expects a 2-D weight, got shape {param.shape}")
    param.value[...] = (rng.standard_normal(param.shape) * LINEAR_INIT_STD).astype(
        param.value.dtype
    )


class Conv2d:
    """3x3 convolution layer (kernel-general) wrapping the tensor kernels."""

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=1,
                 dtype=np.float32):
        self.stride = stride
        self.padding = padding
        self.weight = Param.zeros((out_channels, in_channels, kernel_size, kernel_size), dtype)
        self.bias = Param.zeros((out_channels,), dtype)
        self._x = None

    def initialize(self, rng):
        o, _, kh, kw = self.weight.shape
        he_init(self.weight, kh * kw * o, rng)
        self.bias.value[...] = 0.0

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def buffers(self):
        return []

    def forward(self, x, mode=Mode.TRAIN, rng=None):
        from .tensor_ops import conv2d_forward

        self._x = x
        return conv2d_forward(x, self.weight.value, self.bias.value, self.stride, self.padding)

    def backward(self, grad_out):
        from .tensor_ops import conv2d_backward

        if self._x is None:
            raise StateError("conv backward called before forward")
        gx, gw, gb = conv2d_backward(self._x, self.weight.value, grad_out,
                                     self.stride, self.padding)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx


class BatchNorm:
    """Batch normalization over channels (4-D input) or features (2-D input).

    Train mode normalizes with biased batch statistics and updates running
    buffers as r <- (1-momentum)*r + momentum*stat, with the unbiased
    variance written into running_var. Eval mode normalizes with the
    running buffers.
    """

    def __init__(self, num_features, eps=1e-5, momentum=0.1, dtype=np.float32):
        self.eps = eps
        self.momentum = momentum
        self.gamma = Param.zeros((num_features,), dtype)
        self.gamma.value[...] = 1.0
        self.beta = Param.zeros((num_features,), dtype)
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)
        self._cache = None

    def initialize(self, rng):
        self.gamma.value[...] = 1.0
        self.beta.value[...] = 0.0
        self.running_mean[...] = 0.0
        self.running_var[...] = 1.0

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def _axes_and_shape(self, x):
        c = self.gamma.shape[0]
        if x.ndim == 4:
            if x.shape[1] != c:
                raise ShapeError(f"expected {c} channels, got input shape {x.shape}")
            return (0, 2, 3), (1, c, 1, 1)
        if x.ndim == 2:
            if x.shape[1] != c:
                raise ShapeError(f"expected {c} features, got input shape {x.shape}")
            return (0,), (1, c)
        raise ShapeError(f"batchnorm expects 2-D or 4-D input, got shape {x.shape}")

    def forward(self, x, mode=Mode.TRAIN, rng=None):
        axes, bshape = self._axes_and_shape(x)
        gamma = self.gamma.value.reshape(bshape)
        beta = self.beta.value.reshape(bshape)
        if mode is Mode.TRAIN:
            m = 1
            for ax in axes:
                m *= x.shape[ax]
            if m < 2:
                raise DegenerateStatisticsError(
                    f"batch statistics need >= 2 elements per channel, got {m}"
                )
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)  # biased
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
            self.running_mean[...] = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var[...] = (
                (1 - self.momentum) * self.running_var + self.momentum * var * m / (m - 1)
            )
            self._cache = ("train", xhat, inv_std, axes, bshape, m)
            return gamma * xhat + beta
        inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
        xhat = (x - self.running_mean.reshape(bshape)) * inv_std.reshape(bshape)
        self._cache = ("eval", xhat, inv_std, axes, bshape, None)
        return gamma * xhat + beta

    def backward(self, grad_out):
        if self._cache is None:
            raise StateError("batchnorm backward called before forward")
        kind, xhat, inv_std, axes, bshape, m = self._cache
        gamma = self.gamma.value.reshape(bshape)
        if kind == "eval":
            # Running stats are constants here, so there is no batch coupling.
            self.gamma.grad += (grad_out * xhat).sum(axis=axes)
            self.beta.grad += grad_out.sum(axis=axes)
            return grad_out * gamma * inv_std.reshape(bshape)
        self.gamma.grad += (grad_out * xhat).sum(axis=axes)
        self.beta.grad += grad_out.sum(axis=axes)
        gxhat = grad_out * gamma
        s1 = gxhat.sum(axis=axes).reshape(bshape)
        s2 = (gxhat * xhat).sum(axis=axes).reshape(bshape)
        return (inv_std.reshape(bshape) / m) * (m * gxhat - s1 - xhat * s2)


class ReLU:
    def __init__(self):
        self._x = None

    def initialize(self, rng):
        pass

    def params(self):
        return []

    def buffers(self):
        return []

    def forward(self, x, mode=Mode.TRAIN, rng=None):
        self._x = x
        return np.maximum(x, 0)

    def backward(self, grad_out):
        if self._x is None:
            raise StateError("relu backward called before forward")
        return grad_out * (self._x > 0)


class Linear:
    """Fully connected layer: y = x @ W.T + b, weight shape (out, in)."""

    def __init__(self, in_features, out_features, dtype=np.float32):
        self.weight = Param.zeros((out_features, in_features), dtype)
        self.bias = Param.zeros((out_features,), dtype)
        self._x = None

    def initialize(self, rng):
        linear_init(self.weight, rng)
        self.bias.value[...] = 0.0

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def buffers(self):
        return []

    def forward(self, x, mode=Mode.TRAIN, rng=None):
        if x.ndim != 2 or x.shape[1] != self.weight.shape[1]:
            raise ShapeError(
                f"linear expects (N,{self.weight.shape[1]}) input, got shape {x.shape}"
            )
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, grad_out):
        if self._x is None:
            raise StateError("linear backward called before forward")
        self.weight.grad += grad_out.T @ self._x
        self.bias.grad += grad_out.sum(axis=0)
        return grad_out @ self.weight.value


def apply_dropout_mask(x, mask, rate):
    """Inverted dropout as a pure function of a fixed keep-mask."""
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    return x * mask * scale


class Dropout:
    """Inverted dropout: train-time masking scaled by 1/(1-p); eval is identity."""

    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.mask = None

    def initialize(self, rng):
        pass

    def params(self):
        return []

    def buffers(self):
        return []

    def forward(self, x, mode=Mode.TRAIN, rng=None):
        if mode is Mode.EVAL or self.rate == 0.0:
            self.mask = None
            return x
        if rng is None:
            raise StateError("train-mode dropout needs an rng")
        self.mask = (rng.random(x.shape) >= self.rate).astype(x.dtype)
        return apply_dropout_mask(x, self.mask, self.rate)

    def backward(self, grad_out):
        if self.mask is None:
            return grad_out
        return apply_dropout_mask(grad_out, self.mask, self.rate)


def softmax(logits):
    """Row-wise softmax with max-subtraction for overflow safety."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, targets, class_weights=None):
    """Weighted-mean cross-entropy over a batch of logits.

    loss = sum_n w[t_n] * (-log softmax(logits)[n, t_n]) / sum_n w[t_n]

    With ``class_weights=None`` all weights are 1 and this is the plain
    mean. Returns ``(loss, grad_logits)`` where grad_logits is the exact
    gradient of the returned scalar.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (N,C), got shape {logits.shape}")
    n, c = logits.shape
    targets = np.asarray(targets)
    if targets.shape != (n,):
        raise ShapeError(f"targets must be ({n},), got shape {targets.shape}")
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= c:
        raise LabelingError(f"targets must lie in [0, {c})")
    check_finite(logits, "loss logits")

    probs = softmax(logits)
    if class_weights is None:
        w = np.ones(n, dtype=logits.dtype)
    else:
        class_weights = np.asarray(class_weights, dtype=logits.dtype)
        if class_weights.shape != (c,):
            raise ShapeError(f"class_weights must be ({c},), got shape {class_weights.shape}")
        w = class_weights[targets]
    w_sum = w.sum()
    if w_sum <= 0:
        raise NumericFaultError("class weights sum to a non-positive value")

    picked = probs[np.arange(n), targets]
    loss = float((w * -np.log(np.maximum(picked, np.finfo(logits.dtype).tiny))).sum() / w_sum)
    grad = probs * (w / w_sum)[:, None]
    grad[np.arange(n), targets] -= w / w_sum
    return loss, grad.astype(logits.dtype, copy=False)
