"""The compact 3-block CNN classifier and its parameter accounting.

Reference architecture (fixed by :data:`ModelConfig` defaults):

    3 -> [Conv3x3-BN-ReLU x2] -> pool -> 64
      -> [Conv3x3-BN-ReLU x2] -> pool -> 128
      -> [Conv3x3-BN-ReLU x3] -> pool -> 256
      -> GAP -> Linear 256->512 -> BN -> ReLU -> Dropout -> Linear 512->C

Convolutions are stride 1 / padding 1 so only the per-block max-pool
changes resolution; GAP makes the forward pass resolution-agnostic for
even H, W >= 8. Conv layers keep bias terms even under BatchNorm — the
published parameter budget (1,870,400 + 513*C) requires them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PreconditionError, ShapeError, StateError
from .layers import BatchNorm, Conv2d, Dropout, Linear, Mode, ReLU, softmax
from .seeding import STREAM_INIT, derive_rng
from .tensor_ops import global_avg_pool_backward, global_avg_pool_forward, maxpool2d_backward, \
    maxpool2d_forward

REFERENCE_BLOCK_DEPTHS = (2, 2, 3)
REFERENCE_CHANNELS = (64, 128, 256)
REFERENCE_HIDDEN = 512


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters. Non-default depths/channels/hidden are
    allowed (e.g. tiny models for tests) but mark the model non-reference."""

    num_classes: int
    dropout_rate: float = 0.5
    input_channels: int = 3
    block_depths: tuple = REFERENCE_BLOCK_DEPTHS
    channels: tuple = REFERENCE_CHANNELS
    hidden: int = REFERENCE_HIDDEN

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if len(self.block_depths) != len(self.channels):
            raise ConfigError("block_depths and channels must have equal length")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def is_reference(self) -> bool:
        return (
            tuple(self.block_depths) == REFERENCE_BLOCK_DEPTHS
            and tuple(self.channels) == REFERENCE_CHANNELS
            and self.hidden == REFERENCE_HIDDEN
            and self.input_channels == 3
        )

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "dropout_rate": self.dropout_rate,
            "input_channels": self.input_channels,
            "block_depths": list(self.block_depths),
            "channels": list(self.channels),
            "hidden": self.hidden,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            num_classes=int(d["num_classes"]),
            dropout_rate=float(d["dropout_rate"]),
            input_channels=int(d["input_channels"]),
            block_depths=tuple(d["block_depths"]),
            channels=tuple(d["channels"]),
            hidden=int(d["hidden"]),
        )


class _MaxPool:
    """Stateful wrapper around the 2x2 pooling kernels for the layer stack."""

    def __init__(self):
        self._indices = None
        self._input_shape = None

    def initialize(self, rng):
        pass

    def params(self):
        return []

    def buffers(self):
        return []

    def forward(self, x, mode=Mode.TRAIN, rng=None):
        out, self._indices = maxpool2d_forward(x)
        self._input_shape = x.shape
        return out

    def backward(self, grad_out):
        if self._indices is None:
            raise StateError("pool backward called before forward")
        return maxpool2d_backward(self._indices, grad_out, self._input_shape)


class _GlobalAvgPool:
    def __init__(self):
        self._spatial = None

    def initialize(self, rng):
        pass

    def params(self):
        return []

    def buffers(self):
        return []

    def forward(self, x, mode=Mode.TRAIN, rng=None):
        self._spatial = x.shape[2:]
        return global_avg_pool_forward(x)

    def backward(self, grad_out):
        if self._spatial is None:
            raise StateError("GAP backward called before forward")
        return global_avg_pool_backward(grad_out, self._spatial)


class CustomCNN:
    """Full layer stack with deterministic parameter/buffer registries."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.mode = Mode.TRAIN
        self._stack: list[tuple[str, object]] = []
        self._feature_end = 0
        self._forward_ready = False

        in_ch = config.input_channels
        for b, (depth, out_ch) in enumerate(zip(config.block_depths, config.channels), start=1):
            for k in range(1, depth + 1):
                self._stack.append((f"block{b}.conv{k}", Conv2d(in_ch, out_ch, dtype=dtype)))
                self._stack.append((f"block{b}.bn{k}", BatchNorm(out_ch, dtype=dtype)))
                self._stack.append((f"block{b}.relu{k}", ReLU()))
                in_ch = out_ch
            self._stack.append((f"block{b}.pool", _MaxPool()))
        self._feature_end = len(self._stack)
        self._stack.append(("gap", _GlobalAvgPool()))
        self._stack.append(("head.fc1", Linear(config.channels[-1], config.hidden, dtype=dtype)))
        self._stack.append(("head.bn", BatchNorm(config.hidden, dtype=dtype)))
        self._stack.append(("head.relu", ReLU()))
        self._stack.append(("head.dropout", Dropout(config.dropout_rate)))
        self._stack.append(("head.fc2", Linear(config.hidden, config.num_classes, dtype=dtype)))

    @classmethod
    def build(cls, config: ModelConfig, seed: int, dtype=np.float32) -> "CustomCNN":
        """Construct and initialize; same seed gives bit-identical parameters."""
        model = cls(config, dtype=dtype)
        rng = derive_rng(seed, STREAM_INIT)
        for _, layer in model._stack:
            layer.initialize(rng)
        return model

    # -- mode -------------------------------------------------------------

    def train(self):
        self.mode = Mode.TRAIN
        return self

    def eval(self):
        self.mode = Mode.EVAL
        return self

    # -- registries --------------------------------------------------------

    def named_params(self):
        out = []
        for lname, layer in self._stack:
            for pname, p in layer.params():
                out.append((f"{lname}.{pname}", p))
        return out

    def named_buffers(self):
        out = []
        for lname, layer in self._stack:
            for bname, b in layer.buffers():
                out.append((f"{lname}.{bname}", b))
        return out

    def zero_grads(self):
        for _, p in self.named_params():
            p.grad[...] = 0.0

    # -- passes -------------------------------------------------------------

    def _check_input(self, x):
        if x.ndim != 4 or x.shape[1] != self.config.input_channels:
            raise ShapeError(
                f"expected (N,{self.config.input_channels},H,W) input, got shape {x.shape}"
            )
        halvings = 2 ** len(self.config.block_depths)
        if x.shape[2] % halvings or x.shape[3] % halvings or min(x.shape[2:]) < halvings:
            raise PreconditionError(
                f"spatial dims must be multiples of {halvings} (>= {halvings}), "
                f"got {x.shape[2]}x{x.shape[3]}"
            )

    def forward(self, x, rng=None):
        """Run the full stack; returns raw logits (N, num_classes)."""
        self._check_input(x)
        for _, layer in self._stack:
            x = layer.forward(x, mode=self.mode, rng=rng)
        self._forward_ready = True
        return x

    def forward_features(self, x):
        """Run only the convolutional blocks; returns the pre-GAP feature map."""
        self._check_input(x)
        for _, layer in self._stack[: self._feature_end]:
            x = layer.forward(x, mode=self.mode, rng=None)
        return x

    def backward(self, grad_logits):
        """Accumulate d(loss)/d(param) into every Param.grad; returns grad
        with respect to the input batch."""
        if not self._forward_ready:
            raise StateError("model backward called before forward")
        g = grad_logits
        for _, layer in reversed(self._stack):
            g = layer.backward(g)
        return g

    def predict_proba(self, x):
        """Eval-style softmax probabilities regardless of current mode."""
        saved = self.mode
        self.mode = Mode.EVAL
        try:
            logits = self.forward(x)
        finally:
            self.mode = saved
        return softmax(logits)


def param_count(model: CustomCNN) -> int:
    return sum(p.value.size for _, p in model.named_params())


def buffer_count(model: CustomCNN) -> int:
    return sum(b.size for _, b in model.named_buffers())


def model_size_mb(model: CustomCNN) -> float:
    """32-bit storage footprint, params plus running buffers, in MiB (2 dp)."""
    return round(4 * (param_count(model) + buffer_count(model)) / 2**20, 2)


def reference_param_count(num_classes: int) -> int:
    """Closed-form parameter count of the reference architecture."""
    return 1_870_400 + 513 * num_classes
