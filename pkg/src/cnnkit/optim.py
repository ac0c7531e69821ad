"""Adam with coupled L2 weight decay, plateau LR scheduling, early stopping.

The scheduler and the early stopper both consume the per-epoch validation
loss but keep independent best values and counters: the scheduler reacts
to any strict decrease, the stopper only to improvements of at least
``min_delta``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, NumericFaultError


class Adam:
    """Adam over a list of (name, Param); moments live on the Param.

    Per element, with coupled decay folded into the gradient:

        g <- grad + weight_decay * value
        m <- beta1 * m + (1 - beta1) * g
        v <- beta2 * v + (1 - beta2) * g^2
        value <- value - lr * (m / (1 - beta1^t)) / (sqrt(v / (1 - beta2^t)) + eps)

    ``t`` increments once per :meth:`step`, not once per parameter.
    """

    def __init__(self, named_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=1e-4):
        if lr <= 0:
            raise ConfigError(f"lr must be positive, got {lr}")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ConfigError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.named_params:
            if not np.all(np.isfinite(p.grad)):
                raise NumericFaultError(f"non-finite gradient in parameter '{name}'")
            g = p.grad if self.weight_decay == 0 else p.grad + self.weight_decay * p.value
            p.adam_m *= self.beta1
            p.adam_m += (1.0 - self.beta1) * g
            p.adam_v *= self.beta2
            p.adam_v += (1.0 - self.beta2) * np.square(g)
            # In-place evaluation of lr * m_hat / (sqrt(v_hat) + eps).
            m_hat = p.adam_m / bc1
            denom = p.adam_v / bc2
            np.sqrt(denom, out=denom)
            denom += self.eps
            m_hat /= denom
            m_hat *= self.lr
            p.value -= m_hat

    def state_dict(self) -> dict:
        return {"t": self.t, "lr": self.lr}

    def load_state_dict(self, state: dict):
        self.t = int(state["t"])
        self.lr = float(state["lr"])


class ReduceLROnPlateau:
    """Halve the LR after `patience` consecutive epochs without a strict
    validation-loss decrease; the counter resets after each halving."""

    def __init__(self, lr, factor=0.5, patience=5, min_lr=1e-6):
        self.current_lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best_loss = math.inf
        self.bad_epochs = 0

    def observe(self, val_loss: float) -> float:
        """Feed one epoch's validation loss; returns the LR for the next epoch."""
        if not math.isfinite(val_loss):
            raise NumericFaultError(f"non-finite validation loss {val_loss!r}")
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.current_lr = max(self.current_lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.current_lr

    def state_dict(self) -> dict:
        return {
            "current_lr": self.current_lr,
            "best_loss": self.best_loss,
            "bad_epochs": self.bad_epochs,
        }


class EarlyStopper:
    """Stop after `patience` consecutive epochs whose validation loss fails
    to beat the best by at least `min_delta` (improvement boundary is
    inclusive: val <= best - min_delta counts)."""

    def __init__(self, min_delta=1e-3, patience=10):
        self.min_delta = min_delta
        self.patience = patience
        self.best_loss = math.inf
        self.epochs_since_improve = 0

    def observe(self, val_loss: float) -> bool:
        """Feed one epoch's validation loss; returns True when training
        should stop."""
        if not math.isfinite(val_loss):
            raise NumericFaultError(f"non-finite validation loss {val_loss!r}")
        if val_loss <= self.best_loss - self.min_delta:
            self.best_loss = val_loss
            self.epochs_since_improve = 0
            return False
        self.epochs_since_improve += 1
        return self.epochs_since_improve >= self.patience

    def state_dict(self) -> dict:
        return {
            "best_loss": self.best_loss,
            "epochs_since_improve": self.epochs_since_improve,
        }
