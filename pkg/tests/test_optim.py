import math

import numpy as np
import pytest

from cnnkit.errors import ConfigError, NumericFaultError
from cnnkit.layers import Param
from cnnkit.optim import Adam, EarlyStopper, ReduceLROnPlateau

from trace_oracles import expected_lr_trace, expected_stop_epoch


def _scalar_param(value, dtype=np.float64):
    p = Param.zeros((1,), dtype=dtype)
    p.value[...] = value
    return p


class TestAdam:
    def test_first_step_unit_gradient(self):
        p = _scalar_param(1.0)
        p.grad[...] = 0.5
        Adam([("theta", p)], weight_decay=0.0).step()
        assert abs(p.value[0] - 0.999) < 1e-9

    def test_zero_gradient_no_motion(self):
        p = _scalar_param(1.0)
        opt = Adam([("theta", p)], weight_decay=0.0)
        opt.step()
        assert p.value[0] == 1.0
        assert not p.adam_m.any() and not p.adam_v.any()

    def test_weight_decay_feeds_moments(self):
        p = _scalar_param(1.0)
        Adam([("theta", p)], weight_decay=0.1).step()
        assert abs(p.value[0] - 0.999) < 1e-9

    @pytest.mark.parametrize("g", [100.0, 7.3, 1.0, 0.5, -0.25, 1e-3, -1e-4])
    def test_first_step_magnitude_closed_form(self, g):
        # Hand-derived from the recurrence at t=1: m_hat = g, sqrt(v_hat) = |g|,
        # so |update| = lr * |g| / (|g| + eps).
        lr, eps = 1e-3, 1e-8
        p = _scalar_param(2.0)
        p.grad[...] = g
        Adam([("theta", p)], lr=lr, eps=eps, weight_decay=0.0).step()
        update = abs(2.0 - p.value[0])
        expected = lr * abs(g) / (abs(g) + eps)
        assert abs(update - expected) / expected <= 1e-9

    def test_quadratic_convergence(self):
        p = _scalar_param(1.0)
        opt = Adam([("theta", p)], lr=1e-2, weight_decay=0.0)
        for _ in range(500):
            p.grad[...] = 2.0 * p.value
            opt.step()
            p.grad[...] = 0.0
        assert abs(p.value[0]) < 1e-2

    def test_step_counter_increments_once(self):
        a, b = _scalar_param(1.0), _scalar_param(2.0)
        opt = Adam([("a", a), ("b", b)])
        opt.step()
        opt.step()
        assert opt.t == 2

    def test_nonfinite_grad_names_parameter(self):
        p = _scalar_param(1.0)
        p.grad[...] = np.nan
        with pytest.raises(NumericFaultError, match="theta"):
            Adam([("theta", p)]).step()

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            Adam([], lr=0.0)
        with pytest.raises(ConfigError):
            Adam([], beta1=1.0)


def _random_loss_traces(count, rng):
    """Mixed trace shapes: noisy declines, plateaus, tie-heavy quantized
    walks — quantization to multiples of 5e-4 exercises the inclusive
    min_delta boundary exactly."""
    for _ in range(count):
        n = int(rng.integers(5, 60))
        kind = rng.integers(0, 3)
        if kind == 0:
            base = np.maximum(0.05, 1.0 - 0.03 * np.arange(n) + rng.normal(0, 0.05, n))
        elif kind == 1:
            base = np.concatenate([
                1.0 - 0.1 * np.arange(min(n, 5)),
                np.full(max(n - 5, 0), 0.5) + rng.normal(0, 0.002, max(n - 5, 0)),
            ])[:n]
        else:
            base = 1.0 + np.cumsum(rng.normal(0, 0.01, n))
        yield np.round(base / 5e-4) * 5e-4


class TestReduceLROnPlateau:
    def test_always_improving(self):
        sched = ReduceLROnPlateau(1e-3)
        for loss in [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4]:
            assert sched.observe(loss) == 1e-3

    def test_constant_losses_halve_after_six(self):
        sched = ReduceLROnPlateau(1e-3)
        lrs = [sched.observe(1.0) for _ in range(6)]
        assert lrs[:5] == [1e-3] * 5
        assert lrs[5] == 5e-4

    def test_floor(self):
        sched = ReduceLROnPlateau(1e-6, min_lr=1e-6)
        for _ in range(20):
            lr = sched.observe(1.0)
        assert lr == 1e-6

    def test_monotone_non_increasing(self):
        rng = np.random.default_rng(0)
        sched = ReduceLROnPlateau(1e-3)
        prev = 1e-3
        for loss in rng.uniform(0, 1, 200):
            lr = sched.observe(float(loss))
            assert lr <= prev
            assert lr >= 1e-6
            prev = lr

    def test_nan_loss_rejected(self):
        with pytest.raises(NumericFaultError):
            ReduceLROnPlateau(1e-3).observe(float("nan"))

    @pytest.mark.parametrize("chunk", range(5))
    def test_matches_trace_oracle(self, chunk):
        rng = np.random.default_rng(3100 + chunk)
        for trace in _random_loss_traces(100, rng):
            sched = ReduceLROnPlateau(1e-3)
            got = [sched.observe(float(x)) for x in trace]
            assert got == expected_lr_trace(trace, 1e-3)


class TestEarlyStopper:
    def test_steady_improvement_never_stops(self):
        stopper = EarlyStopper()
        for i in range(100):
            assert stopper.observe(1.0 - 0.01 * i) is False

    def test_hand_traced_stop(self):
        # best 0.5 at epoch 3; epochs 4-13 all >= 0.4995 -> stop at 13.
        losses = [1.0, 0.7, 0.5] + [0.4995] * 10
        stopper = EarlyStopper()
        decisions = [stopper.observe(x) for x in losses]
        assert decisions[-1] is True
        assert all(d is False for d in decisions[:-1])

    def test_exact_delta_counts_as_improvement(self):
        stopper = EarlyStopper(min_delta=1e-3)
        stopper.observe(0.500)
        assert stopper.observe(0.499) is False
        assert stopper.epochs_since_improve == 0
        assert stopper.best_loss == 0.499

    def test_nan_loss_rejected(self):
        with pytest.raises(NumericFaultError):
            EarlyStopper().observe(float("nan"))

    @pytest.mark.parametrize("chunk", range(5))
    def test_matches_window_oracle(self, chunk):
        rng = np.random.default_rng(5100 + chunk)
        for trace in _random_loss_traces(100, rng):
            stopper = EarlyStopper()
            stop_at = None
            for i, loss in enumerate(trace):
                if stopper.observe(float(loss)):
                    stop_at = i + 1
                    break
            assert stop_at == expected_stop_epoch(trace)
