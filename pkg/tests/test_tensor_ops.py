import numpy as np
import pytest

from cnnkit.errors import (
    InternalConsistencyError,
    NumericFaultError,
    PreconditionError,
    ShapeError,
)
from cnnkit.tensor_ops import (
    conv2d_backward,
    conv2d_backward_direct,
    conv2d_forward,
    conv2d_forward_direct,
    conv_output_size,
    element_count,
    global_avg_pool_backward,
    global_avg_pool_forward,
    matmul,
    matmul_backward,
    maxpool2d_backward,
    maxpool2d_forward,
)

from gradcheck import central_diff, projection_loss, rel_error


def _rand_conv_case(rng, max_dim=8):
    n = int(rng.integers(1, 3))
    ci = int(rng.integers(1, 4))
    o = int(rng.integers(1, 5))
    k = 3
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 3))
    h = int(rng.integers(k, max_dim + 1))
    w = int(rng.integers(k, max_dim + 1))
    # U(-1,1) keeps float32 accumulation-order noise well under the 1e-5
    # absolute tolerance of the oracle comparison.
    x = rng.uniform(-1, 1, (n, ci, h, w)).astype(np.float32)
    wgt = rng.uniform(-1, 1, (o, ci, k, k)).astype(np.float32)
    b = rng.uniform(-1, 1, o).astype(np.float32)
    return x, wgt, b, stride, padding


class TestConvForward:
    def test_all_ones_overlap_counts(self):
        x = np.ones((1, 1, 3, 3), dtype=np.float32)
        w = np.ones((1, 1, 3, 3), dtype=np.float32)
        out = conv2d_forward(x, w, np.zeros(1, dtype=np.float32), 1, 1)[0, 0]
        expected = np.array([[4, 6, 4], [6, 9, 6], [4, 6, 4]], dtype=np.float32)
        assert np.array_equal(out, expected)

    def test_identity_kernel(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((1, 1, 4, 4)).astype(np.float32)
        w = np.zeros((1, 1, 3, 3), dtype=np.float32)
        w[0, 0, 1, 1] = 1.0
        out = conv2d_forward(x, w, np.zeros(1, dtype=np.float32), 1, 1)
        assert np.allclose(out, x, atol=1e-7)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_direct_reference(self, seed):
        rng = np.random.default_rng(1000 + seed)
        x, w, b, stride, padding = _rand_conv_case(rng)
        fast = conv2d_forward(x, w, b, stride, padding)
        slow = conv2d_forward_direct(x, w, b, stride, padding)
        assert fast.shape == slow.shape
        assert np.max(np.abs(fast - slow)) <= 1e-5

    def test_linearity_without_bias(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 3, 6, 6)).astype(np.float32)
        y = rng.standard_normal((2, 3, 6, 6)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        zero_b = np.zeros(4, dtype=np.float32)
        a, b_ = 1.7, -0.4
        lhs = conv2d_forward(a * x + b_ * y, w, zero_b)
        rhs = a * conv2d_forward(x, w, zero_b) + b_ * conv2d_forward(y, w, zero_b)
        assert np.max(np.abs(lhs - rhs)) <= 1e-5

    @pytest.mark.parametrize("seed", range(30))
    def test_output_shape_formula(self, seed):
        rng = np.random.default_rng(4000 + seed)
        x, w, b, stride, padding = _rand_conv_case(rng, max_dim=11)
        out = conv2d_forward(x, w, b, stride, padding)
        h, w_in = x.shape[2:]
        assert out.shape[2] == conv_output_size(h, 3, stride, padding)
        assert out.shape[3] == conv_output_size(w_in, 3, stride, padding)
        assert out.shape[2] == (h + 2 * padding - 3) // stride + 1

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        x, w, b, stride, padding = _rand_conv_case(rng)
        first = conv2d_forward(x, w, b, stride, padding)
        second = conv2d_forward(x, w, b, stride, padding)
        assert np.array_equal(first, second)

    def test_channel_mismatch_raises(self):
        x = np.zeros((1, 2, 4, 4), dtype=np.float32)
        w = np.zeros((1, 3, 3, 3), dtype=np.float32)
        with pytest.raises(ShapeError):
            conv2d_forward(x, w, np.zeros(1, dtype=np.float32))

    def test_nonfinite_output_raises(self):
        x = np.full((1, 1, 3, 3), 1e38, dtype=np.float32)
        w = np.full((1, 1, 3, 3), 1e38, dtype=np.float32)
        with pytest.raises(NumericFaultError):
            conv2d_forward(x, w, np.zeros(1, dtype=np.float32))


class TestConvBackward:
    def test_zero_upstream_gradient(self):
        rng = np.random.default_rng(11)
        x, w, b, stride, padding = _rand_conv_case(rng)
        out = conv2d_forward(x, w, b, stride, padding)
        gx, gw, gb = conv2d_backward(x, w, np.zeros_like(out), stride, padding)
        assert not gx.any() and not gw.any() and not gb.any()

    def test_identity_kernel_transpose(self):
        x = np.zeros((1, 1, 3, 3), dtype=np.float32)
        w = np.zeros((1, 1, 3, 3), dtype=np.float32)
        w[0, 0, 1, 1] = 1.0
        gx, _, _ = conv2d_backward(x, w, np.ones((1, 1, 3, 3), dtype=np.float32), 1, 1)
        assert np.array_equal(gx, np.ones((1, 1, 3, 3), dtype=np.float32))

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_direct_reference(self, seed):
        rng = np.random.default_rng(2000 + seed)
        x, w, b, stride, padding = _rand_conv_case(rng)
        out_shape = conv2d_forward(x, w, b, stride, padding).shape
        gy = rng.uniform(-1, 1, out_shape).astype(np.float32)
        fast = conv2d_backward(x, w, gy, stride, padding)
        slow = conv2d_backward_direct(x, w, gy, stride, padding)
        for a, b_ in zip(fast, slow):
            assert np.max(np.abs(a - b_)) <= 1e-5

    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(3000 + seed)
        x = rng.standard_normal((2, 2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        stride, padding = 1, 1
        proj = rng.standard_normal((2, 3, 5, 5))
        gx, gw, gb = conv2d_backward(x, w, proj, stride, padding)
        fd_x = central_diff(projection_loss(lambda v: conv2d_forward(v, w, b, stride, padding), proj), x)
        fd_w = central_diff(projection_loss(lambda v: conv2d_forward(x, v, b, stride, padding), proj), w)
        fd_b = central_diff(projection_loss(lambda v: conv2d_forward(x, w, v, stride, padding), proj), b)
        assert rel_error(gx, fd_x) <= 1e-6
        assert rel_error(gw, fd_w) <= 1e-6
        assert rel_error(gb, fd_b) <= 1e-6

    def test_grad_shape_mismatch_raises(self):
        x = np.zeros((1, 1, 4, 4), dtype=np.float32)
        w = np.zeros((1, 1, 3, 3), dtype=np.float32)
        with pytest.raises(ShapeError):
            conv2d_backward(x, w, np.zeros((1, 1, 3, 3), dtype=np.float32), 1, 1)


def _distinct_values(rng, shape):
    # Gaps far exceed the finite-difference step, so no max-pool ties flip.
    vals = rng.permutation(int(np.prod(shape))).astype(np.float64)
    return (0.37 * vals + rng.standard_normal(shape).ravel() * 1e-3).reshape(shape)


class TestMaxPool:
    def test_single_window(self):
        x = np.array([[1, 2], [3, 4]], dtype=np.float32).reshape(1, 1, 2, 2)
        out, idx = maxpool2d_forward(x)
        assert out[0, 0, 0, 0] == 4.0
        assert idx[0, 0, 0, 0] == 3  # flat position of the 4 in the 2x2 plane

    def test_constant_input_tie_break(self):
        x = np.full((1, 2, 4, 4), 2.5, dtype=np.float32)
        out, idx = maxpool2d_forward(x)
        assert np.all(out == 2.5)
        wy = np.arange(2).reshape(2, 1)
        wx = np.arange(2).reshape(1, 2)
        first_positions = (2 * wy) * 4 + 2 * wx
        assert np.array_equal(idx[0, 0], first_positions)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_window_scan(self, seed):
        rng = np.random.default_rng(500 + seed)
        x = rng.standard_normal((1, 1, 6, 6)).astype(np.float32)
        out, _ = maxpool2d_forward(x)
        for wy in range(3):
            for wx in range(3):
                window = x[0, 0, 2 * wy : 2 * wy + 2, 2 * wx : 2 * wx + 2]
                assert out[0, 0, wy, wx] == window.max()

    def test_backward_routes_one_per_window(self):
        rng = np.random.default_rng(6)
        x = _distinct_values(rng, (1, 1, 4, 4)).astype(np.float32)
        out, idx = maxpool2d_forward(x)
        gx = maxpool2d_backward(idx, np.ones_like(out), x.shape)
        assert gx.sum() == out.size
        assert set(np.unique(gx)) == {0.0, 1.0}
        for wy in range(2):
            for wx in range(2):
                assert gx[0, 0, 2 * wy : 2 * wy + 2, 2 * wx : 2 * wx + 2].sum() == 1.0

    def test_backward_zero(self):
        x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
        out, idx = maxpool2d_forward(x)
        gx = maxpool2d_backward(idx, np.zeros_like(out), x.shape)
        assert not gx.any()

    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences_away_from_ties(self, seed):
        rng = np.random.default_rng(700 + seed)
        x = _distinct_values(rng, (1, 2, 4, 4))
        proj = rng.standard_normal((1, 2, 2, 2))
        _, idx = maxpool2d_forward(x)
        gx = maxpool2d_backward(idx, proj, x.shape)
        fd = central_diff(projection_loss(lambda v: maxpool2d_forward(v)[0], proj), x)
        assert rel_error(gx, fd) <= 1e-6

    def test_odd_spatial_dims_rejected(self):
        with pytest.raises(PreconditionError):
            maxpool2d_forward(np.zeros((1, 1, 3, 4), dtype=np.float32))

    def test_tampered_indices_rejected(self):
        x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
        out, idx = maxpool2d_forward(x)
        idx = idx.copy()
        idx[0, 0, 0, 0] = 15  # belongs to the opposite window
        with pytest.raises(InternalConsistencyError):
            maxpool2d_backward(idx, np.ones_like(out), x.shape)


class TestGlobalAvgPool:
    def test_constant(self):
        x = np.full((2, 3, 4, 4), 1.25, dtype=np.float32)
        assert np.allclose(global_avg_pool_forward(x), 1.25)

    def test_mean_example(self):
        x = np.array([0.0, 0.0, 2.0, 2.0], dtype=np.float32).reshape(1, 1, 2, 2)
        assert global_avg_pool_forward(x)[0, 0] == 1.0

    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(900 + seed)
        x = rng.standard_normal((2, 3, 4, 5))
        proj = rng.standard_normal((2, 3))
        gx = global_avg_pool_backward(proj, (4, 5))
        fd = central_diff(projection_loss(global_avg_pool_forward, proj), x)
        assert rel_error(gx, fd) <= 1e-6
        assert np.allclose(gx, proj[:, :, None, None] / 20.0)


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((4, 4)).astype(np.float32)
        assert np.allclose(matmul(a, np.eye(4, dtype=np.float32)), a)

    def test_scalar_case(self):
        assert matmul(np.array([[2.0]]), np.array([[3.0]]))[0, 0] == 6.0

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_triple_loop(self, seed):
        rng = np.random.default_rng(1100 + seed)
        a = rng.standard_normal((5, 4)).astype(np.float32)
        b = rng.standard_normal((4, 3)).astype(np.float32)
        ref = np.zeros((5, 3), dtype=np.float64)
        for i in range(5):
            for j in range(3):
                for k in range(4):
                    ref[i, j] += float(a[i, k]) * float(b[k, j])
        assert np.max(np.abs(matmul(a, b) - ref)) <= 1e-5

    @pytest.mark.parametrize("seed", range(20))
    def test_backward_finite_differences(self, seed):
        rng = np.random.default_rng(1200 + seed)
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))
        proj = rng.standard_normal((3, 2))
        ga, gb = matmul_backward(a, b, proj)
        fd_a = central_diff(projection_loss(lambda v: matmul(v, b), proj), a)
        fd_b = central_diff(projection_loss(lambda v: matmul(a, v), proj), b)
        assert rel_error(ga, fd_a) <= 1e-6
        assert rel_error(gb, fd_b) <= 1e-6

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_element_count_validates():
    assert element_count((2, 3, 4)) == 24
    with pytest.raises(ShapeError):
        element_count((2, 0, 4))
    with pytest.raises(ShapeError):
        element_count((2**40, 2**40))
