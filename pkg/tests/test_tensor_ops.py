import numpy as np
import pytest

from lesionkit.autodiff import Tensor, backward, ops
from lesionkit.errors import NumericError

from gradcheck import check_op
from op_cases import OP_CASES


def conv2d_reference(x, w, b, stride, pad):
    """Six-loop direct convolution; the independent oracle for conv2d."""
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, k, ho, wo))
    for ni in range(n):
        for ki in range(k):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[ni, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[ni, ki, i, j] = (patch * w[ki]).sum() + b[ki]
    return out


class TestConv2d:
    def test_one_by_one_identity(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal((2, 3, 5, 5)))
        w = Tensor(np.eye(3).reshape(3, 3, 1, 1))
        b = Tensor(np.zeros(3))
        out = ops.conv2d(x, w, b, stride=1, pad=0)
        np.testing.assert_array_equal(out.data, x.data)

    def test_all_ones_overlap_counts(self):
        x = Tensor(np.ones((1, 1, 5, 5)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        b = Tensor(np.zeros(1))
        out = ops.conv2d(x, w, b, stride=1, pad=1).data[0, 0]
        assert out[2, 2] == 9.0
        assert out[0, 2] == 6.0 and out[2, 0] == 6.0
        assert out[0, 0] == 4.0 and out[4, 4] == 4.0

    def test_output_extent_formula(self):
        x = Tensor(np.zeros((1, 1, 7, 7)))
        w = Tensor(np.zeros((1, 1, 3, 3)))
        out = ops.conv2d(x, w, Tensor(np.zeros(1)), stride=2, pad=1)
        assert out.shape == (1, 1, 4, 4)

    def test_channel_mismatch_raises(self):
        with pytest.raises(ValueError, match="channels"):
            ops.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))),
                       Tensor(np.zeros(1)))

    def test_nonpositive_extent_raises(self):
        with pytest.raises(ValueError, match="extent"):
            ops.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))),
                       Tensor(np.zeros(1)))

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_direct_convolution(self, seed):
        rng = np.random.default_rng(seed)
        h, w_ = rng.integers(3, 10, size=2)
        kh = int(rng.choice([1, 3]))
        stride = int(rng.choice([1, 2]))
        pad = int(rng.choice([0, 1]))
        if (h + 2 * pad - kh) < 0 or (w_ + 2 * pad - kh) < 0:
            return
        x = rng.standard_normal((2, 2, h, w_))
        wt = rng.standard_normal((3, 2, kh, kh))
        b = rng.standard_normal(3)
        got = ops.conv2d(Tensor(x), Tensor(wt), Tensor(b), stride=stride, pad=pad).data
        want = conv2d_reference(x, wt, b, stride, pad)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_ones_overlap_count_map_bruteforce(self):
        # all-ones input and kernel -> output counts kernel taps in bounds
        for h in (4, 7, 9):
            x = np.ones((1, 1, h, h))
            wt = np.ones((1, 1, 3, 3))
            got = ops.conv2d(Tensor(x), Tensor(wt), Tensor(np.zeros(1)), 1, 1).data
            want = conv2d_reference(x, wt, np.zeros(1), 1, 1)
            np.testing.assert_array_equal(got, want)

    def test_forward_bit_deterministic(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 3, 8, 8))
        wt = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        a = ops.conv2d(Tensor(x), Tensor(wt), Tensor(b), 1, 1).data
        bb = ops.conv2d(Tensor(x.copy()), Tensor(wt.copy()), Tensor(b.copy()), 1, 1).data
        assert np.array_equal(a, bb)


class TestDensePrimitives:
    def test_linear_identity(self):
        x = Tensor(np.random.default_rng(0).standard_normal((4, 3)))
        out = ops.linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_sigmoid_relu_values(self):
        assert ops.sigmoid(Tensor(0.0)).item() == 0.5
        assert ops.relu(Tensor(-1.0)).item() == 0.0

    def test_concat_channels_recoverable(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((2, 2, 3, 3))
        b = rng.standard_normal((2, 3, 3, 3))
        cat = ops.concat_channels([Tensor(a), Tensor(b)])
        assert cat.shape == (2, 5, 3, 3)
        np.testing.assert_array_equal(cat.data[:, :2], a)
        np.testing.assert_array_equal(cat.data[:, 2:], b)

    def test_max_pool_values(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        out = ops.max_pool2d(Tensor(x), 2, 2)
        np.testing.assert_array_equal(out.data[0, 0], [[5, 7], [13, 15]])


class TestBilinearResize:
    def test_identity_size(self):
        x = np.random.default_rng(0).standard_normal((1, 2, 4, 5))
        out = ops.bilinear_resize(Tensor(x), 4, 5)
        np.testing.assert_array_equal(out.data, x)

    def test_constant_preserved(self):
        x = np.full((1, 1, 3, 3), 7.25)
        out = ops.bilinear_resize(Tensor(x), 5, 8)
        np.testing.assert_allclose(out.data, 7.25, rtol=0, atol=1e-12)

    def test_two_to_four_hand_values(self):
        # centers at (i+0.5)*0.5-0.5 with border replication
        x = np.array([0.0, 1.0]).reshape(1, 1, 1, 2)
        out = ops.bilinear_resize(Tensor(x), 1, 4)
        np.testing.assert_allclose(out.data[0, 0, 0], [0.0, 0.25, 0.75, 1.0], atol=1e-12)


class TestRoiAlign:
    def test_whole_map_box_recovers_input(self):
        rng = np.random.default_rng(2)
        fm = rng.standard_normal((3, 6, 6))
        out = ops.roi_align(Tensor(fm), [[0.0, 0.0, 6.0, 6.0]], 6, 1)
        # bin centers coincide with pixel centers, so this is exact
        np.testing.assert_allclose(out.data[0], fm, atol=1e-12)

    def test_constant_map(self):
        fm = np.full((2, 8, 8), 3.5)
        out = ops.roi_align(Tensor(fm), [[1.3, 2.1, 5.9, 7.2]], 5, 1)
        np.testing.assert_allclose(out.data, 3.5, atol=1e-12)

    def test_box_outside_gives_zeros(self):
        fm = np.ones((1, 4, 4))
        out = ops.roi_align(Tensor(fm), [[10.0, 10.0, 20.0, 20.0]], 3, 1)
        np.testing.assert_array_equal(out.data, np.zeros((1, 1, 3, 3)))

    def test_degenerate_box_raises(self):
        with pytest.raises(ValueError, match="degenerate"):
            ops.roi_align(Tensor(np.ones((1, 4, 4))), [[2.0, 1.0, 2.0, 3.0]], 2, 1)

    def test_matches_direct_bilinear_oracle(self):
        rng = np.random.default_rng(5)
        fm = rng.standard_normal((2, 7, 9))
        box = [1.0, 2.0, 7.5, 6.5]
        out = ops.roi_align(Tensor(fm), [box], 4, 1).data[0]

        def sample(fmc, x, y):
            xi, yi = x - 0.5, y - 0.5
            x0, y0 = int(np.floor(xi)), int(np.floor(yi))
            tx, ty = xi - x0, yi - y0
            total = 0.0
            for yy, wy in ((y0, 1 - ty), (y0 + 1, ty)):
                for xx, wx in ((x0, 1 - tx), (x0 + 1, tx)):
                    if 0 <= yy < fmc.shape[0] and 0 <= xx < fmc.shape[1]:
                        total += fmc[yy, xx] * wy * wx
            return total

        x1, y1, x2, y2 = box
        for c in range(2):
            for i in range(4):
                for j in range(4):
                    cx = x1 + (j + 0.5) * (x2 - x1) / 4
                    cy = y1 + (i + 0.5) * (y2 - y1) / 4
                    assert out[c, i, j] == pytest.approx(sample(fm[c], cx, cy), abs=1e-12)


class TestBackward:
    def test_sum_of_squares(self):
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        backward((x * x).sum())
        np.testing.assert_allclose(x.grad, [2.0, -4.0, 6.0])

    def test_sigmoid_grad_at_zero(self):
        x = Tensor(0.0, requires_grad=True)
        backward(ops.sigmoid(x))
        assert x.grad == pytest.approx(0.25)

    def test_non_scalar_seed_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            backward(x * 2.0)

    def test_nan_input_rejected(self):
        with pytest.raises(NumericError):
            Tensor(np.array([1.0, np.nan]))

    def test_accumulation_without_reset(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        loss = (x * x).sum()
        backward(loss)
        once = x.grad.copy()
        backward(loss)
        np.testing.assert_allclose(x.grad, 2 * once)

    def test_grad_through_shared_input(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = x * x + x * 3.0
        backward(y.sum())
        assert x.grad[0] == pytest.approx(2 * 2.0 + 3.0)


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_gradients_match_finite_differences(name):
    build, apply_op = OP_CASES[name]
    for seed in range(20):
        err = check_op(build, apply_op, seed)
        assert err <= 1e-4, f"{name} seed {seed}: rel err {err:.2e}"
