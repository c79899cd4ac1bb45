import math

import numpy as np
import pytest

from dwnet.layers import (ConvParams, DenseParams, activation_apply, activation_grad,
                          conv2d_backward, conv2d_forward, dense_backward,
                          dense_forward, loss_and_grad, same_padding)
from dwnet.tensor import DimensionError, Rng


def numeric_grad(f, arr, eps=1e-5):
    """Central differences of a scalar-valued f w.r.t. every element of arr."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        up = f()
        flat[j] = orig - eps
        dn = f()
        flat[j] = orig
        gflat[j] = (up - dn) / (2 * eps)
    return grad


def rel_err(a, n):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / denom))


class TestActivations:
    def test_sigmoid_values(self):
        assert activation_apply("sigmoid", np.array(0.0)) == 0.5
        assert activation_grad("sigmoid", np.array(0.0)) == 0.25

    def test_relu_zero_subgradient(self):
        z = np.array([-1.0, 0.0, 2.0])
        np.testing.assert_array_equal(activation_apply("relu", z), [0.0, 0.0, 2.0])
        np.testing.assert_array_equal(activation_grad("relu", z), [0.0, 0.0, 1.0])

    def test_softmax_symmetry(self):
        out = activation_apply("softmax", np.array([[3.0, 3.0, 3.0]]))
        np.testing.assert_allclose(out, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)

    def test_softmax_shift_invariance(self):
        rng = Rng(12)
        z = rng.uniform(-5, 5, size=(4, 6))
        a = activation_apply("softmax", z)
        b = activation_apply("softmax", z + 123.456)
        assert np.max(np.abs(a - b)) < 1e-12

    def test_softmax_large_inputs_stable(self):
        out = activation_apply("softmax", np.array([[1000.0, 1000.0]]))
        np.testing.assert_allclose(out, [[0.5, 0.5]])

    def test_softmax_grad_refused(self):
        with pytest.raises(ValueError):
            activation_grad("softmax", np.zeros(3))


class TestLosses:
    def test_sse_zero_at_target(self):
        loss, grad = loss_and_grad("sse", np.array([[0.3, 0.7]]), np.array([[0.3, 0.7]]))
        assert loss == 0.0
        np.testing.assert_array_equal(grad, [[0.0, 0.0]])

    def test_sse_unit_example(self):
        loss, _ = loss_and_grad("sse", np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
        assert loss == 1.0

    def test_cross_entropy_uniform_logits(self):
        loss, grad = loss_and_grad("cross_entropy", np.array([[0.0, 0.0]]),
                                   np.array([[1.0, 0.0]]))
        assert abs(loss - math.log(2)) < 1e-15
        np.testing.assert_allclose(grad, [[-0.5, 0.5]], atol=1e-15)

    def test_batch_mean(self):
        single, _ = loss_and_grad("sse", np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
        double, _ = loss_and_grad("sse", np.array([[1.0, 0.0], [1.0, 0.0]]),
                                  np.array([[0.0, 1.0], [0.0, 1.0]]))
        assert single == double == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            loss_and_grad("sse", np.zeros((1, 2)), np.zeros((1, 3)))


class TestDenseForward:
    def test_identity(self):
        params = DenseParams(w=np.eye(2), b=np.zeros(2), w2=np.ones((2, 2)))
        out, _ = dense_forward(params, np.array([[1.0, 2.0]]), "linear")
        np.testing.assert_array_equal(out, [[1.0, 2.0]])

    def test_double_weight_values(self):
        params = DenseParams(w=np.array([[1.0, 0.0], [0.0, 1.0]]), b=np.zeros(2),
                             w2=np.array([[2.0, 3.0], [4.0, 5.0]]))
        out, _ = dense_forward(params, np.array([[1.0, 2.0]]), "linear")
        np.testing.assert_array_equal(out, [[2.0, 10.0]])

    def test_zero_effective_weights_leave_bias(self):
        rng = Rng(1)
        params = DenseParams(w=rng.uniform(-1, 1, (2, 3)), b=np.array([4.0, -1.0]),
                             w2=np.zeros((2, 3)))
        out, _ = dense_forward(params, np.array([[0.5, 0.5, 0.5]]), "linear")
        np.testing.assert_array_equal(out, [[4.0, -1.0]])

    def test_shape_mismatch(self):
        params = DenseParams(w=np.ones((2, 3)), b=np.zeros(2))
        with pytest.raises(DimensionError):
            dense_forward(params, np.ones((1, 4)), "linear")


class TestDenseBackward:
    def _random_params(self, rng, k, m, double):
        return DenseParams(w=rng.uniform(-1, 1, (k, m)), b=rng.uniform(-1, 1, k),
                           w2=rng.uniform(-1, 1, (k, m)) if double else None)

    def test_zero_upstream(self):
        rng = Rng(2)
        params = self._random_params(rng, 3, 2, True)
        _, cache = dense_forward(params, rng.uniform(-1, 1, (2, 2)), "sigmoid")
        grads, grad_in = dense_backward(params, cache, np.zeros((2, 3)))
        for g in grads.values():
            assert not g.any()
        assert not grad_in.any()

    def test_swap_symmetry(self):
        rng = Rng(3)
        x = rng.uniform(-1, 1, (2, 4))
        upstream = rng.uniform(-1, 1, (2, 3))
        w = rng.uniform(-1, 1, (3, 4))
        w2 = rng.uniform(-1, 1, (3, 4))
        b = rng.uniform(-1, 1, 3)
        p1 = DenseParams(w=w, b=b, w2=w2)
        p2 = DenseParams(w=w2, b=b, w2=w)
        out1, c1 = dense_forward(p1, x, "sigmoid")
        out2, c2 = dense_forward(p2, x, "sigmoid")
        np.testing.assert_array_equal(out1, out2)
        g1, in1 = dense_backward(p1, c1, upstream)
        g2, in2 = dense_backward(p2, c2, upstream)
        np.testing.assert_array_equal(g1["w"], g2["w2"])
        np.testing.assert_array_equal(g1["w2"], g2["w"])
        np.testing.assert_array_equal(in1, in2)

    def test_gamma_ones_matches_standard(self):
        rng = Rng(4)
        x = rng.uniform(-1, 1, (3, 4))
        upstream = rng.uniform(-1, 1, (3, 2))
        w = rng.uniform(-1, 1, (2, 4))
        b = rng.uniform(-1, 1, 2)
        std = DenseParams(w=w, b=b)
        dw = DenseParams(w=w, b=b, w2=np.ones((2, 4)))
        out_s, c_s = dense_forward(std, x, "sigmoid")
        out_d, c_d = dense_forward(dw, x, "sigmoid")
        np.testing.assert_array_equal(out_s, out_d)
        g_s, _ = dense_backward(std, c_s, upstream)
        g_d, _ = dense_backward(dw, c_d, upstream)
        assert np.max(np.abs(g_s["w"] - g_d["w"])) <= 1e-12
        # the second-weight gradient is the effective-weight gradient times w
        np.testing.assert_allclose(g_d["w2"], g_s["w"] * w, atol=1e-12)

    def test_reparameterization_identity_bitwise(self):
        rng = Rng(5)
        x = rng.uniform(-1, 1, (2, 3))
        w = rng.uniform(-1, 1, (4, 3))
        w2 = rng.uniform(-1, 1, (4, 3))
        b = rng.uniform(-1, 1, 4)
        out_dw, _ = dense_forward(DenseParams(w=w, b=b, w2=w2), x, "sigmoid")
        out_std, _ = dense_forward(DenseParams(w=w * w2, b=b), x, "sigmoid")
        np.testing.assert_array_equal(out_dw, out_std)

    def test_finite_difference_oracle(self):
        # 2-in/2-out single layer, scalar SSE-style loss
        rng = Rng(6)
        x = rng.uniform(-1, 1, (2, 2))
        target = rng.uniform(-1, 1, (2, 2))
        params = self._random_params(rng, 2, 2, True)

        def loss():
            out, _ = dense_forward(params, x, "linear")
            return loss_and_grad("sse", out, target)[0]

        out, cache = dense_forward(params, x, "linear")
        _, grad_out = loss_and_grad("sse", out, target)
        grads, _ = dense_backward(params, cache, grad_out)
        for name, arr in (("w", params.w), ("w2", params.w2), ("b", params.b)):
            assert rel_err(grads[name], numeric_grad(loss, arr)) < 1e-6

    def test_missing_cache(self):
        params = DenseParams(w=np.ones((2, 2)), b=np.zeros(2))
        with pytest.raises(RuntimeError):
            dense_backward(params, None, np.zeros((1, 2)))


class TestConv:
    def test_same_padding_rule(self):
        # SAME: output extent ceil(in/stride), pad split floor-left/ceil-right
        assert same_padding(3, 2, 2) == (0, 1, 2)
        assert same_padding(5, 3, 1) == (1, 1, 5)
        assert same_padding(5, 4, 2) == (1, 2, 3)

    def test_identity_kernel(self):
        params = ConvParams(kernels=np.ones((1, 1, 1, 1)), b=np.array([0.5]), stride=1)
        x = Rng(7).uniform(0, 1, (2, 3, 3, 1))
        out, _ = conv2d_forward(params, x, "sigmoid")
        np.testing.assert_allclose(out, activation_apply("sigmoid", x + 0.5))

    def test_output_shape_stride2(self):
        params = ConvParams(kernels=Rng(8).uniform(-1, 1, (2, 2, 1, 3)),
                            b=np.zeros(3), stride=2)
        out, _ = conv2d_forward(params, np.ones((1, 3, 3, 1)), "linear")
        assert out.shape == (1, 2, 2, 3)

    def test_zero_kernels(self):
        params = ConvParams(kernels=np.zeros((3, 3, 1, 2)), b=np.zeros(2), stride=1)
        out, _ = conv2d_forward(params, np.ones((1, 4, 4, 1)), "relu")
        assert not out.any()

    def test_channel_mismatch(self):
        params = ConvParams(kernels=np.ones((2, 2, 3, 1)), b=np.zeros(1), stride=1)
        with pytest.raises(DimensionError):
            conv2d_forward(params, np.ones((1, 4, 4, 2)), "linear")

    def test_zero_upstream(self):
        params = ConvParams(kernels=Rng(9).uniform(-1, 1, (2, 2, 1, 2)),
                            b=np.zeros(2), stride=1)
        out, cache = conv2d_forward(params, np.ones((1, 3, 3, 1)), "linear")
        grads, grad_in = conv2d_backward(params, cache, np.zeros_like(out))
        assert not grads["kernels"].any() and not grads["b"].any()
        assert not grad_in.any()

    def test_one_by_one_matches_dense_per_pixel(self):
        rng = Rng(10)
        kernels = rng.uniform(-1, 1, (1, 1, 2, 3))
        b = rng.uniform(-1, 1, 3)
        x = rng.uniform(-1, 1, (2, 4, 4, 2))
        conv_out, _ = conv2d_forward(ConvParams(kernels=kernels, b=b, stride=1),
                                     x, "linear")
        dense = DenseParams(w=kernels[0, 0].T.copy(), b=b)
        dense_out, _ = dense_forward(dense, x.reshape(-1, 2), "linear")
        np.testing.assert_allclose(conv_out.reshape(-1, 3), dense_out, atol=1e-14)

    def test_finite_difference_oracle(self):
        rng = Rng(11)
        x = rng.uniform(-1, 1, (1, 4, 4, 1))
        params = ConvParams(kernels=rng.uniform(-1, 1, (3, 3, 1, 2)),
                            b=rng.uniform(-1, 1, 2), stride=1)
        target = rng.uniform(-1, 1, (1, 4, 4, 2))

        def loss():
            out, _ = conv2d_forward(params, x, "sigmoid")
            return loss_and_grad("sse", out.reshape(1, -1), target.reshape(1, -1))[0]

        out, cache = conv2d_forward(params, x, "sigmoid")
        _, grad_out = loss_and_grad("sse", out.reshape(1, -1), target.reshape(1, -1))
        grads, grad_in = conv2d_backward(params, cache, grad_out.reshape(out.shape))
        assert rel_err(grads["kernels"], numeric_grad(loss, params.kernels)) < 1e-6
        assert rel_err(grads["b"], numeric_grad(loss, params.b)) < 1e-6
        assert rel_err(grad_in, numeric_grad(loss, x)) < 1e-6

    def test_stride2_finite_difference(self):
        rng = Rng(13)
        x = rng.uniform(-1, 1, (2, 5, 5, 2))
        params = ConvParams(kernels=rng.uniform(-1, 1, (3, 3, 2, 2)),
                            b=rng.uniform(-1, 1, 2), stride=2)
        target = rng.uniform(-1, 1, (2, 3, 3, 2))

        def loss():
            out, _ = conv2d_forward(params, x, "sigmoid")
            return loss_and_grad("sse", out.reshape(2, -1), target.reshape(2, -1))[0]

        out, cache = conv2d_forward(params, x, "sigmoid")
        _, grad_out = loss_and_grad("sse", out.reshape(2, -1), target.reshape(2, -1))
        grads, grad_in = conv2d_backward(params, cache, grad_out.reshape(out.shape))
        assert rel_err(grads["kernels"], numeric_grad(loss, params.kernels)) < 1e-6
        assert rel_err(grad_in, numeric_grad(loss, x)) < 1e-6
