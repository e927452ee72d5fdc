"""Forward behavior of the layer primitives against spec'd and oracle values."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sickfuse.errors import ConfigError, DegenerateBatch, ShapeError
from sickfuse.tensor import Tensor, ops

from oracles import loop_conv1d, loop_conv3d, loop_matmul, loop_maxpool


class TestTensor:
    def test_rejects_non_finite_in_checked_mode(self):
        with pytest.raises(ValueError):
            Tensor([1.0, np.nan])
        with pytest.raises(ValueError):
            Tensor([np.inf])

    def test_data_length_matches_shape(self):
        t = Tensor(np.arange(24.0).reshape(2, 3, 4))
        assert t.shape == (2, 3, 4)
        assert t.size == 24


class TestConv3d:
    def test_constant_input_all_ones_kernel_valid(self):
        c = 1.7
        x = np.full((5, 6, 6, 1), c)
        k = np.ones((3, 3, 3, 1, 1))
        out = ops.conv3d(Tensor(x), Tensor(k), padding="valid")
        assert out.shape == (3, 4, 4, 1)
        assert np.allclose(out.data, 27 * c, atol=1e-12)
        assert np.allclose(out.data, loop_conv3d(x, k), atol=1e-12)

    def test_delta_kernel_same_padding_is_identity(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(4, 5, 5, 2))
        k = np.zeros((3, 3, 3, 2, 2))
        k[1, 1, 1, 0, 0] = 1.0
        k[1, 1, 1, 1, 1] = 1.0
        out = ops.conv3d(Tensor(x), Tensor(k), padding="same")
        assert np.allclose(out.data, x, atol=1e-12)

    def test_random_case_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 5, 6, 3))
        k = rng.normal(size=(2, 3, 3, 3, 2))
        for padding in ("valid", "same"):
            out = ops.conv3d(Tensor(x), Tensor(k), padding=padding)
            assert np.allclose(out.data, loop_conv3d(x, k, padding), atol=1e-10)

    def test_batched_equals_per_sample(self):
        rng = np.random.default_rng(2)
        xb = rng.normal(size=(3, 4, 5, 5, 2))
        k = rng.normal(size=(3, 3, 3, 2, 2))
        batched = ops.conv3d(Tensor(xb), Tensor(k), padding="same")
        for i in range(3):
            single = ops.conv3d(Tensor(xb[i]), Tensor(k), padding="same")
            assert np.allclose(batched.data[i], single.data, atol=1e-12)

    def test_paper_scale_input_shape_accepted_and_cin_mismatch_rejected(self):
        x = Tensor(np.zeros((60, 256, 256, 3)))
        out = ops.conv3d(x, Tensor(np.zeros((3, 3, 3, 3, 1))), padding="same")
        assert out.shape == (60, 256, 256, 1)
        with pytest.raises(ShapeError):
            ops.conv3d(x, Tensor(np.zeros((3, 3, 3, 4, 1))), padding="same")

    def test_kernel_larger_than_input_rejected(self):
        with pytest.raises(ShapeError):
            ops.conv3d(Tensor(np.zeros((2, 2, 2, 1))),
                       Tensor(np.zeros((3, 3, 3, 1, 1))), padding="valid")


class TestConv1d:
    def test_delta_kernel_same_padding_is_identity(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(15, 9))
        k = np.zeros((3, 9, 9))
        k[1] = np.eye(9)
        out = ops.conv1d(Tensor(x), Tensor(k), padding="same")
        assert np.allclose(out.data, x, atol=1e-12)

    def test_all_ones_kernel_on_constant_input_valid(self):
        c = -0.6
        x = np.full((10, 1), c)
        k = np.ones((3, 1, 1))
        out = ops.conv1d(Tensor(x), Tensor(k), padding="valid")
        assert out.shape == (8, 1)
        assert np.allclose(out.data, 3 * c, atol=1e-12)
        assert np.allclose(out.data, loop_conv1d(x, k), atol=1e-12)

    def test_time_distributed_slice_shape_accepted(self):
        out = ops.conv1d(Tensor(np.zeros((15, 9))),
                         Tensor(np.zeros((3, 9, 4))), padding="same")
        assert out.shape == (15, 4)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(12, 4))
        k = rng.normal(size=(5, 4, 3))
        for padding in ("valid", "same"):
            out = ops.conv1d(Tensor(x), Tensor(k), padding=padding)
            assert np.allclose(out.data, loop_conv1d(x, k, padding), atol=1e-10)


class TestMaxpool:
    def test_two_by_two_block(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1)
        out = ops.maxpool(Tensor(x), (2, 2), (2, 2))
        assert out.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == 4.0

    def test_constant_input_gives_constant_output(self):
        x = np.full((6, 8, 2), 3.25)
        out = ops.maxpool(Tensor(x), (2, 2), (2, 2))
        assert np.all(out.data == 3.25)

    def test_paper_pool_shape(self):
        x = Tensor(np.zeros((60, 256, 256, 2)))
        out = ops.maxpool(x, (2, 2, 2), (2, 2, 2))
        assert out.shape == (30, 128, 128, 2)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(7, 9, 3))
        out = ops.maxpool(Tensor(x), (2, 3), (2, 2))
        assert np.allclose(out.data, loop_maxpool(x, (2, 3), (2, 2)), atol=1e-12)

    def test_window_larger_than_input_rejected(self):
        with pytest.raises(ShapeError):
            ops.maxpool(Tensor(np.zeros((3, 2))), (4,), (1,))

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_output_values_come_from_input_windows(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(5, 7, 2))
        out = ops.maxpool(Tensor(x), (2, 2), (2, 2)).data
        for i in range(out.shape[0]):
            for j in range(out.shape[1]):
                for c in range(2):
                    window = x[2 * i:2 * i + 2, 2 * j:2 * j + 2, c]
                    assert out[i, j, c] in window


class TestDense:
    def test_identity_weights_zero_bias(self):
        x = np.array([[2.0, -1.0, 0.5]])
        out = ops.dense(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3)))
        assert np.allclose(out.data, x, atol=1e-15)

    def test_hand_arithmetic(self):
        out = ops.dense(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor([1.0, 1.0]))
        assert np.allclose(out.data, [[2.0, 3.0]], atol=1e-15)

    def test_random_case_matches_triple_loop_matmul(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(5, 4))
        w = rng.normal(size=(4, 3))
        b = rng.normal(size=(3,))
        out = ops.dense(Tensor(x), Tensor(w), Tensor(b))
        assert np.allclose(out.data, loop_matmul(x, w) + b, atol=1e-12)

    def test_inner_dim_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            ops.dense(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


class TestActivations:
    def test_relu(self):
        out = ops.activation(Tensor([-1.0, 0.0, 2.0]), "relu")
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_softmax_uniform(self):
        out = ops.activation(Tensor([0.0, 0.0, 0.0, 0.0]), "softmax")
        assert np.allclose(out.data, 0.25, atol=1e-15)

    def test_softmax_large_magnitude_no_overflow(self):
        out = ops.activation(Tensor([1000.0, 0.0]), "softmax")
        assert np.all(np.isfinite(out.data))
        # high-precision oracle: exp(1000)/(exp(1000)+1) to double rounding
        import mpmath
        expected = float(mpmath.exp(1000) / (mpmath.exp(1000) + 1))
        assert abs(out.data[0] - expected) < 1e-12
        assert abs(out.data[1] - (1 - expected)) < 1e-12

    def test_linear_is_identity(self):
        x = np.array([3.0, -2.0])
        assert np.array_equal(ops.activation(Tensor(x), "linear").data, x)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            ops.activation(Tensor([1.0]), "swish")

    @given(st.lists(st.floats(min_value=-1e4, max_value=1e4,
                              allow_nan=False, allow_infinity=False),
                    min_size=2, max_size=8))
    @settings(max_examples=60, deadline=None)
    def test_softmax_rows_are_distributions(self, values):
        out = ops.softmax(Tensor(np.array(values))).data
        assert np.all(out >= 0)
        assert abs(out.sum() - 1.0) <= 1e-6


class TestBatchnorm:
    def test_standardized_batch_unchanged(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(64, 3))
        x = (x - x.mean(axis=0)) / x.std(axis=0)
        stats = ops.RunningStats(3)
        out = ops.batchnorm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)),
                            stats, "train", eps=1e-8)
        assert np.allclose(out.data, x, atol=1e-6)

    def test_constant_batch_maps_to_zero(self):
        x = np.full((8, 4), 2.5)
        stats = ops.RunningStats(4)
        out = ops.batchnorm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)),
                            stats, "train")
        assert np.allclose(out.data, 0.0, atol=1e-12)

    def test_infer_mode_matches_hand_formula(self):
        stats = ops.RunningStats(2)
        stats.mean = np.array([1.0, -2.0])
        stats.var = np.array([4.0, 9.0])
        gamma, beta, eps = np.array([2.0, 0.5]), np.array([0.1, -0.3]), 1e-5
        x = np.array([[3.0, 1.0], [-1.0, -5.0]])
        out = ops.batchnorm(Tensor(x), Tensor(gamma), Tensor(beta), stats,
                            "infer", eps=eps)
        expected = (x - stats.mean) / np.sqrt(stats.var + eps) * gamma + beta
        assert np.allclose(out.data, expected, atol=1e-12)

    def test_train_updates_running_stats(self):
        rng = np.random.default_rng(8)
        x = rng.normal(loc=5.0, size=(32, 2))
        stats = ops.RunningStats(2)
        ops.batchnorm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                      stats, "train", momentum=0.1)
        expected_mean = 0.9 * 0.0 + 0.1 * x.mean(axis=0)
        assert np.allclose(stats.mean, expected_mean, atol=1e-12)

    def test_single_sample_train_batch_rejected(self):
        stats = ops.RunningStats(3)
        with pytest.raises(DegenerateBatch):
            ops.batchnorm(Tensor(np.zeros((1, 3))), Tensor(np.ones(3)),
                          Tensor(np.zeros(3)), stats, "train")


class TestDropout:
    def test_rate_zero_is_identity(self):
        x = np.array([1.0, 2.0, 3.0])
        out = ops.dropout(Tensor(x), 0.0, "train", np.random.default_rng(0))
        assert np.array_equal(out.data, x)

    def test_infer_mode_is_identity(self):
        x = np.array([1.0, -2.0, 3.0])
        out = ops.dropout(Tensor(x), 0.5, "infer")
        assert np.array_equal(out.data, x)

    def test_monte_carlo_mean_preserved(self):
        # inverted dropout is unbiased: mean over 1e4 seeded masks ~ input
        x = np.array([1.0, -2.0, 3.0, 0.5])
        rng = np.random.default_rng(42)
        acc = np.zeros_like(x)
        trials = 10_000
        for _ in range(trials):
            acc += ops.dropout(Tensor(x), 0.5, "train", rng).data
        assert np.all(np.abs(acc / trials - x) <= 0.05 * np.abs(x))

    def test_same_seed_bitwise_identical(self):
        x = Tensor(np.linspace(-1, 1, 50))
        a = ops.dropout(x, 0.5, "train", np.random.default_rng(9)).data
        b = ops.dropout(x, 0.5, "train", np.random.default_rng(9)).data
        assert np.array_equal(a, b)

    def test_bad_rate_rejected(self):
        with pytest.raises(ConfigError):
            ops.dropout(Tensor([1.0]), 1.0, "train", np.random.default_rng(0))


class TestLstm:
    def test_all_zero_parameters_give_zero_outputs(self):
        x = Tensor(np.random.default_rng(1).normal(size=(5, 3)))
        wx = Tensor(np.zeros((3, 8)))
        wh = Tensor(np.zeros((2, 8)))
        b = Tensor(np.zeros(8))
        out = ops.lstm_forward(x, wx, wh, b, return_sequence=True)
        assert out.shape == (5, 2)
        assert np.allclose(out.data, 0.0, atol=1e-15)

    def test_single_step_matches_hand_computed_gates(self):
        # hidden size 1, one step; gate order i,f,g,o
        wx = np.array([[0.5, -0.3, 0.8, 0.2]])
        wh = np.array([[0.1, 0.4, -0.2, 0.3]])
        b = np.array([0.1, -0.1, 0.2, 0.0])
        x_val = 0.7
        z = x_val * wx[0] + b
        sig = lambda v: 1.0 / (1.0 + math.exp(-v))
        i, f, g, o = sig(z[0]), sig(z[1]), math.tanh(z[2]), sig(z[3])
        c = i * g
        expected_h = o * math.tanh(c)
        out = ops.lstm_forward(Tensor([[x_val]]), Tensor(wx), Tensor(wh), Tensor(b))
        assert abs(out.data[0] - expected_h) < 1e-12

    def test_inconsistent_parameter_shapes_rejected(self):
        with pytest.raises(ShapeError):
            ops.lstm_forward(Tensor(np.zeros((4, 3))), Tensor(np.zeros((3, 8))),
                             Tensor(np.zeros((2, 8))), Tensor(np.zeros(7)))

    def test_recurrent_dropout_identity_in_infer(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(2, 4, 3)))
        wx = Tensor(rng.normal(size=(3, 12)))
        wh = Tensor(rng.normal(size=(3, 12)))
        b = Tensor(rng.normal(size=(12,)))
        a = ops.lstm_forward(x, wx, wh, b, recurrent_dropout=0.2, mode="infer")
        c = ops.lstm_forward(x, wx, wh, b, recurrent_dropout=0.0, mode="infer")
        assert np.array_equal(a.data, c.data)
