"""Reverse-mode gradients against central finite differences."""

import numpy as np
import pytest

from sickfuse.tensor import Parameter, Tape, Tensor, backward, ops

from gradsuite import CASES, analytic_gradient, gradcheck_error


@pytest.mark.parametrize("label,builder,seed", CASES, ids=[c[0] for c in CASES])
def test_gradient_matches_finite_differences(label, builder, seed):
    fn, x0 = builder(seed)
    err = gradcheck_error(fn, x0)
    assert err < 1e-4, f"{label}: max relative error {err:.3e}"


def test_backward_sum_of_squares():
    # loss = sum(x^2) at x=[3] -> grad [6]
    g = analytic_gradient(lambda x: ops.sum(ops.mul(x, x)), np.array([3.0]))
    assert np.allclose(g, [6.0], atol=1e-12)


def test_backward_relu_dense_composite():
    rng = np.random.default_rng(5)
    w = Tensor(rng.normal(size=(4, 3)))
    b = Tensor(rng.normal(size=(3,)))

    def fn(x):
        return ops.sum(ops.relu(ops.dense(x, w, b)))

    x0 = rng.normal(size=(5, 4)) + 0.05
    assert gradcheck_error(fn, x0) < 1e-4


def test_backward_conv_pool_dense_softmax_crossentropy_chain():
    # conv3d -> maxpool -> dense -> softmax -> cross-entropy on a (4,6,6,1) input
    rng = np.random.default_rng(7)
    kernel = Tensor(rng.normal(size=(3, 3, 3, 1, 2)) * 0.5)
    bias = Tensor(rng.normal(size=(2,)) * 0.1)
    dense_w = Tensor(rng.normal(size=(2 * 3 * 3 * 2, 4)) * 0.3)
    dense_b = Tensor(rng.normal(size=(4,)) * 0.1)
    target = np.zeros((1, 4))
    target[0, 2] = 1.0
    t = Tensor(target)

    def fn(x):
        y = ops.conv3d(x, kernel, bias, padding="valid")          # (2,4,4,2)
        y = ops.maxpool(y, (1, 2, 2), (1, 1, 1))                  # (2,3,3,2)
        y = ops.reshape(y, (1, -1))
        y = ops.dense(y, dense_w, dense_b)
        p = ops.softmax(y)
        logp = ops.log(ops.maximum_scalar(p, 1e-12))
        return ops.neg(ops.sum(ops.mul(t, logp)))

    x0 = rng.normal(size=(4, 6, 6, 1))
    assert gradcheck_error(fn, x0) < 1e-4


def test_backward_requires_scalar_loss():
    from sickfuse.errors import ContractError
    p = Parameter("x", np.ones(3))
    with Tape() as tape:
        tape.watch(p)
        out = ops.mul_scalar(p.value, 2.0)
    with pytest.raises(ContractError):
        backward(tape, out)


def test_backward_untouched_parameter_gets_zero_grad():
    p_used = Parameter("used", np.array([2.0]))
    p_idle = Parameter("idle", np.array([5.0, 1.0]))
    with Tape() as tape:
        tape.watch_all([p_used, p_idle])
        loss = ops.sum(ops.mul(p_used.value, p_used.value))
    grads = backward(tape, loss)
    assert np.allclose(grads["used"].data, [4.0])
    assert np.array_equal(grads["idle"].data, np.zeros(2))


def test_backward_accumulates_over_reuse():
    # y = x*x + 3x  => dy/dx = 2x + 3
    p = Parameter("x", np.array([4.0]))
    with Tape() as tape:
        tape.watch(p)
        loss = ops.sum(ops.add(ops.mul(p.value, p.value),
                               ops.mul_scalar(p.value, 3.0)))
    grads = backward(tape, loss)
    assert np.allclose(grads["x"].data, [11.0], atol=1e-12)


def test_l2_accumulator_matches_direct_summation():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(4, 5, 5, 2)))
    k1 = Parameter("k1", rng.normal(size=(3, 3, 3, 2, 2)))
    k2 = Parameter("k2", rng.normal(size=(3, 3, 3, 2, 1)))
    with Tape() as tape:
        y = ops.conv3d(x, k1.value, padding="same", l2=0.01)
        y = ops.conv3d(y, k2.value, padding="same", l2=0.01)
        total = tape.regularization_total()
    expected = 0.01 * (k1.value.data ** 2).sum() + 0.01 * (k2.value.data ** 2).sum()
    assert abs(total.item() - expected) < 1e-12
    # infer path (no tape) accumulates nothing
    y2 = ops.conv3d(x, k1.value, padding="same", l2=0.01)
    assert y2.shape == (4, 5, 5, 2)


def test_l2_gradient_flows_through_accumulator():
    rng = np.random.default_rng(9)
    x = Tensor(rng.normal(size=(3, 4, 4, 1)))
    k = Parameter("k", rng.normal(size=(2, 2, 2, 1, 1)))
    with Tape() as tape:
        tape.watch(k)
        y = ops.conv3d(x, k.value, padding="valid", l2=0.5)
        loss = tape.regularization_total()
    grads = backward(tape, loss)
    assert np.allclose(grads["k"].data, 2 * 0.5 * k.value.data, atol=1e-12)
