import numpy as np
import pytest

from relkd.autodiff import (ContractError, DomainError, Parameter, ShapeError,
                            Tensor, apply, backward, concat_rows, grad_check,
                            zero_grads)


def test_row_softmax_uniform():
    out = apply("row_softmax", Tensor([[0.0, 0.0, 0.0]]))
    np.testing.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]])


def test_row_softmax_values():
    out = apply("row_softmax", Tensor([[2.0, 1.0, 0.0]]))
    np.testing.assert_allclose(out.data, [[0.6652, 0.2447, 0.0900]], atol=1e-4)


def test_l2_normalize_rows():
    out = apply("l2_normalize_rows", Tensor([[3.0, 4.0]]))
    np.testing.assert_allclose(out.data, [[0.6, 0.8]])


def test_backward_quadratic():
    x = Parameter(Tensor([1.0, 2.0]), name="x")
    loss = x.tensor.mul(x.tensor).sum()
    backward(loss)
    np.testing.assert_allclose(x.tensor.grad, [2.0, 4.0])


def test_backward_mean():
    x = Parameter(Tensor([1.0, 2.0, 3.0, 4.0]), name="x")
    backward(x.tensor.mean())
    np.testing.assert_allclose(x.tensor.grad, [0.25] * 4)


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        backward(x.mul(x))


def test_unreachable_param_zero_grad():
    from relkd.autodiff import collect_grads
    x = Parameter(Tensor([1.0, 2.0]), name="x")
    y = Parameter(Tensor([3.0]), name="y")
    backward(x.tensor.sum())
    grads = collect_grads([x, y])
    np.testing.assert_allclose(grads["y"], [0.0])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\)"):
        Tensor(np.ones((2, 3))).matmul(Tensor(np.ones((2, 3))))


def test_log_negative_raises():
    with pytest.raises(DomainError):
        Tensor([-1.0]).log()


def test_log_underflow_floored():
    out = Tensor([0.0]).log()
    assert np.isfinite(out.data).all()


def test_concat_rows_roundtrip():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.full((1, 3), 2.0), requires_grad=True)
    out = apply("concat_rows", a, b)
    assert out.shape == (3, 3)
    backward(out.sum())
    np.testing.assert_allclose(a.grad, np.ones((2, 3)))
    np.testing.assert_allclose(b.grad, np.ones((1, 3)))


def test_select_diag_grad():
    x = Tensor(np.arange(9.0).reshape(3, 3), requires_grad=True)
    backward(x.select_diag().sum())
    np.testing.assert_allclose(x.grad, np.eye(3))


def test_apply_unknown_op():
    with pytest.raises(ContractError):
        apply("convolve", Tensor([1.0]))


def test_grad_check_quadratic_tight():
    x = Parameter(Tensor(np.array([1.0, -2.0, 3.0])), name="x")
    err = grad_check(lambda ps: ps[0].tensor.square().sum(), [x])
    assert err < 1e-8


def test_backward_linearity():
    rng = np.random.default_rng(3)
    base = rng.standard_normal((3, 4))

    def grads_of(fn):
        x = Parameter(Tensor(base.copy()), name="x")
        backward(fn(x.tensor))
        return x.tensor.grad

    f = lambda t: t.square().sum()
    g = lambda t: t.exp().mean()
    a, b = 2.5, -1.25
    combined = grads_of(lambda t: f(t).scale(a).add(g(t).scale(b)))
    expected = a * grads_of(f) + b * grads_of(g)
    np.testing.assert_allclose(combined, expected, atol=1e-12)


def test_replay_bitwise_identical():
    rng = np.random.default_rng(7)
    data = rng.standard_normal((4, 4))

    def run():
        x = Parameter(Tensor(data.copy()), name="x")
        loss = x.tensor.row_softmax().log().mean().negate()
        val = loss.item()
        backward(loss)
        return val, x.tensor.grad.copy()

    v1, g1 = run()
    v2, g2 = run()
    assert v1 == v2
    assert np.array_equal(g1, g2)


def test_shared_subexpression_accumulates():
    x = Parameter(Tensor([2.0]), name="x")
    y = x.tensor.square()           # 4
    loss = y.add(y).sum()           # 2 x^2 -> d/dx = 4x = 8
    backward(loss)
    np.testing.assert_allclose(x.tensor.grad, [8.0])
