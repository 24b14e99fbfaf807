import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deskvid import tensor as T
from deskvid.gradcheck import OPS, check_all, grad_check
from deskvid.tensor import GraphError, NonFiniteError, OptimizerState, Tensor, adamw_step


def test_matmul_examples():
    eye = Tensor([[1.0, 0.0], [0.0, 1.0]])
    b = Tensor([[3.0, 4.0], [5.0, 6.0]])
    np.testing.assert_array_equal(T.matmul(eye, b).data, b.data)
    np.testing.assert_array_equal(T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data, [[11.0]])
    np.testing.assert_array_equal(T.matmul(Tensor(np.zeros((2, 2))), b).data, np.zeros((2, 2)))


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_default_precision_is_32_bit():
    assert Tensor([1.0, 2.0]).dtype == np.float32
    with T.precision("float64"):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_non_finite_values_raise():
    with pytest.raises(NonFiniteError), np.errstate(over="ignore"):
        T.scale(Tensor([1e30]), 1e30)
    with pytest.raises(NonFiniteError):
        T.add(Tensor([1.0, 2.0]), np.array([0.0, np.nan]))


def test_backward_examples():
    x = Tensor([0.5, -1.0, 2.0], requires_grad=True)
    grads = T.backward(T.sum_(x))
    np.testing.assert_array_equal(grads[x], [1.0, 1.0, 1.0])
    y = Tensor([1.0, 2.0], requires_grad=True)
    T.backward(T.sum_(T.mul(y, y)))
    np.testing.assert_allclose(y.grad, [2.0, 4.0])


def test_tape_is_single_use():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = T.sum_(T.mul(x, x))
    T.backward(loss)
    with pytest.raises(GraphError):
        T.backward(loss)


def test_backward_needs_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(GraphError):
        T.backward(T.scale(x, 2.0))


@settings(max_examples=30, deadline=None)
@given(shape=st.lists(st.integers(1, 4), min_size=1, max_size=3), c=st.floats(-5, 5, allow_nan=False))
def test_linear_function_gradient_is_constant(shape, c):
    with T.precision("float64"):
        x = Tensor(np.random.default_rng(0).uniform(-1, 1, shape), requires_grad=True)
        T.backward(T.sum_(T.scale(x, c)))
        np.testing.assert_allclose(x.grad, np.full(shape, c))


def test_shared_subexpression_accumulates():
    with T.precision("float64"):
        x = Tensor([3.0], requires_grad=True)
        y = T.mul(x, x)
        T.backward(T.sum_(T.add(y, y)))
        np.testing.assert_allclose(x.grad, [12.0])


def test_adamw_single_scalar_step():
    p = {"p": Tensor([1.0], requires_grad=True, dtype=np.float64)}
    state = OptimizerState(lr=0.1, beta1=0.9, beta2=0.999, eps=1e-15, clip=None)
    adamw_step(p, {"p": np.array([1.0])}, state)
    # bias-corrected moments give m_hat = v_hat = 1, so the step is lr * 1 / (1 + eps)
    np.testing.assert_allclose(p["p"].data, [0.9], atol=1e-12)
    assert state.step == 1


def test_adamw_zero_gradient_is_identity():
    rng = np.random.default_rng(0)
    params = {"a": Tensor(rng.normal(size=(3, 2)), requires_grad=True), "b": Tensor(rng.normal(size=4), requires_grad=True)}
    before = {k: v.data.copy() for k, v in params.items()}
    state = OptimizerState(lr=0.5)
    for _ in range(3):
        adamw_step(params, {k: np.zeros(v.shape) for k, v in params.items()}, state)
    for k in params:
        np.testing.assert_array_equal(params[k].data, before[k])
    assert state.step == 3


def test_adamw_clips_by_global_norm():
    # gradient (3, 4) has norm 5; with clip 1 the moments see (0.6, 0.8)
    params = {"a": Tensor([0.0], requires_grad=True, dtype=np.float64), "b": Tensor([0.0], requires_grad=True, dtype=np.float64)}
    state = OptimizerState(lr=0.1, clip=1.0)
    adamw_step(params, {"a": np.array([3.0]), "b": np.array([4.0])}, state)
    assert state.last_grad_norm == pytest.approx(5.0)
    np.testing.assert_allclose(state.m["a"], [0.1 * 0.6])
    np.testing.assert_allclose(state.m["b"], [0.1 * 0.8])
    np.testing.assert_allclose(state.v["b"], [0.001 * 0.64])


def test_adamw_rejects_bad_gradients():
    params = {"a": Tensor([0.0], requires_grad=True)}
    with pytest.raises(NonFiniteError):
        adamw_step(params, {"a": np.array([np.inf])}, OptimizerState())
    with pytest.raises(ValueError):
        adamw_step(params, {"a": np.zeros(2)}, OptimizerState())
    with pytest.raises(KeyError):
        adamw_step(params, {"zz": np.zeros(1)}, OptimizerState())


@pytest.mark.parametrize("op,shapes", [("softmax", [(4,)]), ("rms_norm", [(2, 8)]), ("matmul", [(3, 3), (3, 3)])])
def test_grad_check_32_bit_examples(op, shapes):
    assert grad_check(op, shapes, tolerance=1e-3, dtype="float32").passed


@pytest.mark.parametrize("op", sorted(OPS))
def test_every_primitive_passes_in_64_bit(op):
    report = grad_check(op, tolerance=1e-5, dtype="float64", seed=3)
    assert report.passed, report


def test_primitive_set_is_complete():
    assert set(T.PRIMITIVES) == set(OPS)
    assert all(r.passed for r in check_all())
