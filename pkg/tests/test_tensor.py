"""Tests for the tape-based differentiation core."""

import numpy as np
import pytest

from gmm_wae import tensor as T
from gmm_wae.exceptions import (
    ContractError,
    DimensionError,
    GradCheckInvalidError,
    NumericError,
)
from gmm_wae.model import GRUParams, gru_step
from gmm_wae.tensor import Tape, Tensor, grad_check


class TestMatmul:
    """Shape contract and values of matrix products."""

    def test_shape(self):
        a = Tensor(np.ones((2, 3)))
        b = Tensor(np.ones((3, 4)))
        assert (a @ b).shape == (2, 4)

    def test_hand_evaluation(self):
        out = Tensor([[1, 2], [3, 4]]) @ Tensor([[1], [1]])
        np.testing.assert_array_equal(out.data, [[3], [7]])

    def test_mismatch_names_both_shapes(self):
        a = Tensor(np.ones((2, 3)))
        with pytest.raises(DimensionError, match=r"\(2, 3\) and \(2, 3\)"):
            a @ a

    def test_dimension_error_is_contract_error(self):
        with pytest.raises(ContractError):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


class TestBackward:
    """Gradients populated by `Tape.backward`."""

    def test_bilinear(self, float64):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        y = Tensor([4.0, 5.0, 6.0], requires_grad=True)
        with Tape() as tape:
            loss = (x * y).sum()
        tape.backward(loss)

        np.testing.assert_array_equal(x.grad, y.data)
        np.testing.assert_array_equal(y.grad, x.data)

    def test_sigmoid_at_zero(self, float64):
        w = Tensor(0.0, requires_grad=True)
        with Tape() as tape:
            loss = w.sigmoid()
        tape.backward(loss)

        assert w.grad == pytest.approx(0.25)

    def test_fan_in_accumulates(self, float64):
        x = Tensor(3.0, requires_grad=True)
        with Tape() as tape:
            loss = x + x
        tape.backward(loss)

        assert x.grad == pytest.approx(2.0)

    def test_accumulate_without_reset(self, float64):
        x = Tensor(2.0, requires_grad=True)
        for reset in (True, False):
            with Tape() as tape:
                loss = x * 3.0
            tape.backward(loss, reset=reset)

        assert x.grad == pytest.approx(6.0)

    def test_module_level_backward(self, float64):
        x = Tensor([1.0, -1.0], requires_grad=True)
        with Tape():
            loss = x.square().sum()
        T.backward(loss)

        np.testing.assert_allclose(x.grad, [2.0, -2.0])

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            out = x * 2.0
        with pytest.raises(ContractError):
            tape.backward(out)

    def test_loss_from_another_tape(self):
        x = Tensor(1.0, requires_grad=True)
        with Tape():
            loss = x * 2.0
        with pytest.raises(ContractError):
            Tape().backward(loss)

    def test_nan_loss_names_op(self, float64):
        x = Tensor([-1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            loss = (x.log() * 3.0).sum()
        with pytest.raises(NumericError, match="'log'"):
            tape.backward(loss)

    def test_nan_gradient_names_op(self, float64):
        x = Tensor(0.0, requires_grad=True)
        with Tape() as tape:
            loss = x.log().exp()
        with np.errstate(divide="ignore", invalid="ignore"):
            with pytest.raises(NumericError, match="log"):
                tape.backward(loss)

    def test_broadcast_gradient_is_reduced(self, float64):
        bias = Tensor([1.0, 2.0], requires_grad=True)
        rows = Tensor(np.ones((3, 2)))
        with Tape() as tape:
            loss = (rows + bias).sum()
        tape.backward(loss)

        np.testing.assert_array_equal(bias.grad, [3.0, 3.0])


class TestOps:
    """Shape and gradient behaviour of individual operations."""

    def test_broadcast_failure(self):
        with pytest.raises(DimensionError):
            Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))

    def test_cross_entropy_of_zero_logits(self, float64):
        logits = Tensor(np.zeros((3, 5)))
        losses = T.softmax_cross_entropy(logits, np.array([0, 2, 4]))
        np.testing.assert_allclose(losses.data, np.log(5.0))

    def test_cross_entropy_mask(self, float64):
        logits = Tensor(np.random.default_rng(0).standard_normal((2, 4)), requires_grad=True)
        with Tape() as tape:
            losses = T.softmax_cross_entropy(logits, np.array([1, 3]), np.array([1.0, 0.0]))
            loss = losses.sum()
        tape.backward(loss)

        assert losses.data[1] == 0.0
        np.testing.assert_array_equal(logits.grad[1], np.zeros(4))

    def test_slice_gradient(self, float64):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with Tape() as tape:
            loss = x[:, 1].sum()
        tape.backward(loss)

        np.testing.assert_array_equal(x.grad, [[0, 1, 0], [0, 1, 0]])

    def test_concat_gradient(self, float64):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        b = Tensor(np.ones((2, 3)), requires_grad=True)
        with Tape() as tape:
            loss = (T.concat([a, b], axis=1) * np.arange(5.0)).sum()
        tape.backward(loss)

        np.testing.assert_array_equal(a.grad, [[0, 1], [0, 1]])
        np.testing.assert_array_equal(b.grad, [[2, 3, 4], [2, 3, 4]])

    def test_embedding_out_of_range(self):
        table = Tensor(np.zeros((4, 2)))
        with pytest.raises(ContractError):
            T.embedding(table, np.array([0, 4]))

    def test_embedding_gradient_accumulates_repeats(self, float64):
        table = Tensor(np.zeros((3, 2)), requires_grad=True)
        with Tape() as tape:
            loss = T.embedding(table, np.array([1, 1, 2])).sum()
        tape.backward(loss)

        np.testing.assert_array_equal(table.grad, [[0, 0], [2, 2], [1, 1]])


class TestPrecision:
    """The process-wide float precision switch."""

    def test_default_is_32_bit(self):
        assert Tensor(1.0).dtype == np.float32

    def test_context_restores(self):
        with T.precision("float64"):
            assert Tensor(1.0).dtype == np.float64
        assert Tensor(1.0).dtype == np.float32

    def test_unsupported_dtype(self):
        with pytest.raises(ContractError):
            T.set_default_dtype("float16")


class TestGradCheck:
    """Finite-difference validation of analytic gradients."""

    def test_linear_is_exact(self, float64):
        c = np.array([1.5, -2.0, 0.5])
        x = Tensor(np.random.default_rng(1).standard_normal(3))
        assert grad_check(lambda x: (x * c).sum(), [x]) <= 1e-10

    def test_gru_step_squared_loss(self, float64):
        rng = np.random.default_rng(2)
        params = GRUParams.initialize(3, 4, rng, "gru")
        x = Tensor(rng.standard_normal(3))
        h = Tensor(rng.standard_normal(4))
        inputs = [x, h, params.w_z, params.b_z, params.w_r, params.b_r, params.w_h, params.b_h]

        def f(x, h, *_):
            return gru_step(params, x, h).square().sum()

        assert grad_check(f, inputs) < 1e-6

    def test_non_deterministic_function(self, float64):
        rng = np.random.default_rng(3)
        x = Tensor([1.0, 2.0])
        with pytest.raises(GradCheckInvalidError):
            grad_check(lambda x: (x * rng.standard_normal()).sum(), [x])

    def test_non_positive_eps(self, float64):
        with pytest.raises(ContractError):
            grad_check(lambda x: x.sum(), [Tensor([1.0])], eps=0.0)

    def test_restores_requires_grad(self, float64):
        x = Tensor([1.0, 2.0])
        y = Tensor([3.0], requires_grad=True)
        grad_check(lambda x, y: (x * y).sum(), [x, y])

        assert not x.requires_grad
        assert y.requires_grad

    def test_restores_requires_grad_on_error(self, float64):
        rng = np.random.default_rng(4)
        x = Tensor([1.0, 2.0])
        with pytest.raises(GradCheckInvalidError):
            grad_check(lambda x: (x * rng.standard_normal()).sum(), [x])
        assert not x.requires_grad


def _positive(rng, *shape):
    return rng.uniform(0.5, 1.5, shape)


def _signed(rng, *shape):
    return rng.uniform(-1.5, 1.5, shape)


# op name -> (function of the inputs, input factory)
OPS = {
    "add": (lambda a, b: a + b, lambda rng: [_signed(rng, 2, 3), _signed(rng, 3)]),
    "sub": (lambda a, b: a - b, lambda rng: [_signed(rng, 2, 3), _signed(rng, 2, 3)]),
    "mul": (lambda a, b: a * b, lambda rng: [_signed(rng, 2, 3), _signed(rng, 1, 3)]),
    "div": (lambda a, b: a / b, lambda rng: [_signed(rng, 2, 3), _positive(rng, 2, 3)]),
    "neg": (lambda a: -a, lambda rng: [_signed(rng, 4)]),
    "square": (lambda a: a.square(), lambda rng: [_signed(rng, 4)]),
    "exp": (lambda a: a.exp(), lambda rng: [_signed(rng, 4)]),
    "log": (lambda a: a.log(), lambda rng: [_positive(rng, 4)]),
    "sigmoid": (lambda a: a.sigmoid(), lambda rng: [_signed(rng, 4)]),
    "tanh": (lambda a: a.tanh(), lambda rng: [_signed(rng, 4)]),
    "matmul": (lambda a, b: a @ b, lambda rng: [_signed(rng, 2, 3), _signed(rng, 3, 4)]),
    "transpose": (lambda a: T.transpose(a), lambda rng: [_signed(rng, 2, 3)]),
    "reshape": (lambda a: a.reshape(3, 2), lambda rng: [_signed(rng, 2, 3)]),
    "slice": (lambda a: a[:, 1:], lambda rng: [_signed(rng, 2, 3)]),
    "concat": (
        lambda a, b: T.concat([a, b], axis=1),
        lambda rng: [_signed(rng, 2, 3), _signed(rng, 2, 2)],
    ),
    "stack": (
        lambda a, b: T.stack([a, b], axis=0),
        lambda rng: [_signed(rng, 2, 3), _signed(rng, 2, 3)],
    ),
    "sum": (lambda a: a.sum(axis=1), lambda rng: [_signed(rng, 2, 3)]),
    "mean": (lambda a: a.mean(axis=0), lambda rng: [_signed(rng, 2, 3)]),
    "embedding": (
        lambda table: T.embedding(table, np.array([0, 2, 2, 4])),
        lambda rng: [_signed(rng, 5, 3)],
    ),
    "softmax_cross_entropy": (
        lambda logits: T.softmax_cross_entropy(
            logits, np.array([1, 4, 0]), np.array([1.0, 1.0, 0.0])
        ),
        lambda rng: [_signed(rng, 3, 5)],
    ),
}


class TestOpGradients:
    """Every differentiable op agrees with central differences."""

    @pytest.mark.parametrize("name", sorted(OPS))
    def test_twenty_seeds(self, float64, name):
        op, make_inputs = OPS[name]

        for seed in range(20):
            rng = np.random.default_rng(seed)
            inputs = [Tensor(array) for array in make_inputs(rng)]
            weights = rng.standard_normal(op(*inputs).shape)

            def f(*args):
                return (op(*args) * weights).sum()

            assert grad_check(f, inputs) < 1e-6, f"{name}, seed {seed}"
