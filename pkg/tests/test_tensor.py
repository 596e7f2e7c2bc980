import numpy as np
import pytest

from app.core.errors import NonFiniteError, ShapeError
from app.services import tensor as ops
from app.services.diagnostics import op_grad_checks
from app.services.tensor import GradTape, Tensor, backward


def test_matmul_identity():
    out = ops.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor(np.eye(2)))
    np.testing.assert_array_equal(out.numpy(), [[1.0, 2.0], [3.0, 4.0]])


def test_softmax_of_equal_inputs_is_uniform():
    np.testing.assert_allclose(ops.softmax(Tensor([0.0, 0.0])).numpy(), [0.5, 0.5])


def test_layer_norm_of_constant_row_is_zero():
    np.testing.assert_allclose(ops.layer_norm(Tensor([[1.0, 1.0, 1.0]])).numpy(), [[0.0, 0.0, 0.0]])


def test_softmax_sums_to_one_and_ignores_shift(rng):
    x = rng.uniform(-3, 3, size=(4, 5))
    p = ops.softmax(Tensor(x), axis=1).numpy()
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    shifted = ops.softmax(Tensor(x + rng.uniform(-5, 5, size=(4, 1))), axis=1).numpy()
    np.testing.assert_allclose(shifted, p, atol=1e-12)


def test_gradient_of_sum_of_squares():
    with GradTape() as tape:
        x = tape.watch(Tensor([1.0, 2.0]))
        loss = ops.tensor_sum(x * x)
        (grad,) = tape.gradient(loss, [x])
    np.testing.assert_array_equal(grad.numpy(), [2.0, 4.0])


def test_constant_loss_gives_zero_gradients():
    with GradTape() as tape:
        x = tape.watch(Tensor([1.0, 2.0, 3.0]))
        loss = ops.tensor_sum(Tensor([5.0, 6.0]))
        (grad,) = tape.gradient(loss, [x])
    np.testing.assert_array_equal(grad.numpy(), np.zeros(3))


def test_backward_rejects_non_scalar_loss():
    with GradTape() as tape:
        x = tape.watch(Tensor([1.0, 2.0]))
        y = x * 2.0
        with pytest.raises(ShapeError):
            backward(tape, y)


def test_shared_input_accumulates_gradient():
    with GradTape() as tape:
        x = tape.watch(Tensor([3.0]))
        loss = ops.tensor_sum(x * 2.0 + x * x)
        (grad,) = tape.gradient(loss, [x])
    np.testing.assert_allclose(grad.numpy(), [2.0 + 6.0])


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"add.*\(2, 3\).*\(4,\)"):
        ops.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))


def test_log_and_softmax_reject_non_finite_input():
    with pytest.raises(NonFiniteError):
        ops.log(Tensor([1.0, np.nan]))
    with pytest.raises(NonFiniteError):
        ops.softmax(Tensor([0.0, np.inf]))


def test_broadcast_multiply_matches_tiling(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(1, 4))
    broadcast = ops.multiply(Tensor(a), Tensor(b)).numpy()
    tiled = ops.multiply(Tensor(a), Tensor(np.tile(b, (3, 1)))).numpy()
    np.testing.assert_array_equal(broadcast, tiled)


def test_reshape_and_transpose_round_trip_bitwise(rng):
    x = Tensor(rng.normal(size=(2, 3, 4)))
    back = ops.reshape(ops.reshape(x, (6, 4)), (2, 3, 4))
    np.testing.assert_array_equal(back.numpy(), x.numpy())
    back = ops.transpose(ops.transpose(x, (2, 0, 1)), (1, 2, 0))
    np.testing.assert_array_equal(back.numpy(), x.numpy())


def test_tensor_data_is_read_only():
    x = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        x.data[0] = 5.0


def test_split_and_concatenate_round_trip(rng):
    x = Tensor(rng.normal(size=(6, 2)))
    parts = ops.split(x, [1, 2, 3], axis=0)
    assert [p.shape for p in parts] == [(1, 2), (2, 2), (3, 2)]
    np.testing.assert_array_equal(ops.concatenate(parts, axis=0).numpy(), x.numpy())


def test_conv2d_3x3_matches_nested_loops(rng):
    x = rng.normal(size=(2, 4, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out = ops.conv2d_3x3(Tensor(x), Tensor(w), Tensor(b)).numpy()

    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    expected = np.zeros((3, 4, 5))
    for o in range(3):
        for i in range(4):
            for j in range(5):
                expected[o, i, j] = np.sum(padded[:, i:i + 3, j:j + 3] * w[o]) + b[o]
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_interpolation_matrix_is_corner_aligned():
    weights = ops.interpolation_matrix(5, 3)
    np.testing.assert_allclose(weights.sum(axis=1), 1.0)
    np.testing.assert_array_equal(weights[0], [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(weights[-1], [0.0, 0.0, 1.0])
    np.testing.assert_allclose(weights[1], [0.5, 0.5, 0.0])


def test_upsample_to_same_size_is_identity(rng):
    x = rng.normal(size=(3, 4))
    np.testing.assert_allclose(ops.upsample_bilinear(Tensor(x), (3, 4)).numpy(), x, atol=1e-15)


def test_every_op_passes_finite_difference_check():
    errors = op_grad_checks(seed=3)
    failing = {name: err for name, err in errors.items() if err > 1e-4}
    assert not failing
