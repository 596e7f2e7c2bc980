import math

import numpy as np
import pytest

from app.core.errors import ShapeError
from app.services.losses import classification_loss, cross_entropy, equivariant_loss, total_loss
from app.services.tensor import Tensor


def test_uniform_logits_give_two_ln2():
    uniform = Tensor([0.3, 0.3])
    loss = classification_loss(uniform, uniform, uniform, uniform, 1)
    assert abs(loss.item() - 2 * math.log(2)) < 1e-12


def test_saturated_logits_give_zero():
    logits = Tensor([0.0, 50.0, 0.0])
    assert classification_loss(logits, logits, logits, logits, 1).item() < 1e-20


def test_classification_loss_is_shift_invariant(rng):
    logits = [Tensor(rng.normal(size=5)) for _ in range(4)]
    shifted = [Tensor(l.numpy() + 7.5) for l in logits]
    assert abs(classification_loss(*logits, 2).item() - classification_loss(*shifted, 2).item()) < 1e-12


def test_classification_without_refined_logits_is_ce_f(rng):
    a, b = Tensor(rng.normal(size=3)), Tensor(rng.normal(size=3))
    expected = 0.5 * (cross_entropy(a, 0).item() + cross_entropy(b, 0).item())
    assert abs(classification_loss(a, b, None, None, 0).item() - expected) < 1e-15


def test_cross_entropy_rejects_bad_class():
    with pytest.raises(ShapeError):
        cross_entropy(Tensor([0.0, 1.0]), 2)


def test_equivariant_loss_examples(rng):
    T_p, T_h = rng.normal(size=(3, 2, 2)), rng.normal(size=(3, 2, 2))
    y = 1
    M_h, M_p = T_p[y].copy(), T_h[y].copy()
    assert equivariant_loss(Tensor(T_p), Tensor(T_h), Tensor(M_p), Tensor(M_h), y).item() == 0.0

    offset = T_p.copy()
    offset[y] += 1.0
    loss = equivariant_loss(Tensor(offset), Tensor(T_h), Tensor(M_p), Tensor(M_h), y)
    assert abs(loss.item() - 1.0) < 1e-12


def test_equivariant_loss_is_symmetric(rng):
    T_p, T_h = Tensor(rng.normal(size=(2, 3, 3))), Tensor(rng.normal(size=(2, 3, 3)))
    M_p, M_h = Tensor(rng.uniform(size=(3, 3))), Tensor(rng.uniform(size=(3, 3)))
    forward = equivariant_loss(T_p, T_h, M_p, M_h, 0).item()
    swapped = equivariant_loss(T_h, T_p, M_h, M_p, 0).item()
    assert abs(forward - swapped) < 1e-15


def test_equivariant_loss_normalizes_refined_channel():
    T = np.zeros((1, 2, 2))
    T[0] = [[2.0, 4.0], [6.0, 10.0]]
    M = np.array([[0.0, 0.25], [0.5, 1.0]])
    loss = equivariant_loss(Tensor(T), Tensor(T), Tensor(M), Tensor(M), 0, normalize=True)
    assert abs(loss.item()) < 1e-15


def test_equivariant_loss_shape_errors():
    T = Tensor(np.zeros((2, 2, 2)))
    with pytest.raises(ShapeError):
        equivariant_loss(T, T, Tensor(np.zeros((3, 3))), Tensor(np.zeros((2, 2))), 0)
    with pytest.raises(ShapeError):
        equivariant_loss(T, Tensor(np.zeros((2, 3, 3))), Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 2))), 0)


@pytest.mark.parametrize("l_cls,l_er,weight,expected", [
    (1.0, 2.0, 0.5, 2.0),
    (1.3, 4.0, 0.0, 1.3),
    (1.3, 0.0, 0.7, 1.3),
])
def test_total_loss(l_cls, l_er, weight, expected):
    assert abs(total_loss(Tensor(l_cls), Tensor(l_er), weight).item() - expected) < 1e-12


def test_total_loss_rejects_negative_weight():
    with pytest.raises(ValueError):
        total_loss(Tensor(1.0), Tensor(1.0), -0.1)
