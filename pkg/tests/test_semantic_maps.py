import numpy as np
import pytest

from app.core.errors import ShapeError
from app.services.params import init_params
from app.services.semantic_maps import (
    build_maps,
    conv_head,
    couple,
    gap_logits,
    minmax_normalize,
    normalize_map,
    select_class,
    tokens_to_featmap,
)
from app.services.tensor import Tensor
from app.services.vit import encode


def test_token_lands_at_row_major_cell():
    tokens = np.zeros((6, 6))
    tokens[np.arange(6), np.arange(6)] = 1.0
    fmap = tokens_to_featmap(Tensor(tokens), 2, 3).numpy()
    for k in range(6):
        assert fmap[k, k // 3, k % 3] == 1.0
        assert fmap[k].sum() == 1.0


def test_single_token_map():
    fmap = tokens_to_featmap(Tensor([[1.0, 2.0, 3.0]]), 1, 1).numpy()
    np.testing.assert_array_equal(fmap[:, 0, 0], [1.0, 2.0, 3.0])


def test_tokens_to_featmap_rejects_wrong_count():
    with pytest.raises(ShapeError):
        tokens_to_featmap(Tensor(np.zeros((5, 2))), 2, 2)


def _head_params(tiny_settings, weight, bias):
    params = init_params(tiny_settings, seed=0)
    return params.replace({"head.weight": Tensor(weight), "head.bias": Tensor(bias)})


def test_center_tap_selects_channel(tiny_settings, rng):
    d, c = tiny_settings.embed_dim, tiny_settings.num_classes
    weight = np.zeros((c, d, 3, 3))
    weight[1, 0, 1, 1] = 1.0
    feature = rng.normal(size=(d, 2, 2))
    out = conv_head(Tensor(feature), _head_params(tiny_settings, weight, np.zeros(c))).numpy()
    np.testing.assert_array_equal(out[1], feature[0])
    np.testing.assert_array_equal(out[0], np.zeros((2, 2)))


def test_zero_kernel_gives_zero_map(tiny_settings, rng):
    d, c = tiny_settings.embed_dim, tiny_settings.num_classes
    params = _head_params(tiny_settings, np.zeros((c, d, 3, 3)), np.zeros(c))
    out = conv_head(Tensor(rng.normal(size=(d, 2, 2))), params).numpy()
    np.testing.assert_array_equal(out, np.zeros((c, 2, 2)))


def test_constant_input_has_constant_interior(tiny_settings, rng):
    d, c = tiny_settings.embed_dim, tiny_settings.num_classes
    weight = rng.normal(size=(c, d, 3, 3))
    params = _head_params(tiny_settings, weight, np.zeros(c))
    out = conv_head(Tensor(np.ones((d, 5, 5))), params).numpy()
    interior = out[:, 1:-1, 1:-1]
    np.testing.assert_allclose(interior, np.broadcast_to(weight.sum(axis=(1, 2, 3))[:, None, None], interior.shape))
    corner = weight[:, :, 1:, 1:].sum(axis=(1, 2, 3))
    np.testing.assert_allclose(out[:, 0, 0], corner)


def test_couple_with_ones_and_zeros(rng):
    F_prime = rng.normal(size=(3, 2, 2))
    np.testing.assert_array_equal(couple(Tensor(F_prime), Tensor(np.ones((2, 2)))).numpy(), F_prime)
    np.testing.assert_array_equal(couple(Tensor(F_prime), Tensor(np.zeros((2, 2)))).numpy(), np.zeros((3, 2, 2)))


def test_couple_single_cell(rng):
    mask = np.zeros((2, 2))
    mask[1, 0] = 2.0
    out = couple(Tensor(rng.uniform(0.5, 1.0, size=(3, 2, 2))), Tensor(mask)).numpy()
    assert np.all(out[:, 1, 0] != 0)
    out[:, 1, 0] = 0
    assert np.all(out == 0)


def test_couple_rejects_mismatch():
    with pytest.raises(ShapeError):
        couple(Tensor(np.zeros((2, 2, 2))), Tensor(np.zeros((3, 3))))


def test_select_class(rng):
    F_prime = rng.normal(size=(3, 2, 2))
    np.testing.assert_array_equal(select_class(couple(Tensor(F_prime), Tensor(np.ones((2, 2)))), 2).numpy(),
                                  F_prime[2])
    with pytest.raises(ShapeError):
        select_class(Tensor(F_prime), 3)


def test_gap_logits():
    maps = np.zeros((2, 2, 2))
    maps[0] = [[1.0, 2.0], [3.0, 4.0]]
    maps[1] = 0.7
    np.testing.assert_allclose(gap_logits(Tensor(maps)).numpy(), [2.5, 0.7])


def test_gap_is_linear(rng):
    a, b = rng.normal(size=(3, 2, 2)), rng.normal(size=(3, 2, 2))
    np.testing.assert_allclose(gap_logits(Tensor(a + b)).numpy(),
                               gap_logits(Tensor(a)).numpy() + gap_logits(Tensor(b)).numpy())


def test_argmax_ignores_per_cell_offset(rng):
    maps = rng.normal(size=(4, 3, 3))
    offset = rng.normal(size=(1, 3, 3))
    assert np.argmax(gap_logits(Tensor(maps)).numpy()) == np.argmax(gap_logits(Tensor(maps + offset)).numpy())


def test_minmax_normalize():
    np.testing.assert_allclose(minmax_normalize(Tensor([[1.0, 3.0], [2.0, 5.0]])).numpy(),
                               [[0.0, 0.5], [0.25, 1.0]])
    np.testing.assert_array_equal(normalize_map(Tensor(np.full((2, 2), 4.0))), np.zeros((2, 2)))


def test_build_maps_invariants(tiny_settings, tiny_params, rng):
    encoded = encode(Tensor(rng.uniform(size=(1, 8, 8))), tiny_params, tiny_settings)
    maps = build_maps(encoded, tiny_params, tiny_settings, label=1)
    np.testing.assert_array_equal(maps.M.numpy(), maps.M_hat.numpy()[1])
    np.testing.assert_array_equal(maps.M_hat.numpy(), maps.F_prime.numpy() * maps.S_prime.numpy()[None])
    assert maps.F.shape == (tiny_settings.embed_dim, 2, 2)
    assert maps.label_used == 1
