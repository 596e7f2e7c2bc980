import numpy as np
import pytest

from app.core.errors import ShapeError
from app.models.encoder import AttentionStack
from app.services import tensor as ops
from app.services.params import init_params
from app.services.tensor import GradTape, Tensor
from app.services.vit import embed, encode, inner_guided_attention, patchify, unpatchify


def test_patchify_row_zero_is_top_left_block():
    image = np.arange(16, dtype=float).reshape(1, 4, 4)
    patches = patchify(Tensor(image), 2).numpy()
    assert patches.shape == (4, 4)
    np.testing.assert_array_equal(patches[0], [0.0, 1.0, 4.0, 5.0])
    np.testing.assert_array_equal(patches[1], [2.0, 3.0, 6.0, 7.0])


def test_patchify_constant_image():
    patches = patchify(Tensor(np.full((3, 8, 8), 0.7)), 4).numpy()
    np.testing.assert_array_equal(patches, np.full((4, 48), 0.7))


def test_unpatchify_round_trip(rng):
    image = rng.uniform(size=(3, 8, 8))
    back = unpatchify(patchify(Tensor(image), 4), 4, 3, (2, 2)).numpy()
    np.testing.assert_array_equal(back, image)


def test_patchify_rejects_indivisible_image():
    with pytest.raises(ShapeError):
        patchify(Tensor(np.zeros((1, 6, 6))), 4)


def test_attention_rows_are_distributions(tiny_settings, tiny_params, rng):
    out = encode(Tensor(rng.uniform(size=(1, 8, 8))), tiny_params, tiny_settings)
    for layer in out.attention.per_layer:
        np.testing.assert_allclose(layer.numpy().sum(axis=1), 1.0, atol=1e-9)
        assert np.all(layer.numpy() >= 0)
    s = out.inner_guided.numpy()
    assert s.shape == (2, 2)
    assert np.all((s >= 0) & (s <= 1))


def test_encode_is_deterministic(tiny_settings, tiny_params, rng):
    image = Tensor(rng.uniform(size=(1, 8, 8)))
    a = encode(image, tiny_params, tiny_settings)
    b = encode(image, tiny_params, tiny_settings)
    np.testing.assert_array_equal(a.patch_tokens.numpy(), b.patch_tokens.numpy())
    np.testing.assert_array_equal(a.inner_guided.numpy(), b.inner_guided.numpy())


def test_zero_output_projections_keep_embedding(tiny_settings, tiny_params, rng):
    zeros = {}
    for name in ("attn.proj.weight", "attn.proj.bias", "mlp.fc2.weight", "mlp.fc2.bias"):
        key = f"blocks.0.{name}"
        zeros[key] = Tensor(np.zeros(tiny_params[key].shape))
    params = tiny_params.replace(zeros)
    image = Tensor(rng.uniform(size=(1, 8, 8)))
    out = encode(image, params, tiny_settings)
    embedded = embed(image, params, tiny_settings).numpy()
    np.testing.assert_array_equal(out.patch_tokens.numpy(), embedded[1:])


def test_inner_guided_single_layer_is_cls_row():
    layer = np.full((5, 5), 0.1)
    layer[0, 1:] = [0.1, 0.2, 0.3, 0.4]
    stack = AttentionStack(per_layer=[Tensor(layer)], grid_h=2, grid_w=2)
    np.testing.assert_array_equal(inner_guided_attention(stack).numpy(), [[0.1, 0.2], [0.3, 0.4]])


def test_inner_guided_averages_layers():
    stack = AttentionStack(per_layer=[Tensor(np.full((5, 5), 0.2)), Tensor(np.full((5, 5), 0.4))],
                           grid_h=2, grid_w=2)
    np.testing.assert_allclose(inner_guided_attention(stack).numpy(), np.full((2, 2), 0.3))


def test_inner_guided_uniform_attention():
    stack = AttentionStack(per_layer=[Tensor(np.full((5, 5), 0.2))], grid_h=2, grid_w=2)
    np.testing.assert_allclose(inner_guided_attention(stack).numpy(), np.full((2, 2), 1 / 5))


def test_inner_guided_rejects_empty_stack():
    with pytest.raises(ShapeError):
        inner_guided_attention(AttentionStack(per_layer=[], grid_h=2, grid_w=2))


def test_position_embeddings_make_encoder_order_sensitive(tiny_settings, tiny_params, rng):
    params = tiny_params.replace({"pos_embed": Tensor(rng.normal(size=tiny_params["pos_embed"].shape))})
    image = rng.uniform(size=(1, 8, 8))
    swapped = image.copy()
    swapped[:, :4, :4], swapped[:, :4, 4:] = image[:, :4, 4:], image[:, :4, :4]

    a = encode(Tensor(image), params, tiny_settings).patch_tokens.numpy()
    b = encode(Tensor(swapped), params, tiny_settings).patch_tokens.numpy()
    assert not np.allclose(b[[1, 0, 2, 3]], a)


def test_both_branches_share_parameter_accumulators(tiny_settings, tiny_params, rng):
    first = Tensor(rng.uniform(size=(1, 8, 8)))
    second = Tensor(rng.uniform(size=(1, 8, 8)))

    def cls_sum(image):
        return ops.tensor_sum(encode(image, tiny_params, tiny_settings).cls_token)

    with GradTape() as tape:
        tiny_params.watch(tape)
        joint = tape.gradient(cls_sum(first) + cls_sum(second), tiny_params.tensors())
    separate = []
    for image in (first, second):
        with GradTape() as tape:
            tiny_params.watch(tape)
            separate.append(tape.gradient(cls_sum(image), tiny_params.tensors()))

    for g, a, b in zip(joint, *separate):
        np.testing.assert_allclose(g.numpy(), a.numpy() + b.numpy(), atol=1e-12)


def test_init_uses_zero_biases_and_position_embeddings(tiny_settings):
    params = init_params(tiny_settings, seed=1)
    assert np.all(params["pos_embed"].numpy() == 0)
    assert np.all(params["blocks.0.attn.qkv.bias"].numpy() == 0)
    assert np.all(params["blocks.0.norm1.weight"].numpy() == 1)
    assert np.all(np.abs(params["patch_embed.weight"].numpy()) <= 2 * tiny_settings.init_std)
