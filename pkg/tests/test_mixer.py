"""Mixer model: patch embedding, layer composition, masking hook, prefixes."""

import numpy as np
import numpy.testing as npt
import pytest

from mixerlab.errors import ConfigError, ContractError, ShapeError
from mixerlab.gradcheck import gradcheck
from mixerlab.mixer import (
    ClassifierHead,
    MixerConfig,
    MixerLayer,
    MixerModel,
    PatchEmbed,
    patchify,
    unpatchify,
)
from mixerlab.targets import MaskedModelAdapter

from reference import ref_logits, ref_prefix_logits


def ones_masks(model, batch=None):
    shape = (model.cfg.tokens, model.cfg.hidden_dim)
    if batch is not None:
        shape = (batch,) + shape
    return [np.ones(shape, dtype=np.float32) for _ in range(model.cfg.n_layers)]


class TestConfig:
    def test_token_count(self):
        cfg = MixerConfig(image_side=28, patch_size=7, hidden_dim=64)
        assert cfg.tokens == 16 and cfg.patch_dim == 49

    def test_indivisible_patch_rejected(self):
        with pytest.raises(ConfigError):
            MixerConfig(image_side=28, patch_size=5)


class TestPatchEmbed:
    def test_shapes(self, rng):
        cfg = MixerConfig(image_side=28, patch_size=7, hidden_dim=64)
        embed = PatchEmbed(cfg, rng)
        out = embed.forward(rng.standard_normal((2, 1, 28, 28)).astype(np.float32))
        assert out.shape == (2, 16, 64)

    def test_single_token_edge(self, rng):
        cfg = MixerConfig(image_side=28, patch_size=28, hidden_dim=32)
        embed = PatchEmbed(cfg, rng)
        out = embed.forward(rng.standard_normal((1, 1, 28, 28)).astype(np.float32))
        assert out.shape == (1, 1, 32)

    def test_row_major_token_order(self, rng):
        # identity projection exposes raw patches: token t must be patch
        # (t // grid, t % grid) of the image
        cfg = MixerConfig(image_side=6, patch_size=3, hidden_dim=9)
        embed = PatchEmbed(cfg, rng=None)
        embed.proj.w[...] = np.eye(9, dtype=np.float32)
        x = np.arange(36, dtype=np.float32).reshape(1, 1, 6, 6)
        out = embed.forward(x)
        npt.assert_array_equal(out[0, 0], x[0, 0, :3, :3].reshape(-1))
        npt.assert_array_equal(out[0, 1], x[0, 0, :3, 3:].reshape(-1))
        npt.assert_array_equal(out[0, 2], x[0, 0, 3:, :3].reshape(-1))

    def test_patchify_roundtrip(self, rng):
        x = rng.standard_normal((3, 2, 8, 8))
        npt.assert_array_equal(unpatchify(patchify(x, 4), 2, 8, 4), x)

    def test_wrong_image_shape(self, rng):
        cfg = MixerConfig(image_side=28, patch_size=7)
        with pytest.raises(ShapeError):
            PatchEmbed(cfg, rng).forward(np.zeros((1, 1, 14, 14), dtype=np.float32))


class TestMixerLayer:
    def test_zero_mlp_weights_pass_input_through(self, rng):
        layer = MixerLayer(4, 8, 5, 7, rng)
        for name, p in layer.params().items():
            if "mlp" in name:
                p[...] = 0.0
        x = rng.standard_normal((2, 4, 8)).astype(np.float32)
        npt.assert_array_equal(layer.forward(x), x)

    def test_output_shape_contract(self, rng):
        layer = MixerLayer(9, 16, 4, 12, rng)
        out = layer.forward(rng.standard_normal((5, 9, 16)).astype(np.float32))
        assert out.shape == (5, 9, 16)

    def test_gradcheck(self, rng):
        layer = MixerLayer(4, 8, 5, 7, rng)
        assert gradcheck(layer, rng.standard_normal((2, 4, 8)), tol=1e-4).passed


class TestModelForward:
    def test_ones_masks_bitwise_equal_no_masks(self, tiny_model, tiny_batch):
        x, _ = tiny_batch
        plain = tiny_model.forward(x)
        masked = tiny_model.forward(x, masks=ones_masks(tiny_model))
        npt.assert_array_equal(plain, masked)

    def test_zero_mask_with_zero_mlps_gives_head_bias(self, tiny_cfg, tiny_batch):
        model = MixerModel(tiny_cfg, seed=5)
        for name, p in model.params().items():
            if "mlp" in name:
                p[...] = 0.0
        x, _ = tiny_batch
        masks = ones_masks(model)
        masks[0][...] = 0.0
        logits = model.forward(x, masks=masks)
        # zero tokens ride the residuals into the head; layernorm keeps them
        # zero and only the head bias remains
        expected = np.broadcast_to(model.head.fc.b, logits.shape)
        npt.assert_allclose(logits, expected, atol=1e-6)

    def test_matches_straight_line_oracle(self, tiny_cfg, tiny_batch):
        x, _ = tiny_batch
        model = MixerModel(tiny_cfg, seed=3).astype(np.float64)
        ours = model.forward(x.astype(np.float64))
        npt.assert_allclose(ours, ref_logits(model, x), atol=1e-9)

    def test_masked_matches_oracle(self, tiny_cfg, tiny_batch, rng):
        x, _ = tiny_batch
        model = MixerModel(tiny_cfg, seed=3).astype(np.float64)
        masks = [
            (rng.random((tiny_cfg.tokens, tiny_cfg.hidden_dim)) < 0.8).astype(np.float64)
            for _ in range(tiny_cfg.n_layers)
        ]
        ours = model.forward(x.astype(np.float64), masks=masks)
        npt.assert_allclose(ours, ref_logits(model, x, masks), atol=1e-9)

    def test_wrong_mask_count(self, tiny_model, tiny_batch):
        x, _ = tiny_batch
        with pytest.raises(ContractError):
            tiny_model.forward(x, masks=ones_masks(tiny_model)[:-1])

    def test_mask_gradient_is_constant_multiplier(self, tiny_cfg, rng):
        # gradient at a masked-to-zero position of any layer input is zero
        model = MixerModel(tiny_cfg, seed=7)
        masks = ones_masks(model)
        masks[1][2, 3] = 0.0
        x = rng.uniform(size=(2, 1, 8, 8)).astype(np.float32)
        ctx = {}
        model.forward(x, masks=masks, ctx=ctx)
        gout = np.ones((2, tiny_cfg.n_classes), dtype=np.float32)
        gtail, _ = model.head.backward(ctx["seq"][-1], gout, ctx.get("head"))
        seq_grads = [None] * tiny_cfg.n_layers + [gtail]
        # recompute the gradient that reaches I_1: it must carry the mask zero
        g = gtail
        for i in range(tiny_cfg.n_layers - 1, 0, -1):
            ga, _ = model.layers[i].backward(ctx["masked"][i], g, ctx.get(f"layer{i}"))
            g = ga * masks[i]
        assert g[0, 2, 3] == 0.0 and g[1, 2, 3] == 0.0

    def test_masked_model_gradcheck_with_fixed_masks(self, rng):
        cfg = MixerConfig(image_side=8, channels_in=1, patch_size=4, hidden_dim=6,
                          n_layers=2, token_mlp_dim=4, channel_mlp_dim=5, n_classes=3)
        model = MixerModel(cfg, seed=2)
        masks = [
            (rng.random((cfg.tokens, cfg.hidden_dim)) < 0.7).astype(np.float32)
            for _ in range(cfg.n_layers)
        ]
        adapter = MaskedModelAdapter(model, masks)
        assert gradcheck(adapter, rng.standard_normal((2, 1, 8, 8)), tol=1e-4).passed


class TestPrefixForward:
    def test_full_prefix_equals_model_forward(self, tiny_model, tiny_batch):
        x, _ = tiny_batch
        full = tiny_model.forward(x)
        prefix = tiny_model.prefix_forward(x, tiny_model.n_layers, tiny_model.head)
        npt.assert_array_equal(full, prefix)

    def test_single_layer_prefix(self, tiny_model, tiny_batch):
        x, _ = tiny_batch
        out = tiny_model.prefix_forward(x, 1, tiny_model.head)
        assert out.shape == (x.shape[0], tiny_model.cfg.n_classes)
        ref = ref_prefix_logits(tiny_model.astype(np.float64), x, 1)
        npt.assert_allclose(out, ref, atol=1e-4)

    def test_prefix_matches_manual_composition(self, tiny_cfg, tiny_batch):
        x, _ = tiny_batch
        model = MixerModel(tiny_cfg, seed=9).astype(np.float64)
        ours = model.prefix_forward(x.astype(np.float64), 2, model.head)
        npt.assert_allclose(ours, ref_prefix_logits(model, x, 2), atol=1e-9)

    def test_out_of_range_depth(self, tiny_model, tiny_batch):
        x, _ = tiny_batch
        with pytest.raises(ContractError):
            tiny_model.prefix_forward(x, 0, tiny_model.head)
        with pytest.raises(ContractError):
            tiny_model.prefix_forward(x, tiny_model.n_layers + 1, tiny_model.head)

    def test_custom_head(self, tiny_model, tiny_batch, rng):
        x, _ = tiny_batch
        head = ClassifierHead(tiny_model.cfg.hidden_dim, tiny_model.cfg.n_classes, rng)
        out = tiny_model.prefix_forward(x, 2, head)
        assert out.shape == (x.shape[0], tiny_model.cfg.n_classes)


class TestDeterminism:
    def test_same_seed_same_parameters(self, tiny_cfg):
        a = MixerModel(tiny_cfg, seed=42).params()
        b = MixerModel(tiny_cfg, seed=42).params()
        assert set(a) == set(b)
        for key in a:
            npt.assert_array_equal(a[key], b[key])

    def test_different_seed_different_parameters(self, tiny_cfg):
        a = MixerModel(tiny_cfg, seed=1).params()
        b = MixerModel(tiny_cfg, seed=2).params()
        assert any(not np.array_equal(a[k], b[k]) for k in a)
