"""Victim models for cross-architecture transfer runs.

Three small stand-ins share the source model's input and label space: a CNN
(3x3 convs via im2col, GELU, 2x2 mean-pooling), a plain MLP, and a second
Mixer with different depth and width.  All of them satisfy the same layer
protocol as the source model, so the gradient checker and the trainer apply
unchanged.
"""

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import Gelu, Layer, Linear, merge_grads, prefix_grads, _get, _sub
from .mixer import MixerConfig, MixerModel


class Conv3x3(Layer):
    """3x3 convolution, stride 1, zero padding 1, as im2col + matmul.

    Keeping the product on the already-checked matmul backward keeps the
    conv gradient auditable.
    """

    def __init__(self, ch_in, ch_out, rng, dtype=np.float32):
        self.ch_in = ch_in
        self.ch_out = ch_out
        std = np.sqrt(2.0 / (ch_in * 9))
        self.w = (rng.standard_normal((ch_in * 9, ch_out)) * std).astype(dtype)
        self.b = np.zeros(ch_out, dtype=dtype)

    def local_params(self):
        return {"w": self.w, "b": self.b}

    def _set_param(self, key, value):
        setattr(self, key, value)

    def _im2col(self, x):
        b, ch, h, w = x.shape
        padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        cols = np.empty((b, ch, 9, h, w), dtype=x.dtype)
        for dy in range(3):
            for dx in range(3):
                cols[:, :, dy * 3 + dx] = padded[:, :, dy:dy + h, dx:dx + w]
        return cols.transpose(0, 3, 4, 1, 2).reshape(b * h * w, ch * 9)

    def forward(self, x, ctx=None):
        if x.ndim != 4 or x.shape[1] != self.ch_in:
            raise ShapeError(f"expected (B, {self.ch_in}, H, W), got {x.shape}")
        b, _, h, w = x.shape
        cols = self._im2col(x)
        if ctx is not None:
            ctx["cols"] = cols
        y = cols @ self.w + self.b
        return y.reshape(b, h, w, self.ch_out).transpose(0, 3, 1, 2)

    def backward(self, x, gout, ctx=None):
        b, _, h, w = x.shape
        cols = ctx["cols"] if ctx is not None else self._im2col(x)
        gy = gout.transpose(0, 2, 3, 1).reshape(b * h * w, self.ch_out)
        gw = cols.T @ gy
        gb = gy.sum(axis=0)
        gcols = (gy @ self.w.T).reshape(b, h, w, self.ch_in, 9).transpose(0, 3, 4, 1, 2)
        gpad = np.zeros((b, self.ch_in, h + 2, w + 2), dtype=x.dtype)
        for dy in range(3):
            for dx in range(3):
                gpad[:, :, dy:dy + h, dx:dx + w] += gcols[:, :, dy * 3 + dx]
        return gpad[:, :, 1:1 + h, 1:1 + w], {"w": gw, "b": gb}


class MeanPool2(Layer):
    """2x2 mean pooling; smooth backward (gradient spread evenly)."""

    def forward(self, x, ctx=None):
        b, ch, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"mean pool needs even spatial dims, got {x.shape}")
        return x.reshape(b, ch, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(self, x, gout, ctx=None):
        g = np.repeat(np.repeat(gout, 2, axis=2), 2, axis=3)
        return (g * np.asarray(0.25, dtype=x.dtype)), {}


class Flatten(Layer):
    def forward(self, x, ctx=None):
        return x.reshape(x.shape[0], -1)

    def backward(self, x, gout, ctx=None):
        return gout.reshape(x.shape), {}


class ChainModel(Layer):
    """Named sequence of layers acting as a classifier model."""

    def __init__(self, kind, named_layers, config_items=()):
        self.kind = kind
        self.named_layers = list(named_layers)
        self._config_items = list(config_items)

    def children(self):
        return list(self.named_layers)

    def config_items(self):
        return list(self._config_items)

    def forward(self, x, ctx=None):
        h = x
        inputs = []
        for name, layer in self.named_layers:
            inputs.append(h)
            h = layer.forward(h, _sub(ctx, name))
        if ctx is not None:
            ctx["inputs"] = inputs
        return h

    def backward(self, x, gout, ctx=None):
        if ctx is not None:
            inputs = ctx["inputs"]
        else:
            inputs = []
            h = x
            for _, layer in self.named_layers:
                inputs.append(h)
                h = layer.forward(h)
        grads = {}
        g = gout
        for (name, layer), h in zip(reversed(self.named_layers), reversed(inputs)):
            g, glayer = layer.backward(h, g, _get(ctx, name))
            merge_grads(grads, prefix_grads(name, glayer))
        return g, grads


class MaskedModelAdapter(Layer):
    """Masked model forward with frozen masks, exposed as a single layer.

    Lets the gradient checker verify that masks act as constants in backward.
    """

    def __init__(self, model, masks):
        self.model = model
        self.masks = masks

    def children(self):
        return [("model", self.model)]

    def _cast(self, dtype):
        self.model._cast(dtype)

    def forward(self, x, ctx=None):
        return self.model.forward(x, self.masks, ctx)

    def backward(self, x, gout, ctx=None):
        gx, grads = self.model.backward(x, gout, self.masks, ctx)
        return gx, prefix_grads("model", grads)


TARGET_KINDS = ("cnn", "mlp", "mixer-alt")

ALT_MIXER = dict(n_layers=6, hidden_dim=48, token_mlp_dim=24, channel_mlp_dim=96)


def build_target(kind, seed, image_side=28, channels_in=1, n_classes=10):
    """Deterministically initialized victim model of the requested kind."""
    if kind == "cnn":
        rng = np.random.default_rng(np.random.SeedSequence((0x434E, seed)))
        side = image_side // 4
        chain = [
            ("conv1", Conv3x3(channels_in, 8, rng)),
            ("act1", Gelu()),
            ("pool1", MeanPool2()),
            ("conv2", Conv3x3(8, 16, rng)),
            ("act2", Gelu()),
            ("pool2", MeanPool2()),
            ("flat", Flatten()),
            ("fc", Linear(16 * side * side, n_classes, rng)),
        ]
        cfg = [("image_side", image_side), ("channels_in", channels_in),
               ("n_classes", n_classes)]
        return ChainModel("cnn", chain, cfg)
    if kind == "mlp":
        rng = np.random.default_rng(np.random.SeedSequence((0x4D4C, seed)))
        d = channels_in * image_side * image_side
        chain = [
            ("flat", Flatten()),
            ("fc1", Linear(d, 256, rng)),
            ("act1", Gelu()),
            ("fc2", Linear(256, 256, rng)),
            ("act2", Gelu()),
            ("fc3", Linear(256, n_classes, rng)),
        ]
        cfg = [("image_side", image_side), ("channels_in", channels_in),
               ("n_classes", n_classes)]
        return ChainModel("mlp", chain, cfg)
    if kind == "mixer-alt":
        cfg = MixerConfig(image_side=image_side, channels_in=channels_in,
                          patch_size=7 if image_side % 7 == 0 else image_side // 4,
                          n_classes=n_classes, **ALT_MIXER)
        model = MixerModel(cfg, seed=seed)
        model.kind = "mixer-alt"
        return model
    raise ConfigError(f"unknown target kind {kind!r}; expected one of {TARGET_KINDS}")


def predict(model, x, batch=512):
    """Predicted class indices; ties resolve to the lowest index."""
    out = []
    for start in range(0, x.shape[0], batch):
        logits = model.forward(x[start:start + batch])
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
