"""MLP-Mixer classifier with a per-layer input hook for masking.

The model is a fixed chain: per-patch linear embedding, ``n`` Mixer layers
(token-mixing MLP then channel-mixing MLP, each with layernorm and residual),
and a classifier head (layernorm, mean over tokens, linear).  Every Mixer
layer consumes a token table of the same shape (S, C), so one mask shape
serves all layers.  Masks multiply the *input* of each Mixer layer and are
treated as constants by the backward pass.
"""

from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .layers import Layer, LayerNorm, Linear, Mlp, _get, _sub, merge_grads, prefix_grads


@dataclass(frozen=True)
class MixerConfig:
    image_side: int = 28
    channels_in: int = 1
    patch_size: int = 7
    hidden_dim: int = 64
    n_layers: int = 4
    token_mlp_dim: int = 32
    channel_mlp_dim: int = 128
    n_classes: int = 10

    def __post_init__(self):
        if self.image_side % self.patch_size != 0:
            raise ConfigError(
                f"image side {self.image_side} not divisible by patch {self.patch_size}"
            )
        for name in ("image_side", "channels_in", "patch_size", "hidden_dim",
                     "n_layers", "token_mlp_dim", "channel_mlp_dim", "n_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def grid(self):
        return self.image_side // self.patch_size

    @property
    def tokens(self):
        return self.grid * self.grid

    @property
    def patch_dim(self):
        return self.channels_in * self.patch_size * self.patch_size

    def items(self):
        return asdict(self).items()


def patchify(x, patch_size):
    """Split (B, ch, H, W) into flattened non-overlapping patches (B, S, ch*P*P).

    Tokens are ordered row-major over the patch grid; within a patch the
    layout is channel-major, then pixel rows.
    """
    b, ch, h, w = x.shape
    if h != w or h % patch_size != 0:
        raise ShapeError(f"cannot patchify {h}x{w} with patch {patch_size}")
    g = h // patch_size
    t = x.reshape(b, ch, g, patch_size, g, patch_size)
    t = t.transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(t).reshape(b, g * g, ch * patch_size * patch_size)


def unpatchify(t, channels, side, patch_size):
    """Inverse of :func:`patchify` (used to route gradients back to pixels)."""
    b = t.shape[0]
    g = side // patch_size
    x = t.reshape(b, g, g, channels, patch_size, patch_size)
    x = x.transpose(0, 3, 1, 4, 2, 5)
    return np.ascontiguousarray(x).reshape(b, channels, side, side)


class PatchEmbed(Layer):
    """Per-patch fully-connected projection to the hidden width."""

    def __init__(self, cfg, rng, dtype=np.float32):
        self.cfg = cfg
        self.proj = Linear(cfg.patch_dim, cfg.hidden_dim, rng, dtype)

    def children(self):
        return [("proj", self.proj)]

    def forward(self, x, ctx=None):
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != cfg.channels_in or x.shape[2:] != (cfg.image_side,) * 2:
            raise ShapeError(
                f"expected (B, {cfg.channels_in}, {cfg.image_side}, {cfg.image_side}), got {x.shape}"
            )
        patches = patchify(x, cfg.patch_size)
        if ctx is not None:
            ctx["patches"] = patches
        return self.proj.forward(patches, _sub(ctx, "proj"))

    def backward(self, x, gout, ctx=None):
        cfg = self.cfg
        patches = ctx["patches"] if ctx is not None else patchify(x, cfg.patch_size)
        gp, grads = self.proj.backward(patches, gout, _get(ctx, "proj"))
        gx = unpatchify(gp, cfg.channels_in, cfg.image_side, cfg.patch_size)
        return gx, prefix_grads("proj", grads)


class TokenMix(Layer):
    """Token-mixing sublayer: LN, transpose, MLP over tokens, transpose, residual."""

    def __init__(self, tokens, channels, hidden, rng, dtype=np.float32):
        self.ln = LayerNorm(channels, dtype=dtype)
        self.mlp = Mlp(tokens, hidden, tokens, rng, dtype)

    def children(self):
        return [("ln", self.ln), ("mlp", self.mlp)]

    def forward(self, x, ctx=None):
        h = self.ln.forward(x, _sub(ctx, "ln"))
        ht = h.transpose(0, 2, 1)
        if ctx is not None:
            ctx["ht"] = ht
        m = self.mlp.forward(ht, _sub(ctx, "mlp"))
        return x + m.transpose(0, 2, 1)

    def backward(self, x, gout, ctx=None):
        if ctx is not None:
            ht = ctx["ht"]
        else:
            ht = self.ln.forward(x).transpose(0, 2, 1)
        gm = gout.transpose(0, 2, 1)
        ght, gmlp = self.mlp.backward(ht, gm, _get(ctx, "mlp"))
        gh = ght.transpose(0, 2, 1)
        gx, gln = self.ln.backward(x, gh, _get(ctx, "ln"))
        grads = prefix_grads("ln", gln)
        grads.update(prefix_grads("mlp", gmlp))
        return gout + gx, grads


class ChannelMix(Layer):
    """Channel-mixing sublayer: LN, MLP over channels, residual."""

    def __init__(self, channels, hidden, rng, dtype=np.float32):
        self.ln = LayerNorm(channels, dtype=dtype)
        self.mlp = Mlp(channels, hidden, channels, rng, dtype)

    def children(self):
        return [("ln", self.ln), ("mlp", self.mlp)]

    def forward(self, x, ctx=None):
        h = self.ln.forward(x, _sub(ctx, "ln"))
        if ctx is not None:
            ctx["h"] = h
        return x + self.mlp.forward(h, _sub(ctx, "mlp"))

    def backward(self, x, gout, ctx=None):
        h = ctx["h"] if ctx is not None else self.ln.forward(x)
        gh, gmlp = self.mlp.backward(h, gout, _get(ctx, "mlp"))
        gx, gln = self.ln.backward(x, gh, _get(ctx, "ln"))
        grads = prefix_grads("ln", gln)
        grads.update(prefix_grads("mlp", gmlp))
        return gout + gx, grads


class MixerLayer(Layer):
    """One Mixer block: token-mixing followed by channel-mixing."""

    def __init__(self, tokens, channels, token_hidden, channel_hidden, rng, dtype=np.float32):
        self.token = TokenMix(tokens, channels, token_hidden, rng, dtype)
        self.channel = ChannelMix(channels, channel_hidden, rng, dtype)

    def children(self):
        return [("token", self.token), ("channel", self.channel)]

    def forward(self, x, ctx=None):
        u = self.token.forward(x, _sub(ctx, "token"))
        if ctx is not None:
            ctx["u"] = u
        return self.channel.forward(u, _sub(ctx, "channel"))

    def backward(self, x, gout, ctx=None):
        u = ctx["u"] if ctx is not None else self.token.forward(x)
        gu, gc = self.channel.backward(u, gout, _get(ctx, "channel"))
        gx, gt = self.token.backward(x, gu, _get(ctx, "token"))
        grads = prefix_grads("token", gt)
        grads.update(prefix_grads("channel", gc))
        return gx, grads


class ClassifierHead(Layer):
    """Classifier head: layernorm, global mean over tokens, linear to classes."""

    def __init__(self, channels, n_classes, rng, dtype=np.float32):
        self.ln = LayerNorm(channels, dtype=dtype)
        self.fc = Linear(channels, n_classes, rng, dtype)

    def children(self):
        return [("ln", self.ln), ("fc", self.fc)]

    def forward(self, x, ctx=None):
        h = self.ln.forward(x, _sub(ctx, "ln"))
        pooled = h.mean(axis=1)
        if ctx is not None:
            ctx["pooled"] = pooled
        return self.fc.forward(pooled, _sub(ctx, "fc"))

    def backward(self, x, gout, ctx=None):
        if ctx is not None:
            pooled = ctx["pooled"]
        else:
            pooled = self.ln.forward(x).mean(axis=1)
        gp, gfc = self.fc.backward(pooled, gout, _get(ctx, "fc"))
        s = x.shape[1]
        gh = np.broadcast_to((gp / s)[:, None, :], x.shape)
        gx, gln = self.ln.backward(x, gh, _get(ctx, "ln"))
        grads = prefix_grads("ln", gln)
        grads.update(prefix_grads("fc", gfc))
        return gx, grads


def _check_masks(masks, n_layers):
    if masks is None:
        return None
    if len(masks) != n_layers:
        raise ContractError(f"expected {n_layers} masks, got {len(masks)}")
    return masks


class MixerModel(Layer):
    """Patch embedding, ``n`` Mixer layers, classifier head.

    ``masks`` arguments are lists of ``n`` arrays (S, C) or (B, S, C) applied
    elementwise to the inputs of the Mixer layers; the head input is never
    masked.  ``None`` behaves as all-ones.
    """

    kind = "mixer"

    def __init__(self, cfg, seed=0, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence((0x4D58, seed)))
        self.embed = PatchEmbed(cfg, rng, dtype)
        self.layers = [
            MixerLayer(cfg.tokens, cfg.hidden_dim, cfg.token_mlp_dim,
                       cfg.channel_mlp_dim, rng, dtype)
            for _ in range(cfg.n_layers)
        ]
        self.head = ClassifierHead(cfg.hidden_dim, cfg.n_classes, rng, dtype)

    def children(self):
        out = [("embed", self.embed)]
        out += [(f"layers.{i}", layer) for i, layer in enumerate(self.layers)]
        out.append(("head", self.head))
        return out

    @property
    def n_layers(self):
        return self.cfg.n_layers

    def config_items(self):
        return list(self.cfg.items())

    def forward_sequence(self, x, masks=None, ctx=None, upto=None):
        """Token tables [I_0 .. I_upto] with I_{i+1} = layer_i(I_i * M_i)."""
        masks = _check_masks(masks, self.cfg.n_layers)
        upto = self.cfg.n_layers if upto is None else upto
        seq = [self.embed.forward(x, _sub(ctx, "embed"))]
        masked = []
        for i in range(upto):
            a = seq[i] if masks is None else seq[i] * masks[i]
            masked.append(a)
            seq.append(self.layers[i].forward(a, _sub(ctx, f"layer{i}")))
        if ctx is not None:
            ctx["seq"] = seq
            ctx["masked"] = masked
        return seq

    def backward_sequence(self, x, seq_grads, masks=None, ctx=None):
        """Backward through the chain given gradients at any of I_0 .. I_n.

        ``seq_grads`` is a list of optional arrays aligned with the token
        tables; masks enter backward as constants (dI_i = M_i * upstream).
        Returns (image gradient, parameter gradients).
        """
        masks = _check_masks(masks, self.cfg.n_layers)
        n = self.cfg.n_layers
        if len(seq_grads) != n + 1:
            raise ContractError(f"expected {n + 1} sequence gradients, got {len(seq_grads)}")
        if ctx is not None:
            seq, masked = ctx["seq"], ctx["masked"]
        else:
            tmp = {}
            self.forward_sequence(x, masks, tmp)
            seq, masked = tmp["seq"], tmp["masked"]
            ctx = tmp
        grads = {}
        g = seq_grads[n]
        if g is None:
            g = np.zeros_like(seq[n])
        for i in range(n - 1, -1, -1):
            ga, glayer = self.layers[i].backward(masked[i], g, _get(ctx, f"layer{i}"))
            merge_grads(grads, prefix_grads(f"layers.{i}", glayer))
            gi = ga if masks is None else ga * masks[i]
            g = gi if seq_grads[i] is None else gi + seq_grads[i]
        gx, gembed = self.embed.backward(x, g, _get(ctx, "embed"))
        merge_grads(grads, prefix_grads("embed", gembed))
        return gx, grads

    def forward(self, x, masks=None, ctx=None):
        seq = self.forward_sequence(x, masks, ctx)
        return self.head.forward(seq[-1], _sub(ctx, "head"))

    def backward(self, x, gout, masks=None, ctx=None):
        if ctx is None:
            ctx = {}
            self.forward(x, masks, ctx)
        gtail, ghead = self.head.backward(ctx["seq"][-1], gout, _get(ctx, "head"))
        seq_grads = [None] * self.cfg.n_layers + [gtail]
        gx, grads = self.backward_sequence(x, seq_grads, masks, ctx)
        merge_grads(grads, prefix_grads("head", ghead))
        return gx, grads

    def prefix_forward(self, x, k, head, masks=None, ctx=None):
        """Logits after only the first ``k`` Mixer layers and the given head."""
        if not 1 <= k <= self.cfg.n_layers:
            raise ContractError(f"prefix depth {k} outside [1, {self.cfg.n_layers}]")
        seq = self.forward_sequence(x, masks, ctx, upto=k)
        return head.forward(seq[k], _sub(ctx, f"prefix_head{k}"))
