"""Stochastic layer-input masking and the loss wrappers built on it.

A mask is drawn per Mixer layer by a two-level Bernoulli scheme: with
probability ``mask_prob`` the layer input gets an elementwise Bernoulli
``keep_prob`` 0/1 matrix, otherwise all-ones.  There is no 1/p rescaling:
the masks are raw draws and multiply the layer inputs directly, which is what
dilutes the source model's layer mixing during attack-gradient computation.

Three gradient sources share one interface with the plain loss: masked,
masked prefix-ensemble (each depth's token table fed to the shared head,
logits averaged), and masked per-depth trained heads (losses averaged).  All
of them return per-sample losses and per-sample input gradients, because the
attack treats every sample as its own optimization problem.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .layers import Layer
from .mixer import ClassifierHead
from .ops import softmax_cross_entropy, softmax_cross_entropy_backward

RESAMPLE_MODES = ("per-iteration", "fixed")


@dataclass(frozen=True)
class MaskPolicy:
    """Two-level Bernoulli masking policy.

    ``mask_prob`` is the per-layer probability that a mask is drawn at all;
    ``keep_prob`` is the elementwise keep probability of a drawn mask.
    ``resample`` selects whether masks are redrawn at every attack iteration
    or frozen for the whole attack.
    """

    mask_prob: float = 0.7
    keep_prob: float = 0.8
    resample: str = "per-iteration"

    def __post_init__(self):
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ConfigError(f"mask probability {self.mask_prob} outside [0,1]")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ConfigError(f"keep probability {self.keep_prob} outside (0,1]")
        if self.resample not in RESAMPLE_MODES:
            raise ConfigError(f"resample must be one of {RESAMPLE_MODES}")


def sample_masks(tokens, channels, n_layers, policy, rng, dtype=np.float32):
    """Draw one mask per layer: list of ``n_layers`` (tokens, channels) arrays.

    Each layer independently flips the mask_prob coin; a drawn mask has
    i.i.d. Bernoulli(keep_prob) entries in {0, 1}.
    """
    out = []
    for _ in range(n_layers):
        if rng.random() < policy.mask_prob:
            mask = (rng.random((tokens, channels)) < policy.keep_prob).astype(dtype)
        else:
            mask = np.ones((tokens, channels), dtype=dtype)
        out.append(mask)
    return out


def sample_mask_batch(batch, tokens, channels, n_layers, policy, rngs, dtype=np.float32):
    """Per-sample masks stacked per layer: list of (batch, tokens, channels).

    ``rngs`` holds one generator per sample so results do not depend on how
    samples are grouped into batches.
    """
    if len(rngs) != batch:
        raise ContractError(f"need {batch} per-sample rngs, got {len(rngs)}")
    per_sample = [sample_masks(tokens, channels, n_layers, policy, rng, dtype) for rng in rngs]
    return [np.stack([per_sample[b][i] for b in range(batch)]) for i in range(n_layers)]


class DepthHeads(Layer):
    """One trained classifier head per Mixer layer depth."""

    def __init__(self, channels, n_classes, n_layers, seed=0, dtype=np.float32):
        rng = np.random.default_rng(np.random.SeedSequence((0x4448, seed)))
        self.heads = [ClassifierHead(channels, n_classes, rng, dtype) for _ in range(n_layers)]

    def __len__(self):
        return len(self.heads)

    def __getitem__(self, k):
        return self.heads[k]

    def children(self):
        return [(f"head.{i}", h) for i, h in enumerate(self.heads)]

    def forward(self, x, ctx=None):
        raise NotImplementedError("apply individual heads via indexing")


def masked_loss(x, y, model, masks=None):
    """Per-sample loss and input gradient of the masked model forward.

    ``masks`` as produced by :func:`sample_masks` / :func:`sample_mask_batch`;
    ``None`` runs the unmasked model.  Returns (loss vector, image gradient).
    """
    ctx = {}
    logits = model.forward(x, masks, ctx)
    loss = softmax_cross_entropy(logits, y, reduction="none")
    dlogits = softmax_cross_entropy_backward(logits, y, reduction="none")
    gx, _ = model.backward(x, dlogits, masks, ctx)
    return loss, gx


def prefix_ensemble_loss(x, y, model, masks=None):
    """Loss on depth-averaged logits: every prefix feeds the shared head.

    The token table after each of the ``n`` masked layers goes through the
    model's own classifier head; the n logit vectors are averaged and the
    cross-entropy of the average is returned with its input gradient.
    """
    n = model.n_layers
    ctx = {}
    seq = model.forward_sequence(x, masks, ctx)
    head_ctxs = [{} for _ in range(n)]
    prefix_logits = [model.head.forward(seq[k + 1], head_ctxs[k]) for k in range(n)]
    logits = prefix_logits[0]
    for extra in prefix_logits[1:]:
        logits = logits + extra
    logits = logits / n
    loss = softmax_cross_entropy(logits, y, reduction="none")
    dlogits = softmax_cross_entropy_backward(logits, y, reduction="none") / n
    seq_grads = [None] * (n + 1)
    for k in range(n):
        g, _ = model.head.backward(seq[k + 1], dlogits, head_ctxs[k])
        seq_grads[k + 1] = g
    gx, _ = model.backward_sequence(x, seq_grads, masks, ctx)
    return loss, gx


def depth_head_loss(x, y, model, heads, masks=None):
    """Mean over depths of each trained head's cross-entropy, with gradient.

    ``heads[k]`` classifies the token table after layer ``k+1``; the returned
    loss is the per-sample mean of the ``n`` head losses.
    """
    n = model.n_layers
    if len(heads) != n:
        raise ContractError(f"need {n} depth heads, got {len(heads)}")
    ctx = {}
    seq = model.forward_sequence(x, masks, ctx)
    total = None
    seq_grads = [None] * (n + 1)
    for k in range(n):
        hctx = {}
        logits = heads[k].forward(seq[k + 1], hctx)
        lk = softmax_cross_entropy(logits, y, reduction="none")
        total = lk if total is None else total + lk
        dlogits = softmax_cross_entropy_backward(logits, y, reduction="none") / n
        g, _ = heads[k].backward(seq[k + 1], dlogits, hctx)
        seq_grads[k + 1] = g
    gx, _ = model.backward_sequence(x, seq_grads, masks, ctx)
    return total / n, gx


class PlainLoss:
    """Unwrapped loss gradient; works with any model in the zoo."""

    needs_masks = False

    def __init__(self, model):
        self.model = model

    def loss_and_grad(self, x, y, masks=None):
        ctx = {}
        logits = self.model.forward(x, ctx=ctx)
        loss = softmax_cross_entropy(logits, y, reduction="none")
        dlogits = softmax_cross_entropy_backward(logits, y, reduction="none")
        gx, _ = self.model.backward(x, dlogits, ctx=ctx)
        return loss, gx


class MaskedLoss:
    """Masked model forward (the detachable transfer component)."""

    needs_masks = True

    def __init__(self, model, policy):
        self.model = model
        self.policy = policy

    def sample(self, batch, rngs):
        cfg = self.model.cfg
        return sample_mask_batch(batch, cfg.tokens, cfg.hidden_dim,
                                 cfg.n_layers, self.policy, rngs)

    def loss_and_grad(self, x, y, masks=None):
        return masked_loss(x, y, self.model, masks)


class PrefixEnsembleLoss(MaskedLoss):
    """Masked + depth ensemble through the shared classifier head."""

    def loss_and_grad(self, x, y, masks=None):
        return prefix_ensemble_loss(x, y, self.model, masks)


class DepthHeadLoss(MaskedLoss):
    """Masked + per-depth trained heads, losses averaged."""

    def __init__(self, model, policy, heads):
        super().__init__(model, policy)
        self.heads = heads

    def loss_and_grad(self, x, y, masks=None):
        return depth_head_loss(x, y, self.model, self.heads, masks)


WRAPPER_NAMES = ("plain", "mask", "mask+ensemble", "mask+heads")


def make_wrapper(name, model, policy=None, heads=None):
    """Build a gradient source by config name."""
    if name == "plain":
        return PlainLoss(model)
    if policy is None:
        raise ConfigError(f"wrapper {name!r} requires a mask policy")
    if name == "mask":
        return MaskedLoss(model, policy)
    if name == "mask+ensemble":
        return PrefixEnsembleLoss(model, policy)
    if name == "mask+heads":
        if heads is None:
            raise ConfigError("wrapper 'mask+heads' requires trained depth heads")
        return DepthHeadLoss(model, policy, heads)
    raise ConfigError(f"unknown wrapper {name!r}; expected one of {WRAPPER_NAMES}")
