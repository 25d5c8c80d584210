"""SGD-with-momentum training for the source model, the victim zoo, and the
per-depth classifier heads.

Everything is deterministic given the config seed: the shuffle order, the
batch schedule, and the updates.  The optimizer is plain SGD + momentum with
optional weight decay; no schedules or augmentation.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .masking import DepthHeads
from .ops import softmax_cross_entropy, softmax_cross_entropy_backward
from .targets import predict


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("lr, momentum and weight_decay must be non-negative")


def sgd_update(params, grads, velocity, cfg):
    """In-place SGD + momentum step; velocity keyed like the param dict."""
    for name, w in params.items():
        g = grads[name]
        if cfg.weight_decay:
            g = g + cfg.weight_decay * w
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(w)
            velocity[name] = v
        v *= cfg.momentum
        v += g
        w -= cfg.lr * v.astype(w.dtype)


def train(model, images, labels, cfg, log_path=None):
    """Train a classifier on (images, labels); returns per-epoch metrics.

    Metrics are (epoch, mean loss, train accuracy) tuples; when ``log_path``
    is given the same rows are written as CSV.
    """
    n = images.shape[0]
    if n == 0:
        raise ConfigError("empty training set")
    rng = np.random.default_rng(np.random.SeedSequence((0x5452, cfg.seed)))
    params = model.params()
    velocity = {}
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, y = images[idx], labels[idx]
            ctx = {}
            logits = model.forward(x, ctx=ctx)
            losses.append(softmax_cross_entropy(logits, y))
            dlogits = softmax_cross_entropy_backward(logits, y)
            _, grads = model.backward(x, dlogits, ctx=ctx)
            sgd_update(params, grads, velocity, cfg)
        acc = accuracy(model, images, labels)
        history.append((epoch, float(np.mean(losses)), acc))
    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "accuracy"])
            writer.writerows(history)
    return history


def accuracy(model, images, labels, batch=512):
    return float((predict(model, images, batch) == labels).mean())


def train_depth_heads(model, images, labels, cfg, head_seed=0):
    """Train one classifier head per Mixer depth on clean frozen features.

    The backbone stays frozen (its parameters are never touched) and masking
    is off: each head k learns to classify the token table after layer k+1.
    Returns the trained :class:`DepthHeads`.
    """
    n_layers = model.n_layers
    heads = DepthHeads(model.cfg.hidden_dim, model.cfg.n_classes, n_layers, seed=head_seed)

    feats = [[] for _ in range(n_layers)]
    for start in range(0, images.shape[0], 512):
        seq = model.forward_sequence(images[start:start + 512])
        for k in range(n_layers):
            feats[k].append(seq[k + 1])
    feats = [np.concatenate(f) for f in feats]

    n = images.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence((0x4845, cfg.seed)))
    for k in range(n_layers):
        head = heads[k]
        params = head.params()
        velocity = {}
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                x, y = feats[k][idx], labels[idx]
                ctx = {}
                logits = head.forward(x, ctx)
                dlogits = softmax_cross_entropy_backward(logits, y)
                _, grads = head.backward(x, dlogits, ctx)
                sgd_update(params, grads, velocity, cfg)
    return heads


def head_accuracy(model, heads, images, labels, batch=512):
    """Per-depth head accuracies on the given samples."""
    n_layers = model.n_layers
    hits = np.zeros(n_layers)
    for start in range(0, images.shape[0], batch):
        x = images[start:start + batch]
        y = labels[start:start + batch]
        seq = model.forward_sequence(x)
        for k in range(n_layers):
            pred = np.argmax(heads[k].forward(seq[k + 1]), axis=1)
            hits[k] += (pred == y).sum()
    return hits / images.shape[0]
