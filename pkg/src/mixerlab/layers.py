"""Differentiable layers with explicit forward/backward methods.

A layer owns named parameter arrays (``local_params``) and may own child
layers (``children``); ``params()`` flattens the tree into dot-separated
names.  ``forward(x, ctx)`` may record intermediates into the caller-owned
``ctx`` dict; ``backward(x, gout, ctx)`` reuses them when present and
recomputes from ``x`` otherwise, returning ``(input_grad, param_grads)``.

Parameters are read-only during attack/evaluation and single-writer during
training; a ``ctx`` belongs to one forward call, so concurrent forwards over
different samples never share state.
"""

import copy

import numpy as np

from . import ops


class Layer:
    """Base differentiable unit; subclasses implement forward/backward."""

    def local_params(self):
        return {}

    def children(self):
        return []

    def params(self):
        """Flattened name -> array view of this layer's parameter tree."""
        out = dict(self.local_params())
        for name, child in self.children():
            for key, value in child.params().items():
                out[f"{name}.{key}"] = value
        return out

    def forward(self, x, ctx=None):
        raise NotImplementedError

    def backward(self, x, gout, ctx=None):
        raise NotImplementedError

    def astype(self, dtype):
        """Deep copy with all parameters cast to ``dtype`` (for gradcheck)."""
        clone = copy.deepcopy(self)
        clone._cast(dtype)
        return clone

    def _cast(self, dtype):
        p = self.local_params()
        for key in p:
            self._set_param(key, p[key].astype(dtype))
        for _, child in self.children():
            child._cast(dtype)

    def _set_param(self, key, value):
        raise NotImplementedError(f"{type(self).__name__} has parameters but no setter")


class Linear(Layer):
    """Affine map over the last axis: y = x @ w + b."""

    def __init__(self, d_in, d_out, rng=None, dtype=np.float32):
        self.d_in = d_in
        self.d_out = d_out
        if rng is None:
            self.w = np.zeros((d_in, d_out), dtype=dtype)
        else:
            std = np.sqrt(2.0 / (d_in + d_out))
            self.w = (rng.standard_normal((d_in, d_out)) * std).astype(dtype)
        self.b = np.zeros(d_out, dtype=dtype)

    def local_params(self):
        return {"w": self.w, "b": self.b}

    def _set_param(self, key, value):
        setattr(self, key, value)

    def forward(self, x, ctx=None):
        flat = x.reshape(-1, self.d_in)
        y = ops.matmul(flat, self.w) + self.b
        return y.reshape(x.shape[:-1] + (self.d_out,))

    def backward(self, x, gout, ctx=None):
        flat = x.reshape(-1, self.d_in)
        gflat = gout.reshape(-1, self.d_out)
        gx, gw = ops.matmul_backward(flat, self.w, gflat)
        gb = gflat.sum(axis=0)
        return gx.reshape(x.shape), {"w": gw, "b": gb}


class LayerNorm(Layer):
    """Per-row normalization over the last axis with learned affine."""

    def __init__(self, dim, eps=ops.LAYERNORM_EPS, dtype=np.float32):
        self.dim = dim
        self.eps = eps
        self.gamma = np.ones(dim, dtype=dtype)
        self.beta = np.zeros(dim, dtype=dtype)

    def local_params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def _set_param(self, key, value):
        setattr(self, key, value)

    def forward(self, x, ctx=None):
        return ops.layernorm(x, self.gamma, self.beta, self.eps, cache=ctx)

    def backward(self, x, gout, ctx=None):
        gx, dgamma, dbeta = ops.layernorm_backward(
            x, self.gamma, self.beta, gout, self.eps, cache=ctx if ctx else None
        )
        return gx, {"gamma": dgamma, "beta": dbeta}


class Gelu(Layer):
    """Exact-erf GELU nonlinearity (parameter-free)."""

    def forward(self, x, ctx=None):
        return ops.gelu(x, cache=ctx)

    def backward(self, x, gout, ctx=None):
        return ops.gelu_backward(x, gout, cache=ctx if ctx else None), {}


class Mlp(Layer):
    """Two-layer perceptron: linear -> GELU -> linear, over the last axis."""

    def __init__(self, d_in, d_hidden, d_out, rng, dtype=np.float32):
        self.fc1 = Linear(d_in, d_hidden, rng, dtype)
        self.act = Gelu()
        self.fc2 = Linear(d_hidden, d_out, rng, dtype)

    def children(self):
        return [("fc1", self.fc1), ("act", self.act), ("fc2", self.fc2)]

    def forward(self, x, ctx=None):
        c1, c2 = _sub(ctx, "h1"), _sub(ctx, "act")
        h = self.fc1.forward(x, c1)
        if ctx is not None:
            ctx["h"] = h
        a = self.act.forward(h, c2)
        if ctx is not None:
            ctx["a"] = a
        return self.fc2.forward(a, _sub(ctx, "out"))

    def backward(self, x, gout, ctx=None):
        if ctx is not None:
            h, a = ctx["h"], ctx["a"]
        else:
            h = self.fc1.forward(x)
            a = self.act.forward(h)
        ga, g2 = self.fc2.backward(a, gout, _get(ctx, "out"))
        gh, _ = self.act.backward(h, ga, _get(ctx, "act"))
        gx, g1 = self.fc1.backward(x, gh, _get(ctx, "h1"))
        grads = {f"fc1.{k}": v for k, v in g1.items()}
        grads.update({f"fc2.{k}": v for k, v in g2.items()})
        return gx, grads


def _sub(ctx, name):
    """Child ctx dict inside ``ctx``, or None when caching is off."""
    if ctx is None:
        return None
    return ctx.setdefault(name, {})


def _get(ctx, name):
    if ctx is None:
        return None
    return ctx.get(name) or None


def prefix_grads(prefix, grads):
    return {f"{prefix}.{k}": v for k, v in grads.items()}


def merge_grads(target, incoming):
    """Accumulate gradient dicts; shared parameters sum their contributions."""
    for key, value in incoming.items():
        if key in target:
            target[key] = target[key] + value
        else:
            target[key] = value
    return target
