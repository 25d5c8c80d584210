"""Iterative gradient attacks: plain sign steps, momentum, input diversity,
and kernel-smoothed gradients, with a pluggable loss-gradient source.

Images live in [0, 1]; the budget is an L-inf ball of radius ``epsilon`` on
that scale (the usual 0..255 budget of 16 maps to 16/255).  Every sample is
attacked independently: randomness comes from per-sample generator streams
derived from (seed, sample index, domain), so results do not depend on how
samples are grouped into chunks or distributed over workers.  The chunk size
is part of the attack configuration because it is the unit of batched
arithmetic; parallelism only reorders whole chunks.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError

ATTACK_KINDS = ("pgd", "mim", "dim", "tim")

# RNG stream domains; input-diversity draws and mask draws never interleave,
# so disabling one cannot shift the other's stream.
DOMAIN_DIM = 1
DOMAIN_MASK = 2

L1_GUARD = 1e-12


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "mim"
    epsilon: float = 16.0 / 255.0
    steps: int = 50
    alpha: float = -1.0            # <= 0 selects epsilon / steps
    mu: float = 1.0
    dim_prob: float = 0.5
    dim_resize_min: int = -1       # <= 0 selects ceil(0.8 * image_side)
    tim_kernel: int = 7
    tim_sigma: float = 1.0
    seed: int = 0
    chunk: int = 64

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be non-negative")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if not 0.0 <= self.dim_prob <= 1.0:
            raise ConfigError("dim_prob must be in [0,1]")
        if self.tim_kernel < 1 or self.tim_kernel % 2 == 0:
            raise ConfigError("tim_kernel must be odd and positive")
        if self.chunk < 1:
            raise ConfigError("chunk must be >= 1")

    def step_size(self):
        return self.alpha if self.alpha > 0 else self.epsilon / self.steps

    def resize_min(self, image_side):
        r = self.dim_resize_min if self.dim_resize_min > 0 else math.ceil(0.8 * image_side)
        if r > image_side:
            raise ConfigError(f"dim_resize_min {r} exceeds image side {image_side}")
        return r


@dataclass
class AttackState:
    """Per-chunk attack iterate: adversarial images, momentum, step counter."""

    x: np.ndarray          # clean reference for the projection
    x_adv: np.ndarray
    g: np.ndarray
    t: int = 0


def clip_project(x_adv, x, epsilon):
    """Clamp to the epsilon ball around ``x`` intersected with [0, 1]."""
    eps = np.asarray(epsilon, dtype=x.dtype)
    return np.clip(np.clip(x_adv, x - eps, x + eps), 0.0, 1.0)


def l1_normalize(grad):
    """Per-sample L1 normalization; near-zero gradients map to zero."""
    flat = grad.reshape(grad.shape[0], -1)
    norms = np.abs(flat).sum(axis=1).reshape((-1,) + (1,) * (grad.ndim - 1))
    safe = np.where(norms < L1_GUARD, 1.0, norms).astype(grad.dtype)
    out = grad / safe
    return np.where(norms < L1_GUARD, np.zeros_like(grad), out)


def pgd_step(state, grad, cfg):
    """Plain sign step with projection; no momentum."""
    alpha = np.asarray(cfg.step_size(), dtype=state.x_adv.dtype)
    x_adv = clip_project(state.x_adv + alpha * np.sign(grad), state.x, cfg.epsilon)
    return AttackState(state.x, x_adv, state.g, state.t + 1)


def mim_step(state, grad, cfg):
    """Momentum step: accumulate L1-normalized gradients, move by sign."""
    mu = np.asarray(cfg.mu, dtype=state.x_adv.dtype)
    g = mu * state.g + l1_normalize(grad)
    alpha = np.asarray(cfg.step_size(), dtype=state.x_adv.dtype)
    x_adv = clip_project(state.x_adv + alpha * np.sign(g), state.x, cfg.epsilon)
    return AttackState(state.x, x_adv, g, state.t + 1)


def sample_rngs(seed, sample_indices, domain):
    """One independent generator per sample for the given stream domain."""
    return [
        np.random.default_rng(np.random.SeedSequence((seed, int(i), domain)))
        for i in sample_indices
    ]


def dim_transform(x, cfg, rngs):
    """Random resize + zero-pad placement, applied per sample with its rng.

    With probability ``dim_prob`` the sample is nearest-neighbor downscaled
    to a random side r in [resize_min, side] and placed at a uniform random
    offset on a zero canvas of the original size; otherwise passed through.
    Returns the transformed batch plus the per-sample placement map needed to
    scatter gradients back.
    """
    side = x.shape[-1]
    rmin = cfg.resize_min(side)
    out = x.copy()
    maps = [None] * x.shape[0]
    for b, rng in enumerate(rngs):
        if rng.random() >= cfg.dim_prob:
            continue
        r = int(rng.integers(rmin, side + 1))
        oy = int(rng.integers(0, side - r + 1))
        ox = int(rng.integers(0, side - r + 1))
        src = np.floor(np.arange(r) * (side / r)).astype(np.int64)
        canvas = np.zeros_like(x[b])
        canvas[:, oy:oy + r, ox:ox + r] = x[b][:, src[:, None], src[None, :]]
        out[b] = canvas
        maps[b] = (r, oy, ox, src)
    return out, maps


def dim_backward(gout, maps):
    """Scatter gradients through the resize/pad placement."""
    gx = np.zeros_like(gout)
    for b, m in enumerate(maps):
        if m is None:
            gx[b] = gout[b]
            continue
        r, oy, ox, src = m
        gx[b][:, src[:, None], src[None, :]] = gout[b][:, oy:oy + r, ox:ox + r]
    return gx


def gaussian_kernel(size, sigma, dtype=np.float64):
    """2-D Gaussian kernel normalized to sum 1."""
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=dtype)
    k1 = np.exp(-0.5 * (ax / sigma) ** 2)
    k = np.outer(k1, k1)
    return k / k.sum()


def tim_smooth(grad, cfg):
    """Depthwise same-size convolution of the gradient with a Gaussian kernel.

    Edge-replication padding keeps a constant field constant.
    """
    size = cfg.tim_kernel
    h, w = grad.shape[-2:]
    if size > min(h, w):
        raise ConfigError(f"tim_kernel {size} larger than image {h}x{w}")
    if size == 1:
        return grad
    kernel = gaussian_kernel(size, cfg.tim_sigma).astype(grad.dtype)
    half = size // 2
    padded = np.pad(grad, ((0, 0), (0, 0), (half, half), (half, half)), mode="edge")
    out = np.zeros_like(grad)
    for dy in range(size):
        for dx in range(size):
            out += kernel[dy, dx] * padded[..., dy:dy + h, dx:dx + w]
    return out


def grad_source(x_adv, y, source, masks=None):
    """Input gradient of the wrapper's loss (per-sample reduction)."""
    _, gx = source.loss_and_grad(x_adv, y, masks)
    return gx


def run_attack(x, y, source, cfg, sample_indices=None):
    """Attack one chunk of samples; returns the adversarial batch.

    ``sample_indices`` are the global dataset positions used to derive the
    per-sample randomness; they default to 0..B-1.
    """
    if x.ndim != 4:
        raise ContractError(f"expected image batch (B, ch, H, W), got {x.shape}")
    b = x.shape[0]
    if sample_indices is None:
        sample_indices = np.arange(b)
    if len(sample_indices) != b:
        raise ContractError("sample_indices length must match batch")

    rngs_dim = sample_rngs(cfg.seed, sample_indices, DOMAIN_DIM) if cfg.kind == "dim" else None
    rngs_mask = sample_rngs(cfg.seed, sample_indices, DOMAIN_MASK) if source.needs_masks else None

    state = AttackState(x=x, x_adv=x.copy(), g=np.zeros_like(x))
    step = pgd_step if cfg.kind == "pgd" else mim_step
    fixed_masks = None
    resample = getattr(source, "policy", None) is not None and source.policy.resample == "per-iteration"

    for _ in range(cfg.steps):
        masks = None
        if source.needs_masks:
            if resample:
                masks = source.sample(b, rngs_mask)
            else:
                if fixed_masks is None:
                    fixed_masks = source.sample(b, rngs_mask)
                masks = fixed_masks
        if cfg.kind == "dim":
            x_in, maps = dim_transform(state.x_adv, cfg, rngs_dim)
        else:
            x_in, maps = state.x_adv, None
        grad = grad_source(x_in, y, source, masks)
        if maps is not None:
            grad = dim_backward(grad, maps)
        if cfg.kind == "tim":
            grad = tim_smooth(grad, cfg)
        state = step(state, grad, cfg)
    return state.x_adv


def run_attack_dataset(x, y, source, cfg, workers=1):
    """Attack a whole sample set in fixed-size chunks.

    Chunk boundaries depend only on ``cfg.chunk``, never on ``workers``, so
    parallel and serial runs produce bit-identical results.
    """
    n = x.shape[0]
    jobs = [
        (start, x[start:start + cfg.chunk], y[start:start + cfg.chunk])
        for start in range(0, n, cfg.chunk)
    ]
    out = np.empty_like(x)

    def attack_chunk(job):
        start, xc, yc = job
        idx = np.arange(start, start + xc.shape[0])
        return start, run_attack(xc, yc, source, cfg, sample_indices=idx)

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(attack_chunk, jobs))
    else:
        results = [attack_chunk(j) for j in jobs]
    for start, adv in results:
        out[start:start + adv.shape[0]] = adv
    return out
