"""Finite-difference verification of layer backward passes.

The checker projects a layer's output to a scalar with fixed random weights,
then compares the analytic gradient of that scalar (via ``backward``) against
central differences for the input and every parameter.  Runs in float64; the
step is 1e-5.  Errors are reported relative to the largest gradient magnitude
in each tensor, so exact zeros do not blow up the ratio.
"""

from dataclasses import dataclass, field

import numpy as np

FD_STEP = 1e-5
MAX_INPUT_ELEMENTS = 1000


@dataclass
class CheckEntry:
    name: str
    max_rel_err: float
    ok: bool
    detail: str = ""


@dataclass
class CheckReport:
    tol: float
    entries: list = field(default_factory=list)

    @property
    def max_rel_err(self):
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self):
        return all(e.ok for e in self.entries)

    def lines(self):
        out = []
        for e in self.entries:
            status = "ok" if e.ok else "FAIL"
            line = f"  {e.name:<28s} max_rel_err={e.max_rel_err:.3e}  {status}"
            if e.detail:
                line += f"  ({e.detail})"
            out.append(line)
        return out


# Tensors whose true gradient is ~0 (the architecture has null directions:
# e.g. a bias that only shifts rows by a constant a downstream layernorm
# removes) would turn FD roundoff into huge ratios; gradients below the floor
# are therefore compared on the floor's absolute scale.
GRAD_SCALE_FLOOR = 1e-6


def _rel_errors(analytic, numeric):
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0),
                GRAD_SCALE_FLOOR)
    return np.abs(analytic - numeric) / scale


def _scalar_loss(layer, x, weights):
    return float((layer.forward(x) * weights).sum())


def gradcheck(layer, x, tol=1e-4, step=FD_STEP, rng=None):
    """Check ``layer.backward`` against central finite differences.

    ``x`` must be small (<= 1000 elements); the layer and input are cast to
    float64 before checking.  Returns a :class:`CheckReport` whose ``passed``
    flag is true iff every tensor's max relative error is within ``tol`` and
    all gradients are finite.
    """
    if x.size > MAX_INPUT_ELEMENTS:
        raise ValueError(f"gradcheck input too large ({x.size} > {MAX_INPUT_ELEMENTS})")
    if rng is None:
        rng = np.random.default_rng(0)
    layer = layer.astype(np.float64)
    x = x.astype(np.float64)

    ctx = {}
    y = layer.forward(x, ctx=ctx)
    weights = rng.standard_normal(y.shape)
    gx, gparams = layer.backward(x, weights, ctx=ctx)

    report = CheckReport(tol=tol)
    params = layer.params()
    targets = [("input", x, gx)]
    targets += [(name, params[name], gparams.get(name)) for name in sorted(params)]

    for name, array, analytic in targets:
        if analytic is None:
            report.entries.append(CheckEntry(name, np.inf, False, "missing gradient"))
            continue
        if analytic.shape != array.shape:
            report.entries.append(
                CheckEntry(name, np.inf, False, f"gradient shape {analytic.shape} != {array.shape}")
            )
            continue
        numeric = np.zeros_like(array)
        flat = array.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = _scalar_loss(layer, x, weights)
            flat[i] = orig - step
            lo = _scalar_loss(layer, x, weights)
            flat[i] = orig
            nflat[i] = (hi - lo) / (2.0 * step)
        if not (np.isfinite(analytic).all() and np.isfinite(numeric).all()):
            bad = np.argwhere(~(np.isfinite(analytic) & np.isfinite(numeric)))
            report.entries.append(
                CheckEntry(name, np.inf, False, f"non-finite gradient at index {tuple(bad[0])}")
            )
            continue
        errs = _rel_errors(analytic, numeric)
        worst = float(errs.max(initial=0.0))
        ok = worst <= tol
        detail = "" if ok else f"worst at index {tuple(np.argwhere(errs == errs.max())[0])}"
        report.entries.append(CheckEntry(name, worst, ok, detail))
    return report


def build_check_suite(seed=0):
    """The canonical layer list checked by the CLI and the acceptance suite.

    Returns (name, layer, input_shape, tol) tuples covering every layer type
    in the repo, including a full masked model with fixed masks.
    """
    from . import layers as L
    from .masking import MaskPolicy, sample_masks
    from .mixer import ClassifierHead, ChannelMix, MixerConfig, MixerModel, MixerLayer, TokenMix
    from .targets import Conv3x3, MaskedModelAdapter

    rng = np.random.default_rng(seed)
    s, c = 4, 8
    cfg = MixerConfig(
        image_side=8, channels_in=1, patch_size=4, hidden_dim=c,
        n_layers=2, token_mlp_dim=5, channel_mlp_dim=7, n_classes=3,
    )
    model = MixerModel(cfg, seed=seed + 1)
    masks = sample_masks(cfg.tokens, c, cfg.n_layers, MaskPolicy(0.5, 0.7),
                         np.random.default_rng(seed + 2))

    suite = [
        ("linear", L.Linear(6, 5, rng), (3, 6), 1e-5),
        ("layernorm", L.LayerNorm(8), (4, 8), 1e-4),
        ("gelu", L.Gelu(), (5, 7), 1e-5),
        ("conv3x3", Conv3x3(2, 3, rng), (2, 2, 5, 5), 1e-4),
        ("token_mixing", TokenMix(s, c, 6, rng), (2, s, c), 1e-4),
        ("channel_mixing", ChannelMix(c, 11, rng), (2, s, c), 1e-4),
        ("mixer_layer", MixerLayer(s, c, 5, 7, rng), (2, s, c), 1e-4),
        ("classifier_head", ClassifierHead(c, 3, rng), (2, s, c), 1e-4),
        ("masked_model", MaskedModelAdapter(model, masks), (2, 1, 8, 8), 1e-4),
    ]
    out = []
    for name, layer, shape, tol in suite:
        x = np.random.default_rng(hash(name) % (2**32)).standard_normal(shape)
        out.append((name, layer, x, tol))
    return out


def run_check_suite(seed=0, tol_override=None, verbose=False):
    """Run the canonical suite; returns (all_passed, report lines)."""
    lines = []
    ok = True
    for name, layer, x, tol in build_check_suite(seed):
        tol = tol_override if tol_override is not None else tol
        rep = gradcheck(layer, x, tol=tol)
        status = "ok" if rep.passed else "FAIL"
        lines.append(f"{name:<18s} tol={tol:.0e}  max_rel_err={rep.max_rel_err:.3e}  {status}")
        if verbose or not rep.passed:
            lines.extend(rep.lines())
        ok = ok and rep.passed
    return ok, lines
