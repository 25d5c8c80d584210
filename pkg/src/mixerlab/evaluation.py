"""Transfer evaluation: sample filtering, fooling rates, and the
source x attack x wrapper x target matrix.

The protocol: keep only test samples every model classifies correctly (so
clean fooling is zero by construction), craft adversarial examples once per
(attack, wrapper, seed) on the source model, then score every target,
including the source itself as the white-box row.  Attacked sample sets are
cached to disk so adding a target does not recompute attacks.
"""

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import fileio
from .attacks import run_attack_dataset
from .errors import EmptyFilterError
from .masking import make_wrapper
from .targets import predict

CSV_HEADER = "source,attack,wrapper,target,fooling_rate,n,seed,config_hash"
SWEEP_CSV_HEADER = "P,p," + CSV_HEADER


@dataclass
class EvalRow:
    source: str
    attack: str
    wrapper: str
    target: str
    fooling_rate: float
    n: int
    seed: int
    config_hash: str

    def csv(self):
        return (f"{self.source},{self.attack},{self.wrapper},{self.target},"
                f"{self.fooling_rate:.4f},{self.n},{self.seed},{self.config_hash}")


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    clean_accuracy: dict = field(default_factory=dict)
    filtered_ids: np.ndarray = None

    def to_csv(self):
        return "\n".join([CSV_HEADER] + [r.csv() for r in self.rows]) + "\n"

    def to_text(self):
        lines = ["clean accuracy (test split):"]
        for name, acc in self.clean_accuracy.items():
            lines.append(f"  {name:<12s} {100.0 * acc:6.2f}%")
        if self.filtered_ids is not None:
            lines.append(f"filtered samples: {len(self.filtered_ids)}")
        lines.append("")
        header = f"{'source':<12s} {'attack':<6s} {'wrapper':<14s} {'target':<12s} {'fool%':>7s} {'n':>5s} {'seed':>4s}"
        lines.append(header)
        lines.append("-" * len(header))
        for r in self.rows:
            lines.append(
                f"{r.source:<12s} {r.attack:<6s} {r.wrapper:<14s} {r.target:<12s}"
                f" {r.fooling_rate:7.2f} {r.n:5d} {r.seed:4d}"
            )
        return "\n".join(lines) + "\n"


def filter_correct(images, labels, models, limit=None):
    """Indices of samples every model classifies correctly (order-stable).

    ``limit`` truncates to the first so-many surviving samples.  Raises
    :class:`EmptyFilterError` when nothing survives.
    """
    keep = np.ones(images.shape[0], dtype=bool)
    for model in models:
        keep &= predict(model, images) == labels
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        raise EmptyFilterError("no sample is correctly classified by every model")
    if limit is not None:
        idx = idx[:limit]
    return idx


def fooling_rate(x_adv, labels, target):
    """Percentage of attacked samples the target misclassifies."""
    if x_adv.shape[0] == 0:
        raise EmptyFilterError("fooling rate over zero samples")
    return 100.0 * float((predict(target, x_adv) != labels).mean())


def _cache_path(cache_dir, attack, wrapper, seed, config_hash):
    name = f"adv-{attack}-{wrapper.replace('+', '_')}-s{seed}-{config_hash}.mxck"
    return os.path.join(cache_dir, name)


def craft_adversarial(x, y, source_model, wrapper, attack_cfg, policy, heads=None,
                      workers=1, cache_dir=None, config_hash="", indices=None):
    """Adversarial batch for one (attack, wrapper, seed) cell, with caching."""
    if indices is None:
        indices = np.arange(x.shape[0])
    path = None
    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
        path = _cache_path(cache_dir, attack_cfg.kind, wrapper, attack_cfg.seed, config_hash)
        if os.path.exists(path):
            x_adv, labels, cached_idx, _ = fileio.load_advset(path)
            if x_adv.shape == x.shape and np.array_equal(cached_idx, indices):
                return x_adv
    source = make_wrapper(wrapper, source_model, policy, heads)
    x_adv = run_attack_dataset(x, y, source, attack_cfg, workers=workers)
    if path is not None:
        fileio.save_advset(path, x_adv, y, indices, config_hash)
    return x_adv


def run_matrix(source_name, source_model, x, y, attacks, wrappers, targets,
               attack_cfg, policy, seeds, heads=None, workers=1,
               cache_dir=None, config_hash="", indices=None):
    """Fooling-rate matrix over attacks x wrappers x targets x seeds.

    ``targets`` maps name -> model; the source is always scored first as the
    white-box row.  Returns the rows; report assembly (clean accuracies,
    filtered ids) is the caller's job.
    """
    rows = []
    scored = {source_name: source_model, **targets}
    for seed in seeds:
        for attack in attacks:
            for wrapper in wrappers:
                cfg = replace(attack_cfg, kind=attack, seed=seed)
                x_adv = craft_adversarial(
                    x, y, source_model, wrapper, cfg, policy, heads,
                    workers, cache_dir, config_hash, indices,
                )
                for target_name, target_model in scored.items():
                    rows.append(EvalRow(
                        source=source_name, attack=attack, wrapper=wrapper,
                        target=target_name,
                        fooling_rate=fooling_rate(x_adv, y, target_model),
                        n=x.shape[0], seed=seed, config_hash=config_hash,
                    ))
    return rows


def run_sweep(source_name, source_model, x, y, attack, wrapper, targets,
              attack_cfg, base_policy, mask_probs, keep_probs, seeds,
              heads=None, workers=1, config_hash=""):
    """Probability grid: one fooling-rate row per (P, p, target, seed).

    Sweeps the masking policy of a single (attack, wrapper) combination; the
    white-box row is included like in the main matrix.
    """
    lines = [SWEEP_CSV_HEADER]
    scored = {source_name: source_model, **targets}
    for mask_prob in mask_probs:
        for keep_prob in keep_probs:
            policy = replace(base_policy, mask_prob=mask_prob, keep_prob=keep_prob)
            for seed in seeds:
                cfg = replace(attack_cfg, kind=attack, seed=seed)
                source = make_wrapper(wrapper, source_model, policy, heads)
                x_adv = run_attack_dataset(x, y, source, cfg, workers=workers)
                for target_name, target_model in scored.items():
                    rate = fooling_rate(x_adv, y, target_model)
                    lines.append(
                        f"{mask_prob},{keep_prob},{source_name},{attack},{wrapper},"
                        f"{target_name},{rate:.4f},{x.shape[0]},{seed},{config_hash}"
                    )
    return "\n".join(lines) + "\n"
