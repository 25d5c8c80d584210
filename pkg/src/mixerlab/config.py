"""Flat ``key = value`` run configuration with a closed schema.

Unknown keys are hard errors so typos cannot silently change a run.  Every
run echoes its fully resolved configuration into a manifest that, together
with the seed and the source tree version, reproduces the outputs bit for
bit.
"""

import hashlib
import os
import subprocess
from dataclasses import dataclass

from .errors import ConfigError

DATA_DIR_ENV = "MIXERLAB_DATA_DIR"


def _parse_bool(text):
    if text in ("true", "1", "yes"):
        return True
    if text in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text):
    return [float(v) for v in text.split(",") if v.strip()] if text else []


def _parse_ints(text):
    return [int(v) for v in text.split(",") if v.strip()] if text else []


def _parse_strs(text):
    return [v.strip() for v in text.split(",") if v.strip()] if text else []


@dataclass(frozen=True)
class Key:
    parse: callable
    default: object
    help: str


SCHEMA = {
    "seed": Key(int, 0, "run seed for attacks and mask sampling"),
    "workers": Key(int, 1, "parallel chunk workers"),
    "chunk": Key(int, 64, "samples per numeric batch (unit of parallelism)"),

    "data.kind": Key(str, "synthetic", "synthetic | idx"),
    "data.dir": Key(str, "data", f"dataset directory (env {DATA_DIR_ENV} overrides)"),
    "data.seed": Key(int, 7, "synthetic corpus generation seed"),
    "data.train": Key(int, 5000, "synthetic train sample count"),
    "data.test": Key(int, 1200, "synthetic test sample count"),
    "data.train_images": Key(str, "", "IDX train images (data.kind=idx)"),
    "data.train_labels": Key(str, "", "IDX train labels"),
    "data.test_images": Key(str, "", "IDX test images"),
    "data.test_labels": Key(str, "", "IDX test labels"),

    "model.kind": Key(str, "mixer", "mixer | cnn | mlp | mixer-alt"),
    "model.seed": Key(int, 1, "parameter initialization seed"),
    "model.image_side": Key(int, 28, "input image side"),
    "model.channels": Key(int, 1, "input channels"),
    "model.patch": Key(int, 7, "mixer patch size"),
    "model.hidden": Key(int, 64, "mixer hidden width C"),
    "model.layers": Key(int, 4, "mixer depth n"),
    "model.token_mlp": Key(int, 32, "token-mixing MLP width"),
    "model.channel_mlp": Key(int, 128, "channel-mixing MLP width"),
    "model.classes": Key(int, 10, "number of classes"),

    "train.epochs": Key(int, 16, "training epochs"),
    "train.batch": Key(int, 128, "training batch size"),
    "train.lr": Key(float, 0.1, "learning rate"),
    "train.momentum": Key(float, 0.9, "SGD momentum"),
    "train.weight_decay": Key(float, 0.0, "L2 weight decay"),

    "heads.epochs": Key(int, 20, "depth-head training epochs"),
    "heads.batch": Key(int, 128, "depth-head batch size"),
    "heads.lr": Key(float, 0.1, "depth-head learning rate"),

    "attack.kind": Key(str, "mim", "pgd | mim | dim | tim"),
    "attack.epsilon": Key(float, 16.0 / 255.0, "L-inf budget on [0,1] scale"),
    "attack.steps": Key(int, 50, "attack iterations"),
    "attack.alpha": Key(float, -1.0, "step size; <=0 means epsilon/steps"),
    "attack.mu": Key(float, 1.0, "momentum decay"),
    "attack.dim_prob": Key(float, 0.5, "input-diversity transform probability"),
    "attack.dim_resize_min": Key(int, -1, "min resize side; <=0 means ceil(0.8*side)"),
    "attack.tim_kernel": Key(int, 7, "gradient smoothing kernel size (odd)"),
    "attack.tim_sigma": Key(float, 1.0, "gradient smoothing kernel sigma"),

    "wrapper": Key(str, "plain", "plain | mask | mask+ensemble | mask+heads"),
    "ma.P": Key(float, 0.7, "probability a layer input is masked at all"),
    "ma.p": Key(float, 0.8, "Bernoulli keep probability of a drawn mask"),
    "ma.resample": Key(str, "per-iteration", "per-iteration | fixed"),

    "eval.samples": Key(int, 256, "filtered evaluation sample count"),
    "eval.attacks": Key(_parse_strs, ["mim"], "attack kinds for the matrix"),
    "eval.wrappers": Key(_parse_strs, ["plain", "mask"], "wrappers for the matrix"),
    "eval.seeds": Key(_parse_ints, [0], "attack seeds for the matrix"),

    "sweep.P": Key(_parse_floats, [0.0, 0.7], "mask probabilities to sweep"),
    "sweep.p": Key(_parse_floats, [0.5, 0.6, 0.7, 0.8, 0.9, 1.0], "keep probabilities to sweep"),
    "sweep.samples": Key(int, 128, "sample count for sweep cells"),
}


class Config:
    """Resolved configuration: schema defaults, file values, then overrides."""

    def __init__(self, values):
        self._values = values

    def __getitem__(self, key):
        return self._values[key]

    def items(self):
        return sorted(self._values.items())

    def data_dir(self):
        return os.environ.get(DATA_DIR_ENV, self["data.dir"])

    def canonical_text(self, exclude=()):
        lines = []
        for key, value in self.items():
            if key in exclude:
                continue
            if isinstance(value, list):
                value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def hash(self):
        # workers is pure scheduling: it may never change an output, so it is
        # not part of the semantic hash (parallel and serial runs share cache
        # entries and produce byte-identical artifacts)
        return hashlib.sha256(self.canonical_text(exclude=("workers",)).encode()).hexdigest()[:12]


def _set(values, key, raw, where):
    spec = SCHEMA.get(key)
    if spec is None:
        raise ConfigError(f"unknown config key {key!r} ({where})")
    try:
        values[key] = spec.parse(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r} ({where}): {exc}") from exc


def load_config(path=None, overrides=()):
    """Build a :class:`Config` from defaults, an optional file, and overrides.

    File syntax: one ``key = value`` per line; blank lines and ``#`` comments
    allowed.  ``overrides`` are ``key=value`` strings (CLI ``--set``).
    """
    values = {key: spec.default for key, spec in SCHEMA.items()}
    if path is not None:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, _, raw = line.partition("=")
                _set(values, key.strip(), raw.strip(), f"{path}:{lineno}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        _set(values, key.strip(), raw.strip(), "--set")
    return Config(values)


def git_describe():
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def write_manifest(path, cfg, command, extra=()):
    """Record everything needed to reproduce a run bit-exactly."""
    lines = [
        f"# command = {command}",
        f"# version = {git_describe()}",
        f"# config_hash = {cfg.hash()}",
    ]
    lines += [f"# {key} = {value}" for key, value in extra]
    text = "\n".join(lines) + "\n" + cfg.canonical_text()
    with open(path, "w") as fh:
        fh.write(text)
    return text
