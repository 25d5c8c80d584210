"""Synthetic 10-class 28x28 image corpus and dataset loading.

The corpus is a deterministic stand-in for a small natural-image set: each
class is a smooth random texture prototype on a torus; a sample is a randomly
shifted, gain-jittered copy of its prototype, contaminated with a faint
randomly chosen other-class texture and pixel noise, then quantized to u8.
The mixing keeps class margins moderate so trained models are accurate but
not adversarially robust.  Images are stored as IDX files and always re-enter
through the IDX reader, so the wire format is exercised end to end.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import fileio
from .errors import ConfigError

PROTO_SIGMA = 3.0      # prototype smoothness (pixels)
MODES = 2              # texture variants per class
SIGNAL_AMP = 0.16      # class signal amplitude around mid-gray
GAIN_RANGE = (0.8, 1.2)
MIX_AMP = 0.38         # relative weight of the confusing other-class texture
NOISE_STD = 0.11
MAX_SHIFT = 4          # toroidal shift range, +/- pixels


def class_prototypes(n_classes, side, seed, modes=None):
    """Smooth zero-mean unit-std texture fields, ``modes`` per class."""
    modes = MODES if modes is None else modes
    rng = np.random.default_rng(np.random.SeedSequence((0x50524F, seed)))
    protos = []
    for _ in range(n_classes * modes):
        field = gaussian_filter(rng.standard_normal((side, side)), PROTO_SIGMA, mode="wrap")
        field = (field - field.mean()) / field.std()
        protos.append(field)
    return np.stack(protos).reshape(n_classes, modes, side, side)


def make_synthetic(n, seed, side=28, n_classes=10):
    """Generate ``n`` samples; returns (images u8 (n, side, side), labels u8).

    A sample is one of its class's texture modes, toroidally shifted, gain
    jittered, blended with a faint texture of a random other class, plus
    pixel noise.  Classes are exactly balanced (up to remainder) and the
    corpus is a pure function of (n, seed, side, n_classes).
    """
    protos = class_prototypes(n_classes, side, seed)
    modes = protos.shape[1]
    rng = np.random.default_rng(np.random.SeedSequence((0x534E, seed)))
    labels = np.tile(np.arange(n_classes), n // n_classes + 1)[:n].astype(np.uint8)
    labels = labels[rng.permutation(n)]
    images = np.empty((n, side, side), dtype=np.uint8)
    for i in range(n):
        k = labels[i]
        mode = int(rng.integers(0, modes))
        dy, dx = rng.integers(-MAX_SHIFT, MAX_SHIFT + 1, size=2)
        gain = rng.uniform(*GAIN_RANGE)
        other = int(rng.integers(0, n_classes - 1))
        if other >= k:
            other += 1
        other_mode = int(rng.integers(0, modes))
        mix = rng.uniform(0.0, MIX_AMP)
        signal = np.roll(protos[k, mode], (dy, dx), axis=(0, 1))
        signal = (1.0 - mix) * signal + mix * np.roll(protos[other, other_mode], (dx, dy), axis=(0, 1))
        img = 0.5 + gain * SIGNAL_AMP * signal + NOISE_STD * rng.standard_normal((side, side))
        images[i] = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    return images, labels


@dataclass
class Dataset:
    """Float images in [0,1], shape (N, 1, H, W), plus integer labels."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def image_side(self):
        return self.train_x.shape[-1]


def ensure_synthetic(data_dir, seed, n_train, n_test, side=28, n_classes=10):
    """Materialize the synthetic corpus as IDX files; returns the four paths.

    Existing files are reused (generation is deterministic, so regenerating
    would produce identical bytes).
    """
    os.makedirs(data_dir, exist_ok=True)
    stem = f"synth-s{seed}-n{n_train}x{n_test}"
    paths = {
        split: (
            os.path.join(data_dir, f"{stem}-{split}-images.idx"),
            os.path.join(data_dir, f"{stem}-{split}-labels.idx"),
        )
        for split in ("train", "test")
    }
    if not all(os.path.exists(p) for pair in paths.values() for p in pair):
        images, labels = make_synthetic(n_train + n_test, seed, side, n_classes)
        fileio.write_idx_images(paths["train"][0], images[:n_train])
        fileio.write_idx_labels(paths["train"][1], labels[:n_train])
        fileio.write_idx_images(paths["test"][0], images[n_train:])
        fileio.write_idx_labels(paths["test"][1], labels[n_train:])
    return paths


def load_dataset(kind, data_dir, seed=7, n_train=8000, n_test=2000,
                 train_images=None, train_labels=None,
                 test_images=None, test_labels=None):
    """Load the configured dataset as float tensors.

    ``kind='synthetic'`` generates (or reuses) the builtin corpus in
    ``data_dir``; ``kind='idx'`` reads the four explicitly named IDX files.
    """
    if kind == "synthetic":
        paths = ensure_synthetic(data_dir, seed, n_train, n_test)
        train = fileio.load_idx(*paths["train"])
        test = fileio.load_idx(*paths["test"])
    elif kind == "idx":
        names = (train_images, train_labels, test_images, test_labels)
        if any(p is None for p in names):
            raise ConfigError("idx dataset needs all four data.* file names")
        join = lambda p: p if os.path.isabs(p) else os.path.join(data_dir, p)
        train = fileio.load_idx(join(train_images), join(train_labels))
        test = fileio.load_idx(join(test_images), join(test_labels))
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    return Dataset(train_x=train[0], train_y=train[1], test_x=test[0], test_y=test[1])
