"""Binary wire formats: IDX datasets and the named-tensor checkpoint container.

IDX follows its established convention (big-endian header counts, u8
payload); the checkpoint container is ours: magic ``MXCK``, little-endian
header fields, UTF-8 kind tag and config echo, then named float32 tensors.
A save -> load -> save round trip is byte-identical.
"""

import struct

import numpy as np

from .errors import (
    CheckpointBadMagicError,
    CheckpointCorruptError,
    CheckpointKindError,
    CheckpointVersionError,
    IdxBadMagicError,
    IdxCountMismatchError,
    IdxTruncatedError,
)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CKPT_MAGIC = b"MXCK"
CKPT_VERSION = 1


def _read_exact(fh, n, path, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise IdxTruncatedError(f"{path}: truncated while reading {what}")
    return buf


def _read_idx_header(fh, path, expect_magic, ndim):
    raw = fh.read(4)
    if len(raw) != 4:
        raise IdxTruncatedError(f"{path}: truncated magic")
    magic = struct.unpack(">I", raw)[0]
    if magic != expect_magic:
        raise IdxBadMagicError(
            f"{path}: bad magic 0x{magic:08x} at offset 0 (expected 0x{expect_magic:08x})"
        )
    dims = struct.unpack(f">{ndim}I", _read_exact(fh, 4 * ndim, path, "dims"))
    return dims


def load_idx(images_path, labels_path):
    """Read an IDX image/label pair; images scale to float32 in [0, 1].

    Returns (images (N, 1, H, W) float32, labels (N,) int64).
    """
    with open(images_path, "rb") as fh:
        n, h, w = _read_idx_header(fh, images_path, IDX_IMAGES_MAGIC, 3)
        payload = _read_exact(fh, n * h * w, images_path, "pixel payload")
    images = np.frombuffer(payload, dtype=np.uint8).reshape(n, 1, h, w)
    with open(labels_path, "rb") as fh:
        (n_labels,) = _read_idx_header(fh, labels_path, IDX_LABELS_MAGIC, 1)
        raw = _read_exact(fh, n_labels, labels_path, "label payload")
    if n_labels != n:
        raise IdxCountMismatchError(
            f"{images_path} holds {n} images but {labels_path} holds {n_labels} labels"
        )
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    return (images.astype(np.float32) / 255.0), labels


def write_idx_images(path, images):
    """Write u8 images (N, H, W) in IDX format."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    n, h, w = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        fh.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def _ck_read(fh, n, path, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointCorruptError(f"{path}: truncated while reading {what}")
    return buf


def _ck_read_str(fh, path, what):
    (length,) = struct.unpack("<I", _ck_read(fh, 4, path, f"{what} length"))
    return _ck_read(fh, length, path, what).decode("utf-8")


def _ck_write_str(fh, text):
    raw = text.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def save_tensors(path, kind, config_text, tensors):
    """Write named float32 tensors with a kind tag and config echo."""
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        _ck_write_str(fh, kind)
        _ck_write_str(fh, config_text)
        fh.write(struct.pack("<I", len(tensors)))
        for name, array in tensors.items():
            array = np.ascontiguousarray(array, dtype="<f4")
            _ck_write_str(fh, name)
            fh.write(struct.pack("<I", array.ndim))
            fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
            fh.write(array.tobytes())


def load_tensors(path, expect_kind=None):
    """Read a checkpoint container; returns (kind, config_text, tensors)."""
    with open(path, "rb") as fh:
        magic = _ck_read(fh, 4, path, "magic")
        if magic != CKPT_MAGIC:
            raise CheckpointBadMagicError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", _ck_read(fh, 4, path, "version"))
        if version != CKPT_VERSION:
            raise CheckpointVersionError(f"{path}: version {version} unsupported")
        kind = _ck_read_str(fh, path, "kind tag")
        if expect_kind is not None and kind != expect_kind:
            raise CheckpointKindError(f"{path}: holds kind {kind!r}, expected {expect_kind!r}")
        config_text = _ck_read_str(fh, path, "config echo")
        (count,) = struct.unpack("<I", _ck_read(fh, 4, path, "tensor count"))
        tensors = {}
        for _ in range(count):
            name = _ck_read_str(fh, path, "tensor name")
            (rank,) = struct.unpack("<I", _ck_read(fh, 4, path, "rank"))
            shape = struct.unpack(f"<{rank}I", _ck_read(fh, 4 * rank, path, "dims"))
            nbytes = int(np.prod(shape, dtype=np.int64)) * 4
            payload = _ck_read(fh, nbytes, path, f"tensor {name!r}")
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        if fh.read(1):
            raise CheckpointCorruptError(f"{path}: trailing bytes after last tensor")
    return kind, config_text, tensors


def _config_text(items):
    return "\n".join(f"{k} = {v}" for k, v in items)


def _parse_config_text(text):
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def save_model(path, model):
    """Persist any zoo model (its kind tag and config echo allow rebuilding)."""
    save_tensors(path, model.kind, _config_text(model.config_items()), model.params())


def _fill_params(model, tensors, path):
    params = model.params()
    if set(params) != set(tensors):
        missing = set(params) ^ set(tensors)
        raise CheckpointCorruptError(f"{path}: parameter name mismatch ({sorted(missing)[:3]}...)")
    for name, array in tensors.items():
        if params[name].shape != array.shape:
            raise CheckpointCorruptError(
                f"{path}: tensor {name!r} has shape {array.shape}, expected {params[name].shape}"
            )
        params[name][...] = array
    return model


def load_model(path, expect_kind=None):
    """Rebuild a model from its checkpoint (kind tag selects the builder)."""
    from .mixer import MixerConfig, MixerModel
    from .targets import build_target

    kind, config_text, tensors = load_tensors(path, expect_kind)
    cfg = _parse_config_text(config_text)
    if kind in ("mixer", "mixer-alt"):
        mixer_cfg = MixerConfig(**{k: int(v) for k, v in cfg.items()})
        model = MixerModel(mixer_cfg, seed=0)
        model.kind = kind
    elif kind in ("cnn", "mlp"):
        model = build_target(kind, seed=0, image_side=int(cfg["image_side"]),
                             channels_in=int(cfg["channels_in"]),
                             n_classes=int(cfg["n_classes"]))
    else:
        raise CheckpointKindError(f"{path}: no model builder for kind {kind!r}")
    return _fill_params(model, tensors, path)


def save_heads(path, heads, channels, n_classes):
    """Persist per-depth classifier heads."""
    items = [("channels", channels), ("n_classes", n_classes), ("n_layers", len(heads))]
    save_tensors(path, "heads", _config_text(items), heads.params())


def load_heads(path):
    from .masking import DepthHeads

    _, config_text, tensors = load_tensors(path, expect_kind="heads")
    cfg = _parse_config_text(config_text)
    heads = DepthHeads(int(cfg["channels"]), int(cfg["n_classes"]), int(cfg["n_layers"]))
    return _fill_params(heads, tensors, path)


def save_advset(path, x_adv, labels, indices, config_text=""):
    """Persist attacked samples with their labels and dataset positions."""
    tensors = {
        "x_adv": x_adv.astype(np.float32),
        "labels": labels.astype(np.float32),
        "indices": indices.astype(np.float32),
    }
    save_tensors(path, "advset", config_text, tensors)


def load_advset(path):
    _, config_text, tensors = load_tensors(path, expect_kind="advset")
    return (
        tensors["x_adv"],
        tensors["labels"].astype(np.int64),
        tensors["indices"].astype(np.int64),
        config_text,
    )
