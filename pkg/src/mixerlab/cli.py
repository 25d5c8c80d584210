"""Command-line surface.

Subcommands: train, train-heads, attack, eval, sweep, gradcheck.  Every run
writes a manifest echoing the fully resolved configuration, the seed, and the
tree version; rerunning a command with the same manifest reproduces its
outputs bit for bit.
"""

import argparse
import hashlib
import os
import sys

import numpy as np

from . import fileio
from .attacks import AttackConfig, run_attack_dataset
from .config import load_config, write_manifest
from .data import load_dataset
from .errors import ConfigError, MixerLabError
from .evaluation import EvalReport, filter_correct, run_matrix, run_sweep
from .gradcheck import run_check_suite
from .masking import MaskPolicy, make_wrapper
from .mixer import MixerConfig, MixerModel
from .targets import build_target
from .training import TrainConfig, accuracy, head_accuracy, train, train_depth_heads


def _build_model(cfg):
    kind = cfg["model.kind"]
    if kind == "mixer":
        mcfg = MixerConfig(
            image_side=cfg["model.image_side"], channels_in=cfg["model.channels"],
            patch_size=cfg["model.patch"], hidden_dim=cfg["model.hidden"],
            n_layers=cfg["model.layers"], token_mlp_dim=cfg["model.token_mlp"],
            channel_mlp_dim=cfg["model.channel_mlp"], n_classes=cfg["model.classes"],
        )
        return MixerModel(mcfg, seed=cfg["model.seed"])
    return build_target(kind, cfg["model.seed"], image_side=cfg["model.image_side"],
                        channels_in=cfg["model.channels"], n_classes=cfg["model.classes"])


def _load_data(cfg):
    blank = lambda s: s if s else None
    return load_dataset(
        cfg["data.kind"], cfg.data_dir(), seed=cfg["data.seed"],
        n_train=cfg["data.train"], n_test=cfg["data.test"],
        train_images=blank(cfg["data.train_images"]),
        train_labels=blank(cfg["data.train_labels"]),
        test_images=blank(cfg["data.test_images"]),
        test_labels=blank(cfg["data.test_labels"]),
    )


def _attack_config(cfg):
    return AttackConfig(
        kind=cfg["attack.kind"], epsilon=cfg["attack.epsilon"], steps=cfg["attack.steps"],
        alpha=cfg["attack.alpha"], mu=cfg["attack.mu"], dim_prob=cfg["attack.dim_prob"],
        dim_resize_min=cfg["attack.dim_resize_min"], tim_kernel=cfg["attack.tim_kernel"],
        tim_sigma=cfg["attack.tim_sigma"], seed=cfg["seed"], chunk=cfg["chunk"],
    )


def _policy(cfg):
    return MaskPolicy(cfg["ma.P"], cfg["ma.p"], cfg["ma.resample"])


def _train_config(cfg):
    return TrainConfig(
        epochs=cfg["train.epochs"], batch_size=cfg["train.batch"], lr=cfg["train.lr"],
        momentum=cfg["train.momentum"], weight_decay=cfg["train.weight_decay"],
        seed=cfg["model.seed"],
    )


def _file_sha(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()[:12]


def _load_heads_if_needed(cfg, heads_path):
    if cfg["wrapper"] == "mask+heads" or heads_path:
        if not heads_path:
            raise ConfigError("wrapper 'mask+heads' requires --heads")
        return fileio.load_heads(heads_path)
    return None


def cmd_train(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    dataset = _load_data(cfg)
    model = _build_model(cfg)
    history = train(model, dataset.train_x, dataset.train_y, _train_config(cfg),
                    log_path=os.path.join(args.out, "metrics.csv"))
    test_acc = accuracy(model, dataset.test_x, dataset.test_y)
    ckpt = os.path.join(args.out, "model.mxck")
    fileio.save_model(ckpt, model)
    write_manifest(os.path.join(args.out, "manifest.txt"), cfg, "train",
                   extra=[("checkpoint", ckpt), ("checkpoint_sha", _file_sha(ckpt)),
                          ("test_accuracy", f"{test_acc:.4f}")])
    print(f"trained {model.kind}: train_acc={history[-1][2]:.4f} test_acc={test_acc:.4f}")
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_train_heads(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    dataset = _load_data(cfg)
    model = fileio.load_model(args.model)
    if not isinstance(model, MixerModel):
        raise ConfigError("depth heads require a mixer source checkpoint")
    frozen = {k: v.copy() for k, v in model.params().items()}
    hcfg = TrainConfig(epochs=cfg["heads.epochs"], batch_size=cfg["heads.batch"],
                       lr=cfg["heads.lr"], momentum=0.9, seed=cfg["model.seed"])
    heads = train_depth_heads(model, dataset.train_x, dataset.train_y, hcfg,
                              head_seed=cfg["model.seed"])
    for key, value in model.params().items():
        assert np.array_equal(frozen[key], value), f"backbone parameter {key} changed"
    accs = head_accuracy(model, heads, dataset.test_x, dataset.test_y)
    out = os.path.join(args.out, "heads.mxck")
    fileio.save_heads(out, heads, model.cfg.hidden_dim, model.cfg.n_classes)
    write_manifest(os.path.join(args.out, "manifest.txt"), cfg, "train-heads",
                   extra=[("model", args.model), ("model_sha", _file_sha(args.model)),
                          ("heads", out),
                          ("head_accuracy", ",".join(f"{a:.4f}" for a in accs))])
    print("depth-head test accuracy: " + " ".join(f"{a:.4f}" for a in accs))
    print(f"heads: {out}")
    return 0


def cmd_attack(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    dataset = _load_data(cfg)
    model = fileio.load_model(args.model)
    heads = _load_heads_if_needed(cfg, args.heads)
    n = min(cfg["eval.samples"], dataset.test_x.shape[0])
    x, y = dataset.test_x[:n], dataset.test_y[:n]
    source = make_wrapper(cfg["wrapper"], model, _policy(cfg), heads)
    x_adv = run_attack_dataset(x, y, source, _attack_config(cfg), workers=cfg["workers"])
    out = os.path.join(args.out, "advset.mxck")
    fileio.save_advset(out, x_adv, y, np.arange(n), cfg.hash())
    write_manifest(os.path.join(args.out, "manifest.txt"), cfg, "attack",
                   extra=[("model", args.model), ("model_sha", _file_sha(args.model)),
                          ("advset", out), ("advset_sha", _file_sha(out))])
    linf = float(np.abs(x_adv - x).max()) if n else 0.0
    print(f"attacked {n} samples; max L-inf = {linf:.6f}")
    print(f"advset: {out}")
    return 0


def _load_targets(specs):
    targets = {}
    for spec in specs or ():
        name, _, path = spec.partition("=")
        if not path:
            raise ConfigError(f"--target expects NAME=PATH, got {spec!r}")
        targets[name] = fileio.load_model(path)
    return targets


def cmd_eval(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    dataset = _load_data(cfg)
    model = fileio.load_model(args.model)
    heads = _load_heads_if_needed(cfg, args.heads)
    targets = _load_targets(args.target)
    models = [model] + list(targets.values())
    idx = filter_correct(dataset.test_x, dataset.test_y, models, limit=cfg["eval.samples"])
    x, y = dataset.test_x[idx], dataset.test_y[idx]
    rows = run_matrix(
        model.kind, model, x, y, cfg["eval.attacks"], cfg["eval.wrappers"], targets,
        _attack_config(cfg), _policy(cfg), cfg["eval.seeds"], heads=heads,
        workers=cfg["workers"], cache_dir=os.path.join(args.out, "cache"),
        config_hash=cfg.hash(), indices=idx,
    )
    report = EvalReport(rows=rows, filtered_ids=idx)
    report.clean_accuracy = {
        name: accuracy(m, dataset.test_x, dataset.test_y)
        for name, m in {model.kind: model, **targets}.items()
    }
    with open(os.path.join(args.out, "report.csv"), "w") as fh:
        fh.write(report.to_csv())
    with open(os.path.join(args.out, "report.txt"), "w") as fh:
        fh.write(report.to_text())
    with open(os.path.join(args.out, "filtered_ids.txt"), "w") as fh:
        fh.write("\n".join(str(i) for i in idx) + "\n")
    write_manifest(os.path.join(args.out, "manifest.txt"), cfg, "eval",
                   extra=[("model", args.model), ("model_sha", _file_sha(args.model))])
    print(report.to_text())
    return 0


def cmd_sweep(args, cfg):
    os.makedirs(args.out, exist_ok=True)
    if cfg["wrapper"] == "plain":
        raise ConfigError("sweep varies the mask policy; pick a mask wrapper")
    dataset = _load_data(cfg)
    model = fileio.load_model(args.model)
    heads = _load_heads_if_needed(cfg, args.heads)
    targets = _load_targets(args.target)
    models = [model] + list(targets.values())
    idx = filter_correct(dataset.test_x, dataset.test_y, models, limit=cfg["sweep.samples"])
    x, y = dataset.test_x[idx], dataset.test_y[idx]
    csv_text = run_sweep(
        model.kind, model, x, y, cfg["attack.kind"], cfg["wrapper"], targets,
        _attack_config(cfg), _policy(cfg), cfg["sweep.P"], cfg["sweep.p"],
        cfg["eval.seeds"], heads=heads, workers=cfg["workers"], config_hash=cfg.hash(),
    )
    out = os.path.join(args.out, "sweep.csv")
    with open(out, "w") as fh:
        fh.write(csv_text)
    write_manifest(os.path.join(args.out, "manifest.txt"), cfg, "sweep",
                   extra=[("model", args.model), ("sweep_csv", out)])
    print(f"sweep rows: {len(csv_text.splitlines()) - 1}")
    print(f"sweep csv: {out}")
    return 0


def cmd_gradcheck(args, cfg):
    ok, lines = run_check_suite(seed=cfg["seed"], verbose=args.verbose)
    print("\n".join(lines))
    print("gradcheck: " + ("all layers pass" if ok else "FAILURES above"))
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mixerlab",
        description="Layer-masking transfer attacks on small Mixer classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key")
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train a model from config")
    common(p)

    p = sub.add_parser("train-heads", help="train per-depth classifier heads")
    common(p)
    p.add_argument("--model", required=True, help="source mixer checkpoint")

    p = sub.add_parser("attack", help="craft adversarial examples")
    common(p)
    p.add_argument("--model", required=True, help="source model checkpoint")
    p.add_argument("--heads", help="depth-heads checkpoint (wrapper=mask+heads)")

    p = sub.add_parser("eval", help="fooling-rate matrix over targets")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--heads")
    p.add_argument("--target", action="append", metavar="NAME=PATH",
                   help="target checkpoint (repeatable)")

    p = sub.add_parser("sweep", help="fooling rates over a mask-probability grid")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--heads")
    p.add_argument("--target", action="append", metavar="NAME=PATH")

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer type")
    common(p, out=False)
    p.add_argument("--verbose", action="store_true")

    return parser


COMMANDS = {
    "train": cmd_train,
    "train-heads": cmd_train_heads,
    "attack": cmd_attack,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        return COMMANDS[args.command](args, cfg)
    except MixerLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
