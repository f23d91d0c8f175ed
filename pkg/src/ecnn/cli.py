"""Command-line entry point: ``ecnn <subcommand> [options]``.

Settings resolve as defaults < ``--config`` file (flat ``key = value`` lines,
``#`` comments) < command-line flags. ``--print-config`` dumps the resolved
settings and exits. Exit codes: 0 ok, 1 configuration, 2 data/IO,
3 divergence.
"""

import argparse
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, data, evaluation, hog, visualization
from .errors import ConfigError, DataError, EcnnError
from .netspec import PRESETS, resolve_arch
from .training import (
    TRAIN_PRESETS, GridSpec, TrainConfig, grad_check, grid_search, sanity_initial_loss,
    sanity_overfit, train)

TINY_SPEC = "conv:2x3x3,pool|fc:4|input:8x8"

_TYPES = {
    "data": str, "arch": str, "preset": str, "out": str, "lr": float, "reg": float,
    "epochs": int, "batch": int, "momentum": float, "seed": int, "hybrid": bool,
    "lr_decay": float, "dtype": str, "limit_train": int, "limit_val": int,
    "limit_test": int, "checkpoint": str, "split": str, "layer": int, "steps": int,
    "step_size": float, "image": str, "index": int, "prefix": str, "channels": int,
    "samples": int, "step": float, "grid_lr": str, "grid_reg": str, "grid_hidden": str,
    "overfit": bool,
}


def read_config(path):
    """Parse a flat ``key = value`` file into typed settings."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        out[key] = _coerce(key, value, f"{path}:{n}")
    return out


def _coerce(key, value, where):
    kind = _TYPES[key]
    if kind is bool:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{where}: {key} expects a boolean, got {value!r}")
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"{where}: {key} expects {kind.__name__}, got {value!r}") from None


def resolve(args, defaults):
    settings = dict(defaults)
    if getattr(args, "config", None):
        settings.update(read_config(args.config))
    for key, value in vars(args).items():
        if key in _TYPES and value is not None:
            settings[key] = value
    preset = settings.get("preset")
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        base = TRAIN_PRESETS[preset]
        for key in ("lr", "reg", "epochs", "batch"):
            if key not in settings or settings[key] is None:
                settings[key] = getattr(base, key)
        if not settings.get("arch"):
            settings["arch"] = preset
    if settings.get("data") is None:
        settings["data"] = data.default_data_path()
    return settings


def _print_config(settings):
    for key in sorted(settings):
        if settings[key] is not None:
            print(f"{key} = {settings[key]}")


def _require(settings, *keys):
    for key in keys:
        if settings.get(key) is None:
            raise ConfigError(f"missing required setting {key!r}")


def _load(settings):
    _require(settings, "data")
    limit = {s: settings.get(f"limit_{s}") for s in ("train", "val", "test")}
    return data.load_fer_csv(settings["data"], {k: v for k, v in limit.items() if v})


def _outdir(settings):
    out = Path(settings.get("out") or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc.strerror}") from None
    return out


def _train_config(settings):
    _require(settings, "lr", "reg", "epochs")
    return TrainConfig(
        lr=settings["lr"], reg=settings["reg"], epochs=settings["epochs"],
        batch=settings.get("batch") or 128, momentum=settings.get("momentum") or 0.0,
        seed=settings.get("seed") or 0, hybrid=bool(settings.get("hybrid")),
        lr_decay=settings.get("lr_decay") or 1.0, dtype=settings.get("dtype") or "float32")


def _hogs(spec, *image_sets):
    if not spec.hog_concat:
        return [None] * len(image_sets)
    return [hog.hog_batch(imgs) for imgs in image_sets]


# -- subcommands -------------------------------------------------------------

def cmd_train(settings):
    _require(settings, "arch")
    cfg = _train_config(settings)
    spec = resolve_arch(settings["arch"], hybrid=cfg.hybrid)
    out = _outdir(settings)
    train_raw, val_raw, test_raw = _load(settings)
    train_set, val_set, test_set, norm, raw_aug = data.prepare(train_raw, val_raw, test_raw)
    train_hog, val_hog, test_hog = _hogs(spec, raw_aug.images, val_raw.images, test_raw.images)

    report = sanity_initial_loss(spec, train_set.images[:64], train_set.labels[:64],
                                 seed=cfg.seed)
    print(report)
    result = train(spec, cfg, train_set, val_set, train_hog, val_hog)
    for m in (result.model, result.best_model):
        m.mean_image = norm.mean_image
    checkpoint.save(result.best_model, out / "best.ckpt")
    checkpoint.save(result.model, out / "final.ckpt")
    result.history.write_csv(out)

    val_acc, _ = evaluation.evaluate(result.best_model, val_set, val_hog)
    test_acc, cm = evaluation.evaluate(result.best_model, test_set, test_hog)
    evaluation.export_report(test_acc, cm, evaluation.per_class_accuracy(cm),
                             out / "report.csv")
    print(f"best epoch {result.best_epoch}")
    print(f"val={val_acc:.4f} test={test_acc:.4f}")
    return 0


def cmd_eval(settings):
    _require(settings, "checkpoint")
    model = checkpoint.load(settings["checkpoint"])
    split = settings.get("split") or "test"
    if split not in ("train", "val", "test"):
        raise ConfigError(f"unknown split {split!r}")
    train_raw, val_raw, test_raw = _load(settings)
    raw = {"train": train_raw, "val": val_raw, "test": test_raw}[split]
    norm = (data.NormState(model.mean_image) if model.mean_image is not None
            else data.fit_normalizer(train_raw))
    d = data.apply_normalizer(raw, norm)
    (h,) = _hogs(model.spec, raw.images)
    acc, cm = evaluation.evaluate(model, d, h)
    out = _outdir(settings)
    evaluation.export_report(acc, cm, evaluation.per_class_accuracy(cm),
                             out / f"confusion_{split}.csv")
    print(f"{split}={acc:.4f}")
    return 0


def _parse_list(text, kind):
    return tuple(kind(v) for v in text.split(",") if v.strip())


def _parse_hidden(text):
    # "512,256x512" -> (512,), (256, 512)
    return tuple(tuple(int(w) for w in item.split("x")) for item in text.split(","))


def cmd_gridsearch(settings):
    _require(settings, "arch", "grid_lr", "grid_reg", "grid_hidden")
    cfg = _train_config({**settings, "lr": settings.get("lr") or 1e-3,
                         "reg": settings.get("reg") or 0.0,
                         "epochs": settings.get("epochs") or 2})
    spec = resolve_arch(settings["arch"], hybrid=cfg.hybrid)
    grid = GridSpec(_parse_list(settings["grid_lr"], float),
                    _parse_list(settings["grid_reg"], float),
                    _parse_hidden(settings["grid_hidden"]))
    train_raw, val_raw, test_raw = _load(settings)
    train_set, val_set, _, _, raw_aug = data.prepare(train_raw, val_raw, test_raw)
    train_hog, val_hog = _hogs(spec, raw_aug.images, val_raw.images)
    threads = int(os.environ.get("ECNN_THREADS", "1"))
    ranked = grid_search(spec, grid, train_set, val_set, cfg.epochs, cfg,
                         train_hog, val_hog, threads=threads)
    out = _outdir(settings)
    lines = ["rank,lr,reg,hidden,val_acc,diverged"]
    for k, r in enumerate(ranked, 1):
        hidden = "x".join(str(h) for h in r.hidden)
        lines.append(f"{k},{r.lr!r},{r.reg!r},{hidden},{r.val_acc!r},{int(r.diverged)}")
    (out / "grid.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_gradcheck(settings):
    arch = settings.get("arch") or TINY_SPEC
    errs = grad_check(arch, n_samples=settings.get("samples") or 2,
                      step=settings.get("step") or 1e-5, seed=settings.get("seed") or 0)
    worst = 0.0
    for name, e in errs.items():
        print(f"{name:<14} {e:.3e}")
        worst = max(worst, e)
    ok = worst < 1e-4
    print(f"max relative error {worst:.3e}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_sanity(settings):
    spec = resolve_arch(settings.get("arch") or "shallow", hybrid=bool(settings.get("hybrid")))
    seed = settings.get("seed") or 0
    train_set = train_hog = None
    if settings.get("data"):
        train_raw, val_raw, test_raw = _load(settings)
        train_set, _, _, _, raw_aug = data.prepare(train_raw, val_raw, test_raw, augment=False)
        (train_hog,) = _hogs(spec, raw_aug.images)
    print(f"expected initial loss ln({spec.num_classes}) = {math.log(spec.num_classes):.4f}")
    if train_set is not None:
        rep = sanity_initial_loss(spec, train_set.images[:64], train_set.labels[:64], seed=seed)
    else:
        rep = sanity_initial_loss(spec, seed=seed)
    print(rep)
    ok = rep.passed
    if settings.get("overfit"):
        if train_set is None:
            raise ConfigError("the overfit check needs --data")
        rep = sanity_overfit(spec, train_set, seed=seed, train_hog=train_hog)
        print(rep)
        ok = ok and rep.passed
    return 0 if ok else 1


def cmd_hog(settings):
    out = _outdir(settings)
    splits = dict(zip(("train", "val", "test"), _load(settings)))
    wanted = [settings["split"]] if settings.get("split") else list(splits)
    for name in wanted:
        path = out / f"hog_{name}.csv"
        hog.write_hog_csv(path, hog.hog_batch(splits[name].images))
        print(f"{path}: {len(splits[name])} rows")
    return 0


def _input_image(settings, model):
    """Raw-pixel image and its class label (true label, else predicted)."""
    if settings.get("image"):
        img = visualization.read_pgm(settings["image"]).astype(np.float64)[None]
        label = None
    else:
        _require(settings, "data")
        index = settings.get("index") or 0
        split = settings.get("split") or "test"
        d = dict(zip(("train", "val", "test"), _load(settings)))[split]
        if not 0 <= index < len(d):
            raise ConfigError(f"index {index} outside the {split} split ({len(d)} samples)")
        img, label = d.images[index], int(d.labels[index])
    if img.shape != model.conv_shapes[0]:
        raise DataError(f"image shape {img.shape} does not match the model input")
    if label is None:
        mean = model.mean_image if model.mean_image is not None else 0.0
        x = (img - mean).reshape((1,) + img.shape)
        (h,) = _hogs(model.spec, img[None])
        label = int(evaluation.predict(model, x, h)[0])
    return img, label


def cmd_viz(settings):
    _require(settings, "checkpoint")
    model = checkpoint.load(settings["checkpoint"])
    img, _ = _input_image(settings, model)
    out = _outdir(settings)
    prefix = settings.get("prefix") or "ecnn"
    mean = model.mean_image[0] if model.mean_image is not None else 0.0
    for k, act in visualization.capture_activations(model, img - mean):
        path = out / f"{prefix}_layer{k}.pgm"
        visualization.write_pgm(
            visualization.activation_grid(act, settings.get("channels")), path)
        print(path)
    path = out / f"{prefix}_weights.pgm"
    visualization.write_pgm(visualization.render_grid(
        visualization.first_layer_filters(model), cols=8, gap=1), path)
    print(path)
    return 0


def cmd_dream(settings):
    _require(settings, "checkpoint")
    model = checkpoint.load(settings["checkpoint"])
    img, label = _input_image(settings, model)
    out = _outdir(settings)
    prefix = settings.get("prefix") or "ecnn"
    layer = settings.get("layer") or len(model.spec.conv_layers)
    steps = settings.get("steps")
    dream = visualization.deepdream(model, img, layer, 20 if steps is None else steps,
                                    settings.get("step_size") or 1.0, model.mean_image)
    path = out / f"{prefix}_dream_c{label}.pgm"
    visualization.write_pgm(visualization.to_bytes(dream[0]), path)
    print(path)
    return 0


COMMANDS = {
    "train": cmd_train, "eval": cmd_eval, "gridsearch": cmd_gridsearch,
    "gradcheck": cmd_gradcheck, "sanity": cmd_sanity, "hog": cmd_hog,
    "viz": cmd_viz, "dream": cmd_dream,
}


class _Parser(argparse.ArgumentParser):
    # bad flags are configuration errors (exit 1), not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value settings file")
    common.add_argument("--print-config", action="store_true",
                        help="print the resolved settings and exit")
    common.add_argument("--data", help="FER CSV path (default: $ECNN_DATA)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--arch", help="architecture string or preset name")
    common.add_argument("--hybrid", action="store_true", default=None,
                        help="concatenate HOG features before the fc layers")
    for s in ("train", "val", "test"):
        common.add_argument(f"--limit-{s}", type=int, dest=f"limit_{s}",
                            help=f"use only the first N {s} rows")

    p = _Parser(prog="ecnn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train and evaluate a network")
    g = sub.add_parser("gridsearch", parents=[common], help="cross-validate lr/reg/hidden")
    for q in (t, g):
        q.add_argument("--lr", type=float)
        q.add_argument("--reg", type=float)
        q.add_argument("--epochs", type=int)
        q.add_argument("--batch", type=int)
        q.add_argument("--momentum", type=float)
        q.add_argument("--lr-decay", type=float, dest="lr_decay")
        q.add_argument("--dtype", choices=["float32", "float64"])
    g.add_argument("--grid-lr", dest="grid_lr", help="comma-separated learning rates")
    g.add_argument("--grid-reg", dest="grid_reg", help="comma-separated L2 strengths")
    g.add_argument("--grid-hidden", dest="grid_hidden",
                   help="comma-separated widths; 256x512 sets two fc layers")

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint")
    e.add_argument("--split", choices=["train", "val", "test"])

    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference check")
    gc.add_argument("--samples", type=int)
    gc.add_argument("--step", type=float)

    s = sub.add_parser("sanity", parents=[common], help="initial-loss and overfit checks")
    s.add_argument("--overfit", action="store_true", default=None)

    h = sub.add_parser("hog", parents=[common], help="dump HOG vectors as CSV")
    h.add_argument("--split", choices=["train", "val", "test"])

    for name, helptext in (("viz", "activation maps and first-layer filters"),
                           ("dream", "DeepDream on one image")):
        q = sub.add_parser(name, parents=[common], help=helptext)
        q.add_argument("--checkpoint")
        q.add_argument("--image", help="48x48 binary PGM input")
        q.add_argument("--index", type=int, help="sample index in --split of --data")
        q.add_argument("--split", choices=["train", "val", "test"])
        q.add_argument("--prefix")
    sub.choices["viz"].add_argument("--channels", type=int,
                                    help="render only the first N channels per layer")
    sub.choices["dream"].add_argument("--layer", type=int, help="1-based conv layer")
    sub.choices["dream"].add_argument("--steps", type=int)
    sub.choices["dream"].add_argument("--step-size", type=float, dest="step_size")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        settings = resolve(args, {})
        if args.print_config:
            _print_config(settings)
            return 0
        return COMMANDS[args.command](settings)
    except EcnnError as exc:
        print(f"ecnn {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"ecnn {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
