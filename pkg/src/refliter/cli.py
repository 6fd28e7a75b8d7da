"""Command-line entry points: ``refliter {synth,train,infer,eval}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every failure
prints one ``refliter: error: ...`` line to stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt_io
from .autodiff import ArgumentError
from .data import load_dataset, load_image, pair_names, save_image, write_dataset
from .losses import FeatureExtractor, LossWeights
from .metrics import psnr, ssim
from .network import Network, NetworkConfig
from .trainer import TrainConfig, load_checkpoint, model_from_checkpoint, save_checkpoint, train, write_loss_log

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


# -- config files ------------------------------------------------------------------

_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _bool(s):
    try:
        return _BOOL[s.lower()]
    except KeyError:
        raise ValueError(f"expected true/false, got {s!r}") from None


def _ints(s):
    return tuple(int(x) for x in s.replace(",", " ").split())


# key -> (section, field, parser)
CONFIG_KEYS = {
    "batch_size": ("train", "batch_size", int),
    "lr": ("train", "lr", float),
    "disc_lr": ("train", "disc_lr", float),
    "lr_schedule": ("train", "lr_schedule", str),
    "lr_floor": ("train", "lr_floor", float),
    "beta1": ("train", "beta1", float),
    "beta2": ("train", "beta2", float),
    "eps": ("train", "eps", float),
    "steps": ("train", "steps", int),
    "seed": ("train", "seed", int),
    "loss_on_all_iterates": ("train", "loss_on_all_iterates", _bool),
    "use_discriminator": ("train", "use_discriminator", _bool),
    "gram_normalize": ("train", "gram_normalize", _bool),
    "flush_denormals": ("train", "flush_denormals", _bool),
    "lambda_perceptual": ("weights", "perceptual", float),
    "lambda_cooccurrence": ("weights", "cooccurrence", float),
    "lambda_adversarial": ("weights", "adversarial", float),
    "base_channels": ("network", "base_channels", int),
    "iterations": ("network", "iterations", int),
    "lstm_layers_per_scale": ("network", "lstm_layers_per_scale", int),
    "detach_gradient_input": ("network", "detach_gradient_input", _bool),
    "disc_channels": ("network", "disc_channels", _ints),
    "features": ("extra", "features", str),
}


def parse_config(text, source="<config>"):
    """Parse ``key = value`` lines into ``{section: {field: value}}``.

    Blank lines and ``#`` comments are ignored; unknown or repeated keys are errors.
    """
    out = {"train": {}, "weights": {}, "network": {}, "extra": {}}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise UsageError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in seen:
            raise UsageError(f"{source}:{lineno}: duplicate config key {key!r}")
        seen.add(key)
        section, name, conv = CONFIG_KEYS[key]
        try:
            out[section][name] = conv(value)
        except ValueError as exc:
            raise UsageError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    return out


def build_configs(cfg):
    try:
        net = NetworkConfig(**cfg["network"])
        train_cfg = TrainConfig(weights=LossWeights(**cfg["weights"]), **cfg["train"])
    except (ArgumentError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return net, train_cfg


def load_features(path):
    """Feature-extractor weights stored in the checkpoint container."""
    ck = ckpt_io.load(path)
    return FeatureExtractor.from_named(ck.params)


# -- commands ------------------------------------------------------------------------


def _size(s):
    v = int(s)
    if v < 4 or v % 4:
        raise argparse.ArgumentTypeError(f"size must be a positive multiple of 4, got {v}")
    return v


def _positive(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def cmd_synth(args):
    write_dataset(args.out_dir, args.n, args.size, args.seed)
    print(f"wrote {2 * args.n} images and manifest.txt to {args.out_dir}")


def _report_csv(rep):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["l1", "perceptual", "cooccurrence", "adversarial", "total"])
    w.writerow([repr(float(x)) for x in rep.row()])
    return buf.getvalue()


def cmd_train(args):
    text = ""
    if args.config is not None:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise OSError(f"{args.config}: cannot read config ({exc.strerror})") from None
    cfg = parse_config(text, args.config or "<config>")
    if args.steps is not None:
        cfg["train"]["steps"] = args.steps
    net_cfg, train_cfg = build_configs(cfg)
    features = args.features or cfg["extra"].get("features")
    extractor = load_features(features) if features else FeatureExtractor()

    dataset = load_dataset(args.data)
    ckpt, history = train(dataset, net_cfg, train_cfg, extractor)
    save_checkpoint(args.out, ckpt)
    log_path = os.path.splitext(args.out)[0] + "_loss.csv"
    write_loss_log(log_path, history)
    if history:
        sys.stdout.write(_report_csv(history[-1]))
    else:
        print("steps=0: wrote initial checkpoint")


def _model(path):
    cfg, params = model_from_checkpoint(load_checkpoint(path))
    return cfg, params


def _infer(net, image, iterations=None):
    with ad.no_grad():
        outs = net.forward(ad.Tensor(image[None]), iterations=iterations)
    return [o.data[0] for o in outs]


def cmd_infer(args):
    cfg, params = _model(args.ckpt)
    net = Network(cfg, params)
    image = load_image(args.in_path)
    outs = _infer(net, image, args.iters)
    save_image(outs[-1], args.out)
    if args.dump_iterates:
        stem, ext = os.path.splitext(args.out)
        for k, o in enumerate(outs, start=1):
            save_image(o, f"{stem}_iter{k}{ext or '.png'}")


def thread_count():
    raw = os.environ.get("REFLITER_THREADS", "")
    try:
        n = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        raise UsageError(f"REFLITER_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def evaluate_directory(directory, estimate=None, threads=1):
    """Per-image ``(name, psnr, ssim)`` rows sorted by name, plus the mean row.

    ``estimate(mixture) -> image`` produces the scored output; ``None``
    scores the ground truth against itself.
    """
    stems = pair_names(directory)

    def score(stem):
        trans = load_image(os.path.join(directory, f"{stem}_trans.png"))
        if estimate is None:
            out = trans
        else:
            out = estimate(load_image(os.path.join(directory, f"{stem}_mix.png")))
        return stem, psnr(out, trans), ssim(out, trans)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        rows = list(pool.map(score, stems))
    rows.sort(key=lambda r: r[0])
    mean = ("mean", float(np.mean([r[1] for r in rows])), float(np.mean([r[2] for r in rows])))
    return rows, mean


def cmd_eval(args):
    cfg, params = _model(args.ckpt)
    net = Network(cfg, params)
    rows, mean = evaluate_directory(args.data, lambda m: _infer(net, m)[-1], thread_count())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image", "psnr", "ssim"])
    for r in [*rows, mean]:
        w.writerow([r[0], repr(r[1]), repr(r[2])])
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(buf.getvalue())
    sys.stdout.write(buf.getvalue())


# -- parser ----------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="refliter", description="Iterative single-image reflection removal.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic paired dataset")
    s.add_argument("--n", type=_positive, required=True)
    s.add_argument("--size", type=_size, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True, help="checkpoint path; the loss log goes to <out>_loss.csv")
    t.add_argument("--steps", type=int, help="override the configured step count")
    t.add_argument("--features", help="feature-extractor weight file (overrides the 'features' config key)")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="remove reflections from one image")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--in", dest="in_path", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--iters", type=_positive)
    i.add_argument("--dump-iterates", action="store_true")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint on a paired dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report")
    e.set_defaults(func=cmd_eval)
    return p


def _one_line(exc):
    return " ".join(str(exc).split()) or type(exc).__name__


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "steps", None) is not None and args.steps < 0:
            raise UsageError(f"--steps must be >= 0, got {args.steps}")
        args.func(args)
    except UsageError as exc:
        print(f"refliter: error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    except (OSError, ValueError, FloatingPointError, ArithmeticError) as exc:
        print(f"refliter: error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
