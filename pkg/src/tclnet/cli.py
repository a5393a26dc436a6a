"""Command-line surface: dataset generation, training, evaluation, inference.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or configuration
error, 3 numerical divergence during training.

Flags may also be supplied through `--config <path>`, a key=value file
(one per line, # comments); explicit command-line flags override file
entries. Every run directory receives a manifest.json written before
training starts, snapshotting the full configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from tclnet import __version__, data, model as model_mod, training
from tclnet.errors import (ConfigError, ContractError, DataLoadError,
                           DivergenceError, DomainError, ShapeError, TclError)
from tclnet.heatmap import HeatmapParams, decode
from tclnet.imageops import bilinear_resize, from_uint8, render_overlay
from tclnet.objective import MleReport
from tclnet.tensor import Tensor, no_grad

_USAGE_ERRORS = (ConfigError, ContractError, DomainError, ShapeError)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _model_config(args) -> model_mod.ModelConfig:
    scales = args.scales
    enc = tuple([256] * scales)
    dec = tuple(max(256 // 2 ** (i + 1), 64) for i in range(scales))
    return model_mod.ModelConfig(
        input_size=args.input_size,
        scales=scales,
        encoder_filters=enc,
        decoder_filters=dec,
        use_encoder_decoder_skips=args.skips,
        deep_supervision=args.deep_supervision,
        bottleneck_ratio=args.bottleneck_ratio,
        width_divisor=args.width_divisor,
    )


def _train_config(args, seed=None) -> training.TrainConfig:
    return training.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        base_lr=args.lr,
        lr_drop_epoch=args.lr_drop_epoch,
        dropped_lr=args.dropped_lr,
        loss=args.loss,
        tcl_switch_epoch=args.tcl_switch_epoch,
        resize_to=args.resize_to,
        crop_to=args.input_size,
        flip_prob=args.flip_prob,
        sigma=args.sigma,
        alpha=args.alpha,
        seed=args.seed if seed is None else seed,
        augment=not args.no_augment,
    )


def _add_model_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--loss", choices=["mse", "tcl+"], default="mse",
                   help="training loss; tcl+ switches from mse after "
                        "--tcl-switch-epoch")
    p.add_argument("--sigma", type=float, default=15.0,
                   help="target heatmap standard deviation")
    p.add_argument("--alpha", type=float, default=0.25,
                   help="heatmap-to-input scaling factor")
    p.add_argument("--scales", type=int, default=3,
                   help="encoder-decoder pool/upsample stages")
    p.add_argument("--skips", action="store_true",
                   help="add encoder-decoder skip connections (ablation)")
    p.add_argument("--deep-supervision", action="store_true",
                   help="add auxiliary decoder heads (ablation)")
    p.add_argument("--epochs", type=int, default=65)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-drop-epoch", type=int, default=30)
    p.add_argument("--dropped-lr", type=float, default=1e-4)
    p.add_argument("--tcl-switch-epoch", type=int, default=50)
    p.add_argument("--resize-to", type=int, default=574)
    p.add_argument("--flip-prob", type=float, default=0.5)
    p.add_argument("--input-size", type=int, default=512,
                   help="network input extent (equals the crop size)")
    p.add_argument("--width-divisor", type=int, default=1,
                   help="divide every channel width (desk-scale variants)")
    p.add_argument("--bottleneck-ratio", type=int, default=2)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tclnet",
        description="Typhoon-center location by heatmap regression.")
    parser.add_argument("--version", action="version",
                        version=f"tclnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a synthetic cyclone dataset")
    g.add_argument("--out", required=True, help="dataset root directory")
    g.add_argument("--n", type=int, required=True, help="sample count")
    g.add_argument("--eyed-fraction", type=float, default=0.65)
    g.add_argument("--train-fraction", type=float, default=0.8)
    g.add_argument("--label-noise-px", type=float, default=0.0,
                   help="train-split label noise; non-eyed samples get 3.9x")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--config", help="key=value file; flags override it")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True, help="dataset root")
    t.add_argument("--out", required=True, help="run output directory")
    t.add_argument("--run-id", default=None)
    t.add_argument("--config", help="key=value file; flags override it")
    _add_model_train_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint, or aggregate "
                                    "repeated train+eval runs")
    e.add_argument("--data", required=True, help="dataset root")
    e.add_argument("--weights", help="checkpoint to evaluate")
    e.add_argument("--split", choices=["train", "test"], default="test")
    e.add_argument("--out", help="directory for the report CSV")
    e.add_argument("--run-id", default=None)
    e.add_argument("--repeats", type=int, default=0,
                   help="train+eval this many times and report mean±std")
    e.add_argument("--seeds", default=None,
                   help="comma-separated seeds for --repeats")
    e.add_argument("--config", help="key=value file; flags override it")
    _add_model_train_flags(e)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="predict centers for images")
    i.add_argument("--weights", required=True)
    i.add_argument("--overlay", default=None,
                   help="directory for annotated PNG overlays")
    i.add_argument("inputs", nargs="+",
                   help="image files or a dataset root directory")
    i.set_defaults(func=cmd_infer)
    return parser


def _expand_config_file(argv):
    """Splice `--config file` entries in front of the explicit flags so the
    command line wins on conflicts."""
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    if at + 1 >= len(argv):
        return argv
    path = argv[at + 1]
    if not os.path.isfile(path):
        raise ConfigError(f"config file {path!r} not found")
    extra = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key=value, "
                                  f"got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            flag = "--" + key.replace("_", "-")
            if value.lower() in ("true", "false"):
                if value.lower() == "true":
                    extra.append(flag)
            else:
                extra.extend([flag, value])
    # insert after the subcommand so argparse scopes the flags correctly
    return argv[:1] + extra + argv[1:]


# -- commands ---------------------------------------------------------------------


def cmd_generate(args) -> int:
    params = data.SynthParams(
        n_samples=args.n,
        eyed_fraction=args.eyed_fraction,
        train_fraction=args.train_fraction,
        label_noise_px=args.label_noise_px,
        seed=args.seed,
    )
    index = data.generate(params, args.out)
    print(Path(args.out) / data.INDEX_NAME)
    print(f"wrote {len(index.entries)} samples "
          f"({len(index.split('train'))} train / {len(index.split('test'))} test)")
    return 0


def _write_manifest(out_dir: Path, run_id, configs: dict, outputs: dict,
                    start: str, end=None):
    manifest = {
        "run_id": run_id,
        "version": f"tclnet-{__version__}",
        "start": start,
        "end": end,
        "configs": configs,
        "outputs": {k: str(v) for k, v in outputs.items()},
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(args) -> int:
    mc = _model_config(args)
    tc = _train_config(args)
    index = data.load(args.data)
    samples = data.load_split(index, "train")
    out_dir = Path(args.out)
    os.makedirs(out_dir, exist_ok=True)
    run_id = args.run_id or f"train-seed{tc.seed}"
    outputs = {
        "epoch_log": out_dir / "epochs.csv",
        "checkpoint_last": out_dir / "checkpoint_last.tclw",
        "checkpoint_best": out_dir / "checkpoint_best.tclw",
    }
    start = _now()
    _write_manifest(out_dir, run_id, {"model": mc.to_dict(),
                                      "train": tc.to_dict(),
                                      "data": str(args.data)}, outputs, start)

    def progress(row):
        print(f"epoch {row['epoch']:3d}  lr {row['lr']:g}  "
              f"{row['loss_name']:4s}  loss {row['mean_loss']:.6g}  "
              f"{row['seconds']:.1f}s", flush=True)

    training.train(samples, mc, tc, out_dir=out_dir, progress=progress)
    _write_manifest(out_dir, run_id, {"model": mc.to_dict(),
                                      "train": tc.to_dict(),
                                      "data": str(args.data)}, outputs,
                    start, end=_now())
    print(f"run {run_id} complete; checkpoints in {out_dir}")
    return 0


def _print_report(report: MleReport, run_id: str):
    cells = [f"MLE-A {report.mle_all:.4f}"]
    cells.append("MLE-E " + (f"{report.mle_eyed:.4f}"
                             if report.mle_eyed is not None else "absent"))
    cells.append("MLE-N " + (f"{report.mle_non_eyed:.4f}"
                             if report.mle_non_eyed is not None else "absent"))
    print(f"{run_id}: " + "  ".join(cells))


def cmd_eval(args) -> int:
    index = data.load(args.data)
    eval_samples = data.load_split(index, args.split)
    if args.repeats:
        if args.repeats < 2:
            raise ConfigError("--repeats needs at least 2 runs")
        seeds = ([int(s) for s in args.seeds.split(",")] if args.seeds
                 else list(range(args.repeats)))
        if len(seeds) != args.repeats:
            raise ConfigError(f"--seeds lists {len(seeds)} values for "
                              f"--repeats {args.repeats}")
        mc = _model_config(args)
        train_samples = data.load_split(index, "train")
        rows = []

        def one(seed: int) -> MleReport:
            tc = _train_config(args, seed=seed)
            net, _ = training.train(train_samples, mc, tc)
            report = training.evaluate(net, eval_samples)
            rows.append((seed, report))
            _print_report(report, f"seed{seed}")
            return report

        summary = training.repeat_runs(one, seeds)
        formatted = summary.formatted()
        print("  ".join(f"{k} {v}" for k, v in formatted.items()))
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            path = Path(args.out) / "repeats.csv"
            with open(path, "w") as fh:
                fh.write(MleReport.CSV_HEADER + "\n")
                for seed, report in rows:
                    fh.write(report.csv_row(f"seed{seed}") + "\n")
                fh.write(f"mean±std,{len(rows)},{formatted.get('MLE-A', '')},"
                         f"{formatted.get('MLE-E', '')},"
                         f"{formatted.get('MLE-N', '')}\n")
            print(path)
        return 0

    if not args.weights:
        raise ConfigError("eval needs --weights (or --repeats)")
    net = model_mod.load_weights(args.weights)
    report = training.evaluate(net, eval_samples)
    run_id = args.run_id or Path(args.weights).stem
    _print_report(report, run_id)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = Path(args.out) / "mle_report.csv"
        with open(path, "w") as fh:
            fh.write(MleReport.CSV_HEADER + "\n")
            fh.write(report.csv_row(run_id) + "\n")
        print(path)
    return 0


def _iter_infer_inputs(inputs):
    """Yield (id, image array, label or None) for files or a dataset root."""
    for item in inputs:
        path = Path(item)
        if path.is_dir():
            index = data.load(path)
            for i, entry in enumerate(index.entries):
                sample = data.read_sample(index, i)
                yield sample.id, sample.image, sample.label
        else:
            from PIL import Image
            with Image.open(path) as im:
                arr = np.asarray(im.convert("L"))
            yield path.stem, from_uint8(arr), None


def cmd_infer(args) -> int:
    net = model_mod.load_weights(args.weights)
    size = net.config.input_size
    params = HeatmapParams(alpha=net.config.map_size / size,
                           map_size=net.config.map_size)
    if args.overlay:
        os.makedirs(args.overlay, exist_ok=True)
    for sid, image, label in _iter_infer_inputs(args.inputs):
        if image.ndim != 2 or image.shape[0] != image.shape[1]:
            raise DataLoadError(f"{sid}: expected a square grayscale image, "
                                f"got shape {image.shape}")
        scale = image.shape[0] / size
        net_in = image if scale == 1.0 else np.asarray(
            bilinear_resize(image, size, size), dtype=np.float32)
        x = Tensor(net_in[None, None, :, :])
        with no_grad():
            out = net.forward(x, "eval")
        raw = decode(out.data[0], params)
        pred = (raw.u * scale, raw.v * scale)
        print(f"{sid},{pred[0]:.2f},{pred[1]:.2f}")
        if args.overlay:
            overlay = render_overlay(
                image, pred,
                (label.u, label.v) if label is not None else None,
                out.data[0, 0])
            from PIL import Image
            Image.fromarray(overlay, mode="RGB").save(
                Path(args.overlay) / f"{sid}_overlay.png")
    return 0


# -- entry point -------------------------------------------------------------------


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _expand_config_file(argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.last_checkpoint:
            print(f"last good checkpoint: {exc.last_checkpoint}", file=sys.stderr)
        return 3
    except (TclError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
