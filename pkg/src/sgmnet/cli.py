"""Command-line interface: ``sgmnet {synth,train,eval,infer,composite,ablation}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Log verbosity comes
from ``SGMNET_LOG_LEVEL`` (default INFO); everything else is flag-driven.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .checkpoint import CheckpointError
from .data import SynthConfig, load_dataset, save_dataset, synth_dataset
from .imageio import ImageFormatError, read_image, to_uint8, write_image
from .losses import LossWeights
from .metrics import METRICS, EvalReport, evaluate_dataset
from .model import ABLATIONS, ModelConfig
from .nn import SgdConfig
from .tensor import ShapeError, Tensor4
from .train import LOG_FIELDS, predict, train

log = logging.getLogger("sgmnet")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# synth

def cmd_synth(args) -> None:
    if args.size % 32:
        raise UsageError(f"--size must be divisible by 32, got {args.size}")
    cfg = SynthConfig(seed=args.seed, count=args.count, size=args.size)
    save_dataset(synth_dataset(cfg), args.out)
    log.info("wrote %d samples to %s", args.count, args.out)


# --------------------------------------------------------------------------
# train

def _run_config(args, input_size: int) -> dict:
    use_fpm, feed = ABLATIONS[args.ablation]
    model = ModelConfig(
        widths=tuple(args.widths),
        fpm_channels=args.fpm_channels,
        detail_channels=args.detail_channels,
        fusion_channels=args.fusion_channels,
        use_fpm=use_fpm,
        feed_sp_to_detail=feed,
        input_size=input_size,
    )
    sgd = SgdConfig(
        lr=args.lr,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        decay_factor=args.decay_factor,
        decay_every=args.decay_every,
    )
    weights = LossWeights(args.lambda_s, args.lambda_d, args.lambda_alpha)
    return {
        "data": str(args.data),
        "ablation": args.ablation,
        "seed": args.seed,
        "epochs": args.epochs,
        "batch": args.batch,
        "max_iters": args.max_iters,
        "band_radius": args.band_radius,
        "flip": not args.no_flip,
        "dtype": args.dtype,
        "checkpoint_every": args.checkpoint_every,
        "model": model.to_dict(),
        "sgd": vars(sgd),
        "loss_weights": vars(weights),
    }


def run_training(run: dict, out: Path) -> Path:
    """Train according to a run-config dict, writing everything under ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(run, indent=2, sort_keys=True) + "\n")
    samples = load_dataset(run["data"])
    if not samples:
        raise ValueError(f"dataset {run['data']} is empty")
    model = ModelConfig.from_dict(run["model"])
    ckdir = out / "checkpoints"
    ckdir.mkdir(exist_ok=True)
    log_path = out / "log.csv"
    fh = log_path.open("w", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(LOG_FIELDS)

    def on_step(row):
        writer.writerow([row[k] if k in ("epoch", "iteration") else repr(float(row[k])) for k in LOG_FIELDS])
        if row["iteration"] % 20 == 0 or row["iteration"] == 1:
            log.info("iter %d epoch %d total %.4f", row["iteration"], row["epoch"], row["total"])

    def on_epoch_end(epoch, params):
        if run["checkpoint_every"] and (epoch + 1) % run["checkpoint_every"] == 0:
            checkpoint.save(ckdir / f"epoch_{epoch + 1:03d}.sgmn", params, run["model"], {"epoch": epoch + 1})

    try:
        params, rows = train(
            samples,
            model,
            SgdConfig(**run["sgd"]),
            LossWeights(**run["loss_weights"]),
            epochs=run["epochs"],
            batch_size=run["batch"],
            max_iters=run["max_iters"],
            seed=run["seed"],
            band_radius=run["band_radius"],
            flip=run["flip"],
            dtype=np.dtype(run["dtype"]),
            on_step=on_step,
            on_epoch_end=on_epoch_end,
        )
    finally:
        fh.close()
    final = out / "final.sgmn"
    meta = {"iterations": len(rows), "epoch": rows[-1]["epoch"] + 1 if rows else 0}
    checkpoint.save(final, params, run["model"], meta)
    log.info("saved %s", final)
    return final


def _probe_size(root: Path) -> int:
    index = root / "index.txt"
    ids = index.read_text().split() if index.exists() else []
    if not ids:
        raise FileNotFoundError(f"{root}: missing or empty index.txt")
    h, w = read_image(root / "image" / f"{ids[0]}.png").shape[2:]
    if h % 32 or w % 32:
        raise ShapeError(f"training images must be divisible by 32, got {h}x{w}")
    return h


def cmd_train(args) -> None:
    if args.config:
        run = json.loads(Path(args.config).read_text())
    else:
        if args.data is None:
            raise UsageError("--data is required unless --config is given")
        run = _run_config(args, _probe_size(Path(args.data)))
    run_training(run, Path(args.out))


# --------------------------------------------------------------------------
# eval / infer / composite

def _load_model(path):
    params, manifest = checkpoint.load(path)
    if "config" not in manifest:
        raise CheckpointError(f"{path}: checkpoint has no model config")
    return params, ModelConfig.from_dict(manifest["config"])


def _center_crop(t: Tensor4, what: str) -> Tensor4:
    h, w = t.shape[2:]
    nh, nw = h - h % 32, w - w % 32
    if nh == 0 or nw == 0:
        raise ShapeError(f"{what} is {h}x{w}; need at least 32x32")
    if (nh, nw) != (h, w):
        log.warning("%s is %dx%d; center-cropping to %dx%d", what, h, w, nh, nw)
        y, x = (h - nh) // 2, (w - nw) // 2
        t = Tensor4(t.data[:, :, y : y + nh, x : x + nw])
    return t


def _read_rgb(path) -> Tensor4:
    t = read_image(path)
    if t.shape[1] == 1:
        t = Tensor4(np.repeat(t.data, 3, axis=1))
    return t


def infer_alpha(params, cfg, image: Tensor4) -> np.ndarray:
    """Predicted matte on the 8-bit grid, shape ``(1, 1, H, W)``."""
    alpha = predict(params, cfg, image)
    return to_uint8(alpha).astype(np.float64) / 255.0


def cmd_eval(args) -> None:
    data = Path(args.data)
    gt_dir = data / "alpha"
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    if args.bypass:
        report = evaluate_dataset(gt_dir, gt_dir)
    else:
        if args.ckpt is None:
            raise UsageError("--ckpt is required unless --bypass is given")
        params, cfg = _load_model(args.ckpt)
        pred_dir = Path(args.pred_out) if args.pred_out else report_path.parent / f"{report_path.stem}_pred"
        pred_dir.mkdir(parents=True, exist_ok=True)
        ids = sorted(p.stem for p in gt_dir.glob("*.png"))
        for sid in ids:
            img = _read_rgb(data / "image" / f"{sid}.png")
            if img.shape[2] % 32 or img.shape[3] % 32:
                raise ShapeError(f"{sid}: image {img.shape[2:]} not divisible by 32")
            write_image(pred_dir / f"{sid}.png", infer_alpha(params, cfg, img))
        report = evaluate_dataset(pred_dir, gt_dir)
    report.write_csv(report_path)
    print(report.table())


def cmd_infer(args) -> None:
    params, cfg = _load_model(args.ckpt)
    img = _center_crop(_read_rgb(args.image), "input image")
    write_image(args.alpha_out, infer_alpha(params, cfg, img))


def cmd_composite(args) -> None:
    params, cfg = _load_model(args.ckpt)
    img = _center_crop(_read_rgb(args.image), "input image")
    bg = _read_rgb(args.bg)
    h, w = img.shape[2:]
    bh, bw = bg.shape[2:]
    if bh < h or bw < w:
        raise ShapeError(f"background {bh}x{bw} smaller than image {h}x{w}")
    y, x = (bh - h) // 2, (bw - w) // 2
    bgd = bg.data[:, :, y : y + h, x : x + w]
    alpha = infer_alpha(params, cfg, img)
    # the input image stands in for the unknown foreground colours
    out = alpha * img.data + (1 - alpha) * bgd
    write_image(args.out, out)
    if args.alpha_out:
        write_image(args.alpha_out, alpha)


# --------------------------------------------------------------------------
# ablation

def cmd_ablation(args) -> None:
    out = Path(args.out)
    size = _probe_size(Path(args.data))
    rows = []
    for row in args.rows:
        args.ablation = row
        run = _run_config(args, size)
        final = run_training(run, out / row)
        ev = argparse.Namespace(
            data=args.test_data, ckpt=str(final), report=str(out / row / "report.csv"),
            pred_out=str(out / row / "pred"), bypass=False,
        )
        cmd_eval(ev)
        agg = EvalReport.read_csv(out / row / "report.csv").aggregate
        use_fpm, feed = ABLATIONS[row]
        rows.append({"row": row, "fp_g": int(use_fpm), "sp_feed": int(feed), **agg})
    fields = ["row", "fp_g", "sp_feed", *METRICS]
    with (out / "ablation.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([r["row"], r["fp_g"], r["sp_feed"], *(repr(r[k]) for k in METRICS)])
    print(f"{'row':<5}{'FP-G':>6}{'S_p(I)':>8}" + "".join(f"{k.upper():>10}" for k in METRICS))
    for r in rows:
        print(
            f"{r['row']:<5}{'x' if r['fp_g'] else '':>6}{'x' if r['sp_feed'] else '':>8}"
            + "".join(f"{r[k]:>10.4f}" for k in METRICS)
        )


# --------------------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="training dataset root")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--max-iters", type=int, default=None, help="stop after this many iterations")
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=4.0e-5)
    p.add_argument("--decay-factor", type=float, default=0.1)
    p.add_argument("--decay-every", type=int, default=10, help="epochs between lr decays")
    p.add_argument("--ablation", choices=sorted(ABLATIONS), default="iii")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--band-radius", type=int, default=3, help="transition-band radius for the detail loss")
    p.add_argument("--lambda-s", type=float, default=1.0)
    p.add_argument("--lambda-d", type=float, default=10.0)
    p.add_argument("--lambda-alpha", type=float, default=1.0)
    p.add_argument("--widths", type=int, nargs=5, default=[16, 32, 64, 128, 128])
    p.add_argument("--fpm-channels", type=int, default=32)
    p.add_argument("--detail-channels", type=int, default=16)
    p.add_argument("--fusion-channels", type=int, default=16)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    p.add_argument("--checkpoint-every", type=int, default=10, help="epochs between checkpoints (0: final only)")
    p.add_argument("--no-flip", action="store_true", help="disable random horizontal flips")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgmnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic portrait dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    _add_train_flags(p)
    p.add_argument("--config", help="rerun from a saved config.json (other training flags ignored)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt")
    p.add_argument("--report", required=True, help="CSV report path")
    p.add_argument("--pred-out", help="directory for predicted mattes")
    p.add_argument("--bypass", action="store_true", help="score ground truth against itself")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict an alpha matte for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--alpha-out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("composite", help="matte an image onto a new background")
    p.add_argument("--image", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--bg", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha-out")
    p.set_defaults(func=cmd_composite)

    p = sub.add_parser("ablation", help="train and evaluate the three ablation rows")
    _add_train_flags(p)
    p.add_argument("--test-data", required=True)
    p.add_argument("--rows", nargs="+", choices=sorted(ABLATIONS), default=["i", "ii", "iii"])
    p.set_defaults(func=cmd_ablation)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("SGMNET_LOG_LEVEL", "INFO").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sgmnet: error: {exc}", file=sys.stderr)
        return 2
    except (
        ImageFormatError,
        CheckpointError,
        ShapeError,
        FileNotFoundError,
        OSError,
        ValueError,
        FloatingPointError,
    ) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
