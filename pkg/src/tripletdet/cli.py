"""Command-line entry point.

Subcommands: synth (write a synthetic dataset), train (one stage), predict
(checkpoint -> predictions.json), eval (predictions vs annotations), and
ablate (stage-2 sweep over message-passing variants). Exit codes: 0 on
success, 2 for configuration problems, 3 for data problems. Relative output
paths resolve under $TRIPLETDET_OUT_ROOT when it is set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from .config import RunConfig, describe_keys, load_config
from .dataio import load_detections, save_predictions
from .decoder import predict_frames
from .errors import ConfigError, DataError
from .evaluation import evaluate, evaluate_frames
from .synthetic import SynthSpec, generate_synthetic_dataset, load_image_dir, write_dataset
from .training import TrainData, Trainer, model_from_checkpoint

_VARIANTS = ("gat", "gcn", "sage")


def _out_path(path) -> Path:
    p = Path(path)
    root = os.environ.get("TRIPLETDET_OUT_ROOT")
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _load_cfg(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None), getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    s = cfg.synth
    spec = SynthSpec(
        n_instruments=s.n_instruments, n_verbs=s.n_verbs, n_targets=s.n_targets,
        image_height=s.image_height, image_width=s.image_width,
        frames=args.frames if args.frames is not None else s.frames,
        videos=s.videos, max_targets=s.max_targets,
        max_instruments=s.max_instruments, p_interact=s.p_interact)
    out = _out_path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(f"output directory {out} is not empty (use --force)")
    dataset = generate_synthetic_dataset(spec, cfg.seed)
    write_dataset(dataset, out)
    print(f"wrote {spec.frames} frames across {spec.videos} videos to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    dataset_dir = args.dataset or cfg.data.dataset_dir
    if not dataset_dir:
        raise ConfigError("no dataset directory (use --dataset or data.dataset_dir)")
    data = TrainData.from_dir(dataset_dir)
    trainer = Trainer(data, cfg, _out_path(args.out), device=args.device)
    if args.stage == 2 and args.init is None and not args.resume:
        raise ConfigError("stage 2 needs --init with a stage-1 checkpoint")
    path = trainer.run_stage(args.stage, init_from=args.init, resume=args.resume)
    print(f"stage {args.stage} complete -> {path}")
    return 0


def cmd_predict(args) -> int:
    model, cfg = model_from_checkpoint(args.checkpoint)
    detections = load_detections(args.detections, model.vocab)
    frame_ids = sorted(detections)
    images = load_image_dir(args.images, frame_ids)
    t0 = time.perf_counter()
    preds = predict_frames(model, images, frame_ids, detections, cfg.eval,
                           batch_size=cfg.stage2.batch_size, device=args.device)
    elapsed = time.perf_counter() - t0
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_predictions(out, preds)
    fps = len(frame_ids) / elapsed if elapsed > 0 else float("inf")
    total = sum(len(v) for v in preds.values())
    print(f"{len(frame_ids)} frames, {total} triplet detections, "
          f"{fps:.1f} frames/sec -> {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    threshold = args.iou if args.iou is not None else cfg.eval.iou_threshold
    report = evaluate(args.predictions, args.annotations, threshold,
                      cfg.eval.max_dets)
    print(report.format_table())
    if args.out:
        out = _out_path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        report.save(out)
        print(f"report -> {out}")
    return 0


def _eval_validation(model, data: TrainData, cfg: RunConfig, device: str):
    val_frames = [a for a in data.annotations if a.video_id in set(cfg.data.val_videos)]
    ids = [a.frame_id for a in val_frames]
    index = {a.frame_id: i for i, a in enumerate(data.annotations)}
    images = data.images[[index[f] for f in ids]]
    preds = predict_frames(model, images, ids, data.detections, cfg.eval,
                           batch_size=cfg.stage2.batch_size, device=device)
    return evaluate_frames(preds, val_frames, data.vocab,
                           cfg.eval.iou_threshold, cfg.eval.max_dets)


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    dataset_dir = args.dataset or cfg.data.dataset_dir
    if not dataset_dir:
        raise ConfigError("no dataset directory (use --dataset or data.dataset_dir)")
    if not cfg.data.val_videos:
        raise ConfigError("ablate needs data.val_videos for the comparison")
    data = TrainData.from_dir(dataset_dir)
    out = _out_path(args.out)

    stage1 = Trainer(data, cfg, out / "stage1", device=args.device).run_stage(1)
    rows = {}
    for variant in _VARIANTS:
        vcfg = RunConfig.from_dict(cfg.to_dict())
        vcfg.model = replace(vcfg.model, mp_variant=variant)
        trainer = Trainer(data, vcfg, out / variant, device=args.device)
        ckpt = trainer.run_stage(2, init_from=stage1)
        report = _eval_validation(trainer.model, data, vcfg, args.device)
        rows[variant] = {"AP_IVT": report.ap_ivt, "AR_IVT": report.ar_ivt,
                         "checkpoint": str(ckpt)}

    print(f"{'variant':<8}{'AP_IVT':>8}{'AR_IVT':>8}")
    for variant in _VARIANTS:
        r = rows[variant]
        print(f"{variant:<8}{r['AP_IVT']:8.2f}{r['AR_IVT']:8.2f}")
    with open(out / "ablation.json", "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=1)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tripletdet",
        description="Surgical action triplet detection pipeline.",
        epilog="Config keys (section.key = default):\n" + describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="override the run seed")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--frames", type=int, help="override synth.frames")
    p.add_argument("--force", action="store_true", help="write into a non-empty directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one stage")
    common(p)
    p.add_argument("--dataset", help="dataset directory (images/, annotations, detections)")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--init", help="stage-1 checkpoint to start stage 2 from")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    p.add_argument("--out", default="runs/train", help="checkpoint/log directory")
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="run inference with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--detections", required=True, help="detections.json with instrument boxes")
    p.add_argument("--images", required=True, help="directory of frame images")
    p.add_argument("--out", default="predictions.json")
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against annotations")
    common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--iou", type=float, help="IoU threshold (default from config)")
    p.add_argument("--out", help="write the report as JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="compare message-passing variants")
    common(p)
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--out", default="runs/ablation")
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
