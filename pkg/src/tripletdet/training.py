"""Two-stage training with checkpoints, epoch logs, and resume support.

Stage 1 trains the backbone, base encoder, and class-token transformer with
the presence loss only. Stage 2 starts from a stage-1 checkpoint and adds
the interaction graph, optimizing the composite loss with per-part learning
rates. Batch order, flips, and pseudo-label draws are all derived from
(seed, stage, epoch), so interrupting and resuming at an epoch boundary
reproduces the uninterrupted run.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .config import RunConfig, StageConfig
from .dataio import load_annotations, load_detections
from .datatypes import BoxXYXY, Detection, FrameAnnotation
from .errors import ConfigError, DataError, VocabularyError
from .model import TripletDetector, images_to_tensor
from .supervision import (LossBundle, class_weights, graph_losses,
                          pseudo_labels, target_bce)
from .synthetic import SyntheticDataset, load_image_dir
from .vocab import LabelVocabulary


@dataclass
class TrainData:
    """Frames ready for training: pixel stack plus per-frame labels."""

    vocab: LabelVocabulary
    annotations: List[FrameAnnotation]
    detections: Dict[str, List[Detection]]
    images: np.ndarray            # (F, H, W, 3) uint8, row i <-> annotations[i]

    @classmethod
    def from_dir(cls, dataset_dir) -> "TrainData":
        root = Path(dataset_dir)
        vocab, annotations = load_annotations(root / "annotations.json")
        detections = load_detections(root / "detections.json", vocab)
        images = load_image_dir(root / "images", [a.frame_id for a in annotations])
        return cls(vocab=vocab, annotations=annotations, detections=detections,
                   images=images)

    @classmethod
    def from_synthetic(cls, ds: SyntheticDataset) -> "TrainData":
        return cls(vocab=ds.vocab, annotations=list(ds.annotations),
                   detections=dict(ds.detections), images=ds.images)

    def split(self, val_videos: Sequence[str]) -> Tuple[List[int], List[int]]:
        val = set(val_videos)
        unknown = val - {a.video_id for a in self.annotations}
        if unknown:
            raise ConfigError(f"val_videos not in dataset: {sorted(unknown)}")
        train_idx = [i for i, a in enumerate(self.annotations) if a.video_id not in val]
        val_idx = [i for i, a in enumerate(self.annotations) if a.video_id in val]
        if not train_idx:
            raise DataError("no training frames left after the validation split")
        return train_idx, val_idx


def _flip_detections(dets: List[Detection]) -> List[Detection]:
    return [replace(d, box=BoxXYXY(1.0 - d.box.x2, d.box.y1, 1.0 - d.box.x1, d.box.y2))
            for d in dets]


def _epoch_seed(seed: int, stage: int, epoch: int) -> List[int]:
    return [seed, stage, epoch]


def make_optimizer(model: TripletDetector, stage: int,
                   cfg: StageConfig) -> Tuple[torch.optim.Optimizer,
                                              torch.optim.lr_scheduler.ExponentialLR]:
    groups = model.param_groups()
    lrs = {"backbone": cfg.lr_backbone, "base": cfg.lr_base,
           "mcit": cfg.lr_mcit, "ig": cfg.lr_ig}
    names = ["backbone", "base", "mcit"] if stage == 1 else list(lrs)
    params = [{"params": groups[n], "lr": lrs[n], "name": n} for n in names]
    if cfg.optimizer == "sgd":
        opt = torch.optim.SGD(params, lr=cfg.lr_base, momentum=cfg.momentum,
                              weight_decay=cfg.weight_decay)
    else:
        opt = torch.optim.Adam(params, lr=cfg.lr_base, weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=cfg.lr_decay)
    return opt, sched


def save_checkpoint(path, model: TripletDetector, optimizer, scheduler, stage: int,
                    epoch: int, cfg: RunConfig, epoch_log: List[dict]) -> None:
    payload = {
        "stage": stage,
        "epoch": epoch,
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict(),
        "scheduler_state": scheduler.state_dict(),
        "config": cfg.to_dict(),
        "vocab": model.vocab.to_dict(),
        "vocab_digest": model.vocab.digest(),
        "seed": cfg.seed,
        "epoch_log": epoch_log,
    }
    tmp = Path(str(path) + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path, expect_vocab: Optional[LabelVocabulary] = None) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise DataError(f"unreadable checkpoint {path}: {exc}") from exc
    for key in ("model_state", "config", "vocab", "vocab_digest", "stage"):
        if key not in payload:
            raise DataError(f"checkpoint {path} is missing '{key}'")
    if expect_vocab is not None and payload["vocab_digest"] != expect_vocab.digest():
        raise VocabularyError(
            "checkpoint vocabulary does not match the dataset; refusing to continue")
    return payload


def model_from_checkpoint(path, map_location="cpu") -> Tuple[TripletDetector, RunConfig]:
    payload = load_checkpoint(path)
    cfg = RunConfig.from_dict(payload["config"])
    vocab = LabelVocabulary.from_dict(payload["vocab"])
    model = TripletDetector(cfg.model, vocab)
    model.load_state_dict(payload["model_state"])
    return model, cfg


def _write_log(path, rows: List[dict]) -> None:
    fields = ["epoch", "target", "edge", "verb", "total", "lr_scale", "seconds"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


class Trainer:
    def __init__(self, data: TrainData, cfg: RunConfig, out_dir, device: str = "cpu"):
        self.data = data
        self.cfg = cfg
        self.device = device
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.train_idx, self.val_idx = data.split(cfg.data.val_videos)
        train_frames = [data.annotations[i] for i in self.train_idx]
        self.weights = torch.as_tensor(
            class_weights(train_frames, data.vocab.num_targets))
        self.presence = torch.as_tensor(
            np.array([a.target_presence for a in data.annotations], dtype=np.float32))
        # Initial weights must be a function of the seed, not of ambient RNG
        # state, or stage-2 runs (whose graph weights never come from the
        # stage-1 checkpoint) would not be reproducible.
        torch.manual_seed(cfg.seed)
        self.model = TripletDetector(cfg.model, data.vocab).to(device)

    def _stage_cfg(self, stage: int) -> StageConfig:
        return self.cfg.stage1 if stage == 1 else self.cfg.stage2

    def run_stage(self, stage: int, init_from=None, resume: bool = False) -> Path:
        if stage not in (1, 2):
            raise ConfigError("stage must be 1 or 2")
        scfg = self._stage_cfg(stage)
        final_path = self.out_dir / f"stage{stage}.pt"
        latest_path = self.out_dir / f"stage{stage}_latest.pt"
        log_path = self.out_dir / f"stage{stage}_log.csv"

        torch.manual_seed(self.cfg.seed + stage)
        if stage == 2:
            if init_from is None and not resume:
                raise ConfigError("stage 2 requires a stage-1 checkpoint")
            if init_from is not None:
                payload = load_checkpoint(init_from, expect_vocab=self.data.vocab)
                # The graph is untouched by stage 1, so only the trained parts
                # carry over; this also lets one stage-1 checkpoint seed any
                # message-passing variant.
                state = {k: v for k, v in payload["model_state"].items()
                         if not k.startswith("graph.")}
                missing = [k for k in self.model.state_dict()
                           if not k.startswith("graph.") and k not in state]
                if missing:
                    raise DataError(
                        f"stage-1 checkpoint lacks parameters: {missing[:3]}...")
                self.model.load_state_dict(state, strict=False)

        optimizer, scheduler = make_optimizer(self.model, stage, scfg)
        start_epoch = 0
        epoch_log: List[dict] = []
        if resume:
            payload = load_checkpoint(latest_path, expect_vocab=self.data.vocab)
            if payload["stage"] != stage:
                raise ConfigError(f"checkpoint {latest_path} is for stage {payload['stage']}")
            self.model.load_state_dict(payload["model_state"])
            optimizer.load_state_dict(payload["optimizer_state"])
            scheduler.load_state_dict(payload["scheduler_state"])
            start_epoch = payload["epoch"] + 1
            epoch_log = list(payload["epoch_log"])

        images = torch.as_tensor(self.data.images)
        weights = self.weights.to(self.device)
        for epoch in range(start_epoch, scfg.epochs):
            t0 = time.perf_counter()
            torch.manual_seed(hash((self.cfg.seed, stage, epoch)) % (2 ** 31))
            rng = np.random.default_rng(_epoch_seed(self.cfg.seed, stage, epoch))
            order = rng.permutation(len(self.train_idx))
            flips = (rng.random(len(self.train_idx)) < 0.5) \
                if self.cfg.data.augment_hflip else np.zeros(len(self.train_idx), bool)
            labels_by_frame = None
            if stage == 2:
                pseudo_seed = int(rng.integers(2 ** 31))
                labels_by_frame = {
                    a.frame_id: pseudo_labels(
                        self.data.detections.get(a.frame_id, []), a, self.data.vocab,
                        pseudo_seed, self.cfg.data.pseudo_label_policy)
                    for a in (self.data.annotations[i] for i in self.train_idx)}

            sums = {"target": 0.0, "edge": 0.0, "verb": 0.0, "total": 0.0}
            seen = 0
            for lo in range(0, len(order), scfg.batch_size):
                rows = [self.train_idx[k] for k in order[lo:lo + scfg.batch_size]]
                flip_rows = flips[order[lo:lo + scfg.batch_size]]
                batch_imgs = images[rows].to(self.device)
                dets, frame_ids = [], []
                for row, flip in zip(rows, flip_rows):
                    ann = self.data.annotations[row]
                    d = self.data.detections.get(ann.frame_id, [])
                    dets.append(_flip_detections(d) if flip else list(d))
                    frame_ids.append(ann.frame_id)
                flip_t = torch.as_tensor(flip_rows)
                batch_imgs[flip_t] = torch.flip(batch_imgs[flip_t], dims=[2])
                x = images_to_tensor(batch_imgs, device=self.device)
                presence = self.presence[rows].to(self.device)

                out = self.model(x, dets, run_graph=stage == 2)
                l_t = target_bce(out.mcit.target_logits, presence, weights)
                if stage == 2:
                    l_e, l_v = graph_losses(
                        out.edge_sets, [labels_by_frame[f] for f in frame_ids])
                    bundle = LossBundle(l_t, l_e, l_v, scfg.alpha, scfg.beta)
                else:
                    zero = l_t.new_zeros(())
                    bundle = LossBundle(l_t, zero, zero, scfg.alpha, scfg.beta)
                optimizer.zero_grad()
                bundle.total.backward()
                optimizer.step()
                vals = bundle.detached()
                for key in sums:
                    sums[key] += vals[key] * len(rows)
                seen += len(rows)

            scheduler.step()
            row = {"epoch": epoch, "lr_scale": scfg.lr_decay ** (epoch + 1),
                   "seconds": round(time.perf_counter() - t0, 3)}
            row.update({k: sums[k] / max(seen, 1) for k in sums})
            epoch_log.append(row)
            save_checkpoint(latest_path, self.model, optimizer, scheduler, stage,
                            epoch, self.cfg, epoch_log)
            _write_log(log_path, epoch_log)

        save_checkpoint(final_path, self.model, optimizer, scheduler, stage,
                        max(scfg.epochs - 1, start_epoch - 1), self.cfg, epoch_log)
        _write_log(log_path, epoch_log)
        return final_path


def train_two_stage(data: TrainData, cfg: RunConfig, out_dir,
                    device: str = "cpu") -> Tuple[Path, Path]:
    """Convenience wrapper: stage 1 then stage 2 in one call."""
    trainer = Trainer(data, cfg, out_dir, device=device)
    s1 = trainer.run_stage(1)
    s2 = trainer.run_stage(2, init_from=s1)
    return s1, s2
