"""Synthetic desk-scale dataset with programmatic interaction labels.

Each frame contains one or two large "tissue" rectangles (target classes,
distinct dull colors) and up to two small "instrument" shapes (distinct
bright colors and silhouettes: disc, triangle, plus).  One placed target is
the frame's active anatomy; an instrument either overlaps it (interacting)
or sits in free space (background), mirroring how surgical frames center on
a single worked structure.  The verb of an interacting pair is a fixed
function of the two classes via the vocabulary's rule table, so the triplet
is a deterministic, learnable function of scene geometry.

Instrument and target classes are sampled without replacement within a
frame, so the frame-level triplet presence vector identifies each instance's
triplet unambiguously (pseudo labels on this data are exact).

Everything is driven by one seeded generator: a given (spec, seed) pair
reproduces the dataset byte for byte, including rendered images.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .datatypes import BoxXYXY, Detection, FrameAnnotation, GtInstance
from .errors import ConfigError
from .vocab import INVALID_TRIPLET, LabelVocabulary, toy_vocabulary

_INSTRUMENT_NAMES = ("grasper", "hook", "scissors", "clipper", "irrigator", "bipolar")
_VERB_NAMES = ("retract", "coagulate", "cut", "dissect", "grasp", "clip",
               "aspirate", "irrigate", "pack", "null-verb")
_TARGET_NAMES = ("gallbladder", "liver", "fat", "peritoneum", "omentum",
                 "cystic-duct", "cystic-artery", "abdominal-wall")

# Bright, well separated instrument colors; dull target colors.
_INSTRUMENT_COLORS = np.array(
    [(255, 40, 40), (40, 255, 70), (70, 110, 255), (250, 240, 60),
     (240, 70, 240), (60, 240, 240)], dtype=np.uint8)
_TARGET_COLORS = np.array(
    [(120, 80, 40), (70, 110, 70), (130, 120, 90), (90, 70, 110),
     (60, 90, 120), (120, 60, 60), (90, 120, 50), (110, 110, 130)], dtype=np.uint8)


def _names(base: Sequence[str], n: int, stem: str) -> Tuple[str, ...]:
    if n <= len(base):
        return tuple(base[:n])
    return tuple(base) + tuple(f"{stem}{k}" for k in range(len(base), n))


@dataclass(frozen=True)
class SynthSpec:
    """Toy dataset shape: class counts, image size, frame count, priors."""

    n_instruments: int = 3
    n_verbs: int = 3
    n_targets: int = 4
    image_height: int = 64
    image_width: int = 112
    frames: int = 500
    videos: int = 10
    max_targets: int = 2
    max_instruments: int = 2
    # per-frame probabilities of placing 0, 1, 2, ... instruments
    instrument_count_probs: Tuple[float, ...] = (0.1, 0.45, 0.45)
    p_interact: float = 0.8
    instrument_prior: Optional[Tuple[float, ...]] = None   # default uniform
    target_prior: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if min(self.n_instruments, self.n_verbs, self.n_targets) < 1:
            raise ConfigError("synthetic spec needs at least one class per component")
        if self.frames < 1:
            raise ConfigError("synthetic spec needs at least one frame")
        if self.videos < 1 or self.videos > self.frames:
            raise ConfigError("videos must be in [1, frames]")
        if self.max_instruments > self.n_instruments:
            raise ConfigError("max_instruments exceeds number of instrument classes")
        if self.max_targets > self.n_targets:
            raise ConfigError("max_targets exceeds number of target classes")
        if len(self.instrument_count_probs) != self.max_instruments + 1:
            raise ConfigError("instrument_count_probs must have max_instruments+1 entries")

    def build_vocabulary(self) -> LabelVocabulary:
        rule = {(i, t): (i + t) % self.n_verbs
                for i in range(self.n_instruments) for t in range(self.n_targets)}
        return toy_vocabulary(
            rule=rule,
            instruments=_names(_INSTRUMENT_NAMES, self.n_instruments, "instrument"),
            verbs=_names(_VERB_NAMES, self.n_verbs, "verb"),
            targets=_names(_TARGET_NAMES, self.n_targets, "target"),
        )

    def interaction_verb(self, instrument_id: int, target_id: int) -> int:
        return (instrument_id + target_id) % self.n_verbs


@dataclass
class SyntheticDataset:
    spec: SynthSpec
    seed: int
    vocab: LabelVocabulary
    images: np.ndarray                       # (F, H, W, 3) uint8
    annotations: List[FrameAnnotation]
    detections: Dict[str, List[Detection]]   # oracle boxes, confidence 1.0
    video_ids: Tuple[str, ...] = field(default_factory=tuple)

    def frames_of_video(self, video_id: str) -> List[int]:
        return [k for k, a in enumerate(self.annotations) if a.video_id == video_id]


# --- shape rasterizers ----------------------------------------------------

def _paint_rect(img, y1, x1, y2, x2, color):
    img[y1:y2, x1:x2] = color


def _paint_disc(img, y1, x1, y2, x2, color):
    cy, cx = (y1 + y2 - 1) / 2.0, (x1 + x2 - 1) / 2.0
    r = min(y2 - y1, x2 - x1) / 2.0
    yy, xx = np.ogrid[y1:y2, x1:x2]
    mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    img[y1:y2, x1:x2][mask] = color


def _paint_triangle(img, y1, x1, y2, x2, color):
    h, w = y2 - y1, x2 - x1
    cx = (w - 1) / 2.0
    yy, xx = np.ogrid[0:h, 0:w]
    half = (yy + 1) / h * (w / 2.0)
    mask = np.abs(xx - cx) <= half
    img[y1:y2, x1:x2][mask] = color


def _paint_plus(img, y1, x1, y2, x2, color):
    h, w = y2 - y1, x2 - x1
    bar_h = max(1, h // 3)
    bar_w = max(1, w // 3)
    img[y1 + (h - bar_h) // 2:y1 + (h - bar_h) // 2 + bar_h, x1:x2] = color
    img[y1:y2, x1 + (w - bar_w) // 2:x1 + (w - bar_w) // 2 + bar_w] = color


_INSTRUMENT_PAINTERS = (_paint_disc, _paint_triangle, _paint_plus)


def _boxes_overlap(a, b, margin=0):
    return not (a[2] + margin <= b[0] or b[2] + margin <= a[0]
                or a[3] + margin <= b[1] or b[3] + margin <= a[1])


def _norm_box(y1, x1, y2, x2, height, width) -> BoxXYXY:
    return BoxXYXY(x1 / width, y1 / height, x2 / width, y2 / height)


def _place_box(rng, height, width, size_lo, size_hi, taken, margin, max_tries=80):
    """Random box not overlapping anything in ``taken``; None if it won't fit."""
    for _ in range(max_tries):
        bh = int(rng.integers(size_lo, size_hi + 1))
        bw = int(rng.integers(size_lo, size_hi + 1))
        y1 = int(rng.integers(1, max(2, height - bh - 1)))
        x1 = int(rng.integers(1, max(2, width - bw - 1)))
        box = (y1, x1, y1 + bh, x1 + bw)
        if all(not _boxes_overlap(box, t, margin) for t in taken):
            return box
    return None


def generate_synthetic_dataset(spec: SynthSpec, seed: int) -> SyntheticDataset:
    """Deterministic scene generator; see the module docstring for the rules."""
    rng = np.random.default_rng(seed)
    H, W = spec.image_height, spec.image_width
    vocab = spec.build_vocabulary()

    inst_prior = np.asarray(spec.instrument_prior if spec.instrument_prior is not None
                            else np.full(spec.n_instruments, 1.0 / spec.n_instruments))
    tgt_prior = np.asarray(spec.target_prior if spec.target_prior is not None
                           else np.full(spec.n_targets, 1.0 / spec.n_targets))
    inst_prior = inst_prior / inst_prior.sum()
    tgt_prior = tgt_prior / tgt_prior.sum()

    tgt_size = (max(10, min(H, W) // 3), max(12, min(H, W) // 2))
    ins_size = (max(6, min(H, W) // 6), max(8, min(H, W) // 4))

    images = np.zeros((spec.frames, H, W, 3), dtype=np.uint8)
    annotations: List[FrameAnnotation] = []
    detections: Dict[str, List[Detection]] = {}
    video_ids = tuple(f"v{v:02d}" for v in range(spec.videos))

    for idx in range(spec.frames):
        video = idx * spec.videos // spec.frames
        frame_id = f"v{video:02d}_f{idx:04d}"
        img = images[idx]
        img[:] = rng.integers(8, 28, size=(H, W, 3), dtype=np.uint8)

        # targets: large dull rectangles, non-overlapping
        n_tgt = int(rng.integers(1, spec.max_targets + 1))
        tgt_classes = rng.choice(spec.n_targets, size=n_tgt, replace=False, p=tgt_prior)
        placed_targets = []   # (class_id, pixel box)
        taken = []
        for tc in sorted(int(c) for c in tgt_classes):
            box = _place_box(rng, H, W, *tgt_size, taken, margin=2)
            if box is None:
                continue
            _paint_rect(img, *box, _TARGET_COLORS[tc % len(_TARGET_COLORS)])
            placed_targets.append((tc, box))
            taken.append(box)

        # instruments: small bright shapes, optionally overlapping the frame's
        # active target (scenes work one structure at a time)
        n_ins = int(rng.choice(len(spec.instrument_count_probs),
                               p=np.asarray(spec.instrument_count_probs)))
        ins_classes = rng.choice(spec.n_instruments, size=n_ins, replace=False, p=inst_prior)
        active = (placed_targets[int(rng.integers(len(placed_targets)))]
                  if placed_targets else None)
        instrument_boxes = []
        gt_instances = []
        triplet_presence = [0] * vocab.num_triplets
        for ic in sorted(int(c) for c in ins_classes):
            interact = active is not None and rng.random() < spec.p_interact
            box = None
            if interact:
                tc, (ty1, tx1, ty2, tx2) = active
                for _ in range(40):
                    bh = int(rng.integers(*ins_size))
                    bw = int(rng.integers(*ins_size))
                    # center inside the target box guarantees pixel overlap
                    cy = int(rng.integers(ty1, ty2))
                    cx = int(rng.integers(tx1, tx2))
                    y1 = min(max(cy - bh // 2, 1), H - bh - 1)
                    x1 = min(max(cx - bw // 2, 1), W - bw - 1)
                    cand = (y1, x1, y1 + bh, x1 + bw)
                    if _boxes_overlap(cand, (ty1, tx1, ty2, tx2)) and all(
                            not _boxes_overlap(cand, b, 2) for b in instrument_boxes):
                        box = cand
                        break
            if box is None:
                interact = False
                box = _place_box(rng, H, W, *ins_size,
                                 [b for _, b in placed_targets] + instrument_boxes,
                                 margin=4)
                if box is None:
                    continue
            _INSTRUMENT_PAINTERS[ic % len(_INSTRUMENT_PAINTERS)](
                img, *box, _INSTRUMENT_COLORS[ic % len(_INSTRUMENT_COLORS)])
            instrument_boxes.append(box)
            nbox = _norm_box(*box, H, W)
            if interact:
                verb = spec.interaction_verb(ic, tc)
                tid = vocab.triplet_id(ic, verb, tc)
                triplet_presence[tid] = 1
                gt_instances.append(GtInstance(nbox, ic, tid))
            else:
                gt_instances.append(GtInstance(nbox, ic, INVALID_TRIPLET))

        target_presence = [0] * vocab.num_targets
        for tc, _ in placed_targets:
            target_presence[tc] = 1

        ann = FrameAnnotation(
            frame_id=frame_id, video_id=video_ids[video],
            target_presence=target_presence, triplet_presence=triplet_presence,
            gt_instances=tuple(gt_instances),
        ).validate(vocab)
        annotations.append(ann)
        detections[frame_id] = [Detection(g.box, g.instrument_id, 1.0)
                                for g in gt_instances]

    return SyntheticDataset(spec=spec, seed=seed, vocab=vocab, images=images,
                            annotations=annotations, detections=detections,
                            video_ids=video_ids)


def write_dataset(dataset: SyntheticDataset, out_dir) -> Path:
    """Write images/, annotations.json and detections.json under ``out_dir``."""
    from PIL import Image

    from . import dataio

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for ann, img in zip(dataset.annotations, dataset.images):
        Image.fromarray(img).save(out / "images" / f"{ann.frame_id}.png")
    dataio.save_annotations(out / "annotations.json", dataset.vocab, dataset.annotations)
    dataio.save_detections(out / "detections.json", dataset.detections)
    return out


def load_image_dir(image_dir, frame_ids: Sequence[str]) -> np.ndarray:
    """Load PNG frames back into a (F, H, W, 3) uint8 array."""
    from PIL import Image

    from .errors import DataError

    image_dir = Path(image_dir)
    arrays = []
    for fid in frame_ids:
        path = image_dir / f"{fid}.png"
        if not path.exists():
            raise DataError(f"missing image for frame '{fid}': {path}")
        arrays.append(np.asarray(Image.open(path).convert("RGB")))
    return np.stack(arrays) if arrays else np.zeros((0, 1, 1, 3), dtype=np.uint8)
