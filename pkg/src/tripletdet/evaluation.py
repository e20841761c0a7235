"""Detection metrics: per-video AP/AR at an IoU threshold, averaged per class.

Two modes share one matching engine. Instrument mode keys classes by
instrument id over all ground-truth instances. Triplet mode keys by triplet
id, requires the full (instrument, verb, target) identity to match, and only
instances with an in-dictionary triplet count as ground truth; sentinel
(-1) predictions form a classless pool that never matches anything.

Matching is greedy in descending score within each (video, class): a
prediction claims the unclaimed same-frame ground truth with the highest
IoU >= threshold. AP uses all-points interpolation of the precision
envelope; AR is recall at the end of the ranked list. Class means skip
(video, class) cells with zero ground truth rather than scoring them 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataio import load_annotations, load_predictions
from .datatypes import FrameAnnotation, TripletDetection
from .errors import EvaluationError
from .vocab import INVALID_TRIPLET, LabelVocabulary


def iou(a, b) -> float:
    ax1, ay1, ax2, ay2 = _coords(a)
    bx1, by1, bx2, by2 = _coords(b)
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return float(inter / union)


def _coords(box) -> Tuple[float, float, float, float]:
    if hasattr(box, "as_list"):
        return tuple(box.as_list())
    x1, y1, x2, y2 = box
    return float(x1), float(y1), float(x2), float(y2)


def average_precision(tp: np.ndarray, n_gt: int) -> float:
    """All-points interpolated AP for score-ordered TP/FP flags, in [0, 1]."""
    if n_gt <= 0:
        raise ValueError("AP undefined without ground truth")
    if tp.size == 0:
        return 0.0
    cum_tp = np.cumsum(tp)
    recall = cum_tp / n_gt
    precision = cum_tp / np.arange(1, tp.size + 1)
    mrec = np.concatenate(([0.0], recall))
    mpre = np.concatenate(([0.0], precision))
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    gaps = np.diff(mrec)
    # fsum: exactly-rounded, so the value is independent of summation order.
    return math.fsum(gaps * mpre[1:])


def recall_at_end(tp: np.ndarray, n_gt: int) -> float:
    if n_gt <= 0:
        raise ValueError("recall undefined without ground truth")
    return float(tp.sum() / n_gt) if tp.size else 0.0


# One ranked prediction: (score, insertion order, frame_id, box)
_Ranked = Tuple[float, int, str, object]


def match_class(preds: List[_Ranked], gt_boxes: Dict[str, List[object]],
                threshold: float) -> np.ndarray:
    """Greedy match for one (video, class). Returns TP flags in rank order."""
    order = sorted(range(len(preds)), key=lambda k: (-preds[k][0], preds[k][1]))
    claimed = {fid: np.zeros(len(boxes), dtype=bool) for fid, boxes in gt_boxes.items()}
    tp = np.zeros(len(preds), dtype=bool)
    for rank, k in enumerate(order):
        _, _, fid, box = preds[k]
        boxes = gt_boxes.get(fid, [])
        best, best_iou = -1, threshold
        for g, gt_box in enumerate(boxes):
            if claimed[fid][g]:
                continue
            ov = iou(box, gt_box)
            if ov > best_iou or (ov == best_iou and ov >= threshold and best == -1):
                best, best_iou = g, ov
        if best >= 0:
            claimed[fid][best] = True
            tp[rank] = True
    return tp


def _video_class_stats(pred_frames: Dict[str, List[TripletDetection]],
                       frames: List[FrameAnnotation], classes: Sequence[int],
                       mode: str, threshold: float,
                       max_dets: int) -> Dict[int, Tuple[Optional[float], Optional[float]]]:
    """Per-class (AP, AR) for one video; (None, None) when the class has no GT."""
    gt: Dict[int, Dict[str, List[object]]] = {c: {} for c in classes}
    for frame in frames:
        for inst in frame.gt_instances or []:
            if mode == "instrument":
                key = inst.instrument_id
            else:
                key = inst.triplet_id
                if key == INVALID_TRIPLET:
                    continue
            gt[key].setdefault(frame.frame_id, []).append(inst.box)

    preds: Dict[int, List[_Ranked]] = {c: [] for c in classes}
    counter = 0
    for frame in frames:
        dets = pred_frames.get(frame.frame_id, [])
        if max_dets > 0 and len(dets) > max_dets:
            keep = sorted(range(len(dets)), key=lambda k: (-dets[k].score, k))[:max_dets]
            dets = [dets[k] for k in sorted(keep)]
        for det in dets:
            key = det.instrument_id if mode == "instrument" else det.triplet_id
            if key in preds:
                preds[key].append((det.score, counter, frame.frame_id, det.box))
            counter += 1

    stats = {}
    for c in classes:
        n_gt = sum(len(b) for b in gt[c].values())
        if n_gt == 0:
            stats[c] = (None, None)
            continue
        tp = match_class(preds[c], gt[c], threshold)
        stats[c] = (average_precision(tp, n_gt), recall_at_end(tp, n_gt))
    return stats


def _nanmean(values: List[Optional[float]]) -> Optional[float]:
    real = [v for v in values if v is not None]
    return math.fsum(real) / len(real) if real else None


@dataclass
class EvalReport:
    ap_i: float
    ar_i: float
    ap_ivt: float
    ar_ivt: float
    per_class: Dict[str, Dict[int, Dict[str, Optional[float]]]] = field(default_factory=dict)
    per_video: Dict[str, Dict[str, Optional[float]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"AP_I": self.ap_i, "AR_I": self.ar_i,
                "AP_IVT": self.ap_ivt, "AR_IVT": self.ar_ivt,
                "per_class": {m: {str(c): v for c, v in t.items()}
                              for m, t in self.per_class.items()},
                "per_video": self.per_video}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    def format_table(self) -> str:
        def fmt(v):
            return "   --" if v is None else f"{v:5.1f}"
        lines = [f"{'metric':<8}{'value':>8}"]
        for name, v in (("AP_I", self.ap_i), ("AR_I", self.ar_i),
                        ("AP_IVT", self.ap_ivt), ("AR_IVT", self.ar_ivt)):
            lines.append(f"{name:<8}{v:8.2f}")
        lines.append("")
        lines.append(f"{'video':<10}{'AP_I':>6}{'AP_IVT':>8}")
        for vid, row in sorted(self.per_video.items()):
            lines.append(f"{vid:<10}{fmt(row['ap_i']):>6}{fmt(row['ap_ivt']):>8}")
        return "\n".join(lines)


def evaluate_frames(pred_frames: Dict[str, List[TripletDetection]],
                    annotations: Sequence[FrameAnnotation], vocab: LabelVocabulary,
                    iou_threshold: float = 0.5, max_dets: int = 0) -> EvalReport:
    known = {f.frame_id for f in annotations}
    stray = sorted(set(pred_frames) - known)
    if stray:
        raise EvaluationError(f"predictions reference unknown frame_id '{stray[0]}'")

    videos: Dict[str, List[FrameAnnotation]] = {}
    for frame in annotations:
        videos.setdefault(frame.video_id, []).append(frame)

    modes = {"instrument": list(range(vocab.num_instruments)),
             "triplet": list(range(vocab.num_triplets))}
    headline = {}
    per_class: Dict[str, Dict[int, Dict[str, Optional[float]]]] = {}
    per_video: Dict[str, Dict[str, Optional[float]]] = {v: {} for v in videos}
    for mode, classes in modes.items():
        by_video = {vid: _video_class_stats(pred_frames, frames, classes, mode,
                                            iou_threshold, max_dets)
                    for vid, frames in videos.items()}
        class_ap, class_ar = {}, {}
        for c in classes:
            class_ap[c] = _nanmean([by_video[v][c][0] for v in videos])
            class_ar[c] = _nanmean([by_video[v][c][1] for v in videos])
        ap = _nanmean(list(class_ap.values()))
        ar = _nanmean(list(class_ar.values()))
        headline[mode] = (100 * ap if ap is not None else 0.0,
                          100 * ar if ar is not None else 0.0)
        per_class[mode] = {c: {"ap": None if class_ap[c] is None else 100 * class_ap[c],
                               "ar": None if class_ar[c] is None else 100 * class_ar[c]}
                           for c in classes}
        suffix = "i" if mode == "instrument" else "ivt"
        for vid in videos:
            vap = _nanmean([by_video[vid][c][0] for c in classes])
            var = _nanmean([by_video[vid][c][1] for c in classes])
            per_video[vid][f"ap_{suffix}"] = None if vap is None else 100 * vap
            per_video[vid][f"ar_{suffix}"] = None if var is None else 100 * var

    return EvalReport(ap_i=headline["instrument"][0], ar_i=headline["instrument"][1],
                      ap_ivt=headline["triplet"][0], ar_ivt=headline["triplet"][1],
                      per_class=per_class, per_video=per_video)


def evaluate(predictions_path, annotations_path, iou_threshold: float = 0.5,
             max_dets: int = 0) -> EvalReport:
    vocab, annotations = load_annotations(annotations_path)
    preds = load_predictions(predictions_path, vocab)
    return evaluate_frames(preds, annotations, vocab, iou_threshold, max_dets)
