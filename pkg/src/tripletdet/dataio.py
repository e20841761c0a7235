"""JSON file schemas: annotations, detections and predictions.

All three formats carry an explicit ``version`` field.  Layouts:

``annotations.json``::

    {"version": 1,
     "vocab": {"instruments": [...], "verbs": [...], "targets": [...],
               "triplets": [[i, v, t], ...]},
     "frames": [{"frame_id": str, "video_id": str,
                 "target_presence": [0/1, ...], "triplet_presence": [0/1, ...],
                 "gt_instances": [{"box": [x1, y1, x2, y2],
                                   "instrument": int, "triplet": int}] | null}]}

``detections.json`` (ingestion point for any external instrument detector)::

    {"version": 1,
     "frames": [{"frame_id": str,
                 "detections": [{"box": [...], "instrument": int,
                                 "confidence": float}]}]}

``predictions.json``::

    {"version": 1,
     "frames": [{"frame_id": str,
                 "triplet_detections": [{"box": [...], "instrument": int,
                                         "verb": int, "target": int,
                                         "triplet": int, "score": float}]}]}

``triplet`` is -1 for out-of-dictionary predictions and for ground-truth
instances of non-interacting instruments.  Floats are serialized with
``repr`` precision (well beyond 6 decimal digits), so score ranking survives
a round-trip exactly.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .datatypes import BoxXYXY, Detection, FrameAnnotation, GtInstance, TripletDetection
from .errors import SchemaError
from .vocab import LabelVocabulary

SCHEMA_VERSION = 1

DetectionFrames = Dict[str, List[Detection]]
PredictionFrames = Dict[str, List[TripletDetection]]


def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object, got {type(obj).__name__}")
    if key not in obj:
        raise SchemaError(f"{where}: missing field '{key}'")
    return obj[key]


def _box(raw, where: str) -> BoxXYXY:
    if not (isinstance(raw, (list, tuple)) and len(raw) == 4):
        raise SchemaError(f"{where}: field 'box' must be [x1, y1, x2, y2]")
    try:
        return BoxXYXY(*[float(v) for v in raw])
    except (TypeError, ValueError) as e:
        raise SchemaError(f"{where}: invalid box {raw}: {e}") from e


def _read_json(path) -> dict:
    path = Path(path)
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: not valid JSON: {e}") from e
    version = _require(doc, "version", str(path))
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{path}: unsupported schema version {version!r}")
    return doc


def _write_json(path, doc: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


# --- annotations ---------------------------------------------------------

def load_annotations(path, vocab: Optional[LabelVocabulary] = None,
                     ) -> Tuple[LabelVocabulary, List[FrameAnnotation]]:
    """Load an annotation file; validates every frame against the vocabulary.

    When ``vocab`` is given it overrides the embedded vocabulary section and
    the frames are validated against it, so presence vectors from an external
    source are checked against the class counts the caller expects.
    """
    doc = _read_json(path)
    if vocab is None:
        vocab = LabelVocabulary.from_dict(_require(doc, "vocab", str(path)))
    frames = []
    for raw in _require(doc, "frames", str(path)):
        frame_id = _require(raw, "frame_id", f"{path} frame")
        where = f"{path} frame '{frame_id}'"
        gt = raw.get("gt_instances")
        instances = None
        if gt is not None:
            instances = tuple(
                GtInstance(box=_box(_require(g, "box", where), where),
                           instrument_id=int(_require(g, "instrument", where)),
                           triplet_id=int(_require(g, "triplet", where)))
                for g in gt)
        ann = FrameAnnotation(
            frame_id=frame_id,
            video_id=_require(raw, "video_id", where),
            target_presence=_require(raw, "target_presence", where),
            triplet_presence=_require(raw, "triplet_presence", where),
            gt_instances=instances,
        ).validate(vocab)
        frames.append(ann)
    return vocab, frames


def save_annotations(path, vocab: LabelVocabulary,
                     frames: Sequence[FrameAnnotation]) -> None:
    doc = {
        "version": SCHEMA_VERSION,
        "vocab": vocab.to_dict(),
        "frames": [
            {
                "frame_id": f.frame_id,
                "video_id": f.video_id,
                "target_presence": list(f.target_presence),
                "triplet_presence": list(f.triplet_presence),
                "gt_instances": None if f.gt_instances is None else [
                    {"box": g.box.as_list(), "instrument": g.instrument_id,
                     "triplet": g.triplet_id}
                    for g in f.gt_instances],
            }
            for f in frames
        ],
    }
    _write_json(path, doc)


# --- detections ----------------------------------------------------------

def load_detections(path, vocab: Optional[LabelVocabulary] = None) -> DetectionFrames:
    doc = _read_json(path)
    out: DetectionFrames = {}
    for raw in _require(doc, "frames", str(path)):
        frame_id = _require(raw, "frame_id", f"{path} frame")
        where = f"{path} frame '{frame_id}'"
        if frame_id in out:
            raise SchemaError(f"{where}: duplicate frame_id")
        dets = []
        for d in _require(raw, "detections", where):
            det = Detection(box=_box(_require(d, "box", where), where),
                            instrument_id=int(_require(d, "instrument", where)),
                            confidence=float(_require(d, "confidence", where)))
            if vocab is not None:
                det.validate(vocab)
            dets.append(det)
        out[frame_id] = dets
    return out


def save_detections(path, frames: DetectionFrames) -> None:
    doc = {
        "version": SCHEMA_VERSION,
        "frames": [
            {"frame_id": fid,
             "detections": [
                 {"box": d.box.as_list(), "instrument": d.instrument_id,
                  "confidence": d.confidence} for d in dets]}
            for fid, dets in frames.items()
        ],
    }
    _write_json(path, doc)


# --- predictions ---------------------------------------------------------

def load_predictions(path, vocab: Optional[LabelVocabulary] = None) -> PredictionFrames:
    doc = _read_json(path)
    out: PredictionFrames = {}
    for raw in _require(doc, "frames", str(path)):
        frame_id = _require(raw, "frame_id", f"{path} frame")
        where = f"{path} frame '{frame_id}'"
        if frame_id in out:
            raise SchemaError(f"{where}: duplicate frame_id")
        preds = []
        for p in _require(raw, "triplet_detections", where):
            pred = TripletDetection(
                box=_box(_require(p, "box", where), where),
                instrument_id=int(_require(p, "instrument", where)),
                verb_id=int(_require(p, "verb", where)),
                target_id=int(_require(p, "target", where)),
                triplet_id=int(_require(p, "triplet", where)),
                score=float(_require(p, "score", where)))
            if vocab is not None:
                pred.validate(vocab)
            preds.append(pred)
        out[frame_id] = preds
    return out


def save_predictions(path, frames: PredictionFrames) -> None:
    doc = {
        "version": SCHEMA_VERSION,
        "frames": [
            {"frame_id": fid,
             "triplet_detections": [
                 {"box": p.box.as_list(), "instrument": p.instrument_id,
                  "verb": p.verb_id, "target": p.target_id,
                  "triplet": p.triplet_id, "score": p.score} for p in preds]}
            for fid, preds in frames.items()
        ],
    }
    _write_json(path, doc)
