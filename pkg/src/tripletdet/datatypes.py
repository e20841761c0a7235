"""Annotation, detection and prediction data models.

All types are immutable after construction and validate their invariants
eagerly, so loaders and the synthetic generator can share one set of checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

from .errors import VocabularyError
from .vocab import INVALID_TRIPLET, LabelVocabulary


@dataclass(frozen=True)
class BoxXYXY:
    """Axis-aligned box in normalized image coordinates, x1 < x2 and y1 < y2."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) and 0.0 <= v <= 1.0 for v in vals):
            raise ValueError(f"box coordinates must lie in [0, 1]: {vals}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box: {vals}")

    def as_list(self) -> list:
        return [self.x1, self.y1, self.x2, self.y2]

    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass(frozen=True)
class GtInstance:
    """Ground-truth instrument instance; triplet_id is INVALID_TRIPLET when the
    instrument is present but not interacting."""

    box: BoxXYXY
    instrument_id: int
    triplet_id: int


@dataclass(frozen=True)
class FrameAnnotation:
    frame_id: str
    video_id: str
    target_presence: Tuple[int, ...]
    triplet_presence: Tuple[int, ...]
    gt_instances: Optional[Tuple[GtInstance, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "target_presence", tuple(int(x) for x in self.target_presence))
        object.__setattr__(self, "triplet_presence", tuple(int(x) for x in self.triplet_presence))
        if self.gt_instances is not None:
            object.__setattr__(self, "gt_instances", tuple(self.gt_instances))
        for name in ("target_presence", "triplet_presence"):
            vec = getattr(self, name)
            if any(x not in (0, 1) for x in vec):
                raise VocabularyError(f"frame {self.frame_id}: {name} must be binary")

    def validate(self, vocab: LabelVocabulary) -> "FrameAnnotation":
        if len(self.target_presence) != vocab.num_targets:
            raise VocabularyError(
                f"frame {self.frame_id}: target_presence length "
                f"{len(self.target_presence)} != {vocab.num_targets}")
        if len(self.triplet_presence) != vocab.num_triplets:
            raise VocabularyError(
                f"frame {self.frame_id}: triplet_presence length "
                f"{len(self.triplet_presence)} != {vocab.num_triplets}")
        for k, present in enumerate(self.triplet_presence):
            if present:
                _, _, t = vocab.triplet_components(k)
                if not self.target_presence[t]:
                    raise VocabularyError(
                        f"frame {self.frame_id}: triplet {k} present but its "
                        f"target {t} is absent from target_presence")
        for inst in self.gt_instances or ():
            if not (0 <= inst.instrument_id < vocab.num_instruments):
                raise VocabularyError(
                    f"frame {self.frame_id}: gt instrument id {inst.instrument_id} out of range")
            if inst.triplet_id != INVALID_TRIPLET:
                if not (0 <= inst.triplet_id < vocab.num_triplets):
                    raise VocabularyError(
                        f"frame {self.frame_id}: gt triplet id {inst.triplet_id} out of range")
                if not self.triplet_presence[inst.triplet_id]:
                    raise VocabularyError(
                        f"frame {self.frame_id}: gt instance triplet {inst.triplet_id} "
                        f"not marked in triplet_presence")
        return self

    def present_triplets(self) -> Tuple[int, ...]:
        return tuple(k for k, p in enumerate(self.triplet_presence) if p)


@dataclass(frozen=True)
class Detection:
    """One detected instrument instance, the bridge from any external detector."""

    box: BoxXYXY
    instrument_id: int
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.instrument_id < 0:
            raise VocabularyError(f"negative instrument id {self.instrument_id}")

    def validate(self, vocab: LabelVocabulary) -> "Detection":
        if self.instrument_id >= vocab.num_instruments:
            raise VocabularyError(f"instrument id {self.instrument_id} out of range "
                                  f"[0, {vocab.num_instruments})")
        return self


@dataclass(frozen=True)
class TripletDetection:
    """A localized triplet prediction: the pipeline's final output."""

    box: BoxXYXY
    instrument_id: int
    verb_id: int
    target_id: int
    triplet_id: int
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")

    def validate(self, vocab: LabelVocabulary) -> "TripletDetection":
        if not (0 <= self.instrument_id < vocab.num_instruments):
            raise VocabularyError(f"instrument id {self.instrument_id} out of range")
        if not (0 <= self.verb_id < vocab.num_verbs):
            raise VocabularyError(f"verb id {self.verb_id} out of range")
        if not (0 <= self.target_id < vocab.num_targets):
            raise VocabularyError(f"target id {self.target_id} out of range")
        if self.triplet_id != INVALID_TRIPLET:
            if vocab.triplet_components(self.triplet_id) != (
                    self.instrument_id, self.verb_id, self.target_id):
                raise VocabularyError(
                    f"triplet id {self.triplet_id} does not match components "
                    f"({self.instrument_id}, {self.verb_id}, {self.target_id})")
        return self


def detections_of(frames: Sequence[Sequence[Detection]], vocab: LabelVocabulary) -> None:
    """Validate nested detection lists against a vocabulary (vocabulary closure)."""
    for dets in frames:
        for d in dets:
            d.validate(vocab)
