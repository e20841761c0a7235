"""Turn edge sets into final triplet detections.

Per instrument instance: softmax over its edge scores picks the target
(argmax, lowest index on ties), then softmax over the chosen edge's verb
logits picks the verb. The detection score is the product of the two
probabilities. An argmax verb equal to the background class suppresses the
instance unless ``emit_background`` is set, in which case the best
non-background verb is used instead. Tuples absent from the triplet
dictionary get the sentinel triplet id -1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import torch

from .config import EvalConfig
from .datatypes import Detection, TripletDetection
from .graph import EdgeSet
from .model import TripletDetector, images_to_tensor
from .vocab import INVALID_TRIPLET, LabelVocabulary


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


@dataclass(frozen=True)
class DecodedAssociation:
    instrument_index: int
    target_id: int
    verb_id: int
    edge_prob: float
    verb_prob: float

    @property
    def score(self) -> float:
        return self.edge_prob * self.verb_prob


def decode_edge_set(edges: EdgeSet, vocab: LabelVocabulary,
                    emit_background: bool = False) -> List[Optional[DecodedAssociation]]:
    """One association (or None for suppressed instances) per source node."""
    scores = edges.edge_scores.detach().cpu().numpy().astype(np.float64)
    verb_logits = edges.verb_logits.detach().cpu().numpy().astype(np.float64)
    n = edges.n_dests
    out: List[Optional[DecodedAssociation]] = []
    for i in range(edges.n_sources):
        edge_p = _softmax(scores[i * n:(i + 1) * n])
        j = int(np.argmax(edge_p))                      # first max = lowest index
        verb_p = _softmax(verb_logits[i * n + j])
        k = int(np.argmax(verb_p))
        if k == vocab.background_verb:
            if not emit_background:
                out.append(None)
                continue
            k = int(np.argmax(verb_p[:vocab.num_verbs]))
        out.append(DecodedAssociation(instrument_index=i, target_id=j, verb_id=k,
                                      edge_prob=float(edge_p[j]),
                                      verb_prob=float(verb_p[k])))
    return out


def decode_frame(edges: EdgeSet, detections: List[Detection], vocab: LabelVocabulary,
                 emit_background: bool = False,
                 drop_invalid: bool = False) -> List[TripletDetection]:
    if edges.n_sources != len(detections):
        raise ValueError("edge set and detection list disagree on instance count")
    results = []
    for assoc in decode_edge_set(edges, vocab, emit_background):
        if assoc is None:
            continue
        det = detections[assoc.instrument_index]
        triplet = vocab.triplet_id(det.instrument_id, assoc.verb_id, assoc.target_id)
        if triplet == INVALID_TRIPLET and drop_invalid:
            continue
        results.append(TripletDetection(
            box=det.box, instrument_id=det.instrument_id, verb_id=assoc.verb_id,
            target_id=assoc.target_id, triplet_id=triplet, score=assoc.score))
    return results


def predict_frames(model: TripletDetector, images: np.ndarray, frame_ids: List[str],
                   detections: Dict[str, List[Detection]],
                   eval_cfg: Optional[EvalConfig] = None, batch_size: int = 32,
                   device: str = "cpu") -> Dict[str, List[TripletDetection]]:
    """Batched inference over a frame stack; returns predictions keyed by frame id.

    Frames missing from ``detections`` are treated as instrument-free.
    """
    eval_cfg = eval_cfg or EvalConfig()
    model.eval()
    preds: Dict[str, List[TripletDetection]] = {}
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        for lo in range(0, len(frame_ids), batch_size):
            ids = frame_ids[lo:lo + batch_size]
            dets = [detections.get(fid, []) for fid in ids]
            batch = images_to_tensor(images[lo:lo + len(ids)], device=device, dtype=dtype)
            out = model(batch, dets)
            for fid, edge_set, frame_dets in zip(ids, out.edge_sets, dets):
                preds[fid] = decode_frame(edge_set, frame_dets, model.vocab,
                                          emit_background=eval_cfg.emit_background,
                                          drop_invalid=eval_cfg.drop_invalid_triplets)
    return preds
