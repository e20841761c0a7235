"""Losses and pseudo-label generation for mixed supervision.

Stage 1 trains target presence with class-balanced BCE. Stage 2 adds two
cross-entropies on the interaction graph: edge CE against the pseudo target
label and verb CE on the supervised edge. Pseudo labels come from the
frame-level triplet presence vector: a detected instrument inherits the
(verb, target) of the present triplet with its instrument class; ambiguous
frames are resolved by a seeded random draw (or "first" for determinism
studies), and unmatched instruments become (unlabeled, background).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import Tensor
import torch.nn.functional as F

from .datatypes import Detection, FrameAnnotation
from .errors import ConfigError
from .graph import EdgeSet
from .vocab import LabelVocabulary


def class_weights(annotations: Sequence[FrameAnnotation], n_targets: int) -> np.ndarray:
    """Inverse-frequency weights, mean 1 over classes that ever occur.

    n_c counts frames where target c is present. Classes never present get
    weight 0 and are masked out of the presence loss entirely.
    """
    counts = np.zeros(n_targets, dtype=np.float64)
    for frame in annotations:
        counts += np.asarray(frame.target_presence, dtype=np.float64)
    if counts.sum() == 0:
        raise ConfigError("target presence is all-zero; nothing to learn")
    included = counts > 0
    weights = np.zeros(n_targets, dtype=np.float64)
    weights[included] = counts.sum() / counts[included]
    weights[included] /= weights[included].mean()
    return weights


def target_bce(logits: Tensor, labels: Tensor, weights: Tensor) -> Tensor:
    """Class-balanced binary cross entropy over target presence logits.

    Per frame: -(1/N) * sum over unmasked classes of
    W_c * y_c * log sigmoid(x_c) + (1 - y_c) * log(1 - sigmoid(x_c)),
    then mean over the batch. The balancing weight applies to the positive
    term only; weight-0 (never-present) classes contribute neither term.
    """
    if logits.shape[-1] != weights.shape[-1]:
        raise ValueError("logit width must equal the class-weight length")
    if labels.shape != logits.shape:
        raise ValueError("labels and logits must have the same shape")
    labels = labels.to(logits.dtype)
    if not bool(((labels == 0) | (labels == 1)).all()):
        raise ValueError("presence labels must be binary")
    weights = weights.to(dtype=logits.dtype, device=logits.device)
    include = (weights > 0).to(logits.dtype)
    log_sig = -F.softplus(-logits)       # log sigmoid(x)
    log_one_minus = -F.softplus(logits)  # log(1 - sigmoid(x))
    per_class = include * (weights * labels * log_sig + (1 - labels) * log_one_minus)
    per_frame = -per_class.sum(dim=-1) / logits.shape[-1]
    return per_frame.mean()


@dataclass(frozen=True)
class PseudoInstanceLabel:
    instrument_index: int
    target_label: Optional[int]   # None when no matching triplet is present
    verb_label: int               # background id for unmatched instances

    @property
    def is_labeled(self) -> bool:
        return self.target_label is not None


def pseudo_labels(detections: Sequence[Detection], frame: FrameAnnotation,
                  vocab: LabelVocabulary, seed: int,
                  policy: str = "random") -> List[PseudoInstanceLabel]:
    """Per-detection (target, verb) assignments from frame-level presence.

    The random draw for ambiguous instruments is keyed on (seed, frame id,
    instance index) so a fixed seed reproduces assignments exactly while
    different epochs (different seeds) resample them.
    """
    if policy not in ("random", "first"):
        raise ConfigError(f"unknown pseudo_label_policy '{policy}'")
    present = frame.present_triplets()
    frame_key = zlib.crc32(frame.frame_id.encode("utf-8"))
    out = []
    for idx, det in enumerate(detections):
        matches = [t for t in present
                   if vocab.triplet_components(t)[0] == det.instrument_id]
        if not matches:
            out.append(PseudoInstanceLabel(idx, None, vocab.background_verb))
            continue
        if len(matches) == 1 or policy == "first":
            chosen = matches[0]
        else:
            rng = np.random.default_rng([seed, frame_key, idx])
            chosen = matches[int(rng.integers(len(matches)))]
        _, verb, target = vocab.triplet_components(chosen)
        out.append(PseudoInstanceLabel(idx, target, verb))
    return out


def _collect_terms(edges: EdgeSet, labels: Sequence[PseudoInstanceLabel],
                   edge_terms: List[Tensor], verb_terms: List[Tensor]) -> None:
    n = edges.n_dests
    for lab in labels:
        i = lab.instrument_index
        scores = edges.edge_scores[i * n:(i + 1) * n]
        if lab.is_labeled:
            j = lab.target_label
            edge_terms.append(torch.logsumexp(scores, dim=0) - scores[j])
        else:
            # Background verb supervises the edge decoding would read.
            j = int(np.argmax(scores.detach().cpu().numpy()))
        row = edges.verb_logits[i * n + j]
        verb_terms.append(torch.logsumexp(row, dim=0) - row[lab.verb_label])


def _mean_or_zero(terms: List[Tensor], like: Tensor) -> Tensor:
    if not terms:
        return like.new_zeros(())
    return torch.stack(terms).mean()


def graph_losses(edge_sets, labels, background_id: Optional[int] = None) -> Tuple[Tensor, Tensor]:
    """(L_e, L_v) averaged over contributing instances.

    Accepts a single EdgeSet with its label list, or parallel sequences of
    them (one per frame). Unlabeled instances are excluded from L_e; every
    instance contributes to L_v. Empty contributions give 0, not NaN.
    """
    if isinstance(edge_sets, EdgeSet):
        edge_sets, labels = [edge_sets], [labels]
    edge_terms: List[Tensor] = []
    verb_terms: List[Tensor] = []
    for edges, frame_labels in zip(edge_sets, labels):
        _collect_terms(edges, frame_labels, edge_terms, verb_terms)
    anchor = edge_sets[0].verb_logits if edge_sets else torch.zeros(1)
    return _mean_or_zero(edge_terms, anchor), _mean_or_zero(verb_terms, anchor)


@dataclass
class LossBundle:
    target: Tensor
    edge: Tensor
    verb: Tensor
    alpha: float = 1.0
    beta: float = 0.5

    @property
    def total(self) -> Tensor:
        return self.target + self.alpha * self.edge + self.beta * self.verb

    def detached(self) -> Dict[str, float]:
        return {"target": float(self.target.detach()), "edge": float(self.edge.detach()),
                "verb": float(self.verb.detach()), "total": float(self.total.detach())}
