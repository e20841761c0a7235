"""Small constructors shared across test modules."""

import numpy as np
import torch

import tripletdet as td


def box(x1, y1, x2, y2):
    return td.BoxXYXY(x1, y1, x2, y2)


def random_box(rng, lo=0.05, hi=0.95, min_side=0.08):
    x1 = rng.uniform(lo, hi - min_side)
    y1 = rng.uniform(lo, hi - min_side)
    x2 = rng.uniform(x1 + min_side, hi)
    y2 = rng.uniform(y1 + min_side, hi)
    return td.BoxXYXY(float(x1), float(y1), float(x2), float(y2))


def random_detections(rng, count, vocab):
    return [td.Detection(box=random_box(rng), confidence=1.0,
                         instrument_id=int(rng.integers(vocab.num_instruments)))
            for _ in range(count)]


def frame_with(vocab, frame_id, video_id, instances):
    """FrameAnnotation from (box, instrument, verb, target) tuples.

    Presence vectors are derived from the instances so the frame is
    self-consistent; verbs must come from the vocabulary's dictionary.
    """
    triplet_presence = [0] * vocab.num_triplets
    target_presence = [0] * vocab.num_targets
    gt = []
    for b, i, v, t in instances:
        tid = vocab.triplet_id(i, v, t)
        assert tid != td.INVALID_TRIPLET, "test fixture uses an out-of-dictionary triplet"
        gt.append(td.GtInstance(box=b, instrument_id=i, triplet_id=tid))
        triplet_presence[tid] = 1
        target_presence[t] = 1
    return td.FrameAnnotation(frame_id=frame_id, video_id=video_id,
                              target_presence=tuple(target_presence),
                              triplet_presence=tuple(triplet_presence),
                              gt_instances=tuple(gt))


def random_edge_set(rng, n_sources, n_dests, n_verb_logits, d_prime=4,
                    dtype=torch.float64, scale=3.0):
    n_edges = n_sources * n_dests
    scores = torch.as_tensor(rng.normal(0, scale, n_edges), dtype=dtype)
    verbs = torch.as_tensor(rng.normal(0, scale, (n_edges, n_verb_logits)),
                            dtype=dtype)
    feats = torch.zeros((n_edges, 2 * d_prime), dtype=dtype)
    return td.EdgeSet(edge_features=feats, edge_scores=scores,
                      verb_logits=verbs, n_sources=n_sources, n_dests=n_dests)


def lattice_box(rng):
    """Boxes on a coarse grid so random fixtures produce real IoU overlap."""
    x1 = int(rng.integers(0, 5)) / 10
    y1 = int(rng.integers(0, 5)) / 10
    w = int(rng.integers(2, 5)) / 10
    h = int(rng.integers(2, 5)) / 10
    return td.BoxXYXY(x1, y1, min(x1 + w, 1.0), min(y1 + h, 1.0))


def random_eval_fixture(rng, vocab):
    """A small multi-video annotation set plus noisy predictions.

    Predictions reuse ground-truth boxes and classes about half the time, so
    matching sees true positives, near misses, duplicates and
    out-of-dictionary (sentinel) triplets.
    """
    annotations, preds = [], {}
    for v in range(int(rng.integers(1, 4))):
        for f in range(int(rng.integers(1, 5))):
            frame_id = f"v{v}_f{f}"
            instances = []
            for k in rng.choice(vocab.num_triplets, size=int(rng.integers(0, 4)),
                                replace=False):
                i, verb, t = vocab.triplet_components(int(k))
                instances.append((lattice_box(rng), i, verb, t))
            frame = frame_with(vocab, frame_id, f"v{v}", instances)
            annotations.append(frame)

            dets = []
            for _ in range(int(rng.integers(0, 6))):
                if instances and rng.random() < 0.6:
                    b, i, verb, t = instances[int(rng.integers(len(instances)))]
                    if rng.random() < 0.3:
                        b = lattice_box(rng)
                    if rng.random() < 0.3:
                        verb = int(rng.integers(vocab.num_verbs))
                else:
                    b = lattice_box(rng)
                    i = int(rng.integers(vocab.num_instruments))
                    verb = int(rng.integers(vocab.num_verbs))
                    t = int(rng.integers(vocab.num_targets))
                dets.append(td.TripletDetection(
                    box=b, instrument_id=i, verb_id=verb, target_id=t,
                    triplet_id=vocab.triplet_id(i, verb, t),
                    score=float(rng.random())))
            preds[frame_id] = dets
    return annotations, preds


def oracle_predictions(annotations, vocab, score=1.0):
    """Ground-truth boxes echoed back as perfect predictions."""
    preds = {}
    for frame in annotations:
        dets = []
        for inst in frame.gt_instances or ():
            if inst.triplet_id == td.INVALID_TRIPLET:
                # idle instrument: right box and instrument, but components
                # outside the dictionary so triplet matching ignores it
                i = inst.instrument_id
                v, t = next((vv, tt) for vv in range(vocab.num_verbs)
                            for tt in range(vocab.num_targets)
                            if vocab.triplet_id(i, vv, tt) == td.INVALID_TRIPLET)
            else:
                i, v, t = vocab.triplet_components(inst.triplet_id)
            dets.append(td.TripletDetection(box=inst.box, instrument_id=i,
                                            verb_id=v, target_id=t,
                                            triplet_id=inst.triplet_id,
                                            score=score))
        preds[frame.frame_id] = dets
    return preds
