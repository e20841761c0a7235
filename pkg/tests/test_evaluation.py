import dataclasses
import json

import numpy as np
import pytest

import tripletdet as td
from tripletdet.evaluation import (average_precision, evaluate_frames, iou,
                                   match_class, recall_at_end)

from helpers import box, frame_with, lattice_box, oracle_predictions, random_eval_fixture
from oracles import _ap_from_flags, nested_loop_evaluate


def det(b, i, v, t, vocab, score):
    return td.TripletDetection(box=b, instrument_id=i, verb_id=v, target_id=t,
                               triplet_id=vocab.triplet_id(i, v, t), score=score)


class TestIou:
    def test_identical_boxes(self):
        assert iou(box(0.1, 0.2, 0.6, 0.9), box(0.1, 0.2, 0.6, 0.9)) == 1.0

    def test_disjoint_boxes(self):
        assert iou(box(0.0, 0.0, 0.3, 0.3), box(0.5, 0.5, 0.9, 0.9)) == 0.0

    def test_touching_edges_count_as_disjoint(self):
        assert iou(box(0.0, 0.0, 0.5, 0.5), box(0.5, 0.0, 1.0, 0.5)) == 0.0

    def test_half_shifted_overlap_is_one_third(self):
        value = iou(box(0.0, 0.0, 0.5, 0.5), box(0.25, 0.0, 0.75, 0.5))
        assert value == pytest.approx(1.0 / 3.0, abs=1e-15)

    def test_symmetric(self, rng):
        from helpers import random_box
        for _ in range(20):
            a, b = random_box(rng), random_box(rng)
            assert iou(a, b) == iou(b, a)

    def test_accepts_plain_sequences(self):
        assert iou((0.0, 0.0, 1.0, 1.0), [0.0, 0.0, 1.0, 1.0]) == 1.0


class TestRankedMetrics:
    def test_single_true_positive(self):
        assert average_precision(np.array([True]), 1) == 1.0

    def test_false_positive_above_true_positive_halves_ap(self):
        assert average_precision(np.array([False, True]), 1) == 0.5

    def test_no_predictions(self):
        assert average_precision(np.zeros(0, dtype=bool), 3) == 0.0
        assert recall_at_end(np.zeros(0, dtype=bool), 3) == 0.0

    def test_no_ground_truth_rejected(self):
        with pytest.raises(ValueError):
            average_precision(np.array([True]), 0)
        with pytest.raises(ValueError):
            recall_at_end(np.array([True]), 0)

    def test_recall_counts_matched_fraction(self):
        assert recall_at_end(np.array([True, False, True]), 4) == 0.5


class TestMatching:
    def test_iou_at_threshold_counts_as_match(self):
        # pred-vs-gt IoU is exactly 0.5 here
        gt = {"f": [box(0.0, 0.0, 0.5, 0.5)]}
        preds = [(0.9, 0, "f", box(0.0, 0.0, 0.5, 0.25))]
        assert match_class(preds, gt, threshold=0.5).tolist() == [True]
        assert match_class(preds, gt, threshold=0.6).tolist() == [False]

    def test_each_ground_truth_claimed_once(self):
        gt = {"f": [box(0.2, 0.2, 0.6, 0.6)]}
        preds = [(0.9, 0, "f", box(0.2, 0.2, 0.6, 0.6)),
                 (0.8, 1, "f", box(0.2, 0.2, 0.6, 0.6)),
                 (0.7, 2, "f", box(0.2, 0.2, 0.6, 0.6))]
        assert match_class(preds, gt, 0.5).tolist() == [True, False, False]

    def test_higher_score_matches_first_regardless_of_list_order(self):
        gt = {"f": [box(0.2, 0.2, 0.6, 0.6)]}
        preds = [(0.3, 0, "f", box(0.2, 0.2, 0.6, 0.6)),
                 (0.9, 1, "f", box(0.2, 0.2, 0.6, 0.6))]
        # rank order follows score, so the 0.9 prediction is the TP
        assert match_class(preds, gt, 0.5).tolist() == [True, False]

    def test_score_ties_break_by_insertion_order(self):
        gt = {"f": [box(0.2, 0.2, 0.6, 0.6)]}
        preds = [(0.5, 7, "f", box(0.0, 0.0, 0.1, 0.1)),
                 (0.5, 3, "f", box(0.2, 0.2, 0.6, 0.6))]
        # insertion index 3 ranks first: FP consumes nothing, TP follows
        assert match_class(preds, gt, 0.5).tolist() == [True, False]


def single_frame_report(vocab, instances, dets, **kw):
    frame = frame_with(vocab, "f0", "v0", instances)
    return evaluate_frames({"f0": dets}, [frame], vocab, **kw)


class TestEvaluateFrames:
    def test_two_prediction_fixture_scores_fifty(self, vocab):
        i, v, t = vocab.triplet_components(0)
        gt_box = box(0.2, 0.2, 0.7, 0.7)
        report = single_frame_report(
            vocab, [(gt_box, i, v, t)],
            [det(box(0.0, 0.8, 0.1, 0.9), i, v, t, vocab, 0.9),
             det(gt_box, i, v, t, vocab, 0.8)])
        assert report.ap_ivt == 50.0
        assert report.ap_i == 50.0
        assert report.ar_ivt == 100.0

    def test_perfect_predictions_score_hundred(self, vocab, small_dataset):
        preds = oracle_predictions(small_dataset.annotations, vocab)
        report = evaluate_frames(preds, small_dataset.annotations, vocab)
        assert report.ap_i == 100.0 and report.ar_i == 100.0
        assert report.ap_ivt == 100.0 and report.ar_ivt == 100.0
        for mode in ("instrument", "triplet"):
            for cell in report.per_class[mode].values():
                assert cell["ap"] in (None, 100.0)

    def test_empty_predictions_score_zero(self, vocab, small_dataset):
        preds = {f.frame_id: [] for f in small_dataset.annotations}
        report = evaluate_frames(preds, small_dataset.annotations, vocab)
        assert report.ap_i == 0.0 and report.ar_i == 0.0
        assert report.ap_ivt == 0.0 and report.ar_ivt == 0.0

    def test_scores_only_matter_through_their_order(self, vocab):
        rng = np.random.default_rng(5)
        annotations, preds = random_eval_fixture(rng, vocab)
        scaled = {fid: [dataclasses.replace(d, score=d.score * 0.25) for d in dets]
                  for fid, dets in preds.items()}
        a = evaluate_frames(preds, annotations, vocab)
        b = evaluate_frames(scaled, annotations, vocab)
        assert a.to_dict() == b.to_dict()

    def test_duplicated_video_leaves_report_unchanged(self, vocab):
        rng = np.random.default_rng(6)
        annotations, preds = random_eval_fixture(rng, vocab)
        copies, pred_copies = [], {}
        for frame in annotations:
            fid = "copy_" + frame.frame_id
            copies.append(dataclasses.replace(frame, frame_id=fid,
                                              video_id="copy_" + frame.video_id))
            pred_copies[fid] = preds[frame.frame_id]
        a = evaluate_frames(preds, annotations, vocab)
        b = evaluate_frames({**preds, **pred_copies}, annotations + copies, vocab)
        assert (a.ap_i, a.ar_i, a.ap_ivt, a.ar_ivt) == (b.ap_i, b.ar_i, b.ap_ivt, b.ar_ivt)

    def test_top_ranked_true_positive_never_lowers_ap(self, vocab):
        for seed in range(8):
            rng = np.random.default_rng(200 + seed)
            annotations, preds = random_eval_fixture(rng, vocab)
            target = next((f for f in annotations if f.gt_instances), None)
            if target is None:
                continue
            before = evaluate_frames(preds, annotations, vocab)
            halved = {fid: [dataclasses.replace(d, score=d.score * 0.5) for d in dets]
                      for fid, dets in preds.items()}
            inst = target.gt_instances[0]
            i, v, t = vocab.triplet_components(inst.triplet_id)
            extra = td.TripletDetection(
                box=inst.box, instrument_id=i, verb_id=v, target_id=t,
                triplet_id=inst.triplet_id, score=1.0)
            halved[target.frame_id] = halved[target.frame_id] + [extra]
            after = evaluate_frames(halved, annotations, vocab)
            k = inst.triplet_id
            assert (after.per_class["triplet"][k]["ap"]
                    >= before.per_class["triplet"][k]["ap"])

    def test_wrong_verb_fails_triplet_match_but_not_instrument(self):
        vocab = td.LabelVocabulary(instruments=("grasper",), verbs=("grasp", "retract"),
                                   targets=("tissue",), triplets=((0, 0, 0), (0, 1, 0)))
        gt_box = box(0.2, 0.2, 0.7, 0.7)
        report = single_frame_report(vocab, [(gt_box, 0, 0, 0)],
                                     [det(gt_box, 0, 1, 0, vocab, 0.9)])
        assert report.ap_i == 100.0
        assert report.ap_ivt == 0.0

    def test_sentinel_predictions_only_participate_in_instrument_mode(self, vocab):
        i, v, t = vocab.triplet_components(0)
        bad_verb = (v + 1) % vocab.num_verbs
        assert vocab.triplet_id(i, bad_verb, t) == td.INVALID_TRIPLET
        gt_box = box(0.2, 0.2, 0.7, 0.7)
        report = single_frame_report(
            vocab, [(gt_box, i, v, t)],
            [det(gt_box, i, bad_verb, t, vocab, 0.9),   # sentinel, outranks
             det(gt_box, i, v, t, vocab, 0.8)])
        # instrument mode: the sentinel claims the box first -> top rank TP
        assert report.ap_i == 100.0
        # triplet mode: sentinel is classless, the real triplet still matches
        assert report.ap_ivt == 100.0

    def test_max_dets_caps_predictions_per_frame(self, vocab):
        i, v, t = vocab.triplet_components(0)
        boxes = [box(0.0, 0.0, 0.3, 0.3), box(0.5, 0.5, 0.9, 0.9)]
        dets = [det(box(0.0, 0.6, 0.2, 0.9), i, v, t, vocab, 0.9),
                det(boxes[0], i, v, t, vocab, 0.8),
                det(boxes[1], i, v, t, vocab, 0.7)]
        instances = [(b, i, v, t) for b in boxes]
        full = single_frame_report(vocab, instances, dets)
        capped = single_frame_report(vocab, instances, dets, max_dets=2)
        assert full.ap_ivt == 100 * _ap_from_flags([False, True, True], 2)
        assert full.ar_ivt == 100.0
        assert capped.ap_ivt == 25.0
        assert capped.ar_ivt == 50.0

    def test_max_dets_keeps_highest_scoring_detections(self, vocab):
        i, v, t = vocab.triplet_components(0)
        gt_box = box(0.2, 0.2, 0.7, 0.7)
        dets = [det(gt_box, i, v, t, vocab, 0.5),
                det(box(0.0, 0.8, 0.1, 0.9), i, v, t, vocab, 0.9)]
        report = single_frame_report(vocab, [(gt_box, i, v, t)], dets, max_dets=1)
        assert report.ap_ivt == 0.0  # only the 0.9 false positive survives

    def test_stray_prediction_frame_rejected(self, vocab, small_dataset):
        preds = oracle_predictions(small_dataset.annotations, vocab)
        preds["no_such_frame"] = []
        with pytest.raises(td.EvaluationError, match="no_such_frame"):
            evaluate_frames(preds, small_dataset.annotations, vocab)

    def test_matches_nested_loop_oracle_exactly(self, vocab):
        for seed in range(12):
            rng = np.random.default_rng(400 + seed)
            annotations, preds = random_eval_fixture(rng, vocab)
            report = evaluate_frames(preds, annotations, vocab)
            for mode, (ap, ar) in (("instrument", (report.ap_i, report.ar_i)),
                                   ("triplet", (report.ap_ivt, report.ar_ivt))):
                o_ap, o_ar, o_class_ap, o_class_ar = nested_loop_evaluate(
                    preds, annotations, vocab, mode)
                assert ap == o_ap and ar == o_ar
                for c, cell in report.per_class[mode].items():
                    assert cell["ap"] == o_class_ap[c]
                    assert cell["ar"] == o_class_ar[c]


class TestReport:
    def test_structure_and_serialization(self, vocab, tmp_path):
        rng = np.random.default_rng(9)
        annotations, preds = random_eval_fixture(rng, vocab)
        report = evaluate_frames(preds, annotations, vocab)

        d = report.to_dict()
        assert set(d) == {"AP_I", "AR_I", "AP_IVT", "AR_IVT", "per_class", "per_video"}
        assert set(d["per_class"]) == {"instrument", "triplet"}
        assert len(d["per_class"]["triplet"]) == vocab.num_triplets
        for row in report.per_video.values():
            assert set(row) == {"ap_i", "ar_i", "ap_ivt", "ar_ivt"}

        path = tmp_path / "report.json"
        report.save(path)
        assert json.loads(path.read_text())["AP_I"] == d["AP_I"]

        table = report.format_table()
        assert "AP_IVT" in table
        for vid in report.per_video:
            assert vid in table

    def test_evaluate_reads_files(self, vocab, small_dataset, tmp_path):
        from tripletdet.dataio import save_annotations, save_predictions
        ann_path = tmp_path / "ann.json"
        pred_path = tmp_path / "pred.json"
        save_annotations(ann_path, vocab, small_dataset.annotations)
        save_predictions(pred_path, oracle_predictions(small_dataset.annotations, vocab))
        report = td.evaluate(pred_path, ann_path)
        assert report.ap_ivt == 100.0
