"""Matching, precision/recall, AP, and the match-count bucket analysis."""

from __future__ import annotations

import csv

import numpy as np
import pytest

from trackcast import (
    Box3D,
    BucketReport,
    EnhancedFrame,
    INSERTED,
    MatchCriterion,
    TEACHER,
    WeightedLabel,
    average_precision,
    bucket_report,
    match_frame,
    pr_curve,
    precision_recall,
)
from trackcast.evaluation import (
    ap_from_ranked,
    ranked_detections,
    write_bucket_csv,
    write_metrics_csv,
)
from trackcast.simulator import FrameTruth, GtObject

from .oracles import greedy_center_match

CRIT = MatchCriterion()  # 2 m center distance


def box(x, y, cls=0, score=0.9):
    return Box3D(x, y, 0.85, 4.5, 2.0, 1.7, 0.0, cls, score)


def test_criterion_validation():
    MatchCriterion("bev_iou", 0.5)
    with pytest.raises(ValueError):
        MatchCriterion("volumetric", 0.5)
    with pytest.raises(ValueError):
        MatchCriterion("center_distance", 0.0)
    with pytest.raises(ValueError):
        MatchCriterion("bev_iou", 1.5)


def test_criterion_matches():
    assert CRIT.matches(box(0, 0), box(1.9, 0))
    assert CRIT.matches(box(0, 0), box(2.0, 0))     # boundary included
    assert not CRIT.matches(box(0, 0), box(2.1, 0))
    assert not CRIT.matches(box(0, 0), box(0, 0, cls=1))
    iou_crit = MatchCriterion("bev_iou", 0.5)
    assert iou_crit.matches(box(0, 0), box(0.5, 0))
    assert not iou_crit.matches(box(0, 0), box(3.5, 0))


def test_match_frame_one_to_one():
    preds = [box(0.0, 0.0), box(0.5, 0.0)]
    gts = [box(0.2, 0.0)]
    r = match_frame(preds, gts, CRIT)
    # first pred takes the only gt, second becomes a false positive
    assert r.tp_pairs == ((0, 0),)
    assert r.fp_indices == (1,)
    assert r.fn_indices == ()


def test_match_frame_prefers_nearest_gt():
    preds = [box(0.0, 0.0)]
    gts = [box(1.5, 0.0), box(0.3, 0.0)]
    r = match_frame(preds, gts, CRIT)
    assert r.tp_pairs == ((0, 1),)
    assert r.fn_indices == (0,)


def test_match_frame_agrees_with_loop_oracle():
    rng = np.random.default_rng(23)
    for _ in range(40):
        preds = [box(float(x), float(y), cls=int(rng.integers(2)))
                 for x, y in rng.uniform(-10, 10, size=(rng.integers(0, 8), 2))]
        gts = [box(float(x), float(y), cls=int(rng.integers(2)))
               for x, y in rng.uniform(-10, 10, size=(rng.integers(0, 8), 2))]
        r = match_frame(preds, gts, CRIT)
        oracle = greedy_center_match(preds, gts, CRIT.threshold)
        assert list(r.tp_pairs) == oracle
        # structural sanity
        assert len(r.tp_pairs) + len(r.fp_indices) == len(preds)
        assert len(r.tp_pairs) + len(r.fn_indices) == len(gts)
        for pi, gi in r.tp_pairs:
            assert CRIT.matches(preds[pi], gts[gi])


def test_precision_recall_frozen():
    # One frame: 4 predictions, 3 hit; 5 ground truths, 2 unmatched.
    preds = [box(0, 0), box(10, 0), box(20, 0), box(40, 0)]
    gts = [box(0.5, 0), box(10.5, 0), box(20.5, 0), box(30, 0), box(35, 0)]
    p, r = precision_recall([match_frame(preds, gts, CRIT)])
    assert p == 0.75
    assert r == 0.6


def test_precision_recall_undefined_cases():
    p, r = precision_recall([match_frame([], [], CRIT)])
    assert p is None and r is None
    p, r = precision_recall([match_frame([box(0, 0)], [], CRIT)])
    assert p == 0.0 and r is None
    p, r = precision_recall([match_frame([], [box(0, 0)], CRIT)])
    assert p is None and r == 0.0


def test_ap_hand_computed():
    # Five predictions ranked by score: TP, FP, TP, TP, FP over 4 GT.
    ranked = [(0.9, True), (0.8, False), (0.7, True), (0.6, True), (0.5, False)]
    # precision at recalls 1/4, 2/4, 3/4: 1.0, then 2/3 -> envelope 0.75, 0.75
    # AP = 0.25*1.0 + 0.25*0.75 + 0.25*0.75 = 0.625
    ap = ap_from_ranked(ranked, 4)
    assert abs(ap - 0.625) < 1e-12


def test_ap_perfect_and_empty():
    assert ap_from_ranked([(0.9, True), (0.8, True)], 2) == 1.0
    assert ap_from_ranked([], 0) is None
    assert ap_from_ranked([(0.9, False)], 2) == 0.0


def test_ap_monotone_under_added_top_fp():
    rng = np.random.default_rng(31)
    for _ in range(20):
        n = int(rng.integers(2, 15))
        ranked = sorted(((float(rng.uniform(0, 0.9)), bool(rng.uniform() < 0.6))
                         for _ in range(n)), key=lambda t: -t[0])
        n_gt = max(sum(t for _, t in ranked), 1)
        base = ap_from_ranked(ranked, n_gt)
        worse = [(0.99, False)] + ranked
        assert ap_from_ranked(worse, n_gt) <= base + 1e-12


def test_ranked_detections_orders_by_score():
    preds = [[box(0, 0, score=0.5), box(10, 0, score=0.9)]]
    gts = [[box(0, 0), box(10, 0)]]
    ranked, n_gt = ranked_detections(preds, gts, CRIT)
    assert n_gt == 2
    assert [s for s, _ in ranked] == [0.9, 0.5]
    assert all(tp for _, tp in ranked)


def test_ranked_detections_class_filter():
    preds = [[box(0, 0, cls=0, score=0.9), box(10, 0, cls=1, score=0.8)]]
    gts = [[box(0, 0, cls=0), box(10, 0, cls=1)]]
    ranked, n_gt = ranked_detections(preds, gts, CRIT, class_id=1)
    assert n_gt == 1
    assert ranked == [(0.8, True)]


def test_average_precision_gt_vs_itself_is_one():
    rng = np.random.default_rng(37)
    frames = []
    for _ in range(5):
        frames.append([box(float(x), float(y), cls=int(rng.integers(3)),
                           score=float(rng.uniform(0.5, 1.0)))
                       for x, y in rng.uniform(-50, 50, size=(6, 2))])
    for cid in (0, 1, 2, None):
        ap = average_precision(frames, frames, CRIT, cid)
        if ap is not None:
            assert ap == 1.0


def test_pr_curve_points():
    ranked = [(0.9, True), (0.8, False), (0.7, True)]
    pts = pr_curve(ranked, 2)
    assert pts == [(0.9, 0.5, 1.0), (0.8, 0.5, 0.5), (0.7, 1.0, 2.0 / 3.0)]


def wl(b, weight=1.0, origin=TEACHER, context=None):
    return WeightedLabel(b, weight, origin, context)


def truth_frame(idx, objs):
    return FrameTruth(idx, idx * 0.5, tuple(objs), ())


def test_bucket_report_counts_and_precision():
    # Frame 0: two teacher labels, counts 0 and 3; only the second is near GT.
    gt = box(0.0, 0.0)
    enh = EnhancedFrame(0, (wl(box(50.0, 0.0)), wl(box(0.3, 0.0), 1.75)), (0, 3))
    tf = truth_frame(0, [GtObject(0, True, gt)])
    rep = bucket_report([enh], [tf], CRIT)
    assert rep.buckets[0].support == 1 and rep.buckets[0].precise == 0
    assert rep.buckets[3].support == 1 and rep.buckets[3].precise == 1
    assert rep.teacher_precision == 0.5
    assert rep.teacher_recall == 1.0


def test_bucket_report_insertion_recovery():
    # Agent 7 detected in frames 0-1, missed in frame 2 where an inserted
    # label covers it: counts as trackable and recovered.
    g = box(0.0, 0.0)
    frames = [
        EnhancedFrame(0, (wl(g),), (0,)),
        EnhancedFrame(1, (wl(g),), (0,)),
        EnhancedFrame(2, (wl(box(0.5, 0.0), 0.8, INSERTED, 1),), ()),
    ]
    truths = [
        truth_frame(0, [GtObject(7, True, g)]),
        truth_frame(1, [GtObject(7, True, g)]),
        truth_frame(2, [GtObject(7, False, g)]),
    ]
    rep = bucket_report(frames, truths, CRIT, min_context=2)
    assert rep.missed_trackable == 1
    assert rep.missed_recovered == 1
    assert rep.inserted_only_covered == 1
    assert rep.enhanced_recall == 1.0
    assert rep.teacher_recall == 2.0 / 3.0


def test_bucket_report_misses_without_history_not_trackable():
    g = box(0.0, 0.0)
    frames = [EnhancedFrame(0, (), ()), EnhancedFrame(1, (wl(g),), (0,))]
    truths = [truth_frame(0, [GtObject(7, False, g)]),
              truth_frame(1, [GtObject(7, True, g)])]
    rep = bucket_report(frames, truths, CRIT, min_context=2)
    assert rep.missed_trackable == 0


def test_bucket_report_merge_equals_single_pass():
    rng = np.random.default_rng(41)

    def random_chunk(offset):
        frames, truths = [], []
        for i in range(4):
            gt = [GtObject(a, bool(rng.uniform() < 0.7),
                           box(float(rng.uniform(-30, 30)), float(rng.uniform(-30, 30))))
                  for a in range(3)]
            labels = tuple(wl(box(float(rng.uniform(-30, 30)),
                                  float(rng.uniform(-30, 30))))
                           for _ in range(rng.integers(0, 4)))
            frames.append(EnhancedFrame(offset + i, labels,
                                        tuple(int(rng.integers(0, 4))
                                              for _ in labels)))
            truths.append(truth_frame(offset + i, gt))
        return frames, truths

    f1, t1 = random_chunk(0)
    f2, t2 = random_chunk(0)
    merged = BucketReport()
    bucket_report(f1, t1, CRIT, report=merged)
    bucket_report(f2, t2, CRIT, report=merged)
    # merging two separate reports must agree
    r1 = bucket_report(f1, t1, CRIT)
    r2 = bucket_report(f2, t2, CRIT)
    r1.merge(r2)
    assert r1 == merged


def test_bucket_report_frame_mismatch_rejected():
    with pytest.raises(ValueError):
        bucket_report([EnhancedFrame(0, (), ())], [truth_frame(1, [])], CRIT)


def test_csv_writers(tmp_path):
    rep = bucket_report(
        [EnhancedFrame(0, (wl(box(0.0, 0.0)),), (2,))],
        [truth_frame(0, [GtObject(0, True, box(0.1, 0.0))])], CRIT)
    bpath = tmp_path / "buckets.csv"
    write_bucket_csv(bpath, rep)
    rows = list(csv.reader(open(bpath)))
    assert rows[0] == ["match_count", "support", "precision"]
    assert rows[1] == ["2", "1", "1.0"]

    mpath = tmp_path / "metrics.csv"
    write_metrics_csv(mpath, [("ap", "car", 2.0, 0.5), ("recall", None, 2.0, None)])
    rows = list(csv.reader(open(mpath)))
    assert rows[0] == ["metric", "class", "threshold", "value"]
    assert rows[1] == ["ap", "car", "2.0", "0.5"]
    assert rows[2] == ["recall", "", "2.0", ""]
