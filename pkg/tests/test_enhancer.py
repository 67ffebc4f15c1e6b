"""Match counting, affine weighting, gamma schedules, and insertion."""

from __future__ import annotations

import numpy as np
import pytest

from trackcast import (
    Box3D,
    EnhancerConfig,
    ForecastSet,
    Frame,
    INSERTED,
    TEACHER,
    compute_weights,
    enhance_frame,
    find_unmatched,
    gamma_schedule,
    match_counts,
)
from trackcast.enhancer import _insertion_nms

from .oracles import brute_match_counts, brute_unmatched, random_box


def box(x, y, cls=0, yaw=0.0):
    return Box3D(x, y, 0.85, 4.5, 2.0, 1.7, yaw, cls, 0.9)


def fset(context, target, *boxes):
    return ForecastSet(context, target, tuple((i, b) for i, b in enumerate(boxes)))


def test_match_counts_identical_boxes():
    lab = box(0.0, 0.0)
    sets = [fset(c, 5, lab) for c in (2, 3, 4)]
    assert match_counts([lab], sets, 0.3) == [3]


def test_match_counts_below_threshold():
    lab = box(0.0, 0.0)
    far = box(4.3, 0.0)  # overlap 0.2/8.8 ~= 0.023
    assert match_counts([lab], [fset(4, 5, far)], 0.3) == [0]


def test_match_counts_one_per_context_set():
    # Two overlapping forecasts in one set still count once.
    lab = box(0.0, 0.0)
    s = fset(4, 5, box(0.1, 0.0), box(-0.1, 0.0))
    assert match_counts([lab], [s], 0.3) == [1]


def test_match_counts_class_aware():
    lab = box(0.0, 0.0, cls=0)
    wrong = box(0.0, 0.0, cls=1)
    assert match_counts([lab], [fset(4, 5, wrong)], 0.3) == [0]


def test_match_counts_against_brute_force():
    rng = np.random.default_rng(13)
    for _ in range(25):
        labels = [random_box(rng, center_span=6.0, class_id=int(rng.integers(3)))
                  for _ in range(rng.integers(0, 6))]
        sets = []
        for c in range(int(rng.integers(1, 5))):
            boxes = [random_box(rng, center_span=6.0, class_id=int(rng.integers(3)))
                     for _ in range(rng.integers(0, 5))]
            sets.append(ForecastSet(c, 10, tuple(enumerate(boxes))))
        tau = float(rng.uniform(0.05, 0.6))
        assert match_counts(labels, sets, tau) == brute_match_counts(labels, sets, tau)


def test_compute_weights_affine():
    assert compute_weights([0], 1.0, 0.25) == [1.0]
    assert compute_weights([3], 1.0, 0.25) == [1.75]
    assert compute_weights([0, 1, 2, 5], 0.5, 0.1) == [0.5, 0.6, 0.7, 1.0]
    # beta 0 degenerates to the constant alpha
    assert compute_weights([0, 4, 9], 1.0, 0.0) == [1.0, 1.0, 1.0]
    with pytest.raises(ValueError):
        compute_weights([-1], 1.0, 0.25)


def test_weight_monotone_in_count():
    counts = list(np.random.default_rng(2).integers(0, 8, 30))
    weights = compute_weights(counts, 1.0, 0.25)
    order = np.argsort(counts, kind="stable")
    sorted_w = [weights[i] for i in order]
    assert sorted_w == sorted(sorted_w)


def test_find_unmatched_basics():
    lab = box(0.0, 0.0)
    same = fset(4, 5, lab)
    assert find_unmatched([same], [lab], 0.1) == []
    isolated = box(100.0, 100.0)
    out = find_unmatched([fset(4, 5, isolated)], [lab], 0.1)
    assert out == [(4, isolated)]
    # with no labels at all everything is unmatched
    out = find_unmatched([fset(4, 5, lab, isolated)], [], 0.1)
    assert [b for _, b in out] == [lab, isolated]


def test_find_unmatched_class_aware():
    lab = box(0.0, 0.0, cls=0)
    other = box(0.0, 0.0, cls=1)  # same pose, different class
    out = find_unmatched([fset(4, 5, other)], [lab], 0.1)
    assert out == [(4, other)]


def test_find_unmatched_against_brute_force():
    rng = np.random.default_rng(13)
    for _ in range(25):
        labels = [random_box(rng, center_span=6.0, class_id=int(rng.integers(3)))
                  for _ in range(rng.integers(0, 5))]
        sets = []
        for c in range(int(rng.integers(1, 4))):
            boxes = [random_box(rng, center_span=6.0, class_id=int(rng.integers(3)))
                     for _ in range(rng.integers(0, 5))]
            sets.append(ForecastSet(c, 10, tuple(enumerate(boxes))))
        tau = float(rng.uniform(0.05, 0.4))
        assert find_unmatched(sets, labels, tau) == brute_unmatched(sets, labels, tau)


def test_gamma_schedule_frozen():
    sched = gamma_schedule(5, 0.8, 0.2)
    assert np.allclose(sched, [0.8, 0.65, 0.5, 0.35, 0.2])
    assert gamma_schedule(1, 0.8, 0.2) == [0.8]
    assert gamma_schedule(4, 0.5, 0.5) == [0.5, 0.5, 0.5, 0.5]
    assert np.allclose(gamma_schedule(2, 0.8, 0.2), [0.8, 0.2])


def test_gamma_schedule_monotone_non_increasing():
    for t in range(1, 15):
        sched = gamma_schedule(t, 0.9, 0.15)
        assert all(a >= b for a, b in zip(sched, sched[1:]))
        assert sched[0] == 0.9
        if t > 1:
            assert abs(sched[-1] - 0.15) < 1e-12
    with pytest.raises(ValueError):
        gamma_schedule(0, 0.8, 0.2)


def test_insertion_nms_keeps_most_recent_context():
    recent = box(0.0, 0.0)
    older = box(0.2, 0.0)  # heavy overlap with `recent`
    kept = _insertion_nms([(2, older), (4, recent)], 0.3)
    assert kept == [(4, recent)]


def test_insertion_nms_keeps_disjoint_and_cross_class():
    a = box(0.0, 0.0, cls=0)
    b = box(0.0, 0.0, cls=1)  # same pose, other class: both kept
    c = box(50.0, 0.0, cls=0)
    kept = _insertion_nms([(4, a), (4, b), (3, c)], 0.3)
    assert len(kept) == 3


def test_insertion_nms_idempotent():
    rng = np.random.default_rng(29)
    cands = [(int(rng.integers(0, 5)),
              random_box(rng, center_span=8.0, class_id=int(rng.integers(2))))
             for _ in range(30)]
    once = _insertion_nms(cands, 0.3)
    twice = _insertion_nms(once, 0.3)
    assert once == twice


def test_config_validation():
    with pytest.raises(ValueError):
        EnhancerConfig(tau_min_iou=1.5)
    with pytest.raises(ValueError):
        EnhancerConfig(alpha=0.0)
    with pytest.raises(ValueError):
        EnhancerConfig(beta=-0.5)
    with pytest.raises(ValueError):
        EnhancerConfig(gamma_min=0.9, gamma_max=0.4)
    with pytest.raises(ValueError):
        EnhancerConfig(gamma_min=0.0)


def test_enhance_no_forecasts_gives_alpha_weights():
    frame = Frame("s", 5, 2.5, (box(0.0, 0.0), box(20.0, 0.0)))
    out = enhance_frame(frame, (), EnhancerConfig())
    assert [l.weight for l in out.labels] == [1.0, 1.0]
    assert all(l.origin == TEACHER for l in out.labels)
    assert out.match_counts == (0, 0)
    assert out.inserted_labels == ()


def test_enhance_composition_example():
    # One corroborated label and one isolated forecast from context 4.
    lab = box(0.0, 0.0)
    iso = box(60.0, 0.0)
    frame = Frame("s", 5, 2.5, (lab,))
    sets = (fset(4, 5, lab, iso),)
    out = enhance_frame(frame, sets, EnhancerConfig())
    teacher = out.teacher_labels
    inserted = out.inserted_labels
    assert len(teacher) == 1 and len(inserted) == 1
    assert teacher[0].weight == 1.25           # alpha + beta * 1
    assert inserted[0].weight == 0.8           # gamma_max at age 1
    assert inserted[0].origin == INSERTED
    assert inserted[0].context_frame == 4
    assert inserted[0].box == iso


def test_enhance_gamma_depends_on_context_age():
    lab = box(0.0, 0.0)
    iso_old = box(60.0, 0.0)
    iso_new = box(-60.0, 0.0)
    frame = Frame("s", 10, 5.0, (lab,))
    sets = (fset(5, 10, iso_old), fset(9, 10, iso_new))
    out = enhance_frame(frame, sets, EnhancerConfig())
    by_context = {l.context_frame: l.weight for l in out.inserted_labels}
    # oldest age present is 5, so the schedule spans [0.8 .. 0.2] over 5 slots
    sched = gamma_schedule(5, 0.8, 0.2)
    assert by_context[9] == sched[0]
    assert by_context[5] == sched[4]


def test_enhance_rejects_wrong_target():
    frame = Frame("s", 5, 2.5, (box(0.0, 0.0),))
    with pytest.raises(ValueError):
        enhance_frame(frame, (fset(3, 4, box(1.0, 0.0)),), EnhancerConfig())


def test_enhance_insertion_can_be_disabled():
    lab = box(0.0, 0.0)
    iso = box(60.0, 0.0)
    frame = Frame("s", 5, 2.5, (lab,))
    sets = (fset(4, 5, lab, iso),)
    cfg = EnhancerConfig(enable_insertion=False)
    out = enhance_frame(frame, sets, cfg)
    assert out.inserted_labels == ()
    assert out.teacher_labels[0].weight == 1.25  # weighting still applies


def test_enhance_partition_property():
    # With tau_max <= tau_min no forecast box is both matched and inserted.
    rng = np.random.default_rng(31)
    cfg = EnhancerConfig()
    for _ in range(15):
        labels = tuple(random_box(rng, center_span=7.0, class_id=int(rng.integers(2)))
                       for _ in range(rng.integers(1, 5)))
        frame = Frame("s", 6, 3.0, labels)
        sets = []
        for c in range(2, 6):
            boxes = tuple(enumerate(
                random_box(rng, center_span=7.0, class_id=int(rng.integers(2)))
                for _ in range(rng.integers(0, 4))))
            sets.append(ForecastSet(c, 6, boxes))
        out = enhance_frame(frame, sets, cfg)
        matched = brute_match_counts(labels, sets, cfg.tau_min_iou)
        inserted_boxes = {(l.box.x, l.box.y) for l in out.inserted_labels}
        # every inserted box must clear the unmatched test by brute force
        brute = {(b.x, b.y) for _, b in brute_unmatched(sets, labels, cfg.tau_max_iou)}
        assert inserted_boxes <= brute
        assert len(out.teacher_labels) == len(labels)
        assert list(out.match_counts) == matched


def test_enhance_teacher_labels_keep_frame_order():
    labels = tuple(box(5.0 * i, 0.0) for i in range(4))
    frame = Frame("s", 5, 2.5, labels)
    out = enhance_frame(frame, (), EnhancerConfig())
    assert tuple(l.box for l in out.teacher_labels) == labels
