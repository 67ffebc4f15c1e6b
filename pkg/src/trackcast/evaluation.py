"""Label quality metrics against simulator ground truth.

Two matching styles serve two questions:

* detection metrics (precision / recall / AP) use the standard greedy
  one-to-one assignment in score order, and
* the match-count bucket analysis asks per label "does this sit on a real
  object?" and per object "did any label cover it?", without the one-to-one
  constraint -- duplicates are a separate error mode from hallucinations.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .geometry import bev_iou
from .model import Box3D, EnhancedFrame, WeightedLabel, class_name
from .simulator import FrameTruth

CENTER_DISTANCE = "center_distance"
BEV_IOU = "bev_iou"


@dataclass(frozen=True)
class MatchCriterion:
    """What counts as 'the same object': a distance gate or an IoU floor."""

    kind: str = CENTER_DISTANCE
    threshold: float = 2.0

    def __post_init__(self) -> None:
        if self.kind not in (CENTER_DISTANCE, BEV_IOU):
            raise ValueError(f"unknown criterion kind {self.kind!r}")
        if self.kind == CENTER_DISTANCE and not self.threshold > 0.0:
            raise ValueError("distance threshold must be positive")
        if self.kind == BEV_IOU and not (0.0 < self.threshold <= 1.0):
            raise ValueError("IoU threshold must lie in (0, 1]")

    def matches(self, a: Box3D, b: Box3D) -> bool:
        if a.class_id != b.class_id:
            return False
        if self.kind == CENTER_DISTANCE:
            return math.hypot(a.x - b.x, a.y - b.y) <= self.threshold
        return bev_iou(a, b) >= self.threshold

    def affinity(self, a: Box3D, b: Box3D) -> float:
        """Higher is better; used to break ties among admissible matches."""
        if self.kind == CENTER_DISTANCE:
            return -math.hypot(a.x - b.x, a.y - b.y)
        return bev_iou(a, b)


def _as_box(pred: Box3D | WeightedLabel) -> Box3D:
    return pred.box if isinstance(pred, WeightedLabel) else pred


@dataclass(frozen=True)
class MatchResult:
    """Greedy one-to-one assignment outcome for a single frame."""

    tp_pairs: tuple[tuple[int, int], ...]
    fp_indices: tuple[int, ...]
    fn_indices: tuple[int, ...]

    @property
    def n_tp(self) -> int:
        return len(self.tp_pairs)


def match_frame(preds: Sequence[Box3D | WeightedLabel], gts: Sequence[Box3D],
                crit: MatchCriterion) -> MatchResult:
    """Greedy one-to-one matching in the given prediction order.

    Callers pass predictions already ranked (by score or weight, their
    choice).  Each prediction takes the best still-unmatched ground-truth box
    of its class satisfying the criterion: nearest under a distance gate,
    highest IoU under an IoU floor.
    """
    taken: set[int] = set()
    tp: list[tuple[int, int]] = []
    fp: list[int] = []
    for i, pred in enumerate(preds):
        box = _as_box(pred)
        best_j = -1
        best_aff = -math.inf
        for j, gt in enumerate(gts):
            if j in taken or gt.class_id != box.class_id:
                continue
            if not crit.matches(box, gt):
                continue
            aff = crit.affinity(box, gt)
            if aff > best_aff:
                best_aff = aff
                best_j = j
        if best_j >= 0:
            taken.add(best_j)
            tp.append((i, best_j))
        else:
            fp.append(i)
    fn = tuple(j for j in range(len(gts)) if j not in taken)
    return MatchResult(tuple(tp), tuple(fp), fn)


def precision_recall(results: Iterable[MatchResult]) -> tuple[float | None, float | None]:
    """Aggregate precision and recall; None where the ratio is undefined."""
    tp = fp = fn = 0
    for r in results:
        tp += r.n_tp
        fp += len(r.fp_indices)
        fn += len(r.fn_indices)
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    return precision, recall


def ranked_detections(
    preds_by_frame: Sequence[Sequence[Box3D | WeightedLabel]],
    gts_by_frame: Sequence[Sequence[Box3D]],
    crit: MatchCriterion,
    class_id: int | None = None,
) -> tuple[list[tuple[float, bool]], int]:
    """Score-ranked (score, is_tp) pairs plus the ground-truth total.

    Within each frame predictions are processed in descending score order
    (ties to the lower box index) and matched one-to-one; the global ranking
    then sorts across frames by score, frame, index.  This is the streaming
    form behind average precision: frames can be fed scene by scene and the
    outputs concatenated.
    """
    scored: list[tuple[float, int, int, bool]] = []
    n_gt = 0
    for fi, (preds, gts) in enumerate(zip(preds_by_frame, gts_by_frame)):
        sel = [(i, _as_box(p)) for i, p in enumerate(preds)
               if class_id is None or _as_box(p).class_id == class_id]
        gsel = [g for g in gts if class_id is None or g.class_id == class_id]
        n_gt += len(gsel)
        order = sorted(sel, key=lambda ib: (-ib[1].score, ib[0]))
        result = match_frame([b for _, b in order], gsel, crit)
        hit = {i for i, _ in result.tp_pairs}
        for rank, (idx, box) in enumerate(order):
            scored.append((box.score, fi, idx, rank in hit))
    scored.sort(key=lambda t: (-t[0], t[1], t[2]))
    return [(s, tp) for s, _, _, tp in scored], n_gt


def ap_from_ranked(ranked: Sequence[tuple[float, bool]], n_gt: int) -> float | None:
    """Area under the precision-recall curve, all points interpolated.

    The precision envelope is taken from the right, the usual staircase
    construction.  Returns None when there is no ground truth to recall.
    """
    if n_gt == 0:
        return None
    mrec = [0.0]
    mpre = [0.0]
    tp = fp = 0
    for _, is_tp in ranked:
        tp += is_tp
        fp += not is_tp
        mrec.append(tp / n_gt)
        mpre.append(tp / (tp + fp))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    return sum((mrec[i] - mrec[i - 1]) * mpre[i] for i in range(1, len(mrec)))


def average_precision(
    preds_by_frame: Sequence[Sequence[Box3D | WeightedLabel]],
    gts_by_frame: Sequence[Sequence[Box3D]],
    crit: MatchCriterion,
    class_id: int | None = None,
) -> float | None:
    ranked, n_gt = ranked_detections(preds_by_frame, gts_by_frame, crit, class_id)
    return ap_from_ranked(ranked, n_gt)


def pr_curve(ranked: Sequence[tuple[float, bool]], n_gt: int) -> list[tuple[float, float, float]]:
    """(score, recall, precision) staircase points from a ranked run."""
    points = []
    tp = fp = 0
    for score, is_tp in ranked:
        tp += is_tp
        fp += not is_tp
        points.append((score, tp / n_gt if n_gt else 0.0, tp / (tp + fp)))
    return points


@dataclass
class BucketStats:
    support: int = 0
    precise: int = 0

    @property
    def precision(self) -> float | None:
        return self.precise / self.support if self.support else None


@dataclass
class BucketReport:
    """Aggregated bucket analysis plus coverage recall, mergeable across scenes.

    * teacher labels are bucketed by match count; a label is precise when it
      satisfies the criterion against some ground-truth object;
    * an object is covered when some label satisfies the criterion against
      it; ``inserted_only_covered`` counts objects covered exclusively by
      inserted labels (the recall the insertions recovered);
    * ``missed_trackable`` / ``missed_recovered`` restrict to undetected
      objects that had been detected at least ``min_context`` times before,
      i.e. those a tracker could plausibly have been following.
    """

    min_context: int = 2
    buckets: dict[int, BucketStats] = field(default_factory=dict)
    teacher_labels: int = 0
    teacher_precise: int = 0
    n_gt: int = 0
    teacher_covered: int = 0
    enhanced_covered: int = 0
    inserted_only_covered: int = 0
    missed_trackable: int = 0
    missed_recovered: int = 0

    @property
    def teacher_precision(self) -> float | None:
        return self.teacher_precise / self.teacher_labels if self.teacher_labels else None

    @property
    def teacher_recall(self) -> float | None:
        return self.teacher_covered / self.n_gt if self.n_gt else None

    @property
    def enhanced_recall(self) -> float | None:
        return self.enhanced_covered / self.n_gt if self.n_gt else None

    @property
    def recovery_rate(self) -> float | None:
        return (self.missed_recovered / self.missed_trackable
                if self.missed_trackable else None)

    def bucket_precisions(self, min_support: int = 1) -> list[tuple[int, int, float]]:
        """(match_count, support, precision) rows, ascending, filtered by support."""
        rows = []
        for count in sorted(self.buckets):
            stats = self.buckets[count]
            if stats.support >= min_support:
                rows.append((count, stats.support, stats.precise / stats.support))
        return rows

    def merge(self, other: "BucketReport") -> None:
        if other.min_context != self.min_context:
            raise ValueError("cannot merge reports with different min_context")
        for count, stats in other.buckets.items():
            mine = self.buckets.setdefault(count, BucketStats())
            mine.support += stats.support
            mine.precise += stats.precise
        self.teacher_labels += other.teacher_labels
        self.teacher_precise += other.teacher_precise
        self.n_gt += other.n_gt
        self.teacher_covered += other.teacher_covered
        self.enhanced_covered += other.enhanced_covered
        self.inserted_only_covered += other.inserted_only_covered
        self.missed_trackable += other.missed_trackable
        self.missed_recovered += other.missed_recovered


def bucket_report(enhanced_frames: Sequence[EnhancedFrame],
                  truth_frames: Sequence[FrameTruth],
                  crit: MatchCriterion,
                  min_context: int = 2,
                  report: BucketReport | None = None) -> BucketReport:
    """Bucket teacher labels by match count and account for coverage.

    ``enhanced_frames`` and ``truth_frames`` must align frame for frame and
    run in frame order (detection history accumulates along the way).  Pass
    an existing ``report`` to accumulate several scenes into one analysis.
    """
    if report is None:
        report = BucketReport(min_context=min_context)
    detected_before: dict[int, int] = {}
    for enh, truth in zip(enhanced_frames, truth_frames):
        if enh.frame_index != truth.frame_index:
            raise ValueError(
                f"frame mismatch: enhanced {enh.frame_index} vs truth {truth.frame_index}")
        teacher = enh.teacher_labels
        inserted = enh.inserted_labels
        gt_boxes = [o.box for o in truth.objects]
        for label, count in zip(teacher, enh.match_counts):
            precise = any(crit.matches(label.box, g) for g in gt_boxes)
            stats = report.buckets.setdefault(count, BucketStats())
            stats.support += 1
            stats.precise += precise
            report.teacher_labels += 1
            report.teacher_precise += precise
        for obj in truth.objects:
            report.n_gt += 1
            by_teacher = any(crit.matches(l.box, obj.box) for l in teacher)
            by_inserted = any(crit.matches(l.box, obj.box) for l in inserted)
            report.teacher_covered += by_teacher
            report.enhanced_covered += by_teacher or by_inserted
            report.inserted_only_covered += (not by_teacher) and by_inserted
            if not obj.detected and detected_before.get(obj.agent_id, 0) >= min_context:
                report.missed_trackable += 1
                report.missed_recovered += by_inserted
        for obj in truth.objects:
            if obj.detected:
                detected_before[obj.agent_id] = detected_before.get(obj.agent_id, 0) + 1
    return report


def write_bucket_csv(path: str | Path, report: BucketReport) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["match_count", "support", "precision"])
        for count, support, precision in report.bucket_precisions():
            writer.writerow([count, support, repr(precision)])


def write_metrics_csv(path: str | Path, rows: Iterable[tuple[str, object, object, object]]) -> None:
    """Rows are (metric, class, threshold, value); None renders empty."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "class", "threshold", "value"])
        for metric, cls, threshold, value in rows:
            writer.writerow([
                metric,
                "" if cls is None else cls,
                "" if threshold is None else repr(float(threshold)),
                "" if value is None else repr(float(value)),
            ])


def write_pr_csv(path: str | Path, curves: dict[int, list[tuple[float, float, float]]]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "score", "recall", "precision"])
        for cid in sorted(curves):
            for score, recall, precision in curves[cid]:
                writer.writerow([class_name(cid), repr(score), repr(recall), repr(precision)])
