"""Forecast-based refinement of one frame of pseudo-labels.

Two complementary moves, both class-aware:

* labels that the forecasts agree with get their loss weight raised by a
  fixed increment per agreeing context frame (an affine weight
  ``alpha + beta * count``), and
* forecast boxes that no current label accounts for are inserted as soft
  targets, down-weighted the older their context frame is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import box_params, iou_matrix, iou_matrix_many
from .model import (
    Box3D,
    EnhancedFrame,
    Frame,
    ForecastSet,
    INSERTED,
    TEACHER,
    _trusted_label,
)


@dataclass(frozen=True)
class EnhancerConfig:
    tau_min_iou: float = 0.3
    tau_max_iou: float = 0.1
    alpha: float = 1.0
    beta: float = 0.25
    gamma_max: float = 0.8
    gamma_min: float = 0.2
    insertion_nms_iou: float = 0.3
    enable_insertion: bool = True

    def __post_init__(self) -> None:
        for name in ("tau_min_iou", "tau_max_iou", "insertion_nms_iou"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise ValueError("alpha must be positive")
        if not (self.beta >= 0.0 and math.isfinite(self.beta)):
            raise ValueError("beta must be >= 0")
        if not (0.0 < self.gamma_min <= self.gamma_max <= 1.0):
            raise ValueError("need 0 < gamma_min <= gamma_max <= 1")


def _flatten_sets(forecast_sets: Sequence[ForecastSet],
                  ) -> tuple[list[Box3D], np.ndarray, list[int]]:
    """Concatenate all forecast boxes, keeping set index and context per box."""
    fboxes: list[Box3D] = []
    contexts: list[int] = []
    lengths = np.empty(len(forecast_sets), dtype=np.int64)
    for si, fs in enumerate(forecast_sets):
        fboxes.extend(box for _, box in fs.boxes)
        lengths[si] = len(fs.boxes)
        contexts.extend([fs.context_frame] * len(fs.boxes))
    set_ids = np.repeat(np.arange(len(forecast_sets), dtype=np.int64), lengths)
    return fboxes, set_ids, contexts


def _class_mask(boxes_a: Sequence[Box3D], boxes_b: Sequence[Box3D]) -> np.ndarray:
    ca = np.array([b.class_id for b in boxes_a])
    cb = np.array([b.class_id for b in boxes_b])
    return ca[:, None] == cb[None, :]


def _nms_mask(boxes: Sequence[Box3D]) -> np.ndarray:
    # Self-pairs never suppress anything, so leave the diagonal out.
    mask = _class_mask(boxes, boxes)
    np.fill_diagonal(mask, False)
    return mask


def _counts_per_label(iou: np.ndarray, set_ids: np.ndarray, tau_min_iou: float) -> list[int]:
    """Distinct corroborating sets per row of a label x forecast IoU matrix."""
    if iou.shape[1] == 0:
        return [0] * iou.shape[0]
    hits = iou >= tau_min_iou
    starts = np.flatnonzero(np.r_[True, set_ids[1:] != set_ids[:-1]])
    per_set = np.maximum.reduceat(hits, starts, axis=1)
    return per_set.sum(axis=1).astype(int).tolist()


def match_counts(pseudo_labels: Sequence[Box3D], forecast_sets: Sequence[ForecastSet],
                 tau_min_iou: float) -> list[int]:
    """Per label, the number of context frames that corroborate it.

    A context frame counts once when the best same-class IoU between the
    label and that frame's forecast set reaches ``tau_min_iou``; several
    overlapping boxes within one set still count once.
    """
    n = len(pseudo_labels)
    if n == 0 or not forecast_sets:
        return [0] * n
    fboxes, set_ids, _ = _flatten_sets(forecast_sets)
    if not fboxes:
        return [0] * n
    iou = iou_matrix(box_params(pseudo_labels), box_params(fboxes),
                     _class_mask(pseudo_labels, fboxes))
    return _counts_per_label(iou, set_ids, tau_min_iou)


def compute_weights(counts: Sequence[int], alpha: float, beta: float) -> list[float]:
    """Affine per-label weights ``alpha + beta * count``."""
    for c in counts:
        if c < 0:
            raise ValueError("match counts cannot be negative")
    return [alpha + beta * c for c in counts]


def find_unmatched(forecast_sets: Sequence[ForecastSet], pseudo_labels: Sequence[Box3D],
                   tau_max_iou: float) -> list[tuple[int, Box3D]]:
    """Forecast boxes no current label accounts for.

    A forecast box qualifies when its best same-class IoU against every
    label stays at or below ``tau_max_iou``; with no labels at all, every
    forecast box qualifies.  Returned as (context_frame, box) pairs in set
    order.
    """
    entries = [(fs.context_frame, box) for fs in forecast_sets for _, box in fs.boxes]
    if not entries:
        return []
    if not pseudo_labels:
        return entries
    boxes = [b for _, b in entries]
    iou = iou_matrix(box_params(boxes), box_params(pseudo_labels),
                     _class_mask(boxes, pseudo_labels))
    best = iou.max(axis=1)
    return [entries[j] for j in range(len(entries)) if best[j] <= tau_max_iou]


def gamma_schedule(num_context_frames: int, gamma_max: float, gamma_min: float) -> list[float]:
    """Linearly decreasing insertion weights, most recent context first.

    Index 1 (most recent context frame) gets ``gamma_max``, index T gets
    ``gamma_min``; a single context frame just gets ``gamma_max``.
    """
    t = num_context_frames
    if t < 1:
        raise ValueError("num_context_frames must be >= 1")
    if t == 1:
        return [gamma_max]
    step = (gamma_max - gamma_min) / (t - 1)
    return [gamma_max - k * step for k in range(t)]


def _greedy_keep(adj: np.ndarray, order: Sequence[int]) -> list[int]:
    """Greedy suppression, visiting ``order``.

    ``adj`` is the boolean (symmetric) relation "IoU above the suppression
    threshold"; every visit either keeps an unsuppressed index or skips it.
    """
    suppressed = np.zeros(adj.shape[0], dtype=bool)
    kept: list[int] = []
    for i in order:
        if not suppressed[i]:
            kept.append(i)
            suppressed |= adj[i]
    return kept


def _insertion_nms(candidates: list[tuple[int, Box3D]], iou_threshold: float) -> list[tuple[int, Box3D]]:
    """Greedy same-class dedup; the most recent context frame's box wins.

    A candidate is suppressed when its IoU with an already kept same-class
    box exceeds the threshold.  Running the pass on its own output keeps
    everything, so insertion is idempotent.
    """
    if len(candidates) <= 1:
        return list(candidates)
    order = sorted(range(len(candidates)), key=lambda i: (-candidates[i][0], i))
    boxes = [b for _, b in candidates]
    params = box_params(boxes)
    iou = iou_matrix(params, params, _nms_mask(boxes))
    return [candidates[i] for i in _greedy_keep(iou > iou_threshold, order)]


class _FramePlan:
    """Per-frame intermediate state while enhancing a whole scene."""

    __slots__ = ("frame", "sets", "labels", "fboxes", "set_ids", "contexts",
                 "counts", "candidates", "label_block", "nms_block")

    def __init__(self, frame: Frame, sets: list[ForecastSet]):
        self.frame = frame
        self.sets = sets
        self.labels = list(frame.boxes)
        self.fboxes, self.set_ids, self.contexts = _flatten_sets(sets)
        self.counts: list[int] = [0] * len(self.labels)
        self.candidates: list[tuple[int, Box3D]] = []
        self.label_block = -1
        self.nms_block = -1


def enhance_scene(frames: Sequence[Frame], forecast_sets: Sequence[ForecastSet],
                  cfg: EnhancerConfig) -> list[EnhancedFrame]:
    """Enhance every frame of a scene in one batched geometry pass.

    Forecast sets are routed to the frame they target; a set aimed at a
    frame index not present raises.  The result is identical, frame by
    frame, to calling ``enhance_frame`` with each frame's own sets --
    batching only amortizes the pairwise-IoU dispatch cost.
    """
    by_target: dict[int, list[ForecastSet]] = {}
    for fs in forecast_sets:
        by_target.setdefault(fs.target_frame, []).append(fs)
    present = {f.frame_index for f in frames}
    for target in by_target:
        if target not in present:
            raise ValueError(f"forecast set targets frame {target}, "
                             f"which is not among the frames to enhance")

    plans = [_FramePlan(f, sorted(by_target.get(f.frame_index, []),
                                  key=lambda s: (s.context_frame, s.target_frame)))
             for f in frames]

    blocks = []
    for plan in plans:
        if plan.labels and plan.fboxes:
            plan.label_block = len(blocks)
            blocks.append((box_params(plan.labels), box_params(plan.fboxes),
                           _class_mask(plan.labels, plan.fboxes)))
    # Label matrices only ever face the two thresholds below, so entries
    # provably under both may be skipped (reported 0) by the geometry pass.
    label_mats = iou_matrix_many(blocks, min(cfg.tau_min_iou, cfg.tau_max_iou))

    nms_blocks = []
    for plan in plans:
        if plan.label_block >= 0:
            iou = label_mats[plan.label_block]
            plan.counts = _counts_per_label(iou, plan.set_ids, cfg.tau_min_iou)
        if cfg.enable_insertion and plan.sets:
            if plan.labels and plan.fboxes:
                best = label_mats[plan.label_block].max(axis=0)
                keep = best <= cfg.tau_max_iou
                plan.candidates = [(plan.contexts[j], plan.fboxes[j])
                                   for j in range(len(plan.fboxes)) if keep[j]]
            else:
                plan.candidates = list(zip(plan.contexts, plan.fboxes))
            if len(plan.candidates) > 1:
                boxes = [b for _, b in plan.candidates]
                params = box_params(boxes)
                plan.nms_block = len(nms_blocks)
                nms_blocks.append((params, params, _nms_mask(boxes)))
    nms_mats = iou_matrix_many(nms_blocks, cfg.insertion_nms_iou)

    out: list[EnhancedFrame] = []
    for plan in plans:
        weights = compute_weights(plan.counts, cfg.alpha, cfg.beta)
        labels = [_trusted_label(box, weight, TEACHER)
                  for box, weight in zip(plan.labels, weights)]
        if plan.candidates:
            kept = plan.candidates
            if plan.nms_block >= 0:
                order = sorted(range(len(kept)), key=lambda i: (-kept[i][0], i))
                adj = nms_mats[plan.nms_block] > cfg.insertion_nms_iou
                kept = [kept[i] for i in _greedy_keep(adj, order)]
            frame_index = plan.frame.frame_index
            oldest_age = max(frame_index - fs.context_frame for fs in plan.sets)
            gammas = gamma_schedule(oldest_age, cfg.gamma_max, cfg.gamma_min)
            for context, box in kept:
                labels.append(_trusted_label(box, gammas[frame_index - context - 1],
                                             INSERTED, context))
        out.append(EnhancedFrame(plan.frame.frame_index, tuple(labels),
                                 tuple(plan.counts)))
    return out


def enhance_frame(frame: Frame, forecast_sets: Sequence[ForecastSet],
                  cfg: EnhancerConfig) -> EnhancedFrame:
    """Weight the frame's labels by forecast agreement and insert the rest.

    ``frame`` is expected to hold confidence-filtered pseudo-labels and every
    forecast set must target this frame.  Teacher labels appear first in the
    output (frame order, weight ``alpha + beta * count``); inserted labels
    follow, most recent context first, each weighted by the schedule position
    of its context age.  Inserted boxes are not re-filtered by confidence.
    """
    return enhance_scene([frame], forecast_sets, cfg)[0]
