"""Structural pieces of the teacher-student objective.

This module keeps the bookkeeping honest at desk scale: an exponential
moving average over flat parameter vectors, and loss sums in which teacher
and inserted labels enter through the same terms and differ only by weight.
No autodiff, no model -- just the arithmetic the training loop would use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .model import Box3D, WeightedLabel, normalize_angle


@dataclass(frozen=True)
class ParameterVector:
    """A flat vector of finite reals standing in for network weights."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        for v in vals:
            if not math.isfinite(v):
                raise ValueError("parameter values must be finite")

    def __len__(self) -> int:
        return len(self.values)


def ema_update(theta_teacher: ParameterVector, theta_student: ParameterVector,
               momentum: float) -> ParameterVector:
    """One exponential-moving-average step.

    Element-wise ``momentum * teacher + (1 - momentum) * student``; with a
    frozen student this converges geometrically, the gap shrinking by a
    factor of ``momentum`` per step.
    """
    if len(theta_teacher) != len(theta_student):
        raise ValueError(
            f"parameter vectors differ in length: "
            f"{len(theta_teacher)} vs {len(theta_student)}")
    if not (0.0 <= momentum <= 1.0):
        raise ValueError(f"momentum must lie in [0, 1], got {momentum}")
    return ParameterVector(tuple(
        momentum * t + (1.0 - momentum) * s
        for t, s in zip(theta_teacher.values, theta_student.values)))


@dataclass(frozen=True)
class BoxLossTerms:
    """Pluggable per-box loss terms: regression and classification."""

    reg: Callable[[Box3D, Box3D], float]
    cls: Callable[[Box3D, Box3D], float]


def _reg_mean_abs(pred: Box3D, target: Box3D) -> float:
    """Mean absolute difference over the 7 localization parameters.

    The heading term uses the wrapped angular difference so that equal
    headings written as e.g. pi and -pi do not register an error.
    """
    total = (abs(pred.x - target.x) + abs(pred.y - target.y)
             + abs(pred.z - target.z) + abs(pred.l - target.l)
             + abs(pred.w - target.w) + abs(pred.h - target.h)
             + abs(normalize_angle(pred.yaw - target.yaw)))
    return total / 7.0


def _cls_mismatch(pred: Box3D, target: Box3D) -> float:
    """Zero-one classification disagreement against a unit-score target."""
    return 0.0 if pred.class_id == target.class_id else 1.0


def reference_loss_terms() -> BoxLossTerms:
    """Simple closed-form terms: both vanish for a self-assignment."""
    return BoxLossTerms(reg=_reg_mean_abs, cls=_cls_mismatch)


def unlabeled_loss(assignments: Sequence[tuple[Box3D, WeightedLabel]],
                   terms: BoxLossTerms) -> float:
    """Weighted sum of per-assignment losses over pseudo-label targets.

    Each term is ``weight * (reg + cls)``; teacher and inserted targets are
    treated identically, the weight being the only distinction.  Summation is
    left to right in the given order.  Negative weights are rejected.
    """
    total = 0.0
    for pred, label in assignments:
        if label.weight < 0.0:
            raise ValueError("label weights must be >= 0")
        total += label.weight * (terms.reg(pred, label.box) + terms.cls(pred, label.box))
    return total


def labeled_loss(assignments: Sequence[tuple[Box3D, Box3D]],
                 terms: BoxLossTerms) -> float:
    """Unweighted sum of per-assignment losses over ground-truth targets."""
    total = 0.0
    for pred, target in assignments:
        total += terms.reg(pred, target) + terms.cls(pred, target)
    return total


def total_loss(unlabeled: float, labeled: float) -> float:
    """The full objective: unlabeled plus labeled parts."""
    return unlabeled + labeled
