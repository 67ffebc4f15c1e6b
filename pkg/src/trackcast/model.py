"""Core records shared by every pipeline stage.

Everything here is immutable after construction, so values can be handed to
worker processes or cached without defensive copying.  Angle conventions:
``yaw`` is measured in radians from the +x axis and wrapped to (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi

#: Open class vocabulary; integer ids with readable names.  Extend via
#: :func:`register_class`.
CLASS_NAMES: dict[int, str] = {0: "car", 1: "truck", 2: "bus"}


def register_class(class_id: int, name: str) -> None:
    """Add or rename an entry in the class vocabulary."""
    CLASS_NAMES[int(class_id)] = str(name)


def class_name(class_id: int) -> str:
    return CLASS_NAMES.get(class_id, f"class_{class_id}")


def normalize_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.remainder(angle, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    return a


@dataclass(frozen=True, slots=True)
class Box3D:
    """Oriented 3D box with a detection score and BEV velocity.

    ``l`` extends along the heading axis, ``w`` across it, ``h`` vertically;
    all extents in meters.  ``score`` is the detector confidence in [0, 1] and
    ``(vx, vy)`` the reported ground-plane velocity in m/s.
    """

    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    yaw: float
    class_id: int
    score: float
    vx: float = 0.0
    vy: float = 0.0

    def __post_init__(self) -> None:
        # Normalize only when outside the canonical range; the common case
        # (already wrapped) stays allocation-cheap.
        if not (-math.pi < self.yaw <= math.pi):
            object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    @property
    def center_xy(self) -> tuple[float, float]:
        return (self.x, self.y)

    def moved_to(self, x: float, y: float) -> "Box3D":
        """Copy of this box with a new BEV center; every other field kept.

        Fills the slots directly: ``self.yaw`` is already canonical, so the
        normalizing constructor would be pure overhead on this hot path.
        """
        new = object.__new__(Box3D)
        s = object.__setattr__
        s(new, "x", x), s(new, "y", y), s(new, "z", self.z)
        s(new, "l", self.l), s(new, "w", self.w), s(new, "h", self.h)
        s(new, "yaw", self.yaw), s(new, "class_id", self.class_id)
        s(new, "score", self.score), s(new, "vx", self.vx), s(new, "vy", self.vy)
        return new


@dataclass(frozen=True, slots=True)
class Frame:
    """All boxes observed at one timestep of one scene."""

    scene_id: str
    frame_index: int
    timestamp: float
    boxes: tuple[Box3D, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.boxes, tuple):
            object.__setattr__(self, "boxes", tuple(self.boxes))


@dataclass(frozen=True, slots=True)
class Scene:
    """An ordered sequence of frames sampled every ``dt`` seconds."""

    scene_id: str
    dt: float
    frames: tuple[Frame, ...] = ()
    labeled: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.frames, tuple):
            object.__setattr__(self, "frames", tuple(self.frames))

    @property
    def n_frames(self) -> int:
        return len(self.frames)


@dataclass(frozen=True, slots=True)
class Track:
    """One tracked object: (frame_index, box) links in increasing frame order.

    Links may skip frames when the tracker bridged a missed detection.
    """

    track_id: int
    class_id: int
    links: tuple[tuple[int, Box3D], ...]

    def __post_init__(self) -> None:
        if not isinstance(self.links, tuple):
            object.__setattr__(self, "links", tuple(self.links))

    @property
    def frame_indices(self) -> tuple[int, ...]:
        return tuple(f for f, _ in self.links)

    @property
    def last_link(self) -> tuple[int, Box3D]:
        return self.links[-1]


@dataclass(frozen=True, slots=True)
class ForecastSet:
    """Boxes predicted from one context frame for one target frame.

    ``boxes`` pairs each forecast with the id of the track it came from,
    sorted by track id so the set is independent of generation order.
    """

    context_frame: int
    target_frame: int
    boxes: tuple[tuple[int, Box3D], ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.boxes, tuple):
            object.__setattr__(self, "boxes", tuple(self.boxes))
        if self.target_frame <= self.context_frame:
            raise ValueError(
                f"target_frame {self.target_frame} must come after "
                f"context_frame {self.context_frame}")


TEACHER = "teacher"
INSERTED = "inserted"


@dataclass(frozen=True, slots=True)
class WeightedLabel:
    """A supervision box together with its loss weight and provenance.

    ``origin`` is ``"teacher"`` for boxes the detector produced and
    ``"inserted"`` for forecast boxes added in place of a missed detection;
    inserted labels remember which context frame predicted them.
    """

    box: Box3D
    weight: float
    origin: str = TEACHER
    context_frame: int | None = None

    def __post_init__(self) -> None:
        if self.origin not in (TEACHER, INSERTED):
            raise ValueError(f"unknown origin {self.origin!r}")
        if self.origin == INSERTED and self.context_frame is None:
            raise ValueError("inserted labels must carry their context frame")
        if self.origin == TEACHER and self.context_frame is not None:
            raise ValueError("teacher labels have no context frame")
        if not (self.weight >= 0.0 and math.isfinite(self.weight)):
            raise ValueError(f"weight must be finite and >= 0, got {self.weight}")


def _trusted_label(box: Box3D, weight: float, origin: str,
                   context_frame: int | None = None) -> WeightedLabel:
    """WeightedLabel minus the validating constructor.

    Only for callers that construct labels in bulk from values they have
    already proven consistent; behaves exactly like the public constructor
    on such input.
    """
    new = object.__new__(WeightedLabel)
    s = object.__setattr__
    s(new, "box", box), s(new, "weight", weight)
    s(new, "origin", origin), s(new, "context_frame", context_frame)
    return new


@dataclass(frozen=True, slots=True)
class EnhancedFrame:
    """Output of enhancement for one frame.

    ``labels`` lists teacher-origin labels first (one per surviving
    pseudo-label, in frame order) followed by inserted labels.
    ``match_counts`` aligns with the teacher labels and records how many
    context frames each one was matched by.
    """

    frame_index: int
    labels: tuple[WeightedLabel, ...]
    match_counts: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.labels, tuple):
            object.__setattr__(self, "labels", tuple(self.labels))
        if not isinstance(self.match_counts, tuple):
            object.__setattr__(self, "match_counts", tuple(self.match_counts))

    @property
    def teacher_labels(self) -> tuple[WeightedLabel, ...]:
        return tuple(l for l in self.labels if l.origin == TEACHER)

    @property
    def inserted_labels(self) -> tuple[WeightedLabel, ...]:
        return tuple(l for l in self.labels if l.origin == INSERTED)


_BOX_FLOATS = ("x", "y", "z", "l", "w", "h", "yaw", "score", "vx", "vy")


def _check_box(box: Box3D, where: str, issues: list[str]) -> None:
    for name in _BOX_FLOATS:
        if not math.isfinite(getattr(box, name)):
            issues.append(f"{where}: field {name} is not finite")
    for name in ("l", "w", "h"):
        v = getattr(box, name)
        if math.isfinite(v) and v <= 0.0:
            issues.append(f"{where}: extent {name} must be positive, got {v}")
    if math.isfinite(box.score) and not (0.0 <= box.score <= 1.0):
        issues.append(f"{where}: score must lie in [0, 1], got {box.score}")
    if math.isfinite(box.yaw) and not (-math.pi < box.yaw <= math.pi):
        issues.append(f"{where}: yaw {box.yaw} outside (-pi, pi]")


def validate_scene(scene: Scene) -> list[str]:
    """Check every scene, frame, and box invariant.

    Returns a list of human-readable violations; an empty list means the
    scene is well formed.  Nothing is raised, so callers can report all
    problems at once.
    """
    issues: list[str] = []
    if not (math.isfinite(scene.dt) and scene.dt > 0.0):
        issues.append(f"scene {scene.scene_id}: dt must be positive and finite, got {scene.dt}")
    seen: set[int] = set()
    prev: Frame | None = None
    for frame in scene.frames:
        where = f"scene {scene.scene_id} frame {frame.frame_index}"
        if frame.scene_id != scene.scene_id:
            issues.append(f"{where}: scene_id {frame.scene_id!r} does not match")
        if frame.frame_index < 0:
            issues.append(f"{where}: frame_index must be >= 0")
        if frame.frame_index in seen:
            issues.append(f"{where}: duplicate frame_index")
        seen.add(frame.frame_index)
        if not math.isfinite(frame.timestamp):
            issues.append(f"{where}: timestamp is not finite")
        if prev is not None and math.isfinite(frame.timestamp) and math.isfinite(prev.timestamp):
            di = frame.frame_index - prev.frame_index
            if di < 1:
                issues.append(f"{where}: frame_index must increase (previous {prev.frame_index})")
            elif math.isfinite(scene.dt) and scene.dt > 0.0:
                expected = di * scene.dt
                if abs((frame.timestamp - prev.timestamp) - expected) > 1e-9:
                    issues.append(
                        f"{where}: timestamp step {frame.timestamp - prev.timestamp!r}"
                        f" differs from {expected!r} by more than 1e-9 s")
        for bi, box in enumerate(frame.boxes):
            _check_box(box, f"{where} box {bi}", issues)
        prev = frame
    return issues


def confidence_filter(frame: Frame, tau_conf: float) -> Frame:
    """Drop boxes scoring below ``tau_conf``; a score equal to it is kept.

    Box order is preserved, so filtering is idempotent and stable.
    """
    if not (0.0 <= tau_conf <= 1.0):
        raise ValueError(f"tau_conf must lie in [0, 1], got {tau_conf}")
    kept = tuple(b for b in frame.boxes if b.score >= tau_conf)
    if len(kept) == len(frame.boxes):
        return frame
    return Frame(frame.scene_id, frame.frame_index, frame.timestamp, kept)
