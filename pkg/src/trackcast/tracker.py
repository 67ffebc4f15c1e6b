"""Greedy nearest-center tracking of pseudo-labels across frames.

The association scheme follows the usual center-point recipe: advance each
live track by its reported velocity, then link tracks and detections of the
same class in order of increasing center distance, subject to a per-class
distance gate.  Tracks survive a bounded number of missed frames so short
detection gaps are bridged instead of splitting identities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .model import Box3D, Scene, Track

#: Gate applied to classes missing from the per-class table (meters).
DEFAULT_GATE = 4.0


@dataclass(frozen=True)
class TrackerConfig:
    dist_threshold_by_class: Mapping[int, float] = field(
        default_factory=lambda: {0: 4.0, 1: 4.0, 2: 5.5})
    max_age: int = 2
    min_hits_for_output: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "dist_threshold_by_class",
                           dict(self.dist_threshold_by_class))
        for cid, thr in self.dist_threshold_by_class.items():
            if not (thr > 0.0 and math.isfinite(thr)):
                raise ValueError(f"distance gate for class {cid} must be positive")
        if self.max_age < 0:
            raise ValueError("max_age must be >= 0")
        if self.min_hits_for_output < 1:
            raise ValueError("min_hits_for_output must be >= 1")

    def gate(self, class_id: int) -> float:
        return self.dist_threshold_by_class.get(class_id, DEFAULT_GATE)


def predict_center(track: Track, dt: float) -> tuple[float, float]:
    """Last linked center displaced by the reported velocity over ``dt`` s."""
    if not track.links:
        raise ValueError("cannot predict from a track with no links")
    _, box = track.links[-1]
    return (box.x + box.vx * dt, box.y + box.vy * dt)


def greedy_associate(
    active_tracks: Sequence[Track],
    detections: Sequence[Box3D],
    cfg: TrackerConfig,
    dt: float,
    frame_index: int | None = None,
) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Associate detections to live tracks for one frame.

    Candidate (track, detection) pairs of the same class within the class
    gate are taken greedily in order of increasing distance between the
    predicted track center and the detection center; distance ties go to the
    lower detection index, then the lower track id.

    When ``frame_index`` is given, each track is predicted over the frames
    elapsed since its last link (so a bridged gap extrapolates further), and
    tracks left unmatched for more than ``cfg.max_age`` consecutive frames
    are reported as deaths.  Without it, one ``dt`` step is assumed for all.

    Returns ``(matches, births, deaths)``: matches as (track_id, detection
    index) pairs, births as unmatched detection indices, deaths as track ids.
    """
    dets_by_class: dict[int, list[tuple[int, float, float]]] = {}
    for di, det in enumerate(detections):
        dets_by_class.setdefault(det.class_id, []).append((di, det.x, det.y))
    candidates: list[tuple[float, int, int]] = []
    hypot = math.hypot
    for pos, track in enumerate(active_tracks):
        same_class = dets_by_class.get(track.class_id)
        if not same_class:
            continue
        last_frame = track.links[-1][0]
        steps = 1 if frame_index is None else max(frame_index - last_frame, 1)
        px, py = predict_center(track, dt * steps)
        gate = cfg.gate(track.class_id)
        for di, dx, dy in same_class:
            dist = hypot(dx - px, dy - py)
            if dist <= gate:
                candidates.append((dist, di, pos))
    candidates.sort()
    used_tracks: set[int] = set()
    used_dets: set[int] = set()
    matches: list[tuple[int, int]] = []
    for dist, di, pos in candidates:
        if pos in used_tracks or di in used_dets:
            continue
        used_tracks.add(pos)
        used_dets.add(di)
        matches.append((active_tracks[pos].track_id, di))
    births = [di for di in range(len(detections)) if di not in used_dets]
    deaths: list[int] = []
    for pos, track in enumerate(active_tracks):
        if pos in used_tracks:
            continue
        if frame_index is None:
            streak = 1
        else:
            streak = frame_index - track.links[-1][0]
        if streak > cfg.max_age:
            deaths.append(track.track_id)
    return matches, births, deaths


class _LiveTrack:
    __slots__ = ("track_id", "class_id", "links")

    def __init__(self, track_id: int, class_id: int, first_link: tuple[int, Box3D]):
        self.track_id = track_id
        self.class_id = class_id
        self.links: list[tuple[int, Box3D]] = [first_link]

    def snapshot(self) -> Track:
        return Track(self.track_id, self.class_id, tuple(self.links))


def build_tracks(scene: Scene, tau_conf: float, cfg: TrackerConfig) -> list[Track]:
    """Track a whole scene and return finished tracks sorted by track id.

    Boxes below ``tau_conf`` are dropped before association; every surviving
    detection ends up in exactly one track link.  Track ids are assigned in
    birth order, so output is deterministic for identical input.
    """
    live: list[_LiveTrack] = []
    finished: list[_LiveTrack] = []
    next_id = 0
    for frame in scene.frames:
        detections = [b for b in frame.boxes if b.score >= tau_conf]
        matches, births, deaths = greedy_associate(
            [t.snapshot() for t in live], detections, cfg, scene.dt, frame.frame_index)
        by_id = {t.track_id: t for t in live}
        for track_id, di in matches:
            by_id[track_id].links.append((frame.frame_index, detections[di]))
        if deaths:
            dead = set(deaths)
            finished.extend(t for t in live if t.track_id in dead)
            live = [t for t in live if t.track_id not in dead]
        for di in births:
            det = detections[di]
            live.append(_LiveTrack(next_id, det.class_id, (frame.frame_index, det)))
            next_id += 1
    finished.extend(live)
    tracks = [t.snapshot() for t in finished if len(t.links) >= cfg.min_hits_for_output]
    tracks.sort(key=lambda t: t.track_id)
    return tracks
