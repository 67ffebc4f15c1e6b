"""Motion prediction over tracks and grouping of forecasts by target frame.

A predictor maps a short history of track states to future BEV centers.
Three are built in: finite-difference constant velocity ("cv"), constant
turn rate and speed ("ctrv"), and linear extrapolation of the detector's
reported velocity ("linear_velocity").  Forecast boxes inherit every
attribute except the center from the box at the context frame.
"""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass
from typing import Callable, Sequence

from .model import Box3D, ForecastSet, Scene, Track, normalize_angle

#: One track state: (timestamp, x, y, vx, vy).
HistoryPoint = tuple[float, float, float, float, float]

Predictor = Callable[[Sequence[HistoryPoint], int, float], list[tuple[float, float]]]

_STATIONARY = 1e-9


def predict_cv(history: Sequence[HistoryPoint], horizon: int, dt: float) -> list[tuple[float, float]]:
    """Constant velocity from the last two history points.

    The velocity is the finite difference of the last two positions over
    their timestamp gap (which equals ``dt`` for gap-free histories).
    """
    if len(history) < 2:
        raise ValueError("cv prediction needs at least two history points")
    t0, x0, y0, _, _ = history[-2]
    t1, x1, y1, _, _ = history[-1]
    span = t1 - t0
    if span <= 0.0:
        span = dt
    vx = (x1 - x0) / span
    vy = (y1 - y0) / span
    return [(x1 + k * dt * vx, y1 + k * dt * vy) for k in range(1, horizon + 1)]


def predict_ctrv(history: Sequence[HistoryPoint], horizon: int, dt: float) -> list[tuple[float, float]]:
    """Constant turn rate and speed from the last three history points.

    The turn rate is the angle between the last two displacement chords; the
    forecast advances by rotating the latest chord that angle per step, which
    reproduces uniform circular motion exactly and reduces to the constant
    velocity model when the turn rate vanishes.  Histories with uneven
    spacing (a bridged gap) fall back to the constant velocity model, as does
    a stationary track, which simply holds its last position.
    """
    if len(history) < 3:
        raise ValueError("ctrv prediction needs at least three history points")
    (t1, x1, y1, _, _), (t2, x2, y2, _, _), (t3, x3, y3, _, _) = history[-3:]
    if abs((t2 - t1) - dt) > 1e-9 or abs((t3 - t2) - dt) > 1e-9:
        return predict_cv(history, horizon, dt)
    c1x, c1y = x2 - x1, y2 - y1
    c2x, c2y = x3 - x2, y3 - y2
    if math.hypot(c1x, c1y) < _STATIONARY or math.hypot(c2x, c2y) < _STATIONARY:
        return [(x3, y3)] * horizon
    delta = normalize_angle(math.atan2(c2y, c2x) - math.atan2(c1y, c1x))
    cos_d, sin_d = math.cos(delta), math.sin(delta)
    px, py = x3, y3
    cx, cy = c2x, c2y
    out: list[tuple[float, float]] = []
    for _ in range(horizon):
        cx, cy = cx * cos_d - cy * sin_d, cx * sin_d + cy * cos_d
        px += cx
        py += cy
        out.append((px, py))
    return out


def predict_linear_velocity(last_box: Box3D, horizon: int, dt: float) -> list[tuple[float, float]]:
    """Extrapolate the detector-reported velocity of a single box."""
    return [(last_box.x + k * dt * last_box.vx, last_box.y + k * dt * last_box.vy)
            for k in range(1, horizon + 1)]


def _linear_velocity_from_history(history: Sequence[HistoryPoint], horizon: int,
                                  dt: float) -> list[tuple[float, float]]:
    if not history:
        raise ValueError("linear_velocity prediction needs a history point")
    _, x, y, vx, vy = history[-1]
    return [(x + k * dt * vx, y + k * dt * vy) for k in range(1, horizon + 1)]


#: Named predictor registry; external callables can be added here.
PREDICTORS: dict[str, Predictor] = {
    "cv": predict_cv,
    "ctrv": predict_ctrv,
    "linear_velocity": _linear_velocity_from_history,
}

#: Minimum history length each built-in needs to run.
_MIN_HISTORY = {"cv": 2, "ctrv": 3, "linear_velocity": 1}


@dataclass(frozen=True)
class ForecastConfig:
    min_context: int = 2
    max_context: int = 4
    horizon: int = 12
    predictor: str = "cv"

    def __post_init__(self) -> None:
        if not (1 <= self.min_context <= self.max_context):
            raise ValueError("need 1 <= min_context <= max_context")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.predictor not in PREDICTORS:
            raise ValueError(f"unknown predictor {self.predictor!r}; "
                             f"registered: {sorted(PREDICTORS)}")


def materialize_box(predicted_xy: tuple[float, float], context_box: Box3D) -> Box3D:
    """Forecast box at a predicted center; all other fields copied over."""
    return context_box.moved_to(predicted_xy[0], predicted_xy[1])


def _run_predictor(name: str, history: Sequence[HistoryPoint], horizon: int,
                   dt: float) -> list[tuple[float, float]]:
    # Degrade gracefully when the history is shorter than the model needs:
    # ctrv -> cv -> plain velocity extrapolation.
    for candidate in (name, "cv", "linear_velocity"):
        if len(history) >= _MIN_HISTORY.get(candidate, 1):
            return PREDICTORS[candidate](history, horizon, dt)
    raise ValueError("empty history")


def generate_forecasts(tracks: Sequence[Track], scene: Scene,
                       cfg: ForecastConfig) -> list[ForecastSet]:
    """Forecast every track from every eligible context frame.

    A frame ``c`` is a context frame for a track when the track has at least
    ``min_context`` links ending at ``c``; the predictor then sees the most
    recent ``max_context`` of them and is rolled out ``horizon`` steps,
    truncated at the last frame of the scene.  Results are grouped into
    ForecastSets keyed by (context_frame, target_frame) and sorted, so the
    output does not depend on track ordering.
    """
    if not scene.frames:
        return []
    timestamps = {f.frame_index: f.timestamp for f in scene.frames}
    last = scene.frames[-1].frame_index
    grouped: dict[tuple[int, int], list[tuple[int, Box3D]]] = {}
    group = grouped.setdefault
    for track in tracks:
        links = track.links
        points = [(timestamps[f], b.x, b.y, b.vx, b.vy) for f, b in links]
        for pos, (c, context_box) in enumerate(links):
            if c >= last:
                continue
            lo = max(0, pos + 1 - cfg.max_context)
            if pos + 1 - lo < cfg.min_context:
                continue
            history = points[lo:pos + 1]
            steps = min(cfg.horizon, last - c)
            centers = _run_predictor(cfg.predictor, history, steps, scene.dt)
            moved = context_box.moved_to
            tid = track.track_id
            for k, xy in enumerate(centers, start=1):
                group((c, c + k), []).append((tid, moved(*xy)))
    by_track_id = operator.itemgetter(0)
    return [ForecastSet(c, t, tuple(sorted(boxes, key=by_track_id)))
            for (c, t), boxes in sorted(grouped.items())]
