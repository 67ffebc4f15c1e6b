"""JSON Lines persistence for scenes, tracks, forecasts, enhanced labels,
and ground truth.

Every file is one JSON object per line: a versioned header, the records, and
a trailing ``{"sha256": ...}`` digest over the preceding bytes, so stage
outputs can be compared byte for byte.  Floats serialize via ``repr`` (the
shortest round-tripping form), making write -> read -> write a fixed point.
Readers work a line at a time and ignore unknown fields.
"""

from __future__ import annotations

import hashlib
import json
import operator
from pathlib import Path
from typing import Any, Iterable, Iterator

from .model import (
    Box3D,
    EnhancedFrame,
    ForecastSet,
    Frame,
    Scene,
    Track,
    WeightedLabel,
)
from .simulator import FrameTruth, GtObject, SceneTruth

FORMAT_VERSION = 1

KIND_SCENE = "scene"
KIND_TRACKS = "tracks"
KIND_FORECASTS = "forecasts"
KIND_ENHANCED = "enhanced"
KIND_TRUTH = "ground_truth"


class FileFormatError(Exception):
    """A structurally invalid file; carries the path and 1-based line number."""

    def __init__(self, path: str | Path, line_no: int | None, message: str):
        self.path = str(path)
        self.line_no = line_no
        where = self.path if line_no is None else f"{self.path}:{line_no}"
        super().__init__(f"{where}: {message}")


def _dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _write_lines(path: str | Path, lines: Iterable[str]) -> None:
    """Write pre-encoded JSON lines and append a sha256 digest line."""
    digest = hashlib.sha256()
    with open(path, "wb") as f:
        buf: list[str] = []
        size = 0
        for line in lines:
            buf.append(line)
            size += len(line)
            if size >= 1 << 18:
                chunk = ("\n".join(buf) + "\n").encode("utf-8")
                digest.update(chunk)
                f.write(chunk)
                buf.clear()
                size = 0
        if buf:
            chunk = ("\n".join(buf) + "\n").encode("utf-8")
            digest.update(chunk)
            f.write(chunk)
        f.write((_dumps({"sha256": digest.hexdigest()}) + "\n").encode("utf-8"))


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    """Write records one per line and append a sha256 digest line."""
    _write_lines(path, (_dumps(record) for record in records))


#: Every box field except the BEV center, in serialized order.
_TAIL_FIELDS = operator.attrgetter("z", "l", "w", "h", "yaw", "class_id",
                                   "score", "vx", "vy")


def _box_encoder():
    """Box -> JSON fragment pieces, matching ``_dumps(box_to_dict(box))``.

    Appends onto a caller-owned parts list (joined once per output line, so
    no per-box string is ever materialized).  Forecast and inserted boxes
    repeat everything but their center across horizon steps, so the static
    tail is cached per distinct value tuple.
    """
    cache: dict[tuple, str] = {}

    def encode(box: Box3D, out: list[str]) -> None:
        key = _TAIL_FIELDS(box)
        tail = cache.get(key)
        if tail is None:
            # float() collapses numpy scalars so repr matches json's float text
            tail = (f',"z":{float(box.z)!r},"l":{float(box.l)!r}'
                    f',"w":{float(box.w)!r},"h":{float(box.h)!r}'
                    f',"yaw":{float(box.yaw)!r},"class_id":{box.class_id}'
                    f',"score":{float(box.score)!r}'
                    f',"vx":{float(box.vx)!r},"vy":{float(box.vy)!r}}}')
            cache[key] = tail
        out.extend(('{"x":', repr(float(box.x)), ',"y":', repr(float(box.y)),
                    tail))

    return encode


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line_no, record) pairs, verifying the trailing digest if present.

    Raises FileFormatError with the offending line number on parse errors,
    a digest mismatch, or content after the digest line.
    """
    digest = hashlib.sha256()
    pending: tuple[int, str] | None = None
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            if pending is not None:
                raise FileFormatError(path, line_no, "content after digest line")
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise FileFormatError(path, line_no, f"invalid JSON: {e.msg}") from e
            if not isinstance(record, dict):
                raise FileFormatError(path, line_no, "each line must hold a JSON object")
            if set(record) == {"sha256"}:
                if record["sha256"] != digest.hexdigest():
                    raise FileFormatError(path, line_no, "sha256 digest mismatch")
                pending = (line_no, line)
                continue
            digest.update(line.encode("utf-8"))
            yield line_no, record


def _require(record: dict, key: str, path: str | Path, line_no: int) -> Any:
    if key not in record:
        raise FileFormatError(path, line_no, f"missing required field {key!r}")
    return record[key]


def _check_header(record: dict, kind: str, path: str | Path, line_no: int) -> None:
    version = _require(record, "format_version", path, line_no)
    if version != FORMAT_VERSION:
        raise FileFormatError(path, line_no,
                              f"unsupported format_version {version!r}")
    got = record.get("kind")
    if got is not None and got != kind:
        raise FileFormatError(path, line_no, f"expected kind {kind!r}, got {got!r}")


def box_to_dict(box: Box3D) -> dict:
    return {"x": box.x, "y": box.y, "z": box.z, "l": box.l, "w": box.w,
            "h": box.h, "yaw": box.yaw, "class_id": box.class_id,
            "score": box.score, "vx": box.vx, "vy": box.vy}


def box_from_dict(d: dict, path: str | Path, line_no: int) -> Box3D:
    try:
        return Box3D(
            float(d["x"]), float(d["y"]), float(d["z"]),
            float(d["l"]), float(d["w"]), float(d["h"]),
            float(d["yaw"]), int(d["class_id"]), float(d["score"]),
            float(d.get("vx", 0.0)), float(d.get("vy", 0.0)))
    except (KeyError, TypeError, ValueError) as e:
        raise FileFormatError(path, line_no, f"malformed box record: {e!r}") from e


def write_scene(path: str | Path, scene: Scene) -> None:
    enc = _box_encoder()

    def lines() -> Iterator[str]:
        yield _dumps({"format_version": FORMAT_VERSION, "kind": KIND_SCENE,
                      "scene_id": scene.scene_id, "dt": scene.dt,
                      "labeled": scene.labeled, "n_frames": len(scene.frames)})
        for frame in scene.frames:
            out = [f'{{"frame_index":{frame.frame_index}'
                   f',"timestamp":{float(frame.timestamp)!r},"boxes":[']
            sep = ""
            for b in frame.boxes:
                out.append(sep)
                sep = ","
                enc(b, out)
            out.append("]}")
            yield "".join(out)
    _write_lines(path, lines())


def read_scene(path: str | Path) -> Scene:
    header: dict | None = None
    frames: list[Frame] = []
    for line_no, record in read_jsonl(path):
        if header is None:
            _check_header(record, KIND_SCENE, path, line_no)
            header = record
            continue
        index = int(_require(record, "frame_index", path, line_no))
        timestamp = float(_require(record, "timestamp", path, line_no))
        boxes = tuple(box_from_dict(b, path, line_no)
                      for b in _require(record, "boxes", path, line_no))
        frames.append(Frame(str(header["scene_id"]), index, timestamp, boxes))
    if header is None:
        raise FileFormatError(path, None, "empty scene file")
    declared = header.get("n_frames")
    if declared is not None and declared != len(frames):
        raise FileFormatError(path, None,
                              f"header declares {declared} frames, found {len(frames)}")
    return Scene(str(header["scene_id"]), float(header["dt"]), tuple(frames),
                 bool(header.get("labeled", False)))


def read_header(path: str | Path) -> dict:
    """First record of a file; cheap way to get scene_id and kind."""
    for _, record in read_jsonl(path):
        return record
    raise FileFormatError(path, None, "empty file")


def write_tracks(path: str | Path, scene_id: str, tracks: Iterable[Track]) -> None:
    enc = _box_encoder()

    def lines() -> Iterator[str]:
        yield _dumps({"format_version": FORMAT_VERSION, "kind": KIND_TRACKS,
                      "scene_id": scene_id})
        for track in tracks:
            out = [f'{{"track_id":{track.track_id}'
                   f',"class_id":{track.class_id},"links":[']
            sep = '{"frame_index":'
            for f, b in track.links:
                out.append(sep)
                sep = ',{"frame_index":'
                out.append(str(f))
                out.append(',"box":')
                enc(b, out)
                out.append("}")
            out.append("]}")
            yield "".join(out)
    _write_lines(path, lines())


def read_tracks(path: str | Path) -> list[Track]:
    header_seen = False
    tracks: list[Track] = []
    for line_no, record in read_jsonl(path):
        if not header_seen:
            _check_header(record, KIND_TRACKS, path, line_no)
            header_seen = True
            continue
        links = tuple(
            (int(_require(link, "frame_index", path, line_no)),
             box_from_dict(_require(link, "box", path, line_no), path, line_no))
            for link in _require(record, "links", path, line_no))
        tracks.append(Track(int(_require(record, "track_id", path, line_no)),
                            int(_require(record, "class_id", path, line_no)), links))
    return tracks


def write_forecasts(path: str | Path, scene_id: str,
                    forecast_sets: Iterable[ForecastSet]) -> None:
    """Write forecast sets as one rollout record per (context, track).

    A rollout of a track repeats every box field except the center at each
    horizon step, so sets are regrouped into
    ``{"context_frame", "track_id", "box", "targets", "centers"}`` records
    (one predicted center per target frame, ``box`` giving the shared
    fields), which writes each tail once instead of once per step.  Boxes
    that do not share a tail stay in separate records, so arbitrary sets
    survive the round trip.
    """
    enc = _box_encoder()
    rollouts: dict[tuple, tuple[Box3D, list[int], list[tuple[float, float]]]] = {}
    for fs in forecast_sets:
        c = fs.context_frame
        t = fs.target_frame
        for tid, b in fs.boxes:
            key = (c, tid, _TAIL_FIELDS(b))
            r = rollouts.get(key)
            if r is None:
                rollouts[key] = r = (b, [], [])
            r[1].append(t)
            r[2].append((b.x, b.y))

    def lines() -> Iterator[str]:
        yield _dumps({"format_version": FORMAT_VERSION, "kind": KIND_FORECASTS,
                      "scene_id": scene_id})
        for (c, tid, _), (box, targets, centers) in rollouts.items():
            out = [f'{{"context_frame":{c},"track_id":{tid},"box":']
            enc(box, out)
            out.append(',"targets":[')
            out.append(",".join(map(str, targets)))
            out.append('],"centers":[')
            out.append(",".join([f"[{float(x)!r},{float(y)!r}]"
                                 for x, y in centers]))
            out.append("]}")
            yield "".join(out)
    _write_lines(path, lines())


def read_forecasts(path: str | Path) -> list[ForecastSet]:
    """Read forecast sets from rollout records, regrouped by target frame.

    Sets come back sorted by (context_frame, target_frame) with boxes sorted
    by track id — the order the forecaster produces.  A header line is
    optional and legacy per-set records (``"boxes"`` instead of
    ``"targets"``/``"centers"``) still load, so externally produced files
    keep working.
    """
    sets: list[ForecastSet] = []
    grouped: dict[tuple[int, int], list[tuple[int, Box3D]]] = {}
    first = True
    for line_no, record in read_jsonl(path):
        if first:
            first = False
            if "context_frame" not in record:
                _check_header(record, KIND_FORECASTS, path, line_no)
                continue
        if "boxes" in record:
            boxes = tuple(
                (int(_require(entry, "track_id", path, line_no)),
                 box_from_dict(_require(entry, "box", path, line_no), path, line_no))
                for entry in record["boxes"])
            sets.append(ForecastSet(int(_require(record, "context_frame", path, line_no)),
                                    int(_require(record, "target_frame", path, line_no)),
                                    boxes))
            continue
        c = int(_require(record, "context_frame", path, line_no))
        tid = int(_require(record, "track_id", path, line_no))
        box = box_from_dict(_require(record, "box", path, line_no), path, line_no)
        targets = _require(record, "targets", path, line_no)
        centers = _require(record, "centers", path, line_no)
        if len(targets) != len(centers):
            raise FileFormatError(path, line_no,
                                  f"{len(targets)} targets but {len(centers)} centers")
        for t, (cx, cy) in zip(targets, centers):
            grouped.setdefault((c, int(t)), []).append((tid, box.moved_to(cx, cy)))
    by_track_id = operator.itemgetter(0)
    sets.extend(ForecastSet(c, t, tuple(sorted(boxes, key=by_track_id)))
                for (c, t), boxes in grouped.items())
    sets.sort(key=lambda fs: (fs.context_frame, fs.target_frame))
    return sets


def write_enhanced(path: str | Path, scene_id: str,
                   frames: Iterable[EnhancedFrame]) -> None:
    enc = _box_encoder()
    # Weights take only a handful of distinct values (the affine ladder and
    # the insertion schedule), so the rendered tail is worth caching.
    tails: dict[tuple, str] = {}

    def lines() -> Iterator[str]:
        yield _dumps({"format_version": FORMAT_VERSION, "kind": KIND_ENHANCED,
                      "scene_id": scene_id})
        for frame in frames:
            out = [f'{{"frame_index":{frame.frame_index},"labels":[']
            sep = '{"box":'
            for label in frame.labels:
                out.append(sep)
                sep = ',{"box":'
                enc(label.box, out)
                key = (label.weight, label.origin, label.context_frame)
                tail = tails.get(key)
                if tail is None:
                    tail = f',"weight":{float(label.weight)!r},"origin":"{label.origin}"'
                    if label.context_frame is None:
                        tail += "}"
                    else:
                        tail += f',"context_frame":{label.context_frame}}}'
                    tails[key] = tail
                out.append(tail)
            out.append('],"match_counts":[')
            out.append(",".join([str(c) for c in frame.match_counts]))
            out.append("]}")
            yield "".join(out)
    _write_lines(path, lines())


def read_enhanced(path: str | Path) -> list[EnhancedFrame]:
    header_seen = False
    frames: list[EnhancedFrame] = []
    for line_no, record in read_jsonl(path):
        if not header_seen:
            _check_header(record, KIND_ENHANCED, path, line_no)
            header_seen = True
            continue
        labels = []
        for entry in _require(record, "labels", path, line_no):
            context = entry.get("context_frame")
            try:
                labels.append(WeightedLabel(
                    box_from_dict(_require(entry, "box", path, line_no), path, line_no),
                    float(_require(entry, "weight", path, line_no)),
                    str(_require(entry, "origin", path, line_no)),
                    None if context is None else int(context)))
            except ValueError as e:
                raise FileFormatError(path, line_no, f"bad label record: {e}") from e
        frames.append(EnhancedFrame(
            int(_require(record, "frame_index", path, line_no)), tuple(labels),
            tuple(int(c) for c in record.get("match_counts", ()))))
    return frames


def write_truth(path: str | Path, truth: SceneTruth) -> None:
    enc = _box_encoder()

    def lines() -> Iterator[str]:
        yield _dumps({"format_version": FORMAT_VERSION, "kind": KIND_TRUTH,
                      "scene_id": truth.scene_id, "dt": truth.dt,
                      "n_frames": len(truth.frames)})
        for frame in truth.frames:
            out = [f'{{"frame_index":{frame.frame_index}'
                   f',"timestamp":{float(frame.timestamp)!r},"objects":[']
            sep = ""
            for o in frame.objects:
                out.append(sep)
                sep = ","
                out.append(f'{{"agent_id":{o.agent_id}'
                           f',"detected":{"true" if o.detected else "false"}'
                           f',"box":')
                enc(o.box, out)
                out.append("}")
            out.append('],"detection_sources":[')
            out.append(",".join(["null" if s is None else str(s)
                                 for s in frame.detection_sources]))
            out.append("]}")
            yield "".join(out)
    _write_lines(path, lines())


def read_truth(path: str | Path) -> SceneTruth:
    header: dict | None = None
    frames: list[FrameTruth] = []
    for line_no, record in read_jsonl(path):
        if header is None:
            _check_header(record, KIND_TRUTH, path, line_no)
            header = record
            continue
        objects = tuple(
            GtObject(int(_require(o, "agent_id", path, line_no)),
                     bool(_require(o, "detected", path, line_no)),
                     box_from_dict(_require(o, "box", path, line_no), path, line_no))
            for o in _require(record, "objects", path, line_no))
        sources = tuple(None if s is None else int(s)
                        for s in _require(record, "detection_sources", path, line_no))
        frames.append(FrameTruth(int(_require(record, "frame_index", path, line_no)),
                                 float(_require(record, "timestamp", path, line_no)),
                                 objects, sources))
    if header is None:
        raise FileFormatError(path, None, "empty ground-truth file")
    return SceneTruth(str(header["scene_id"]), float(header["dt"]), tuple(frames))


def file_digest(path: str | Path) -> str:
    """sha256 of a file's full contents (for byte-identity comparisons)."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
