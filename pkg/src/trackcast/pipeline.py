"""End-to-end orchestration: filter, track, forecast, enhance, evaluate.

Scenes are independent, so the pipeline parallelizes at scene granularity
and merges results in input order; output bytes are identical for any
worker count.  Intermediates (tracks, forecasts) are always written when an
output directory is configured, and reloading them through the stage CLIs
reproduces the fused run exactly.
"""

from __future__ import annotations

import json
import random
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .enhancer import EnhancerConfig, enhance_scene
from .evaluation import (
    BucketReport,
    MatchCriterion,
    ap_from_ranked,
    bucket_report,
    pr_curve,
    ranked_detections,
    write_bucket_csv,
    write_metrics_csv,
    write_pr_csv,
)
from .fileio import (
    FileFormatError,
    read_scene,
    read_truth,
    write_enhanced,
    write_forecasts,
    write_tracks,
)
from .forecaster import ForecastConfig, generate_forecasts
from .model import EnhancedFrame, Scene, class_name, confidence_filter
from .simulator import SceneTruth
from .tracker import TrackerConfig, build_tracks

STAGES = ("filter", "track", "forecast", "enhance", "write", "evaluate")


@dataclass(frozen=True)
class PipelineConfig:
    tau_conf: float = 0.3
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    forecast: ForecastConfig = field(default_factory=ForecastConfig)
    enhancer: EnhancerConfig = field(default_factory=EnhancerConfig)
    criterion: MatchCriterion = field(default_factory=MatchCriterion)
    jobs: int = 1
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.tau_conf <= 1.0):
            raise ValueError("tau_conf must lie in [0, 1]")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


class ConfigError(ValueError):
    """A config mapping does not fit the schema."""


def _build_section(cls, data: Mapping, where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = dict(data)
    if cls is TrackerConfig and "dist_threshold_by_class" in kwargs:
        kwargs["dist_threshold_by_class"] = {
            int(k): float(v) for k, v in kwargs["dist_threshold_by_class"].items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


def config_from_dict(data: Mapping) -> PipelineConfig:
    """Build a PipelineConfig from nested mappings; unknown keys are errors."""
    if not isinstance(data, Mapping):
        raise ConfigError("config root must be a mapping")
    allowed = {f.name for f in fields(PipelineConfig)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    kwargs: dict = {}
    for name, cls in (("tracker", TrackerConfig), ("forecast", ForecastConfig),
                      ("enhancer", EnhancerConfig), ("criterion", MatchCriterion)):
        if name in data:
            kwargs[name] = _build_section(cls, data[name], name)
    for name in ("tau_conf", "jobs", "out_dir"):
        if name in data:
            kwargs[name] = data[name]
    try:
        return PipelineConfig(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def config_to_dict(cfg: PipelineConfig) -> dict:
    out = asdict(cfg)
    return out


@dataclass
class SceneStats:
    scene_id: str
    n_frames: int = 0
    boxes_in: int = 0
    boxes_kept: int = 0
    inserted: int = 0
    weight_sum: float = 0.0
    stage_seconds: dict[str, float] = field(default_factory=dict)
    error: str | None = None


@dataclass
class SceneOutcome:
    stats: SceneStats
    enhanced: list[EnhancedFrame] | None = None
    bucket: BucketReport | None = None
    ranked_by_class: dict[int, list[tuple[float, bool]]] | None = None
    gt_by_class: dict[int, int] | None = None


@dataclass
class RunReport:
    """Counts, timings, and (when ground truth is given) quality metrics."""

    n_scenes: int = 0
    n_failed: int = 0
    n_frames: int = 0
    boxes_in: int = 0
    boxes_kept: int = 0
    inserted: int = 0
    mean_weight: float | None = None
    stage_seconds: dict[str, float] = field(default_factory=dict)
    bucket: BucketReport | None = None
    ap_by_class: dict[int, float | None] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)
    scene_stats: list[SceneStats] = field(default_factory=list)
    outcomes: list[SceneOutcome] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "n_scenes": self.n_scenes,
            "n_failed": self.n_failed,
            "n_frames": self.n_frames,
            "boxes_in": self.boxes_in,
            "boxes_kept": self.boxes_kept,
            "inserted": self.inserted,
            "mean_weight": self.mean_weight,
            "stage_seconds": {k: round(v, 6) for k, v in self.stage_seconds.items()},
            "errors": list(self.errors),
        }
        if self.bucket is not None:
            out["eval"] = {
                "teacher_precision": self.bucket.teacher_precision,
                "teacher_recall": self.bucket.teacher_recall,
                "enhanced_recall": self.bucket.enhanced_recall,
                "inserted_only_covered": self.bucket.inserted_only_covered,
                "missed_trackable": self.bucket.missed_trackable,
                "missed_recovered": self.bucket.missed_recovered,
                "ap": {class_name(c): v for c, v in sorted(self.ap_by_class.items())},
                "buckets": [
                    {"match_count": c, "support": s, "precision": p}
                    for c, s, p in self.bucket.bucket_precisions()],
            }
        return out


def process_scene(scene: Scene, cfg: PipelineConfig,
                  truth: SceneTruth | None = None,
                  keep_enhanced: bool = True) -> SceneOutcome:
    """Run one scene through filter -> track -> forecast -> enhance (-> eval)."""
    stats = SceneStats(scene.scene_id, n_frames=len(scene.frames))
    timer = time.perf_counter

    t0 = timer()
    stats.boxes_in = sum(len(f.boxes) for f in scene.frames)
    filtered = Scene(scene.scene_id, scene.dt,
                     tuple(confidence_filter(f, cfg.tau_conf) for f in scene.frames),
                     scene.labeled)
    stats.boxes_kept = sum(len(f.boxes) for f in filtered.frames)
    stats.stage_seconds["filter"] = timer() - t0

    t0 = timer()
    tracks = build_tracks(filtered, 0.0, cfg.tracker)
    stats.stage_seconds["track"] = timer() - t0

    t0 = timer()
    forecast_sets = generate_forecasts(tracks, filtered, cfg.forecast)
    stats.stage_seconds["forecast"] = timer() - t0

    t0 = timer()
    present = {frame.frame_index for frame in filtered.frames}
    routable = [fs for fs in forecast_sets if fs.target_frame in present]
    enhanced = enhance_scene(filtered.frames, routable, cfg.enhancer)
    stats.inserted = sum(len(e.inserted_labels) for e in enhanced)
    stats.weight_sum = sum(l.weight for e in enhanced for l in e.labels)
    stats.stage_seconds["enhance"] = timer() - t0

    if cfg.out_dir is not None:
        t0 = timer()
        out = Path(cfg.out_dir)
        write_tracks(out / "tracks" / f"{scene.scene_id}.jsonl", scene.scene_id, tracks)
        write_forecasts(out / "forecasts" / f"{scene.scene_id}.jsonl",
                        scene.scene_id, forecast_sets)
        write_enhanced(out / "enhanced" / f"{scene.scene_id}.jsonl",
                       scene.scene_id, enhanced)
        stats.stage_seconds["write"] = timer() - t0

    outcome = SceneOutcome(stats, enhanced if keep_enhanced else None)
    if truth is not None:
        t0 = timer()
        outcome.bucket = bucket_report(enhanced, truth.frames, cfg.criterion,
                                       cfg.forecast.min_context)
        preds = [e.teacher_labels for e in enhanced]
        gts = [[o.box for o in tf.objects] for tf in truth.frames]
        classes = sorted({b.class_id for g in gts for b in g})
        outcome.ranked_by_class = {}
        outcome.gt_by_class = {}
        for cid in classes:
            ranked, n_gt = ranked_detections(preds, gts, cfg.criterion, cid)
            outcome.ranked_by_class[cid] = ranked
            outcome.gt_by_class[cid] = n_gt
        stats.stage_seconds["evaluate"] = timer() - t0
    return outcome


def _prepare_out_dir(cfg: PipelineConfig) -> None:
    if cfg.out_dir is None:
        return
    out = Path(cfg.out_dir)
    for sub in ("tracks", "forecasts", "enhanced"):
        (out / sub).mkdir(parents=True, exist_ok=True)


def _process_loaded(args: tuple[Scene, PipelineConfig, SceneTruth | None, bool]) -> SceneOutcome:
    scene, cfg, truth, keep = args
    return process_scene(scene, cfg, truth, keep)


def _process_paths(args: tuple[str, str | None, PipelineConfig]) -> SceneOutcome:
    scene_path, truth_path, cfg = args
    try:
        scene = read_scene(scene_path)
        truth = read_truth(truth_path) if truth_path is not None else None
        return process_scene(scene, cfg, truth, keep_enhanced=False)
    except (FileFormatError, OSError) as e:
        stats = SceneStats(scene_id=str(scene_path), error=str(e))
        return SceneOutcome(stats)


def _merge(outcomes: Iterable[SceneOutcome], cfg: PipelineConfig,
           has_truth: bool) -> RunReport:
    report = RunReport()
    ranked_all: dict[int, list[tuple[float, bool]]] = {}
    gt_all: dict[int, int] = {}
    for outcome in outcomes:
        report.outcomes.append(outcome)
        stats = outcome.stats
        report.scene_stats.append(stats)
        if stats.error is not None:
            report.n_failed += 1
            report.errors.append(f"{stats.scene_id}: {stats.error}")
            continue
        report.n_scenes += 1
        report.n_frames += stats.n_frames
        report.boxes_in += stats.boxes_in
        report.boxes_kept += stats.boxes_kept
        report.inserted += stats.inserted
        for stage, seconds in stats.stage_seconds.items():
            report.stage_seconds[stage] = report.stage_seconds.get(stage, 0.0) + seconds
        if outcome.bucket is not None:
            if report.bucket is None:
                report.bucket = BucketReport(min_context=outcome.bucket.min_context)
            report.bucket.merge(outcome.bucket)
        if outcome.ranked_by_class:
            for cid, ranked in outcome.ranked_by_class.items():
                ranked_all.setdefault(cid, []).extend(ranked)
                gt_all[cid] = gt_all.get(cid, 0) + outcome.gt_by_class[cid]
    total_labels = report.boxes_kept + report.inserted
    if total_labels:
        weight_total = sum(s.weight_sum for s in report.scene_stats if s.error is None)
        report.mean_weight = weight_total / total_labels
    if has_truth and ranked_all:
        for cid, ranked in ranked_all.items():
            ranked.sort(key=lambda t: -t[0])
            report.ap_by_class[cid] = ap_from_ranked(ranked, gt_all[cid])
        if cfg.out_dir is not None:
            _write_eval_reports(Path(cfg.out_dir), report, ranked_all, gt_all, cfg)
    if cfg.out_dir is not None:
        with open(Path(cfg.out_dir) / "report.json", "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, indent=2)
            f.write("\n")
    return report


def _write_eval_reports(out: Path, report: RunReport,
                        ranked_all: dict[int, list[tuple[float, bool]]],
                        gt_all: dict[int, int], cfg: PipelineConfig) -> None:
    bucket = report.bucket
    rows: list[tuple[str, object, object, object]] = []
    thr = cfg.criterion.threshold
    if bucket is not None:
        rows.append(("teacher_precision", None, thr, bucket.teacher_precision))
        rows.append(("teacher_recall", None, thr, bucket.teacher_recall))
        rows.append(("enhanced_recall", None, thr, bucket.enhanced_recall))
        rows.append(("recovery_rate", None, thr, bucket.recovery_rate))
    defined = []
    for cid in sorted(report.ap_by_class):
        ap = report.ap_by_class[cid]
        rows.append(("ap", class_name(cid), thr, ap))
        if ap is not None:
            defined.append(ap)
    if defined:
        rows.append(("map", None, thr, sum(defined) / len(defined)))
    write_metrics_csv(out / "metrics.csv", rows)
    if bucket is not None:
        write_bucket_csv(out / "buckets.csv", bucket)
    write_pr_csv(out / "pr_points.csv",
                 {cid: pr_curve(ranked, gt_all[cid])
                  for cid, ranked in ranked_all.items()})


def run_pipeline(scenes: Sequence[Scene], cfg: PipelineConfig,
                 truths: Sequence[SceneTruth] | Mapping[str, SceneTruth] | None = None,
                 keep_enhanced: bool = True) -> RunReport:
    """Process in-memory scenes, optionally evaluating against ground truth.

    ``truths`` may be a sequence aligned with ``scenes`` or a mapping by
    scene id.  With ``cfg.jobs > 1`` scenes go to a process pool; outputs and
    metrics are merged in input order, so results do not depend on the worker
    count.
    """
    scenes = list(scenes)
    truth_by_id: dict[str, SceneTruth] = {}
    if truths is not None:
        if isinstance(truths, Mapping):
            truth_by_id = dict(truths)
        else:
            truth_by_id = {t.scene_id: t for t in truths}
    _prepare_out_dir(cfg)
    args = [(scene, cfg, truth_by_id.get(scene.scene_id), keep_enhanced)
            for scene in scenes]
    if cfg.jobs > 1 and len(scenes) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(_process_loaded, args))
    else:
        outcomes = [_process_loaded(a) for a in args]
    return _merge(outcomes, cfg, has_truth=bool(truth_by_id))


def run_pipeline_files(scene_paths: Sequence[str | Path],
                       truth_paths: Mapping[str, str | Path] | None,
                       cfg: PipelineConfig) -> RunReport:
    """Like run_pipeline but loading each scene inside the worker.

    ``truth_paths`` maps the scene file stem to its ground-truth file.  A
    scene that fails to load is reported in the run's error list without
    aborting the batch.  Memory stays bounded by one scene per worker.
    """
    _prepare_out_dir(cfg)
    args = []
    for path in scene_paths:
        stem = Path(path).stem
        tpath = None
        if truth_paths is not None and stem in truth_paths:
            tpath = str(truth_paths[stem])
        args.append((str(path), tpath, cfg))
    if cfg.jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(_process_paths, args))
    else:
        outcomes = [_process_paths(a) for a in args]
    return _merge(outcomes, cfg, has_truth=bool(truth_paths))


def export_training_set(labeled: Sequence[Scene | str],
                        unlabeled: Sequence[Scene | str],
                        batch_size: int, seed: int = 0) -> dict:
    """Deterministic batch manifest mixing labeled and unlabeled scenes 1:1.

    ``batch_size`` counts both halves, so it must be even; each batch holds
    ``batch_size / 2`` of each kind.  Unlabeled scenes are consumed exactly
    once in shuffled order; labeled scenes repeat cyclically (also shuffled)
    when outnumbered.  The same seed always yields the same manifest.
    """
    def scene_id(s: Scene | str) -> str:
        return s.scene_id if isinstance(s, Scene) else str(s)

    if not labeled or not unlabeled:
        raise ValueError("need at least one labeled and one unlabeled scene")
    if batch_size < 2 or batch_size % 2 != 0:
        raise ValueError("batch_size must be an even number >= 2")
    half = batch_size // 2
    rng = random.Random(seed)
    lab = [scene_id(s) for s in labeled]
    unl = [scene_id(s) for s in unlabeled]
    rng.shuffle(lab)
    rng.shuffle(unl)
    batches = []
    li = 0
    for start in range(0, len(unl), half):
        chunk = unl[start:start + half]
        paired = [lab[(li + k) % len(lab)] for k in range(len(chunk))]
        li += len(chunk)
        batches.append({"labeled": paired, "unlabeled": chunk})
    return {"format_version": 1, "kind": "batch_manifest", "seed": seed,
            "batch_size": batch_size, "batches": batches}
