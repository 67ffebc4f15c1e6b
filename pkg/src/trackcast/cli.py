"""Command-line interface.

Subcommands cover each pipeline stage plus simulation, evaluation, and
training-set export.  All stages speak the JSON Lines formats from
``fileio``, so external tools (e.g. a neural forecaster) can replace any
stage by writing the same format.  Exit codes: 0 success, 1 validation
failure (bad config or malformed file, reported with line numbers), 2 I/O
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .enhancer import enhance_scene
from .fileio import (
    FileFormatError,
    read_enhanced,
    read_forecasts,
    read_header,
    read_scene,
    read_tracks,
    read_truth,
    write_enhanced,
    write_forecasts,
    write_scene,
    write_tracks,
    write_truth,
)
from .forecaster import generate_forecasts
from .model import EnhancedFrame, TEACHER, WeightedLabel, confidence_filter
from .pipeline import (
    ConfigError,
    PipelineConfig,
    config_from_dict,
    export_training_set,
    run_pipeline_files,
)
from .simulator import make_dataset, make_labeled_scenes
from .tracker import build_tracks


def _load_config(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from e
    return config_from_dict(data)


def _jsonl_files(path: str) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        return sorted(p.glob("*.jsonl"))
    return [p]


def _cmd_simulate(args: argparse.Namespace) -> int:
    out = Path(args.out)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    (out / "truth").mkdir(parents=True, exist_ok=True)
    pairs = make_dataset(args.scenes, args.seed, n_frames=args.frames,
                         n_agents=args.agents, dt=args.dt)
    for scene, truth in pairs:
        write_scene(out / "scenes" / f"{scene.scene_id}.jsonl", scene)
        write_truth(out / "truth" / f"{scene.scene_id}.jsonl", truth)
    n_labeled = 0
    if args.labeled > 0:
        (out / "labeled").mkdir(parents=True, exist_ok=True)
        for scene in make_labeled_scenes(args.labeled, args.seed,
                                         n_frames=args.frames,
                                         n_agents=args.agents, dt=args.dt):
            write_scene(out / "labeled" / f"{scene.scene_id}.jsonl", scene)
            n_labeled += 1
    print(f"wrote {len(pairs)} scene(s) + truth, {n_labeled} labeled scene(s) "
          f"under {out}")
    return 0


def _cmd_track(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    if args.tau_conf is not None:
        cfg = replace(cfg, tau_conf=args.tau_conf)
    scene = read_scene(args.scene)
    tracks = build_tracks(scene, cfg.tau_conf, cfg.tracker)
    write_tracks(args.out, scene.scene_id, tracks)
    print(f"{scene.scene_id}: {len(tracks)} track(s) -> {args.out}")
    return 0


def _cmd_forecast(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    scene = read_scene(args.scene)
    tracks = read_tracks(args.tracks)
    sets = generate_forecasts(tracks, scene, cfg.forecast)
    write_forecasts(args.out, scene.scene_id, sets)
    print(f"{scene.scene_id}: {len(sets)} forecast set(s) -> {args.out}")
    return 0


def _cmd_enhance(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    if args.tau_conf is not None:
        cfg = replace(cfg, tau_conf=args.tau_conf)
    scene = read_scene(args.scene)
    sets = read_forecasts(args.forecasts)
    filtered = [confidence_filter(frame, cfg.tau_conf) for frame in scene.frames]
    present = {frame.frame_index for frame in filtered}
    routable = [fs for fs in sets if fs.target_frame in present]
    enhanced = enhance_scene(filtered, routable, cfg.enhancer)
    write_enhanced(args.out, scene.scene_id, enhanced)
    n_ins = sum(len(e.inserted_labels) for e in enhanced)
    print(f"{scene.scene_id}: {len(enhanced)} frame(s), {n_ins} inserted -> {args.out}")
    return 0


def _labels_as_enhanced(path: Path) -> list[EnhancedFrame]:
    """Read labels from an enhanced, scene, or ground-truth file."""
    kind = read_header(path).get("kind", "scene")
    if kind == "enhanced":
        return read_enhanced(path)
    if kind == "ground_truth":
        frames = [(tf.frame_index, [o.box for o in tf.objects])
                  for tf in read_truth(path).frames]
    else:
        frames = [(f.frame_index, list(f.boxes)) for f in read_scene(path).frames]
    return [EnhancedFrame(idx,
                          tuple(WeightedLabel(b, 1.0, TEACHER) for b in boxes),
                          tuple(0 for _ in boxes))
            for idx, boxes in frames]


def _cmd_eval(args: argparse.Namespace) -> int:
    # Local import: evaluation aggregation helpers live with the pipeline.
    from .evaluation import BucketReport, ap_from_ranked, bucket_report, ranked_detections
    from .pipeline import RunReport, _write_eval_reports

    cfg = _load_config(args.config)
    label_files = _jsonl_files(args.labels)
    if Path(args.labels).is_file() and Path(args.truth).is_file():
        pairs = [(label_files[0], Path(args.truth))]
    else:
        truth_files = {p.stem: p for p in _jsonl_files(args.truth)}
        missing = [p.name for p in label_files if p.stem not in truth_files]
        if missing:
            raise ValueError(f"no ground truth for: {', '.join(missing)}")
        pairs = [(p, truth_files[p.stem]) for p in label_files]
    report = RunReport()
    report.bucket = BucketReport(min_context=cfg.forecast.min_context)
    ranked_all: dict[int, list[tuple[float, bool]]] = {}
    gt_all: dict[int, int] = {}
    for path, tpath in pairs:
        enhanced = _labels_as_enhanced(path)
        truth = read_truth(tpath)
        bucket_report(enhanced, truth.frames, cfg.criterion,
                      cfg.forecast.min_context, report.bucket)
        preds = [e.teacher_labels for e in enhanced]
        gts = [[o.box for o in tf.objects] for tf in truth.frames]
        for cid in sorted({b.class_id for g in gts for b in g}):
            ranked, n_gt = ranked_detections(preds, gts, cfg.criterion, cid)
            ranked_all.setdefault(cid, []).extend(ranked)
            gt_all[cid] = gt_all.get(cid, 0) + n_gt
    for cid, ranked in ranked_all.items():
        ranked.sort(key=lambda t: -t[0])
        report.ap_by_class[cid] = ap_from_ranked(ranked, gt_all[cid])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_eval_reports(out, report, ranked_all, gt_all, cfg)
    b = report.bucket
    def fmt(v: float | None) -> str:
        return "n/a" if v is None else f"{v:.4f}"
    print(f"evaluated {len(label_files)} file(s): "
          f"precision={fmt(b.teacher_precision)} recall={fmt(b.teacher_recall)} "
          f"enhanced_recall={fmt(b.enhanced_recall)}")
    for cid in sorted(report.ap_by_class):
        print(f"  ap[{cid}]={fmt(report.ap_by_class[cid])}")
    print(f"reports -> {out}")
    return 0


def _cmd_pipeline(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    overrides: dict = {"out_dir": args.out}
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.tau_conf is not None:
        overrides["tau_conf"] = args.tau_conf
    cfg = replace(cfg, **overrides)
    scene_paths = _jsonl_files(args.scenes)
    truth_paths = None
    if args.truth is not None:
        truth_paths = {p.stem: p for p in _jsonl_files(args.truth)}
    report = run_pipeline_files(scene_paths, truth_paths, cfg)
    print(f"processed {report.n_scenes}/{len(scene_paths)} scene(s), "
          f"{report.boxes_kept} label(s) kept, {report.inserted} inserted "
          f"-> {args.out}")
    for line in report.errors:
        print(f"error: {line}", file=sys.stderr)
    return 1 if report.n_failed else 0


def _cmd_export(args: argparse.Namespace) -> int:
    labeled = [p.stem for p in _jsonl_files(args.labeled)]
    unlabeled = [p.stem for p in _jsonl_files(args.unlabeled)]
    manifest = export_training_set(labeled, unlabeled, args.batch_size, args.seed)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    print(f"{len(manifest['batches'])} batch(es) -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trackcast",
        description="Refine 3D detection pseudo-labels with trajectory forecasts.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file (pipeline schema)")

    p = sub.add_parser("simulate", help="generate synthetic scenes + ground truth")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scenes", type=int, default=4)
    p.add_argument("--frames", type=int, default=40)
    p.add_argument("--agents", type=int, default=12)
    p.add_argument("--dt", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--labeled", type=int, default=0,
                   help="also emit this many uncorrupted labeled scenes")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("track", help="build tracks from a scene file")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau-conf", type=float, default=None)
    add_config(p)
    p.set_defaults(func=_cmd_track)

    p = sub.add_parser("forecast", help="forecast track motion")
    p.add_argument("--scene", required=True)
    p.add_argument("--tracks", required=True)
    p.add_argument("--out", required=True)
    add_config(p)
    p.set_defaults(func=_cmd_forecast)

    p = sub.add_parser("enhance", help="reweight labels and insert forecasts")
    p.add_argument("--scene", required=True)
    p.add_argument("--forecasts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau-conf", type=float, default=None)
    add_config(p)
    p.set_defaults(func=_cmd_enhance)

    p = sub.add_parser("eval", help="score labels against ground truth")
    p.add_argument("--labels", required=True,
                   help="enhanced or scene file, or a directory of them")
    p.add_argument("--truth", required=True,
                   help="ground-truth file or directory (paired by filename)")
    p.add_argument("--out", required=True, help="directory for CSV reports")
    add_config(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("pipeline", help="run every stage over a scene directory")
    p.add_argument("--scenes", required=True, help="scene file or directory")
    p.add_argument("--truth", default=None, help="ground-truth file or directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--tau-conf", type=float, default=None)
    add_config(p)
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("export", help="write a 1:1 labeled/unlabeled batch manifest")
    p.add_argument("--labeled", required=True, help="labeled scene dir (or file)")
    p.add_argument("--unlabeled", required=True, help="unlabeled scene dir (or file)")
    p.add_argument("--out", required=True, help="manifest JSON path")
    p.add_argument("--batch-size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileFormatError, ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
