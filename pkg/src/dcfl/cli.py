"""Batch command-line surface: assignment, bias statistics, evaluation,
and the self-check oracle suites.

All commands are deterministic given their flags and write byte-stable
JSON (fixed key order, indent 2). Exit codes: 0 success, 1 oracle check
failure, 2 usage or configuration error, 3 data parse error.

No command reads image pixels; the engine works entirely from annotation,
offset, and prediction files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import biaslab, dataio, selfcheck
from .assign import assign, assignment_to_dict, maxiou_assign
from .errors import ConfigError, DcflError, ParseError, ShapeError
from .evalkit import scale_bucketed_ap
from .priorfield import build_prior_field, synth_offsets_toward_gt

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_PARSE = 3


def _default_jobs() -> int:
    env = os.environ.get("DCFL_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"DCFL_JOBS must be an integer, got {env!r}")
    return 1


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _annotation_files(ann_dir) -> list[Path]:
    root = Path(ann_dir)
    if not root.is_dir():
        raise ConfigError(f"annotation directory not found: {ann_dir}")
    return sorted(root.glob("*.txt"))


def _parse_buckets(specs) -> dict[str, tuple[float, ...]]:
    out = {}
    for spec in specs or ():
        key, _, values = spec.partition("=")
        if key not in ("scale", "angle") or not values:
            raise ConfigError(f"--buckets expects scale=... or angle=..., got {spec!r}")
        try:
            out[key] = tuple(float(v) for v in values.split(","))
        except ValueError:
            raise ConfigError(f"bad bucket edge list in {spec!r}")
    return out


def _map_jobs(jobs: int, fn, items):
    """Run fn over items, preserving input order regardless of jobs."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _load_scene(path: Path, run):
    try:
        return dataio.parse_dota(path.read_text(), run.classes)
    except ParseError as exc:
        raise ParseError(f"{path.name}: {exc}") from exc


def cmd_assign(args) -> int:
    run = dataio.load_config(args.config)
    files = _annotation_files(args.ann)
    offsets = dataio.read_offsets(args.offsets) if args.offsets else None
    pred_fields = (
        dataio.read_prediction_fields(args.pred) if args.pred else {}
    )

    def process(path: Path):
        gts = _load_scene(path, run)
        file_offsets = offsets
        if args.offsets_synth is not None:
            field = build_prior_field(*run.image_size, run.dcfl.strides, run.dcfl.scale_factor)
            file_offsets = synth_offsets_toward_gt(field, gts, args.offsets_synth)
        predictions = None
        if args.pred:
            if path.name not in pred_fields:
                raise ParseError(f"no prediction entry for {path.name!r} in {args.pred}")
            predictions = pred_fields[path.name]
        result = assign(run.image_size, gts, run.dcfl, file_offsets, predictions)
        doc = {"file": path.name, "num_gts": len(gts)}
        doc.update(assignment_to_dict(result, run.dcfl))
        return doc

    docs = _map_jobs(args.jobs, process, files)
    total_gts = sum(d["num_gts"] for d in docs)
    total_pos = sum(
        sum(len(g["positives"]) for g in d["per_gt"]) for d in docs
    )
    out = {
        "image_size": list(run.image_size),
        "files": docs,
        "summary": {"files": len(docs), "gts": total_gts, "positives": total_pos},
    }
    _write_json(args.out, out)
    print(f"assign: files={len(docs)} gts={total_gts} positives={total_pos}")
    return EXIT_OK


def cmd_stats(args) -> int:
    run = dataio.load_config(args.config)
    files = _annotation_files(args.ann)
    buckets = _parse_buckets(args.buckets)
    scale_edges = buckets.get("scale", run.scale_bucket_edges)
    angle_edges = buckets.get("angle", run.angle_bucket_edges)

    stored = None
    if args.assignments:
        stored_doc = json.loads(Path(args.assignments).read_text())
        stored = {entry["file"]: entry for entry in stored_doc["files"]}

    field = build_prior_field(*run.image_size, run.dcfl.strides, run.dcfl.scale_factor)

    def process(path: Path):
        gts = _load_scene(path, run)
        if stored is not None:
            entry = stored.get(path.name)
            if entry is None or len(entry["per_gt"]) != len(gts):
                raise ParseError(
                    f"assignments file does not match {path.name!r}"
                )
            from .assign import AssignmentResult, GtAssignment, labels_from_rle

            labels = labels_from_rle(
                entry["per_prior_labels"]["runs"], entry["num_priors"]
            )
            per_gt = tuple(
                GtAssignment(
                    g["gt_index"],
                    tuple(g["cps"]),
                    tuple(g["mps"]),
                    tuple(g["positives"]),
                    None if g["dgmm_scores"] is None else tuple(g["dgmm_scores"]),
                    None if g["gjsd"] is None else tuple(g["gjsd"]),
                )
                for g in entry["per_gt"]
            )
            result = AssignmentResult(labels, per_gt)
        elif args.assigner == "maxiou":
            result = maxiou_assign(field, gts)
        else:
            result = assign(run.image_size, gts, run.dcfl)
        return (result, gts, field, None)

    entries = _map_jobs(args.jobs, process, files)
    report = biaslab.bucket_stats_corpus(entries, scale_edges, angle_edges)
    _write_json(args.out_json, report.to_json_dict())
    if args.out_csv:
        Path(args.out_csv).write_text(report.to_csv())
    covered = sum(b.gt_count for b in report.scale)
    print(f"stats: files={len(files)} gts={covered} assigner={args.assigner}")
    return EXIT_OK


def cmd_eval(args) -> int:
    run = dataio.load_config(args.config)
    gt_files = _annotation_files(args.gt)
    gts = []
    for path in gt_files:
        for gt in _load_scene(path, run):
            gts.append((path.stem, gt))
    try:
        dets = dataio.parse_detections_jsonl(Path(args.pred).read_text(), run.classes)
    except ParseError as exc:
        raise ParseError(f"{args.pred}: {exc}") from exc
    thresholds = run.iou_thresholds
    if args.iou_thrs:
        try:
            thresholds = tuple(float(t) for t in args.iou_thrs.split(","))
        except ValueError:
            raise ConfigError(f"bad --iou-thrs list: {args.iou_thrs!r}")
    buckets = _parse_buckets(args.buckets)
    report = scale_bucketed_ap(
        dets,
        gts,
        class_names=run.classes,
        iou_thresholds=thresholds,
        bucket_edges=buckets.get("scale", run.scale_bucket_edges),
    )
    _write_json(args.out, report.to_json_dict())
    mean_ap = report.mean_ap
    print(f"eval: files={len(gt_files)} dets={len(dets)} map={mean_ap:.4f}")
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    results = selfcheck.run_all(trials=args.trials, samples=args.samples, seed=args.seed)
    width = max(len(r.name) for r in results)
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name:<{width}}  {r.detail}  ({r.seconds:.1f}s)")
        ok = ok and r.passed
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dcfl",
        description="Label assignment, bias statistics, and evaluation "
        "for oriented tiny object detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_assign = sub.add_parser("assign", help="assign labels for annotation files")
    p_assign.add_argument("--ann", required=True, help="directory of DOTA .txt files")
    p_assign.add_argument("--config", required=True, help="TOML run configuration")
    p_assign.add_argument("--out", required=True, help="output assignments.json")
    group = p_assign.add_mutually_exclusive_group()
    group.add_argument("--offsets", help="offset field file (OFF1 binary or JSON)")
    group.add_argument(
        "--offsets-synth",
        type=float,
        default=None,
        metavar="GAIN",
        help="synthesize offsets toward the nearest gt with this gain",
    )
    p_assign.add_argument("--pred", help="prediction fields JSON")
    p_assign.add_argument("--jobs", type=int, default=None, help="parallel files")
    p_assign.set_defaults(func=cmd_assign)

    p_stats = sub.add_parser("stats", help="positive-sample bias report")
    p_stats.add_argument("--ann", required=True)
    p_stats.add_argument("--config", required=True)
    p_stats.add_argument("--assigner", choices=("dcfl", "maxiou"), default="dcfl")
    p_stats.add_argument("--assignments", help="reuse a stored assignments.json")
    p_stats.add_argument(
        "--buckets",
        action="append",
        metavar="KIND=E1,E2,...",
        help="bucket edges, e.g. scale=2,8,16,32,64 or angle=0,30,60,90",
    )
    p_stats.add_argument("--out-json", required=True)
    p_stats.add_argument("--out-csv")
    p_stats.add_argument("--jobs", type=int, default=None)
    p_stats.set_defaults(func=cmd_stats)

    p_eval = sub.add_parser("eval", help="rotated-AP evaluation")
    p_eval.add_argument("--gt", required=True, help="directory of DOTA .txt files")
    p_eval.add_argument("--pred", required=True, help="detections JSONL")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--iou-thrs", help="comma list, e.g. 0.5,0.75")
    p_eval.add_argument("--buckets", action="append", metavar="KIND=E1,E2,...")
    p_eval.add_argument("--out", required=True, help="output metrics.json")
    p_eval.set_defaults(func=cmd_eval)

    p_check = sub.add_parser("selfcheck", help="run the oracle suites")
    p_check.add_argument("--trials", type=int, default=150)
    p_check.add_argument("--samples", type=int, default=200_000)
    p_check.add_argument("--seed", type=int, default=20240)
    p_check.set_defaults(func=cmd_selfcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", None) is None and hasattr(args, "jobs"):
        try:
            args.jobs = _default_jobs()
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ShapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ConfigError, DcflError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
