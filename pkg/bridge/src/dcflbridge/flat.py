"""Marshalling layer between flat numeric arrays and the dcfl CLI."""

from __future__ import annotations

import json
import math
import struct
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

_ABI = "dcfl-flat/1"

_DEFAULTS = {
    "k": 16,
    "q": 12,
    "g": 0.8,
    "w1": 0.7,
    "alpha": 0.5,
    "strides": (8.0, 16.0, 32.0, 64.0, 128.0),
    "scale_factor": 4.0,
    "n_offsets": 9,
}


def abi_version() -> str:
    """Version string of the flat-array binding contract."""
    return _ABI


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)


def _as_2d(name: str, arr, cols: int) -> np.ndarray:
    out = np.asarray(arr, dtype=float)
    if out.size == 0:
        return out.reshape(0, cols)
    _require(out.ndim == 2, f"{name} must be 2-D, got {out.ndim} dims")
    _require(
        out.shape[1] == cols,
        f"{name} must have {cols} columns, got {out.shape[1]}",
    )
    _require(bool(np.isfinite(out).all()), f"{name} contains non-finite values")
    return out


def _box_corners(cx: float, cy: float, w: float, h: float, theta: float):
    c, s = math.cos(theta), math.sin(theta)
    hw, hh = 0.5 * w, 0.5 * h
    return [
        (cx + c * dx - s * dy, cy + s * dx + c * dy)
        for dx, dy in ((-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh))
    ]


def _dota_text(gt_rows: np.ndarray, class_names) -> str:
    lines = []
    for cx, cy, w, h, theta, class_id, difficulty in gt_rows:
        corners = _box_corners(cx, cy, w, h, theta)
        coords = " ".join(f"{v:.6f}" for xy in corners for v in xy)
        lines.append(f"{coords} {class_names[int(class_id)]} {int(difficulty)}")
    return "\n".join(lines) + ("\n" if lines else "")


def _toml_value(value) -> str:
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return repr(float(value))
    return json.dumps(value)


def _write_toml(path: Path, mapping: dict) -> None:
    path.write_text(
        "".join(f"{key} = {_toml_value(value)}\n" for key, value in mapping.items())
    )


def _write_offsets(path: Path, offsets: np.ndarray) -> None:
    path.write_bytes(
        b"OFF1"
        + struct.pack("<II", offsets.shape[0], offsets.shape[1])
        + offsets.astype("<f4").tobytes()
    )


def _run_cli(argv, cwd: Path) -> None:
    proc = subprocess.run(
        [sys.executable, "-m", "dcfl.cli", *argv],
        cwd=cwd,
        capture_output=True,
        text=True,
    )
    if proc.returncode != 0:
        raise RuntimeError(
            f"dcfl {argv[0]} exited {proc.returncode}: {proc.stderr.strip()}"
        )


def dcfl_assign_flat(
    gts,
    image_size,
    config: dict | None = None,
    offsets=None,
    scores=None,
    pred_boxes=None,
):
    """Run label assignment over flat arrays.

    Parameters
    ----------
    gts : (Ngt, 7) array of (cx, cy, w, h, theta, class_id, difficulty).
    image_size : (width, height) in pixels.
    config : optional scalar overrides (k, q, g, w1, alpha, strides,
        scale_factor, n_offsets).
    offsets : optional (Np, n, 2) offset vectors in feature-cell units.
    scores : optional (Np, C) class scores in [0, 1].
    pred_boxes : optional (Np, 5) predicted boxes; required with scores.

    Returns
    -------
    labels : (Np,) uint8, 1 where the prior is positive.
    gt_index : (Np,) int32, owning gt index or -1.
    pos_mask : (Ngt, Np) bool, positive priors per gt.
    """
    gt_rows = _as_2d("gts", gts, 7)
    _require(len(image_size) == 2, f"image_size must have 2 entries, got {len(image_size)}")
    params = dict(_DEFAULTS)
    for key, value in (config or {}).items():
        _require(key in _DEFAULTS, f"unknown config key {key!r}")
        params[key] = value

    num_classes = int(gt_rows[:, 5].max()) + 1 if gt_rows.size else 1
    class_names = [f"c{i}" for i in range(num_classes)]

    offsets_arr = None
    if offsets is not None:
        offsets_arr = np.asarray(offsets, dtype=float)
        _require(
            offsets_arr.ndim == 3 and offsets_arr.shape[2] == 2,
            f"offsets must have shape (num_priors, n, 2), got {offsets_arr.shape}",
        )
    scores_arr = boxes_arr = None
    if (scores is None) != (pred_boxes is None):
        raise ValueError("scores and pred_boxes must be supplied together")
    if scores is not None:
        scores_arr = np.asarray(scores, dtype=float)
        _require(scores_arr.ndim == 2, f"scores must be 2-D, got {scores_arr.ndim} dims")
        boxes_arr = _as_2d("pred_boxes", pred_boxes, 5)
        _require(
            boxes_arr.shape[0] == scores_arr.shape[0],
            f"scores cover {scores_arr.shape[0]} priors, pred_boxes {boxes_arr.shape[0]}",
        )
        _require(
            scores_arr.shape[1] >= num_classes,
            f"scores have {scores_arr.shape[1]} classes, gts need {num_classes}",
        )

    with tempfile.TemporaryDirectory(prefix="dcflbridge-") as tmp:
        root = Path(tmp)
        ann = root / "ann"
        ann.mkdir()
        (ann / "scene.txt").write_text(_dota_text(gt_rows, class_names))
        _write_toml(
            root / "run.toml",
            {
                **params,
                "strides": list(params["strides"]),
                "image_size": [float(image_size[0]), float(image_size[1])],
                "classes": class_names,
            },
        )
        argv = [
            "assign",
            "--ann",
            str(ann),
            "--config",
            str(root / "run.toml"),
            "--out",
            str(root / "assignments.json"),
        ]
        if offsets_arr is not None:
            _write_offsets(root / "offsets.bin", offsets_arr)
            argv += ["--offsets", str(root / "offsets.bin")]
        if scores_arr is not None:
            (root / "pred.json").write_text(
                json.dumps(
                    {
                        "scene.txt": {
                            "scores": scores_arr.tolist(),
                            "boxes": boxes_arr.tolist(),
                        }
                    }
                )
            )
            argv += ["--pred", str(root / "pred.json")]
        _run_cli(argv, root)
        doc = json.loads((root / "assignments.json").read_text())

    entry = doc["files"][0]
    num_priors = entry["num_priors"]
    gt_index = np.full(num_priors, -1, dtype=np.int32)
    cursor = 0
    for value, count in entry["per_prior_labels"]["runs"]:
        gt_index[cursor : cursor + count] = value
        cursor += count
    if cursor != num_priors:
        raise RuntimeError(f"label RLE decodes to {cursor} entries, expected {num_priors}")
    labels = (gt_index >= 0).astype(np.uint8)
    pos_mask = np.zeros((gt_rows.shape[0], num_priors), dtype=bool)
    for g in entry["per_gt"]:
        pos_mask[g["gt_index"], g["positives"]] = True
    return labels, gt_index, pos_mask


def dcfl_eval_flat(dets, gts, thresholds=(0.5,)):
    """Evaluate flat detection and gt arrays; returns the metrics mapping.

    ``dets`` rows are (cx, cy, w, h, theta, class_id, confidence,
    image_id); ``gts`` rows are (cx, cy, w, h, theta, class_id,
    difficulty, image_id). Image ids are small integers. Empty inputs
    return an empty mapping.
    """
    det_rows = _as_2d("dets", dets, 8)
    gt_rows = _as_2d("gts", gts, 8)
    if det_rows.size == 0 and gt_rows.size == 0:
        return {}
    thresholds = [float(t) for t in thresholds]
    _require(len(thresholds) >= 1, "thresholds must be non-empty")

    ids = set(np.concatenate([det_rows[:, 5], gt_rows[:, 5]]).astype(int).tolist())
    num_classes = (max(ids) + 1) if ids else 1
    class_names = [f"c{i}" for i in range(num_classes)]

    with tempfile.TemporaryDirectory(prefix="dcflbridge-") as tmp:
        root = Path(tmp)
        gt_dir = root / "gt"
        gt_dir.mkdir()
        for image in sorted(set(gt_rows[:, 7].astype(int).tolist()) | set(det_rows[:, 7].astype(int).tolist())):
            rows = gt_rows[gt_rows[:, 7].astype(int) == image][:, :7]
            (gt_dir / f"img{image}.txt").write_text(_dota_text(rows, class_names))
        lines = []
        for cx, cy, w, h, theta, class_id, conf, image in det_rows:
            lines.append(
                json.dumps(
                    {
                        "image_id": f"img{int(image)}",
                        "class": class_names[int(class_id)],
                        "confidence": float(conf),
                        "box": [float(cx), float(cy), float(w), float(h), float(theta)],
                    }
                )
            )
        (root / "dets.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))
        _write_toml(root / "run.toml", {"classes": class_names})
        _run_cli(
            [
                "eval",
                "--gt",
                str(gt_dir),
                "--pred",
                str(root / "dets.jsonl"),
                "--config",
                str(root / "run.toml"),
                "--iou-thrs",
                ",".join(str(t) for t in thresholds),
                "--out",
                str(root / "metrics.json"),
            ],
            root,
        )
        return json.loads((root / "metrics.json").read_text())
