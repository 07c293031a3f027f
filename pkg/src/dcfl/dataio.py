"""File formats: DOTA annotations, TOML run configuration, offset fields,
prediction fields, and detection JSON lines.

Internal geometry is always radians / canonical boxes; the only
degree-based surface is the dataset-facing angle convention used in bias
reports. Number parsing is locale-independent (decimal point only).
"""

from __future__ import annotations

import json
import math
import struct
import sys
from dataclasses import dataclass

import numpy as np

from .assign import DcflConfig, GtInstance, PredictionField
from .errors import ConfigError, ParseError, ShapeError
from .evalkit import DEFAULT_BUCKET_EDGES, DEFAULT_IOU_THRESHOLDS, Detection
from .geom import OBox, box_from_quad, quad_from_box
from .priorfield import OffsetField

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_CLASSES = (
    "airplane",
    "bridge",
    "storage-tank",
    "ship",
    "swimming-pool",
    "vehicle",
    "person",
    "wind-mill",
)
DEFAULT_ANGLE_EDGES = tuple(float(a) for a in range(0, 100, 10))

_SKIP_PREFIXES = ("imagesource:", "gsd:")


def parse_dota(text: str, classes=DEFAULT_CLASSES) -> list[GtInstance]:
    """Parse DOTA-format annotation text into gt instances.

    Records are ``x1 y1 x2 y2 x3 y3 x4 y4 class [difficulty]``; metadata
    lines (imagesource:/gsd:) and blank lines are skipped. Class names
    match case-sensitively against ``classes``.
    """
    gts = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(_SKIP_PREFIXES):
            continue
        tokens = line.split()
        if len(tokens) not in (9, 10):
            raise ParseError(
                f"expected 9 or 10 tokens, got {len(tokens)}: {line!r}", lineno
            )
        try:
            coords = [float(t) for t in tokens[:8]]
        except ValueError as exc:
            raise ParseError(f"malformed coordinate in {tokens[:8]}", lineno) from exc
        if not all(math.isfinite(c) for c in coords):
            raise ParseError(f"non-finite coordinate in {tokens[:8]}", lineno)
        name = tokens[8]
        if name not in classes:
            raise ParseError(f"unknown class {name!r}", lineno)
        difficulty = 0
        if len(tokens) == 10:
            if tokens[9] not in ("0", "1"):
                raise ParseError(f"difficulty must be 0 or 1, got {tokens[9]!r}", lineno)
            difficulty = int(tokens[9])
        try:
            box = box_from_quad(list(zip(coords[0::2], coords[1::2])))
        except Exception as exc:
            raise ParseError(f"degenerate polygon: {exc}", lineno) from exc
        gts.append(GtInstance(box, classes.index(name), difficulty))
    return gts


def serialize_dota(gts, classes=DEFAULT_CLASSES) -> str:
    """Inverse of :func:`parse_dota` up to the polygon representation."""
    lines = []
    for gt in gts:
        pts = quad_from_box(gt.box).pts
        coords = " ".join(f"{c:.6f}" for xy in pts for c in xy)
        lines.append(f"{coords} {classes[gt.class_id]} {gt.difficulty}")
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass(frozen=True)
class RunConfig:
    """Assignment parameters plus dataset and evaluation settings."""

    dcfl: DcflConfig
    classes: tuple[str, ...]
    image_size: tuple[float, float]
    iou_thresholds: tuple[float, ...]
    scale_bucket_edges: tuple[float, ...]
    angle_bucket_edges: tuple[float, ...]


_CONFIG_KEYS = {
    "k",
    "q",
    "g",
    "w1",
    "alpha",
    "strides",
    "scale_factor",
    "n_offsets",
    "classes",
    "image_size",
    "iou_thresholds",
    "scale_buckets",
    "angle_buckets",
}


def config_from_mapping(data: dict) -> RunConfig:
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    def take(key, default, kind):
        value = data.get(key, default)
        try:
            if kind is tuple:
                return tuple(value)
            return kind(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from exc

    dcfl = DcflConfig(
        k=take("k", 16, int),
        q=take("q", 12, int),
        g=take("g", 0.8, float),
        w1=take("w1", 0.7, float),
        alpha=take("alpha", 0.5, float),
        strides=take("strides", (8.0, 16.0, 32.0, 64.0, 128.0), tuple),
        scale_factor=take("scale_factor", 4.0, float),
        n_offsets=take("n_offsets", 9, int),
    )
    classes = take("classes", DEFAULT_CLASSES, tuple)
    if not classes or any(not isinstance(c, str) for c in classes):
        raise ConfigError("classes must be a non-empty list of names")
    image_size = take("image_size", (800.0, 800.0), tuple)
    if len(image_size) != 2 or any(float(v) <= 0 for v in image_size):
        raise ConfigError(f"image_size must be two positive numbers, got {image_size}")
    return RunConfig(
        dcfl=dcfl,
        classes=tuple(classes),
        image_size=(float(image_size[0]), float(image_size[1])),
        iou_thresholds=tuple(float(t) for t in take("iou_thresholds", DEFAULT_IOU_THRESHOLDS, tuple)),
        scale_bucket_edges=tuple(float(e) for e in take("scale_buckets", DEFAULT_BUCKET_EDGES, tuple)),
        angle_bucket_edges=tuple(float(e) for e in take("angle_buckets", DEFAULT_ANGLE_EDGES, tuple)),
    )


def load_config(path) -> RunConfig:
    """Load a TOML run configuration; missing keys take the defaults,
    unknown keys are rejected."""
    with open(path, "rb") as f:
        try:
            data = tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return config_from_mapping(data)


_OFFSET_MAGIC = b"OFF1"


def write_offsets(path, offsets: OffsetField, fmt: str = "binary") -> None:
    """Store an offset field; ``fmt`` is "binary" (magic OFF1, uint32
    counts, little-endian float32 data) or "json" (nested arrays)."""
    arr = offsets.offsets
    if fmt == "binary":
        with open(path, "wb") as f:
            f.write(_OFFSET_MAGIC)
            f.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
            f.write(arr.astype("<f4").tobytes())
    elif fmt == "json":
        with open(path, "w") as f:
            json.dump(arr.tolist(), f)
            f.write("\n")
    else:
        raise ConfigError(f"unknown offset format {fmt!r}")


def read_offsets(path) -> OffsetField:
    """Load an offset field, sniffing binary (OFF1) vs JSON layout."""
    with open(path, "rb") as f:
        head = f.read(4)
        if head == _OFFSET_MAGIC:
            num, n = struct.unpack("<II", f.read(8))
            data = np.frombuffer(f.read(), dtype="<f4")
            if data.size != num * n * 2:
                raise ParseError(
                    f"offset payload holds {data.size} floats, header implies {num * n * 2}"
                )
            return OffsetField(data.reshape(num, n, 2).astype(float))
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ParseError(f"offset file is neither OFF1 binary nor JSON: {exc}") from exc
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ParseError(f"JSON offsets must be [num_priors][n][2], got shape {arr.shape}")
    return OffsetField(arr)


def write_prediction_fields(path, fields: dict[str, PredictionField]) -> None:
    """Store per-annotation-file prediction fields as one JSON document."""
    doc = {
        name: {"scores": f.scores.tolist(), "boxes": f.boxes.tolist()}
        for name, f in fields.items()
    }
    with open(path, "w") as f:
        json.dump(doc, f)
        f.write("\n")


def read_prediction_fields(path) -> dict[str, PredictionField]:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid prediction JSON: {exc}") from exc
    out = {}
    for name, entry in doc.items():
        try:
            out[name] = PredictionField(
                np.asarray(entry["scores"], dtype=float),
                np.asarray(entry["boxes"], dtype=float),
            )
        except (KeyError, ShapeError) as exc:
            raise ParseError(f"prediction entry {name!r}: {exc}") from exc
    return out


def parse_detections_jsonl(text: str, classes=DEFAULT_CLASSES) -> list[Detection]:
    """One detection per line: {"image_id", "class", "confidence",
    "box": [cx, cy, w, h, theta_radians]}."""
    dets = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}", lineno) from exc
        try:
            name = obj["class"]
            if name not in classes:
                raise ParseError(f"unknown class {name!r}", lineno)
            box = OBox(*(float(v) for v in obj["box"]))
            dets.append(
                Detection(box, classes.index(name), float(obj["confidence"]), str(obj["image_id"]))
            )
        except ParseError:
            raise
        except Exception as exc:
            raise ParseError(f"bad detection record: {exc}", lineno) from exc
    return dets


def serialize_detections_jsonl(dets, classes=DEFAULT_CLASSES) -> str:
    lines = []
    for d in dets:
        lines.append(
            json.dumps(
                {
                    "image_id": d.image_id,
                    "class": classes[d.class_id],
                    "confidence": d.confidence,
                    "box": [d.box.cx, d.box.cy, d.box.w, d.box.h, d.box.theta],
                }
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")
