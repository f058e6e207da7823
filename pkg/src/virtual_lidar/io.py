"""On-disk formats: point clouds, labels, ground masks, histograms, manifests.

Cloud files are headerless little-endian float32 records of
``(x, y, z, intensity)``, the layout used by KITTI-style ``.bin`` dumps.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .alignment import ObjectLabel
from .errors import IoFailure, LengthMismatch, SchemaError, TruncatedFile
from .geometry import PointCloud

RECORD = np.dtype("<f4")
RECORD_BYTES = 16


def read_cloud(path, frame="world"):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) % RECORD_BYTES:
        raise TruncatedFile(f"{path}: {len(raw)} bytes is not a multiple of {RECORD_BYTES}")
    arr = np.frombuffer(raw, dtype=RECORD).reshape(-1, 4)
    return PointCloud(arr[:, :3], arr[:, 3], frame)


def cloud_bytes(cloud):
    arr = np.column_stack([cloud.xyz, cloud.intensity]).astype(RECORD)
    return arr.tobytes()


def write_cloud(path, cloud):
    try:
        Path(path).write_bytes(cloud_bytes(cloud))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_mask(path, n_points=None):
    """One byte per point, 0 or 1."""
    try:
        raw = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if n_points is not None and len(raw) != n_points:
        raise LengthMismatch(f"{path}: mask has {len(raw)} entries for {n_points} points")
    if (raw > 1).any():
        raise SchemaError(str(path), "mask bytes must be 0 or 1")
    return raw.astype(bool)


def write_mask(path, mask):
    Path(path).write_bytes(np.asarray(mask, dtype=bool).astype(np.uint8).tobytes())


# -- labels -----------------------------------------------------------------

def _numbers(doc, key, n, where):
    if key not in doc:
        raise SchemaError(f"{where}.{key}", "missing field")
    v = doc[key]
    if not isinstance(v, list) or len(v) != n:
        raise SchemaError(f"{where}.{key}", f"expected a list of {n} numbers")
    out = []
    for q, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise SchemaError(f"{where}.{key}[{q}]", "expected a finite number")
        out.append(float(x))
    return tuple(out)


def label_from_dict(doc, where="label", rotation_format="rotvec"):
    """Parse one label object; ``rotation_format='yaw'`` accepts a scalar."""
    if not isinstance(doc, dict):
        raise SchemaError(where, "expected an object")
    for key in ("id", "category"):
        if key not in doc:
            raise SchemaError(f"{where}.{key}", "missing field")
    if not isinstance(doc["category"], str):
        raise SchemaError(f"{where}.category", "expected a string")
    if isinstance(doc["id"], bool) or not isinstance(doc["id"], (str, int)):
        raise SchemaError(f"{where}.id", "expected a string or integer")
    center = _numbers(doc, "center", 3, where)
    size = _numbers(doc, "size", 3, where)
    if min(size) <= 0:
        raise SchemaError(f"{where}.size", "dimensions must be positive")
    if rotation_format == "yaw" and isinstance(doc.get("rotation"), (int, float)) and not isinstance(doc.get("rotation"), bool):
        rotation = (0.0, 0.0, float(doc["rotation"]))
    else:
        rotation = _numbers(doc, "rotation", 3, where)
    return ObjectLabel(doc["id"], doc["category"], size, center, rotation)


def label_to_dict(label, **extra):
    # repr-shortest floats round-trip exactly through json
    return {
        "id": label.id,
        "category": label.category,
        "center": [float(v) for v in label.center],
        "size": [float(v) for v in label.size],
        "rotation": [float(v) for v in label.rotation],
        **extra,
    }


def parse_labels(text, rotation_format="rotvec", source="labels"):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(source, f"invalid JSON: {exc}") from exc
    if not isinstance(doc, list):
        raise SchemaError(source, "expected a JSON array of labels")
    return [label_from_dict(d, f"[{q}]", rotation_format) for q, d in enumerate(doc)]


def read_labels(path, rotation_format="rotvec"):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return parse_labels(text, rotation_format, str(path))


def labels_json(labels):
    docs = []
    for lab in labels:
        extra = {"ego": True} if getattr(lab, "ego", False) else {}
        docs.append(label_to_dict(lab, **extra))
    return json.dumps(docs, indent=2) + "\n"


def write_labels(path, labels):
    try:
        Path(path).write_text(labels_json(labels), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# -- histograms -------------------------------------------------------------

def read_histogram(path):
    from .metrics import ClassHistogram

    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(str(path), f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "classes" not in doc or "weights" not in doc:
        raise SchemaError(str(path), 'expected {"classes": [...], "weights": [...]}')
    try:
        return ClassHistogram(doc["classes"], doc["weights"])
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}.weights", str(exc)) from exc


def write_histogram(path, hist):
    doc = {"classes": list(hist.classes), "weights": [float(w) for w in hist.weights]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# -- manifests --------------------------------------------------------------

@dataclass(frozen=True)
class FrameBundle:
    cloud: str
    labels: str
    frame_id: str
    ground_mask: str | None = None

    def check(self):
        for p in (self.cloud, self.labels, self.ground_mask):
            if p is not None and not os.path.exists(p):
                raise IoFailure(f"missing input file {p}")
        return self


def read_manifest(path):
    """One frame per line: ``cloud<TAB>labels[<TAB>mask]``; ``#`` comments."""
    base = Path(path).parent
    bundles = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.rstrip("\n").split("\t")
        if len(cols) not in (2, 3):
            raise SchemaError(f"{path}:{lineno}", "expected 2 or 3 tab-separated paths")
        cloud, labels = (str(base / c) for c in cols[:2])
        mask = str(base / cols[2]) if len(cols) == 3 and cols[2] else None
        bundles.append(FrameBundle(cloud, labels, Path(cols[0]).stem, mask))
    return bundles
