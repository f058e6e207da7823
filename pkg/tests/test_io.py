import json

import numpy as np
import pytest

from virtual_lidar.alignment import ObjectLabel
from virtual_lidar.errors import IoFailure, LengthMismatch, SchemaError, TruncatedFile
from virtual_lidar.geometry import PointCloud
from virtual_lidar.io import (
    parse_labels,
    read_cloud,
    read_histogram,
    read_labels,
    read_manifest,
    read_mask,
    write_cloud,
    write_histogram,
    write_labels,
    write_mask,
)
from virtual_lidar.labels import EgoLabel
from virtual_lidar.metrics import ClassHistogram


def test_empty_cloud_file(tmp_path):
    p = tmp_path / "e.bin"
    p.write_bytes(b"")
    assert len(read_cloud(p)) == 0


def test_one_record(tmp_path):
    p = tmp_path / "one.bin"
    write_cloud(p, PointCloud([[1.0, 2.0, 3.0]], [42.0]))
    raw = p.read_bytes()
    assert raw == np.array([1, 2, 3, 42], "<f4").tobytes() and len(raw) == 16
    c = read_cloud(p)
    assert c.xyz.tolist() == [[1, 2, 3]] and c.intensity.tolist() == [42]


def test_large_round_trip_is_bit_identical(tmp_path, rng):
    arr = rng.normal(0, 50, (100_000, 4)).astype("<f4")
    arr[:, 3] = np.abs(arr[:, 3]) % 255
    p, q = tmp_path / "a.bin", tmp_path / "b.bin"
    p.write_bytes(arr.tobytes())
    write_cloud(q, read_cloud(p))
    assert p.read_bytes() == q.read_bytes()


def test_truncated_and_missing(tmp_path):
    p = tmp_path / "t.bin"
    p.write_bytes(b"\0" * 20)
    with pytest.raises(TruncatedFile):
        read_cloud(p)
    with pytest.raises(IoFailure):
        read_cloud(tmp_path / "nope.bin")


def test_mask_round_trip(tmp_path):
    p = tmp_path / "m.bin"
    write_mask(p, [True, False, True])
    assert p.read_bytes() == b"\x01\x00\x01"
    assert read_mask(p, 3).tolist() == [True, False, True]
    with pytest.raises(LengthMismatch):
        read_mask(p, 4)
    p.write_bytes(b"\x02")
    with pytest.raises(SchemaError):
        read_mask(p)


def test_labels_round_trip(tmp_path):
    p = tmp_path / "l.json"
    write_labels(p, [])
    assert read_labels(p) == []
    lab = ObjectLabel("car7", "car", (4.512345678901, 1.9, 1.6), (10.1, -3.3, 0.8), (0.0, 0.0, 1.234567890123))
    write_labels(p, [lab])
    (back,) = read_labels(p)
    assert (back.id, back.category, back.size, back.center, back.rotation) == (
        lab.id, lab.category, lab.size, lab.center, lab.rotation,
    )


def test_ego_flag_written(tmp_path):
    p = tmp_path / "e.json"
    write_labels(p, [EgoLabel("a", "car", (1, 1, 1), (0, 0, 0), ego=True), EgoLabel("b", "car", (1, 1, 1), (0, 0, 0))])
    docs = json.loads(p.read_text())
    assert docs[0]["ego"] is True and "ego" not in docs[1]


@pytest.mark.parametrize(
    "doc, path",
    [
        ({"id": 1, "category": "car", "center": [0, 0, 0], "size": [1, 2], "rotation": [0, 0, 0]}, "[0].size"),
        ({"id": 1, "category": "car", "center": [0, 0, 0], "size": [1, 2, -1], "rotation": [0, 0, 0]}, "[0].size"),
        ({"id": 1, "category": "car", "center": [0, "x", 0], "size": [1, 2, 1], "rotation": [0, 0, 0]}, "[0].center[1]"),
        ({"id": 1, "center": [0, 0, 0], "size": [1, 2, 1], "rotation": [0, 0, 0]}, "[0].category"),
        ({"id": 1, "category": "car", "center": [0, 0, 0], "size": [1, 2, 1]}, "[0].rotation"),
    ],
)
def test_label_schema_errors(doc, path):
    with pytest.raises(SchemaError) as info:
        parse_labels(json.dumps([doc]))
    assert info.value.path == path


def test_label_document_errors():
    with pytest.raises(SchemaError):
        parse_labels("{")
    with pytest.raises(SchemaError):
        parse_labels("{}")


def test_yaw_format():
    doc = [{"id": "v", "category": "car", "center": [0, 0, 0], "size": [4, 2, 1.5], "rotation": 0.5}]
    (lab,) = parse_labels(json.dumps(doc), rotation_format="yaw")
    assert lab.rotation == (0.0, 0.0, 0.5)
    with pytest.raises(SchemaError):
        parse_labels(json.dumps(doc))


def test_histogram_files(tmp_path):
    p = tmp_path / "h.json"
    write_histogram(p, ClassHistogram(("a", "b"), [1.5, 2.5]))
    h = read_histogram(p)
    assert h.classes == ("a", "b") and h.weights.tolist() == [1.5, 2.5]
    p.write_text('{"classes": ["a"]}')
    with pytest.raises(SchemaError):
        read_histogram(p)
    p.write_text('{"classes": ["a"], "weights": [-1]}')
    with pytest.raises(SchemaError):
        read_histogram(p)


def test_manifest(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("# frames\nf0.bin\tf0.json\n\nsub/f1.bin\tf1.json\tf1.mask\n")
    a, b = read_manifest(p)
    assert a.frame_id == "f0" and a.ground_mask is None
    assert b.cloud == str(tmp_path / "sub/f1.bin") and b.ground_mask == str(tmp_path / "f1.mask")
    p.write_text("only-one-column\n")
    with pytest.raises(SchemaError):
        read_manifest(p)
