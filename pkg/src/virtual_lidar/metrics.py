"""Distribution similarity between class histograms, plus cloud summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, ZeroTotal, ZeroVector
from .geometry import to_spherical

RANGE_BIN_M = 10.0


@dataclass(frozen=True, eq=False)
class ClassHistogram:
    classes: tuple
    weights: np.ndarray

    def __post_init__(self):
        classes = tuple(str(c) for c in self.classes)
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(classes) != len(w):
            raise LengthMismatch(f"{len(classes)} classes but {len(w)} weights")
        if not np.isfinite(w).all() or (w < 0).any():
            raise ValueError("weights must be finite and nonnegative")
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "weights", w)

    def aligned(self, other):
        """Weights of ``other`` reordered to this histogram's class order."""
        if set(self.classes) != set(other.classes):
            raise LengthMismatch("histograms cover different class sets")
        pos = {c: q for q, c in enumerate(other.classes)}
        return other.weights[[pos[c] for c in self.classes]]


def normalize(h):
    w = h.weights if isinstance(h, ClassHistogram) else np.asarray(h, dtype=np.float64)
    total = w.sum()
    if not total > 0:
        raise ZeroTotal("histogram has no positive weight")
    return w / total


def _check_pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise LengthMismatch(f"vectors of length {p.size} and {q.size}")
    return p, q


def js_distance(p, q):
    """Square root of the base-2 Jensen-Shannon divergence; in ``[0, 1]``."""
    p, q = _check_pair(p, q)
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return np.sum(a[nz] * np.log2(a[nz] / m[nz]))

    js = 0.5 * kl(p) + 0.5 * kl(q)
    return float(np.sqrt(max(js, 0.0)))


def cosine_similarity(p, q):
    p, q = _check_pair(p, q)
    norm = np.linalg.norm(p) * np.linalg.norm(q)
    if norm == 0:
        raise ZeroVector("cosine similarity of a zero vector")
    return float(np.clip(p @ q / norm, -1.0, 1.0))


def compare_histograms(a, b):
    """Metric report for two histograms, each renormalised on its own.

    ``raw_js_distance`` treats the weights as percentages without
    renormalising, which differs whenever a column does not sum to 100.
    """
    wa, wb = a.weights, a.aligned(b)
    p, q = normalize(wa), normalize(wb)
    js = js_distance(p, q)
    raw = js_distance(wa / 100.0, wb / 100.0)
    return {
        "js_distance": js,
        "cosine_similarity": cosine_similarity(p, q),
        "raw_js_distance": raw,
        "raw_js_delta": raw - js,
    }


def cloud_stats(cloud, model=None):
    """Point count, 10 m range histogram, intensity summary, per-beam counts."""
    n = len(cloud)
    r = cloud.ranges
    stats = {"count": n}
    if n:
        top = int(np.floor(r.max() / RANGE_BIN_M)) + 1
        counts = np.bincount(np.floor(r / RANGE_BIN_M).astype(np.int64), minlength=top)
        stats["range_histogram"] = {
            f"[{q * RANGE_BIN_M:g}, {(q + 1) * RANGE_BIN_M:g})": int(c) for q, c in enumerate(counts) if c
        }
        stats["intensity"] = {
            "min": float(cloud.intensity.min()),
            "mean": float(cloud.intensity.mean()),
            "max": float(cloud.intensity.max()),
        }
    else:
        stats["range_histogram"] = {}
        stats["intensity"] = {"min": 0.0, "mean": 0.0, "max": 0.0}
    if model is not None:
        beams = np.zeros(model.beam_count, dtype=np.int64)
        if n:
            s = to_spherical(cloud.xyz)
            _, j = model.bin_rays(s.r, s.phi, s.theta)
            beams = np.bincount(j[j >= 0], minlength=model.beam_count)
        stats["beam_counts"] = [int(c) for c in beams]
    return stats
