"""Latent-space consistency metrics.

``boundary_jump`` stands in for a warping error measured at segment seams: it
uses the mean squared difference between adjacent latent frames instead of
optical-flow warping. ``frame_skip_similarity`` stands in for a CLIP
frame-similarity score across segments, using whatever per-frame features the
caller supplies.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidShapeError, MLVError, NumericDomainError, OutOfRangeError
from .latent import as_latent
from .segments import SegmentPlan

FLOAT_FMT = "{:.17g}"
CSV_HEADER = ("kind", "index", "frame", "value")


def _frame_jumps(z: np.ndarray) -> np.ndarray:
    """Mean-over-channels squared difference for every adjacent frame pair."""
    return np.mean(np.square(np.diff(z, axis=0)), axis=1)


def boundary_jump(z, plan: SegmentPlan):
    """Squared adjacent-frame jump at each seam and the mean jump elsewhere.

    The seam of segment ``s >= 1`` is its first frame ``g = plan[s].start``,
    where a later-segment-wins splice switches from ``s - 1`` to ``s``; the
    jump there is ``mean_c (z[g] - z[g-1])**2``.

    Returns:
        ``(per_boundary, boundary_mean, interior_mean)``. Means over an empty
        set are reported as 0.0.
    """
    z = as_latent(z)
    if plan.frames != z.shape[0]:
        raise InvalidShapeError(f"plan covers {plan.frames} frames, latent has {z.shape[0]}")
    jumps = _frame_jumps(z)
    seams = plan.seams()
    per_boundary = [float(jumps[g - 1]) for g in seams]
    interior_mask = np.ones(len(jumps), dtype=bool)
    interior_mask[[g - 1 for g in seams]] = False
    interior = jumps[interior_mask]
    boundary_mean = float(np.mean(per_boundary)) if per_boundary else 0.0
    interior_mean = float(np.mean(interior)) if interior.size else 0.0
    return per_boundary, boundary_mean, interior_mean


def segment_centers(plan: SegmentPlan) -> list[int]:
    return [span.start + (len(span) - 1) // 2 for span in plan]


def frame_skip_similarity(features, plan: SegmentPlan):
    """Cosine similarity between center frames of consecutive segments.

    Returns:
        ``(per_pair, mean)``; a single-segment plan gives ``([], 1.0)``.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] != plan.frames:
        raise InvalidShapeError(f"expected ({plan.frames}, D) features, got {feats.shape}")
    centers = segment_centers(plan)
    norms = np.linalg.norm(feats[centers], axis=1)
    if np.any(norms == 0.0):
        raise NumericDomainError("zero feature vector at a segment center frame")
    unit = feats[centers] / norms[:, None]
    per_pair = [float(np.clip(unit[i] @ unit[i + 1], -1.0, 1.0)) for i in range(len(centers) - 1)]
    return per_pair, (float(np.mean(per_pair)) if per_pair else 1.0)


def temporal_slice(z, channel: int, height: int = 1):
    """One channel over time as a float row and as an 8-bit grayscale strip.

    Min-max normalised to 0..255; a constant row maps to mid-gray 128.
    """
    z = as_latent(z)
    if not 0 <= channel < z.shape[1]:
        raise OutOfRangeError(f"channel {channel} outside [0, {z.shape[1]})")
    row = z[:, channel].copy()
    lo, hi = row.min(), row.max()
    if hi == lo:
        pixels = np.full(row.shape, 128, dtype=np.uint8)
    else:
        pixels = np.rint((row - lo) / (hi - lo) * 255.0).astype(np.uint8)
    return row, np.tile(pixels, (height, 1))


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise MLVError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise MLVError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


@dataclass
class MetricsReport:
    boundary_jump_per_boundary: list[float]
    boundary_jump_mean: float
    interior_jump_mean: float
    frame_skip_similarity_mean: float
    similarity_per_pair: list[float]
    seams: list[int] = field(default_factory=list)
    centers: list[int] = field(default_factory=list)

    @classmethod
    def compute(cls, z, plan: SegmentPlan, features) -> "MetricsReport":
        per_b, b_mean, i_mean = boundary_jump(z, plan)
        per_pair, s_mean = frame_skip_similarity(features, plan)
        report = cls(per_b, b_mean, i_mean, s_mean, per_pair, plan.seams(), segment_centers(plan))
        values = per_b + per_pair + [b_mean, i_mean, s_mean]
        if not all(np.isfinite(values)):
            raise NumericDomainError("non-finite metric value")
        return report

    def summary(self) -> dict[str, float]:
        return {
            "boundary_jump_mean": self.boundary_jump_mean,
            "interior_jump_mean": self.interior_jump_mean,
            "frame_skip_similarity_mean": self.frame_skip_similarity_mean,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for b, (g, v) in enumerate(zip(self.seams, self.boundary_jump_per_boundary), start=1):
            w.writerow(["boundary_jump", b, g, FLOAT_FMT.format(v)])
        for p, v in enumerate(self.similarity_per_pair):
            w.writerow(["frame_skip_similarity", p, self.centers[p + 1], FLOAT_FMT.format(v)])
        for key, v in self.summary().items():
            w.writerow([key, "", "", FLOAT_FMT.format(v)])
        return buf.getvalue()


def read_metrics_summary(path) -> dict[str, float]:
    """Summary rows of a metrics CSV as ``{name: value}``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MLVError(f"cannot read metrics file {path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise MLVError(f"{path}: malformed metrics CSV (bad header)")
    out = {}
    for line_no, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_HEADER):
            raise MLVError(f"{path}:{line_no}: malformed metrics CSV row {row!r}")
        kind, _, _, value = row
        try:
            val = float(value)
        except ValueError:
            raise MLVError(f"{path}:{line_no}: malformed value {value!r}") from None
        if kind.endswith("_mean"):
            out[kind] = val
    missing = {"boundary_jump_mean", "interior_jump_mean", "frame_skip_similarity_mean"} - out.keys()
    if missing:
        raise MLVError(f"{path}: malformed metrics CSV, missing {sorted(missing)}")
    return out
