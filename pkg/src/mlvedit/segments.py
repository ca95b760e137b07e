"""Overlapping temporal segmentation of a latent sequence."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidConfigError, OutOfRangeError


@dataclass(frozen=True)
class SegmentSpan:
    index: int
    start: int
    end: int

    def __len__(self) -> int:
        return self.end - self.start

    def __contains__(self, frame: int) -> bool:
        return self.start <= frame < self.end


@dataclass(frozen=True)
class SegmentPlan:
    spans: tuple[SegmentSpan, ...]
    n: int
    k: int
    frames: int

    def __len__(self) -> int:
        return len(self.spans)

    def __iter__(self):
        return iter(self.spans)

    def __getitem__(self, s: int) -> SegmentSpan:
        return self.spans[s]

    @property
    def segment_length(self) -> int:
        """Actual span length, ``min(n, F)``; every span has this length."""
        return min(self.n, self.frames)

    def seams(self) -> list[int]:
        """Global frame where each segment ``s >= 1`` starts."""
        return [span.start for span in self.spans[1:]]


def plan_segments(frames: int, n: int, k: int) -> SegmentPlan:
    """Split ``frames`` into spans of length ``n`` stepping by ``n - k``.

    The final span is pulled back to end at ``frames`` so all spans keep
    length ``min(n, frames)``; its overlap with the previous span may then
    exceed ``k``.

    Args:
        frames: total frame count F.
        n: segment length.
        k: overlap between consecutive segments.
    """
    if frames < 1:
        raise InvalidConfigError(f"frame count must be >= 1, got {frames}")
    if n < 2:
        raise InvalidConfigError(f"segment length n must be >= 2, got {n}")
    if not 0 <= k < n:
        raise InvalidConfigError(f"overlap k must satisfy 0 <= k < n, got k={k}, n={n}")

    if frames <= n:
        return SegmentPlan((SegmentSpan(0, 0, frames),), n, k, frames)

    stride = n - k
    starts = [0]
    while starts[-1] + n < frames:
        starts.append(starts[-1] + stride)
    starts[-1] = min(starts[-1], frames - n)
    spans = tuple(SegmentSpan(i, s, s + n) for i, s in enumerate(starts))
    return SegmentPlan(spans, n, k, frames)


def overlap_of(plan: SegmentPlan, s: int) -> tuple[int, int]:
    """Global ``[start, end)`` shared by segments ``s - 1`` and ``s``."""
    if not 1 <= s < len(plan):
        raise OutOfRangeError(f"segment ordinal {s} has no predecessor in a {len(plan)}-segment plan")
    return plan[s].start, plan[s - 1].end
