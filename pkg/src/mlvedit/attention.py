"""Scaled dot-product attention and the first-frame anchor cache.

Later segments prepend cached anchor keys/values (captured from the first
segment at the same timestep and layer) to their own keys/values. Queries are
never extended, so the output keeps the segment's token count.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigError, InvalidShapeError, MissingEntryError, ProtocolError
from .latent import softmax_rows


class AnchorPolicy(enum.Enum):
    NONE = "none"
    FIRST_OF_INITIAL = "first_of_initial"
    FIRST_OF_PREVIOUS = "first_of_previous"


@dataclass(frozen=True)
class SinkPolicy:
    """Which frames anchor later segments, and how many tokens of them."""

    anchor: AnchorPolicy = AnchorPolicy.FIRST_OF_INITIAL
    tokens: int = 1

    def __post_init__(self):
        if self.tokens < 1:
            raise InvalidConfigError(f"anchor token count must be >= 1, got {self.tokens}")

    @property
    def enabled(self) -> bool:
        return self.anchor is not AnchorPolicy.NONE

    def __str__(self) -> str:
        if not self.enabled:
            return "none"
        return f"{self.anchor.value}({self.tokens})"


@dataclass
class AnchorCache:
    """Write-once anchor keys/values keyed by ``(timestep_index, layer_index)``."""

    entries: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def __contains__(self, key) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, timestep_index: int, layer_index: int) -> tuple[np.ndarray, np.ndarray]:
        try:
            return self.entries[(timestep_index, layer_index)]
        except KeyError:
            raise MissingEntryError(
                f"no anchor cached for timestep {timestep_index}, layer {layer_index}; "
                "inject requested before capture"
            ) from None


def _check_qkv(q, k, v):
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise InvalidShapeError("attention operands must be 2-D")
    if q.shape[1] != k.shape[1]:
        raise InvalidShapeError(f"query/key width mismatch: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise InvalidShapeError(f"key/value length mismatch: {k.shape} vs {v.shape}")
    if q.shape[0] < 1 or k.shape[0] < 1:
        raise InvalidShapeError("attention needs at least one query and one key")
    return q, k, v


def attention_weights(q, k) -> np.ndarray:
    d = q.shape[1]
    return softmax_rows(q @ k.T / np.sqrt(d))


def attention(q, k, v) -> np.ndarray:
    """``softmax(q k^T / sqrt(d)) v`` over rows of ``k``/``v``."""
    q, k, v = _check_qkv(q, k, v)
    return attention_weights(q, k) @ v


def capture_anchor(cache: AnchorCache, timestep_index: int, layer_index: int,
                   k_seg, v_seg, anchor_tokens: int = 1) -> None:
    k_seg = np.asarray(k_seg, dtype=np.float64)
    v_seg = np.asarray(v_seg, dtype=np.float64)
    if k_seg.shape[0] != v_seg.shape[0]:
        raise InvalidShapeError(f"key/value length mismatch: {k_seg.shape} vs {v_seg.shape}")
    if not 1 <= anchor_tokens <= k_seg.shape[0]:
        raise InvalidConfigError(
            f"anchor token count {anchor_tokens} exceeds segment length {k_seg.shape[0]}"
        )
    key = (timestep_index, layer_index)
    if key in cache.entries:
        raise ProtocolError(f"anchor for timestep {timestep_index}, layer {layer_index} already captured")
    k_anchor = k_seg[:anchor_tokens].copy()
    v_anchor = v_seg[:anchor_tokens].copy()
    k_anchor.flags.writeable = False
    v_anchor.flags.writeable = False
    cache.entries[key] = (k_anchor, v_anchor)


def attend_with_sink(q, k, v, cache: AnchorCache, timestep_index: int, layer_index: int) -> np.ndarray:
    q, k, v = _check_qkv(q, k, v)
    k_anchor, v_anchor = cache.lookup(timestep_index, layer_index)
    if k_anchor.shape[1] != k.shape[1] or v_anchor.shape[1] != v.shape[1]:
        raise InvalidShapeError("cached anchor width does not match segment keys/values")
    return attention(q, np.vstack([k_anchor, k]), np.vstack([v_anchor, v]))
