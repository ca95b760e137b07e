"""Latent sequence containers, elementary kernels and the MLV1 binary format.

A latent sequence is a float64 array of shape ``(frames, channels)``. We keep
plain numpy arrays rather than a wrapper class; ``as_latent`` is the single
validation point.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import InvalidShapeError, NumericDomainError

LATENT_MAGIC = b"MLVLAT01"


def as_latent(data, name: str = "latent") -> np.ndarray:
    """Validate and return ``data`` as a C-contiguous float64 (F, C) array."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidShapeError(f"{name}: expected 2-D (frames, channels), got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidShapeError(f"{name}: zero-sized shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericDomainError(f"{name}: contains non-finite values")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "operands") -> None:
    if a.shape != b.shape:
        raise InvalidShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def lerp_source(x_src, noise, t: float) -> np.ndarray:
    """Noisy source latent ``(1 - t) * x_src + t * noise``.

    Both endpoints are exact: ``t=0`` returns ``x_src`` and ``t=1`` returns
    ``noise`` bit for bit.
    """
    x_src = np.asarray(x_src, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    check_same_shape(x_src, noise, "lerp_source")
    if not 0.0 <= t <= 1.0:
        raise NumericDomainError(f"lerp_source: t={t} outside [0, 1]")
    if t == 0.0:
        return x_src.copy()
    if t == 1.0:
        return noise.copy()
    return (1.0 - t) * x_src + t * noise


def softmax_rows(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise NumericDomainError("softmax_rows: non-finite input")
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def write_latent(path, z) -> None:
    z = as_latent(z)
    frames, channels = z.shape
    with open(path, "wb") as fh:
        fh.write(LATENT_MAGIC)
        fh.write(struct.pack("<II", frames, channels))
        fh.write(z.astype("<f8").tobytes(order="C"))


def read_latent(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != LATENT_MAGIC:
        raise InvalidShapeError(f"{path}: bad magic {raw[:8]!r}, expected {LATENT_MAGIC!r}")
    frames, channels = struct.unpack_from("<II", raw, 8)
    payload = raw[16:]
    expected = frames * channels * 8
    if len(payload) != expected:
        raise InvalidShapeError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    z = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(frames, channels)
    return as_latent(z, name=str(path))
