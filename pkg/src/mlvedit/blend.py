"""Triangular-window fusion of velocity differences across segment overlaps."""

from __future__ import annotations

import numpy as np

from .errors import InvalidConfigError, InvalidShapeError, OutOfRangeError


def window_weight(tau: int, n: int) -> float:
    """Triangular weight ``1 - |1 - 2(tau + 0.5)/n|`` of local frame ``tau``.

    Strictly positive on ``0 <= tau < n``, peaks at the center, and is
    symmetric under ``tau -> n - 1 - tau``.
    """
    if n < 1:
        raise InvalidConfigError(f"window length must be >= 1, got {n}")
    if not 0 <= tau < n:
        raise OutOfRangeError(f"tau={tau} outside [0, {n})")
    # integer numerator: exact symmetry and W(0, n) == 1/n bitwise
    return (n - abs(n - (2 * tau + 1))) / n


def window_weights(n: int) -> np.ndarray:
    return np.array([window_weight(tau, n) for tau in range(n)])


def blend_overlap(dv_prev, dv_curr, n: int, k: int) -> np.ndarray:
    """Blend the last ``k`` frames of ``dv_prev`` with the first ``k`` of ``dv_curr``.

    Frame ``j`` of the result is the window-weighted average of
    ``dv_prev[n - k + j]`` and ``dv_curr[j]``, for ``j = 0..k-1``.

    Args:
        dv_prev: (n, C) velocity difference of the earlier segment.
        dv_curr: (n, C) velocity difference of the later segment.
        n: segment length (window length).
        k: number of shared frames, ``0 < k < n``.

    Returns:
        (k, C) blended frames.
    """
    if not 0 < k < n:
        raise InvalidConfigError(f"blend needs 0 < k < n, got k={k}, n={n}")
    dv_prev = np.asarray(dv_prev, dtype=np.float64)
    dv_curr = np.asarray(dv_curr, dtype=np.float64)
    if dv_prev.ndim != 2 or dv_prev.shape[0] != n or dv_curr.shape != dv_prev.shape:
        raise InvalidShapeError(
            f"blend expects two ({n}, C) arrays, got {dv_prev.shape} and {dv_curr.shape}"
        )
    w = window_weights(n)
    w_prev = w[n - k:][:, None]
    w_curr = w[:k][:, None]
    denom = w_prev + w_curr
    assert np.all(denom > 0)
    return (w_prev * dv_prev[n - k:] + w_curr * dv_curr[:k]) / denom
