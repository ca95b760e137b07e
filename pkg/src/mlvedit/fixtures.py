"""Synthetic source latents and the standard test models."""

from __future__ import annotations

import numpy as np

from .errors import InvalidConfigError
from .models import SegmentBiasVelocity, ToyTransformer
from .rng import make_stream

FIXTURE_KINDS = ("random", "ramp", "constant")


def make_fixture(kind: str, frames: int, channels: int, seed: int = 0) -> np.ndarray:
    """Source latent of shape ``(frames, channels)``.

    * ``random``: i.i.d. standard normal.
    * ``ramp``: each channel rises linearly from -1 to 1 over time, with a
      per-channel random offset.
    * ``constant``: one random frame repeated (a static scene).
    """
    if frames < 1 or channels < 1:
        raise InvalidConfigError(f"fixture needs frames, channels >= 1, got {frames}, {channels}")
    rng = make_stream(seed, f"fixture/{kind}")
    if kind == "random":
        return rng.standard_normal((frames, channels))
    if kind == "ramp":
        ramp = np.linspace(-1.0, 1.0, frames)[:, None]
        return ramp + rng.standard_normal(channels)[None, :]
    if kind == "constant":
        return np.tile(rng.standard_normal(channels), (frames, 1))
    raise InvalidConfigError(f"unknown fixture {kind!r}; expected one of {FIXTURE_KINDS}")


def segment_bias_model(channels: int = 4, bias_magnitude: float = 1.0, bias_seed: int = 0,
                       prompt_dim: int = 8) -> SegmentBiasVelocity:
    return SegmentBiasVelocity(channels, 0.0, bias_magnitude, bias_seed, prompt_dim)


# Drift fixture: a toy whose temporal attention is content-agnostic (zero
# query/key maps, so every key gets equal weight) and whose attention readout
# dominates the residual. This is the regime in which a single prepended anchor
# can move a segment's output at all; with sharp random attention its weight
# is a coin flip and the effect is noise.
DRIFT_JITTER = 2.0
DRIFT_OUT_GAIN = 4.0


def drift_model(jitter_seed: int, channels: int = 4, prompt_dim: int = 8, model_dim: int = 32,
                num_layers: int = 2, seed: int = 0, jitter: float = DRIFT_JITTER) -> ToyTransformer:
    return ToyTransformer.create(channels, prompt_dim, model_dim, num_layers, seed=seed,
                                 jitter=jitter, jitter_seed=jitter_seed, qk_gain=0.0,
                                 out_gain=DRIFT_OUT_GAIN)
