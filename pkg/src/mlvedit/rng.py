"""Counter-based deterministic random streams.

Every stream is a Philox generator whose 128-bit key is derived from
``(root_seed, purpose, index)``, so any draw can be reproduced without
replaying earlier ones.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import InvalidShapeError

NOISE = "noise"


@dataclass(frozen=True)
class SeedSpec:
    root_seed: int = 0

    def __post_init__(self):
        if not 0 <= int(self.root_seed) < 2**64:
            raise ValueError(f"root_seed must fit in u64, got {self.root_seed}")

    def stream(self, purpose: str, index: int = 0) -> np.random.Generator:
        return make_stream(self.root_seed, purpose, index)


def make_stream(root_seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    tag = zlib.crc32(purpose.encode("utf-8"))
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF, tag, int(index) & 0xFFFFFFFFFFFFFFFF]
    key = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_noise(shape: tuple[int, int], seed: SeedSpec, timestep_index: int) -> np.ndarray:
    """Standard-normal noise for one timestep, covering the whole sequence.

    All segments slice the same tensor, so overlapping frames share noise.
    """
    frames, channels = shape
    if frames < 1 or channels < 1:
        raise InvalidShapeError(f"sample_noise: zero-sized shape {shape}")
    return seed.stream(NOISE, timestep_index).standard_normal((frames, channels))
