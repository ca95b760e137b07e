"""Velocity-field evaluators.

Three implementations share one calling convention,
``model(z, t, prompt, sink, segment_ordinal) -> velocity``:

* ``ToyTransformer``: a small frozen attention network whose self-attention
  honours the anchor cache carried in a ``SinkContext``.
* ``ConstantVelocity``: returns a fixed per-channel field, optionally keyed
  by prompt label. Exact Euler integration is checkable against it.
* ``SegmentBiasVelocity``: adds a pseudorandom per-segment offset, a
  controllable stand-in for segment-to-segment drift.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .attention import AnchorCache, attend_with_sink, attention, capture_anchor
from .errors import InvalidConfigError, InvalidShapeError, NumericDomainError, ProtocolError
from .latent import as_latent, check_same_shape
from .rng import make_stream

UNCOND_LABEL = "uncond"
PARAMS_MAGIC = b"MLVTTP01"


@dataclass(frozen=True, eq=False)
class PromptEmbedding:
    label: str
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if vals.size < 1 or not np.all(np.isfinite(vals)):
            raise InvalidShapeError(f"prompt {self.label!r}: need a finite, non-empty vector")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, PromptEmbedding):
            return NotImplemented
        return self.label == other.label and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.label, self.values.tobytes()))


def make_prompt(label: str, dim: int, seed: int) -> PromptEmbedding:
    """Random unit-scale prompt embedding, reproducible from ``seed``."""
    return PromptEmbedding(label, make_stream(seed, f"prompt/{label}").standard_normal(dim))


def unconditional_prompt(dim: int) -> PromptEmbedding:
    return PromptEmbedding(UNCOND_LABEL, np.zeros(dim))


class SinkMode(enum.Enum):
    OFF = "off"
    CAPTURE = "capture"
    INJECT = "inject"
    # inject from the previous segment's anchor while capturing this one's
    RELAY = "relay"


@dataclass(frozen=True)
class SinkContext:
    mode: SinkMode = SinkMode.OFF
    timestep_index: int = 0
    inject_from: AnchorCache | None = None
    capture_into: AnchorCache | None = None
    anchor_tokens: int = 1

    @classmethod
    def off(cls) -> "SinkContext":
        return cls()

    @classmethod
    def capture(cls, cache: AnchorCache, timestep_index: int, anchor_tokens: int = 1) -> "SinkContext":
        return cls(SinkMode.CAPTURE, timestep_index, capture_into=cache, anchor_tokens=anchor_tokens)

    @classmethod
    def inject(cls, cache: AnchorCache, timestep_index: int) -> "SinkContext":
        return cls(SinkMode.INJECT, timestep_index, inject_from=cache)

    @classmethod
    def relay(cls, inject_from: AnchorCache, capture_into: AnchorCache, timestep_index: int,
              anchor_tokens: int = 1) -> "SinkContext":
        return cls(SinkMode.RELAY, timestep_index, inject_from, capture_into, anchor_tokens)

    @property
    def captures(self) -> bool:
        return self.mode in (SinkMode.CAPTURE, SinkMode.RELAY)

    @property
    def injects(self) -> bool:
        return self.mode in (SinkMode.INJECT, SinkMode.RELAY)


OFF = SinkContext.off()


class VelocityModel(Protocol):
    channels: int
    prompt_dim: int

    def __call__(self, z: np.ndarray, t: float, prompt: PromptEmbedding,
                 sink: SinkContext, segment_ordinal: int) -> np.ndarray: ...


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


@dataclass(eq=False)
class ToyLayer:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    w_1: np.ndarray
    w_2: np.ndarray

    def matrices(self):
        return (self.w_q, self.w_k, self.w_v, self.w_o, self.w_1, self.w_2)


@dataclass(eq=False)
class ToyTransformer:
    """Frozen single-head transformer over frame tokens.

    Each frame becomes one token ``[latent channels | prompt | t]``, projected
    to ``model_dim``, run through pre-residual attention and GELU MLP blocks,
    and projected back to ``channels``. No positional encoding, no biases, no
    normalisation: with every matrix zeroed the output is exactly zero.

    ``jitter`` adds a seeded per-segment offset to the input embedding of every
    token in the segment, emulating segment-to-segment stochastic variation.
    """

    channels: int
    prompt_dim: int
    model_dim: int
    w_in: np.ndarray
    layers: list[ToyLayer]
    w_out: np.ndarray
    seed: int = 0
    jitter: float = 0.0
    jitter_seed: int = 0
    _jitter_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def create(cls, channels: int = 4, prompt_dim: int = 8, model_dim: int = 32,
               num_layers: int = 2, seed: int = 0, jitter: float = 0.0,
               jitter_seed: int = 0, qk_gain: float = 1.0, out_gain: float = 0.5) -> "ToyTransformer":
        if min(channels, prompt_dim, model_dim, num_layers) < 1:
            raise InvalidConfigError("toy transformer dimensions must all be >= 1")
        rng = make_stream(seed, "toy/params")
        d = model_dim
        d_in = channels + prompt_dim + 1

        def init(rows, cols, gain=1.0):
            return rng.standard_normal((rows, cols)) * (gain / np.sqrt(rows))

        w_in = init(d_in, d)
        layers = [
            ToyLayer(
                w_q=init(d, d, qk_gain), w_k=init(d, d, qk_gain), w_v=init(d, d), w_o=init(d, d, out_gain),
                w_1=init(d, 4 * d), w_2=init(4 * d, d, 0.5),
            )
            for _ in range(num_layers)
        ]
        w_out = init(d, channels)
        model = cls(channels, prompt_dim, d, w_in, layers, w_out, seed, jitter, jitter_seed)
        model.freeze()
        return model

    def freeze(self) -> None:
        for m in self.matrices():
            m.flags.writeable = False

    def matrices(self) -> list[np.ndarray]:
        out = [self.w_in]
        for layer in self.layers:
            out.extend(layer.matrices())
        out.append(self.w_out)
        return out

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def _segment_jitter(self, segment_ordinal: int) -> np.ndarray:
        if segment_ordinal not in self._jitter_cache:
            rng = make_stream(self.jitter_seed, "toy/jitter", segment_ordinal)
            self._jitter_cache[segment_ordinal] = self.jitter * rng.standard_normal(self.model_dim)
        return self._jitter_cache[segment_ordinal]

    def hidden(self, z, t: float, prompt: PromptEmbedding, sink: SinkContext = OFF,
               segment_ordinal: int | None = 0) -> np.ndarray:
        """Per-frame activations after the last block (before the output head).

        ``segment_ordinal=None`` skips the per-segment jitter.
        """
        frames = z.shape[0]
        tokens = np.hstack([z, np.broadcast_to(prompt.values, (frames, self.prompt_dim)),
                            np.full((frames, 1), float(t))])
        h = tokens @ self.w_in
        if self.jitter and segment_ordinal is not None:
            h = h + self._segment_jitter(segment_ordinal)
        for li, layer in enumerate(self.layers):
            q, k, v = h @ layer.w_q, h @ layer.w_k, h @ layer.w_v
            if sink.injects:
                a = attend_with_sink(q, k, v, sink.inject_from, sink.timestep_index, li)
            else:
                a = attention(q, k, v)
            if sink.captures:
                capture_anchor(sink.capture_into, sink.timestep_index, li, k, v, sink.anchor_tokens)
            h = h + a @ layer.w_o
            h = h + _gelu(h @ layer.w_1) @ layer.w_2
        return h

    def __call__(self, z, t, prompt, sink=OFF, segment_ordinal=0):
        return self.hidden(z, t, prompt, sink, segment_ordinal) @ self.w_out

    def frame_features(self, z, prompt: PromptEmbedding, t: float = 0.0) -> np.ndarray:
        """Embed every frame on its own, like a per-frame image encoder."""
        z = as_latent(z)
        return np.vstack([self.hidden(z[f:f + 1], t, prompt, OFF, None) for f in range(z.shape[0])])

    def save(self, path) -> None:
        header = struct.pack("<IIIIQdQ", self.channels, self.prompt_dim, self.model_dim,
                             self.num_layers, self.seed, self.jitter, self.jitter_seed)
        with open(path, "wb") as fh:
            fh.write(PARAMS_MAGIC)
            fh.write(header)
            for m in self.matrices():
                fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ToyTransformer":
        raw = Path(path).read_bytes()
        if raw[:8] != PARAMS_MAGIC:
            raise InvalidShapeError(f"{path}: bad magic {raw[:8]!r}, expected {PARAMS_MAGIC!r}")
        fmt = "<IIIIQdQ"
        c, p, d, n_layers, seed, jitter, jitter_seed = struct.unpack_from(fmt, raw, 8)
        offset = 8 + struct.calcsize(fmt)
        shapes = [(c + p + 1, d)]
        for _ in range(n_layers):
            shapes += [(d, d), (d, d), (d, d), (d, d), (d, 4 * d), (4 * d, d)]
        shapes.append((d, c))
        need = offset + 8 * sum(r * q for r, q in shapes)
        if len(raw) != need:
            raise InvalidShapeError(f"{path}: {len(raw)} bytes, header implies {need}")
        mats = []
        for r, q in shapes:
            mats.append(np.frombuffer(raw, dtype="<f8", count=r * q, offset=offset)
                        .astype(np.float64).reshape(r, q))
            offset += 8 * r * q
        layers = [ToyLayer(*mats[1 + 6 * i: 7 + 6 * i]) for i in range(n_layers)]
        model = cls(c, p, d, mats[0], layers, mats[-1], seed, jitter, jitter_seed)
        model.freeze()
        return model


@dataclass
class ConstantVelocity:
    """Velocity independent of latent, time and frame.

    ``by_label`` maps prompt labels to their own per-channel constants; any
    other prompt (including the unconditional one) gets ``value``.
    """

    channels: int
    value: float | np.ndarray = 0.0
    by_label: dict[str, float | np.ndarray] = field(default_factory=dict)
    prompt_dim: int = 8

    def _row(self, label: str) -> np.ndarray:
        v = self.by_label.get(label, self.value)
        return np.broadcast_to(np.asarray(v, dtype=np.float64), (self.channels,))

    def __call__(self, z, t, prompt, sink=OFF, segment_ordinal=0):
        return np.tile(self._row(prompt.label), (z.shape[0], 1))


@dataclass
class SegmentBiasVelocity:
    """``base`` plus an offset drawn per (segment ordinal, prompt label).

    Offsets are standard normal per channel times ``bias_magnitude``, keyed by
    ``bias_seed`` so every call for the same segment and prompt agrees.
    """

    channels: int
    base: float | np.ndarray = 0.0
    bias_magnitude: float = 1.0
    bias_seed: int = 0
    prompt_dim: int = 8

    def offset(self, segment_ordinal: int, label: str) -> np.ndarray:
        rng = make_stream(self.bias_seed, f"segment_bias/{label}", segment_ordinal)
        return self.bias_magnitude * rng.standard_normal(self.channels)

    def __call__(self, z, t, prompt, sink=OFF, segment_ordinal=0):
        base = np.broadcast_to(np.asarray(self.base, dtype=np.float64), (self.channels,))
        return np.tile(base + self.offset(segment_ordinal, prompt.label), (z.shape[0], 1))


def eval_velocity(model: VelocityModel, z, t: float, prompt: PromptEmbedding,
                  sink: SinkContext = OFF, segment_ordinal: int = 0) -> np.ndarray:
    z = as_latent(z, "velocity input")
    if z.shape[1] != model.channels:
        raise InvalidShapeError(f"latent has {z.shape[1]} channels, model expects {model.channels}")
    if prompt.dim != model.prompt_dim:
        raise InvalidShapeError(f"prompt has dim {prompt.dim}, model expects {model.prompt_dim}")
    if not 0.0 <= t <= 1.0:
        raise NumericDomainError(f"timestep t={t} outside [0, 1]")
    if sink.mode is SinkMode.CAPTURE and segment_ordinal != 0:
        raise ProtocolError(f"sink capture is only legal for segment 0, got segment {segment_ordinal}")
    v = model(z, t, prompt, sink, segment_ordinal)
    if v.shape != z.shape:
        raise InvalidShapeError(f"model returned {v.shape} for input {z.shape}")
    return v


def apply_cfg(v_cond, v_uncond, w: float) -> np.ndarray:
    """Guided velocity ``v_uncond + w (v_cond - v_uncond)``.

    Evaluated as ``w*v_cond + (1-w)*v_uncond`` so ``w=1`` and ``w=0`` return
    an input exactly.
    """
    v_cond = np.asarray(v_cond, dtype=np.float64)
    v_uncond = np.asarray(v_uncond, dtype=np.float64)
    check_same_shape(v_cond, v_uncond, "apply_cfg")
    return w * v_cond + (1.0 - w) * v_uncond


def guided_velocity(model, z, t, prompt, segment_ordinal=0, *, cfg_scale=None,
                    sink=OFF, uncond_sink=OFF) -> np.ndarray:
    """One branch of the velocity difference, with optional guidance.

    The unconditional pass runs with its own sink context because its keys
    and values differ from the conditional pass.
    """
    v = eval_velocity(model, z, t, prompt, sink, segment_ordinal)
    if cfg_scale is None or cfg_scale == 1.0:
        return v
    uncond = unconditional_prompt(model.prompt_dim)
    v_u = eval_velocity(model, z, t, uncond, uncond_sink, segment_ordinal)
    return apply_cfg(v, v_u, cfg_scale)


def delta_velocity(model, z_tar, z_src, t, p_tar, p_src, sink=OFF, segment_ordinal=0, *,
                   cfg_scale=None, uncond_sink=OFF, source_sink=OFF, source_uncond_sink=OFF,
                   cfg_on_source=True) -> np.ndarray:
    """Target-branch velocity minus source-branch velocity.

    ``sink``/``uncond_sink`` apply to the target branch only; the source
    branch uses ``source_sink``/``source_uncond_sink`` (off by default).
    """
    z_tar = as_latent(z_tar, "target latent")
    z_src = as_latent(z_src, "source latent")
    check_same_shape(z_tar, z_src, "delta_velocity")
    v_tar = guided_velocity(model, z_tar, t, p_tar, segment_ordinal, cfg_scale=cfg_scale,
                            sink=sink, uncond_sink=uncond_sink)
    v_src = guided_velocity(model, z_src, t, p_src, segment_ordinal,
                            cfg_scale=cfg_scale if cfg_on_source else None,
                            sink=source_sink, uncond_sink=source_uncond_sink)
    return v_tar - v_src
