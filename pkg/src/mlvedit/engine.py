"""Segmented flow editing: per-step orchestration and the full sampling loop.

Three step functions share the same per-timestep preamble (one full-sequence
noise draw, source and target latents built over all frames):

* ``wan_edit_step`` evaluates the velocity difference over the whole sequence
  in a single model call.
* ``mlv_edit_step`` evaluates it segment by segment, anchoring later segments
  to the first one through the attention cache and fusing overlaps with the
  triangular window.
* ``naive_stitch_step`` is the same segment loop with neither mechanism; in
  overlaps the later segment overwrites the earlier one.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .attention import AnchorCache, AnchorPolicy, SinkPolicy
from .blend import blend_overlap
from .errors import InvalidConfigError, InvalidShapeError, NumericDomainError
from .latent import as_latent, check_same_shape, lerp_source
from .models import OFF, SinkContext, delta_velocity
from .rng import SeedSpec, sample_noise
from .schedule import TimestepSchedule, make_schedule
from .segments import SegmentPlan, plan_segments

log = logging.getLogger(__name__)

MODES = ("mlv", "naive", "wan")


@dataclass(frozen=True)
class EditConfig:
    steps: int = 25
    cfg_scale: float = 7.5
    n: int = 21
    k: int = 5
    seed: SeedSpec = SeedSpec(0)
    sink: SinkPolicy = SinkPolicy()
    blend: bool = True
    sink_on_source: bool = True
    cfg_on_source: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidConfigError(f"steps must be >= 1, got {self.steps}")
        if self.n < 2:
            raise InvalidConfigError(f"segment length n must be >= 2, got {self.n}")
        if not 0 <= self.k < self.n:
            raise InvalidConfigError(f"overlap k must satisfy 0 <= k < n, got k={self.k}, n={self.n}")
        if not np.isfinite(self.cfg_scale):
            raise InvalidConfigError("cfg_scale must be finite")

    def replace(self, **changes) -> "EditConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class BoundaryTrace:
    boundary: int
    seam: int
    pre_blend_jump: float
    post_blend_jump: float


@dataclass(frozen=True)
class StepTrace:
    step: int
    t: float
    t_next: float
    delta_v_rms: float
    boundaries: tuple[BoundaryTrace, ...] = ()


@dataclass(frozen=True)
class EditState:
    z_edit: np.ndarray
    step: int
    schedule: TimestepSchedule
    plan: SegmentPlan
    trace: tuple[StepTrace, ...] = field(default=())

    @classmethod
    def initial(cls, x_src, config: EditConfig) -> "EditState":
        x_src = as_latent(x_src, "source latent")
        return cls(x_src.copy(), 0, make_schedule(config.steps),
                   plan_segments(x_src.shape[0], config.n, config.k))

    @property
    def done(self) -> bool:
        return self.step >= self.schedule.steps


def euler_update(z_edit: np.ndarray, dt: float, delta_v: np.ndarray) -> np.ndarray:
    return z_edit + dt * delta_v


def _branch_latents(z_edit, x_src, t, seed: SeedSpec, timestep_index: int):
    noise = sample_noise(x_src.shape, seed, timestep_index)
    z_src = lerp_source(x_src, noise, t)
    # Z_edit - X_src is exactly zero while nothing has been edited, which keeps
    # the target branch bitwise equal to the source branch under identical prompts.
    z_tar = z_src + (z_edit - x_src)
    return z_tar, z_src


def _rms(a) -> float:
    return float(np.sqrt(np.mean(np.square(a))))


def _jump(a_prev_frame, a_frame) -> float:
    return float(np.mean(np.square(a_frame - a_prev_frame)))


def _whole_sequence_delta(z_edit, x_src, t_i, p_src, p_tar, model, cfg_scale, seed,
                          timestep_index, cfg_on_source) -> np.ndarray:
    z_tar, z_src = _branch_latents(z_edit, x_src, t_i, seed, timestep_index)
    dv = delta_velocity(model, z_tar, z_src, t_i, p_tar, p_src, OFF, 0,
                        cfg_scale=cfg_scale, cfg_on_source=cfg_on_source)
    if not np.all(np.isfinite(dv)):
        raise NumericDomainError(f"non-finite velocity difference at timestep {timestep_index}")
    return dv


def wan_edit_step(z_edit, x_src, t_i: float, t_next: float, p_src, p_tar, model,
                  cfg_scale: float | None = 7.5, *, seed: SeedSpec = SeedSpec(0),
                  timestep_index: int = 0, cfg_on_source: bool = True) -> np.ndarray:
    """One whole-sequence editing step from ``t_i`` to ``t_next``.

    Args:
        z_edit: current edited latent, all frames.
        x_src: clean source latent.
        t_i, t_next: current and next time, ``t_next <= t_i``.
        cfg_scale: guidance scale; ``None`` or ``1.0`` skips the unconditional pass.
        seed, timestep_index: select the noise draw for this step.
    """
    z_edit = as_latent(z_edit, "edited latent")
    x_src = as_latent(x_src, "source latent")
    check_same_shape(z_edit, x_src, "wan_edit_step")
    if t_next > t_i:
        raise InvalidConfigError(f"step must move toward t=0, got {t_i} -> {t_next}")
    dv = _whole_sequence_delta(z_edit, x_src, t_i, p_src, p_tar, model, cfg_scale, seed,
                               timestep_index, cfg_on_source)
    return euler_update(z_edit, t_next - t_i, dv)


class _SinkRouter:
    """Hands out per-pass sink contexts for one timestep.

    Each evaluation pass (target/source branch, conditional/unconditional)
    keeps its own anchor chain since their keys and values differ.
    """

    def __init__(self, policy: SinkPolicy, timestep_index: int, passes):
        self.policy = policy
        self.timestep_index = timestep_index
        self.caches = {p: [] for p in passes}

    def context(self, pass_name, s: int) -> SinkContext:
        if pass_name not in self.caches or not self.policy.enabled:
            return OFF
        chain = self.caches[pass_name]
        ti, ta = self.timestep_index, self.policy.tokens
        if s == 0:
            chain.append(AnchorCache())
            return SinkContext.capture(chain[0], ti, ta)
        if self.policy.anchor is AnchorPolicy.FIRST_OF_INITIAL:
            return SinkContext.inject(chain[0], ti)
        chain.append(AnchorCache())
        return SinkContext.relay(chain[s - 1], chain[s], ti, ta)


def _segmented_delta(z_tar, z_src, t, p_tar, p_src, model, config: EditConfig,
                     plan: SegmentPlan, timestep_index: int, blend: bool, sink: SinkPolicy):
    """Per-segment velocity differences merged into one full-length buffer.

    Returns the merged buffer, the later-segment-wins splice of the same
    per-segment values (the unblended reference), and the boundary traces.
    """
    guided = config.cfg_scale != 1.0
    passes = [("tar", "cond")] + ([("tar", "uncond")] if guided else [])
    if config.sink_on_source:
        passes += [("src", "cond")] + ([("src", "uncond")] if guided and config.cfg_on_source else [])
    if sink.enabled and sink.tokens > plan.segment_length:
        raise InvalidConfigError(
            f"anchor token count {sink.tokens} exceeds segment length {plan.segment_length}"
        )
    router = _SinkRouter(sink, timestep_index, passes)

    merged = np.empty_like(z_tar)
    spliced = np.empty_like(z_tar)
    boundaries = []
    prev = None
    for span in plan:
        s = span.index
        sl = slice(span.start, span.end)
        dv = delta_velocity(
            model, z_tar[sl], z_src[sl], t, p_tar, p_src,
            router.context(("tar", "cond"), s), s,
            cfg_scale=config.cfg_scale,
            uncond_sink=router.context(("tar", "uncond"), s),
            source_sink=router.context(("src", "cond"), s),
            source_uncond_sink=router.context(("src", "uncond"), s),
            cfg_on_source=config.cfg_on_source,
        )
        if not np.all(np.isfinite(dv)):
            raise NumericDomainError(
                f"non-finite velocity difference in segment {s} at timestep {timestep_index}"
            )
        spliced[sl] = dv
        if prev is None:
            merged[sl] = dv
        else:
            ov = prev.end - span.start
            if blend and ov > 0:
                merged[span.start:prev.end] = blend_overlap(merged[prev.start:prev.end], dv,
                                                            len(span), ov)
                merged[prev.end:span.end] = dv[ov:]
            else:
                merged[sl] = dv
        prev = span

    for s, span in enumerate(plan.spans[1:], start=1):
        # discontinuity measured over the transition window around the seam:
        # from the last frame owned only by s-1 to the first owned only by s
        lo = span.start - 1
        hi = plan[s - 1].end
        pre = max(_jump(spliced[g - 1], spliced[g]) for g in range(lo + 1, hi + 1))
        post = max(_jump(merged[g - 1], merged[g]) for g in range(lo + 1, hi + 1))
        boundaries.append(BoundaryTrace(s, span.start, pre, post))
    return merged, spliced, tuple(boundaries)


def _segment_step(state: EditState, x_src, p_src, p_tar, model, config: EditConfig,
                  *, blend: bool, sink: SinkPolicy) -> EditState:
    if state.done:
        raise InvalidConfigError("schedule already exhausted")
    x_src = as_latent(x_src, "source latent")
    check_same_shape(state.z_edit, x_src, "edit state vs source")
    if state.plan.frames != x_src.shape[0]:
        raise InvalidShapeError(f"plan covers {state.plan.frames} frames, latent has {x_src.shape[0]}")
    i = state.step
    t_i, t_next = state.schedule.times[i], state.schedule.times[i + 1]
    z_tar, z_src = _branch_latents(state.z_edit, x_src, t_i, config.seed, i)
    merged, _, boundaries = _segmented_delta(z_tar, z_src, t_i, p_tar, p_src, model, config,
                                             state.plan, i, blend, sink)
    z_new = euler_update(state.z_edit, t_next - t_i, merged)
    record = StepTrace(i, t_i, t_next, _rms(merged), boundaries)
    log.debug("step %d t=%.4f |dv|=%.6g", i, t_i, record.delta_v_rms)
    return dataclasses.replace(state, z_edit=z_new, step=i + 1, trace=state.trace + (record,))


def mlv_edit_step(state: EditState, x_src, p_src, p_tar, model, config: EditConfig) -> EditState:
    """Advance ``state`` by one timestep with anchoring and overlap blending."""
    return _segment_step(state, x_src, p_src, p_tar, model, config,
                         blend=config.blend, sink=config.sink)


def naive_stitch_step(state: EditState, x_src, p_src, p_tar, model, config: EditConfig) -> EditState:
    return _segment_step(state, x_src, p_src, p_tar, model, config,
                         blend=False, sink=SinkPolicy(AnchorPolicy.NONE))


def _wan_state_step(state: EditState, x_src, p_src, p_tar, model, config: EditConfig) -> EditState:
    if state.done:
        raise InvalidConfigError("schedule already exhausted")
    x_src = as_latent(x_src, "source latent")
    check_same_shape(state.z_edit, x_src, "edit state vs source")
    i = state.step
    t_i, t_next = state.schedule.times[i], state.schedule.times[i + 1]
    dv = _whole_sequence_delta(state.z_edit, x_src, t_i, p_src, p_tar, model, config.cfg_scale,
                               config.seed, i, config.cfg_on_source)
    z_new = euler_update(state.z_edit, t_next - t_i, dv)
    record = StepTrace(i, t_i, t_next, _rms(dv), ())
    return dataclasses.replace(state, z_edit=z_new, step=i + 1, trace=state.trace + (record,))


STEP_FUNCTIONS = {
    "mlv": mlv_edit_step,
    "naive": naive_stitch_step,
    "wan": _wan_state_step,
}


def run_edit(x_src, p_src, p_tar, model, config: EditConfig = EditConfig(), mode: str = "mlv"):
    """Integrate the edit from ``t = 1`` down to ``t = 0``.

    Returns:
        ``(z_edit, trace)`` where ``trace`` holds one ``StepTrace`` per step.
    """
    if mode not in STEP_FUNCTIONS:
        raise InvalidConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    if p_src.dim != p_tar.dim:
        raise InvalidShapeError("source and target prompts differ in dimension")
    step = STEP_FUNCTIONS[mode]
    state = EditState.initial(x_src, config)
    while not state.done:
        state = step(state, x_src, p_src, p_tar, model, config)
    return state.z_edit, list(state.trace)


__all__ = [
    "EditConfig", "EditState", "StepTrace", "BoundaryTrace", "MODES",
    "wan_edit_step", "mlv_edit_step", "naive_stitch_step", "run_edit", "euler_update",
]
