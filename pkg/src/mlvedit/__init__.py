"""Segmented, training-free flow editing of long latent sequences."""

__version__ = "0.1.0"

from .attention import AnchorCache, AnchorPolicy, SinkPolicy, attend_with_sink, attention, capture_anchor
from .blend import blend_overlap, window_weight
from .engine import EditConfig, EditState, mlv_edit_step, naive_stitch_step, run_edit, wan_edit_step
from .errors import (
    ConfigError,
    InvalidConfigError,
    InvalidShapeError,
    MissingEntryError,
    MLVError,
    NumericDomainError,
    OutOfRangeError,
    ProtocolError,
)
from .latent import lerp_source, read_latent, softmax_rows, write_latent
from .metrics import MetricsReport, boundary_jump, frame_skip_similarity, temporal_slice
from .models import (
    ConstantVelocity,
    PromptEmbedding,
    SegmentBiasVelocity,
    SinkContext,
    ToyTransformer,
    apply_cfg,
    delta_velocity,
    eval_velocity,
    make_prompt,
)
from .rng import SeedSpec, sample_noise
from .schedule import TimestepSchedule, make_schedule
from .segments import SegmentPlan, SegmentSpan, overlap_of, plan_segments
