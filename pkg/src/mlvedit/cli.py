"""Batch driver: config parsing, run manifests, experiment runs and comparisons.

Config files are flat ``key = value`` text with ``#`` comments::

    T = 25
    cfg_scale = 7.5
    n = 21
    k = 5
    model = segment_bias
    fixture = constant
    frames = 53
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .attention import AnchorPolicy, SinkPolicy
from .engine import MODES, EditConfig, run_edit
from .errors import ConfigError, InvalidConfigError, MLVError
from .fixtures import FIXTURE_KINDS, make_fixture
from .latent import read_latent, write_latent
from .metrics import FLOAT_FMT, MetricsReport, read_metrics_summary, temporal_slice, write_pgm
from .models import ConstantVelocity, SegmentBiasVelocity, ToyTransformer, make_prompt
from .rng import SeedSpec
from .segments import plan_segments

log = logging.getLogger(__name__)

MODELS = ("toy", "drift", "constant", "segment_bias")
SINK_POLICIES = tuple(p.value for p in AnchorPolicy)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise ValueError(f"{v} does not fit in u64")
    return v


def _choice(options):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


def _channel_list(text: str) -> tuple[int, ...]:
    return tuple(int(c) for c in text.split(",") if c.strip())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return FLOAT_FMT.format(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


# key -> (parser, default)
SCHEMA = {
    "T": (int, 25),
    "cfg_scale": (float, 7.5),
    "n": (int, 21),
    "k": (int, 5),
    "seed": (_u64, 0),
    "sink_policy": (_choice(SINK_POLICIES), "first_of_initial"),
    "anchor_tokens": (int, 1),
    "blend": (_bool, True),
    "sink_on_source": (_bool, True),
    "cfg_on_source": (_bool, True),
    "model": (_choice(MODELS), "toy"),
    "channels": (int, 4),
    "prompt_dim": (int, 8),
    "model_dim": (int, 32),
    "layers": (int, 2),
    "model_seed": (_u64, 0),
    "jitter": (float, 0.0),
    "jitter_seed": (_u64, 0),
    "constant_target": (float, 1.0),
    "constant_source": (float, 0.0),
    "bias_magnitude": (float, 1.0),
    "bias_seed": (_u64, 0),
    "fixture": (_choice(FIXTURE_KINDS), "random"),
    "frames": (int, 53),
    "fixture_seed": (_u64, 0),
    "input": (str, ""),
    "prompt_source_seed": (_u64, 1),
    "prompt_target_seed": (_u64, 2),
    "identity_prompts": (_bool, False),
    "slice_channels": (_channel_list, (0,)),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Every run parameter, keyed exactly like the config file."""

    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @property
    def edit(self) -> EditConfig:
        v = self.values
        anchor = AnchorPolicy(v["sink_policy"])
        return EditConfig(
            steps=v["T"], cfg_scale=v["cfg_scale"], n=v["n"], k=v["k"], seed=SeedSpec(v["seed"]),
            sink=SinkPolicy(anchor, v["anchor_tokens"]), blend=v["blend"],
            sink_on_source=v["sink_on_source"], cfg_on_source=v["cfg_on_source"],
        )

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig({**self.values, **changes})

    def canonical(self) -> str:
        return "".join(f"{key} = {_fmt(self.values[key])}\n" for key in SCHEMA)


def parse_config_text(text: str, path="<config>") -> ExperimentConfig:
    values = {key: default for key, (_, default) in SCHEMA.items()}
    seen: dict[str, int] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", path, line_no, raw)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", path, line_no, raw)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", path, line_no, raw)
        seen[key] = line_no
        parser, _ = SCHEMA[key]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", path, line_no, raw) from None
    config = ExperimentConfig(values)
    _validate(config, path, seen, text.splitlines())
    return config


def _validate(config: ExperimentConfig, path, seen, lines) -> None:
    def fail(message, *keys):
        for key in keys:
            if key in seen:
                no = seen[key]
                raise ConfigError(message, path, no, lines[no - 1])
        raise ConfigError(message, path)

    try:
        config.edit
    except InvalidConfigError as exc:
        fail(str(exc), "k", "n", "T", "anchor_tokens", "cfg_scale")
    v = config.values
    for key in ("channels", "prompt_dim", "model_dim", "layers", "frames"):
        if v[key] < 1:
            fail(f"{key} must be >= 1, got {v[key]}", key)
    for c in v["slice_channels"]:
        if not 0 <= c < v["channels"]:
            fail(f"slice channel {c} outside [0, {v['channels']})", "slice_channels")


def parse_config(path) -> ExperimentConfig:
    """Read and validate a config file; an empty file yields all defaults."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError("config file not found", path) from None
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path) from None
    return parse_config_text(text, path)


@dataclass(frozen=True)
class RunManifest:
    config: ExperimentConfig
    mode: str
    trace: bool = False
    tool_version: str = __version__

    @property
    def root_seed(self) -> int:
        return self.config["seed"]

    @property
    def input_descriptor(self) -> str:
        v = self.config.values
        if v["input"]:
            return f"file:{v['input']}"
        return f"fixture:{v['fixture']}(F={v['frames']},C={v['channels']},seed={v['fixture_seed']})"

    def body(self) -> str:
        return (
            f"tool_version = {self.tool_version}\n"
            f"mode = {self.mode}\n"
            f"trace = {_fmt(self.trace)}\n"
            f"root_seed = {self.root_seed}\n"
            f"input_descriptor = {self.input_descriptor}\n"
            + self.config.canonical()
        )

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.body().encode("utf-8")).hexdigest()

    def text(self) -> str:
        return f"# mlvedit run manifest\nsha256 = {self.digest}\n" + self.body()

    @classmethod
    def parse(cls, text: str, path="<manifest>") -> "RunManifest":
        header, config_lines = {}, []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key = line.split("=", 1)[0].strip()
            if key in ("sha256", "tool_version", "mode", "trace", "root_seed", "input_descriptor"):
                header[key] = line.split("=", 1)[1].strip()
            else:
                config_lines.append(raw)
        if "mode" not in header:
            raise ConfigError("manifest lacks a mode line", path)
        config = parse_config_text("\n".join(config_lines), path)
        manifest = cls(config, _choice(MODES)(header["mode"]), _bool(header.get("trace", "false")),
                       header.get("tool_version", __version__))
        if "sha256" in header and header["sha256"] != manifest.digest:
            raise ConfigError("manifest checksum mismatch (edited by hand?)", path)
        return manifest


def build_model(config: ExperimentConfig):
    v = config.values
    c, p = v["channels"], v["prompt_dim"]
    kind = v["model"]
    if kind == "toy":
        return ToyTransformer.create(c, p, v["model_dim"], v["layers"], seed=v["model_seed"],
                                     jitter=v["jitter"], jitter_seed=v["jitter_seed"])
    if kind == "drift":
        from .fixtures import DRIFT_JITTER, drift_model
        jitter = v["jitter"] if v["jitter"] else DRIFT_JITTER
        return drift_model(v["jitter_seed"], c, p, v["model_dim"], v["layers"], seed=v["model_seed"],
                           jitter=jitter)
    if kind == "constant":
        return ConstantVelocity(c, 0.0, {"target": v["constant_target"], "source": v["constant_source"]}, p)
    return SegmentBiasVelocity(c, 0.0, v["bias_magnitude"], v["bias_seed"], p)


def feature_model(config: ExperimentConfig, model) -> ToyTransformer:
    """Per-frame feature extractor for the similarity metric."""
    if isinstance(model, ToyTransformer):
        return model
    v = config.values
    return ToyTransformer.create(v["channels"], v["prompt_dim"], v["model_dim"], v["layers"],
                                 seed=v["model_seed"])


def build_inputs(config: ExperimentConfig):
    v = config.values
    if v["input"]:
        x_src = read_latent(v["input"])
        if x_src.shape[1] != v["channels"]:
            raise ConfigError(f"input has {x_src.shape[1]} channels, config says {v['channels']}")
    else:
        x_src = make_fixture(v["fixture"], v["frames"], v["channels"], v["fixture_seed"])
    p_src = make_prompt("source", v["prompt_dim"], v["prompt_source_seed"])
    if v["identity_prompts"]:
        p_tar = p_src
    else:
        p_tar = make_prompt("target", v["prompt_dim"], v["prompt_target_seed"])
    return x_src, p_src, p_tar


TRACE_HEADER = ("step", "t", "t_next", "boundary", "seam_frame",
                "pre_blend_jump", "post_blend_jump", "delta_v_rms")


def trace_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for rec in trace:
        head = [rec.step, FLOAT_FMT.format(rec.t), FLOAT_FMT.format(rec.t_next)]
        rms = FLOAT_FMT.format(rec.delta_v_rms)
        if not rec.boundaries:
            w.writerow(head + ["", "", "", "", rms])
        for b in rec.boundaries:
            w.writerow(head + [b.boundary, b.seam, FLOAT_FMT.format(b.pre_blend_jump),
                               FLOAT_FMT.format(b.post_blend_jump), rms])
    return buf.getvalue()


def run_experiment(manifest: RunManifest, out_dir) -> int:
    """Execute a manifest, writing all outputs into ``out_dir``.

    The manifest is written first so a failed run still records what was
    attempted. Returns a process exit status.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.txt").write_text(manifest.text())
    config = manifest.config
    try:
        x_src, p_src, p_tar = build_inputs(config)
        model = build_model(config)
        edit = config.edit
        z, trace = run_edit(x_src, p_src, p_tar, model, edit, manifest.mode)
        plan = plan_segments(x_src.shape[0], edit.n, edit.k)
        features = feature_model(config, model).frame_features(z, p_tar)
        report = MetricsReport.compute(z, plan, features)
    except MLVError as exc:
        print(f"mlvedit: run failed: {exc}", file=sys.stderr)
        return 1
    write_latent(out / "edited.mlv1", z)
    (out / "metrics.csv").write_text(report.to_csv())
    if manifest.trace:
        (out / "trace.csv").write_text(trace_csv(trace))
    for c in config["slice_channels"]:
        _, image = temporal_slice(z, c, height=16)
        write_pgm(out / f"slice_ch{c}.pgm", image)
    log.info("wrote %s", out)
    return 0


def compare_runs(dir_a, dir_b) -> str:
    """Side-by-side metric summaries of two run directories, with deltas (b - a)."""
    a = read_metrics_summary(Path(dir_a) / "metrics.csv")
    b = read_metrics_summary(Path(dir_b) / "metrics.csv")
    width = max(len(k) for k in a)
    lines = [f"{'metric':<{width}}  {'a':>24}  {'b':>24}  {'delta (b-a)':>24}",
             f"# a = {dir_a}", f"# b = {dir_b}"]
    for key in a:
        lines.append(f"{key:<{width}}  {a[key]:>24.17g}  {b[key]:>24.17g}  {b[key] - a[key]:>24.17g}")
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mlvedit", description="Segmented flow editing on synthetic latents.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", type=Path, help="key = value config file (defaults if omitted)")
    run.add_argument("--mode", choices=MODES, default="mlv")
    run.add_argument("--out", type=Path, required=True)
    run.add_argument("--seed", type=_u64, help="override the config's root seed")
    run.add_argument("--trace", action="store_true", help="write the per-step trace.csv")

    replay = sub.add_parser("replay", help="re-run a manifest.txt")
    replay.add_argument("manifest", type=Path)
    replay.add_argument("--out", type=Path, required=True)

    cmp_ = sub.add_parser("compare", help="compare metric summaries of two run directories")
    cmp_.add_argument("dir_a", type=Path)
    cmp_.add_argument("dir_b", type=Path)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            config = parse_config(args.config) if args.config else parse_config_text("")
            if args.seed is not None:
                config = config.with_overrides(seed=args.seed)
            return run_experiment(RunManifest(config, args.mode, args.trace), args.out)
        if args.command == "replay":
            manifest = RunManifest.parse(args.manifest.read_text(), args.manifest)
            return run_experiment(manifest, args.out)
        sys.stdout.write(compare_runs(args.dir_a, args.dir_b))
        return 0
    except MLVError as exc:
        print(f"mlvedit: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"mlvedit: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
