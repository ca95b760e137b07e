import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mlvedit.engine import EditConfig, run_edit
from mlvedit.errors import InvalidShapeError, MLVError, NumericDomainError, OutOfRangeError
from mlvedit.fixtures import make_fixture, segment_bias_model
from mlvedit.metrics import (
    MetricsReport,
    boundary_jump,
    frame_skip_similarity,
    read_metrics_summary,
    read_pgm,
    segment_centers,
    temporal_slice,
    write_pgm,
)
from mlvedit.segments import plan_segments

PLAN53 = plan_segments(53, 21, 5)


class TestBoundaryJump:
    def test_constant(self):
        per, b, i = boundary_jump(np.full((53, 3), 2.0), PLAN53)
        assert per == [0.0, 0.0] and b == 0.0 and i == 0.0

    def test_unit_step_at_seam(self):
        z = np.zeros((53, 3))
        z[16:] = 1.0
        per, b, i = boundary_jump(z, PLAN53)
        assert per == [1.0, 0.0]
        assert b == 0.5 and i == 0.0

    def test_single_segment(self, rng):
        z = rng.standard_normal((21, 2))
        per, b, i = boundary_jump(z, plan_segments(21, 21, 5))
        assert per == [] and b == 0.0
        assert i == pytest.approx(np.mean(np.diff(z, axis=0) ** 2))

    def test_plan_mismatch(self):
        with pytest.raises(InvalidShapeError):
            boundary_jump(np.zeros((50, 2)), PLAN53)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (53, 2), elements=st.floats(-10, 10)), st.floats(-100, 100))
    def test_shift_invariant(self, z, c):
        a = boundary_jump(z, PLAN53)
        b = boundary_jump(z + c, PLAN53)
        np.testing.assert_allclose(a[0], b[0], atol=1e-9)
        assert a[2] == pytest.approx(b[2], abs=1e-9)

    def test_mlv_smoother_than_naive(self, prompts):
        m = segment_bias_model(4, 1.0)
        x = make_fixture("constant", 53, 4)
        z_mlv, _ = run_edit(x, *prompts, m, EditConfig(), "mlv")
        z_naive, _ = run_edit(x, *prompts, m, EditConfig(), "naive")
        assert boundary_jump(z_mlv, PLAN53)[1] < boundary_jump(z_naive, PLAN53)[1]


class TestFrameSkip:
    def test_identical(self):
        per, mean = frame_skip_similarity(np.tile([1.0, 2.0, 3.0], (53, 1)), PLAN53)
        assert mean == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal_groups(self):
        f = np.zeros((53, 2))
        f[:21, 0] = 1.0
        f[21:, 1] = 1.0
        per, _ = frame_skip_similarity(f, PLAN53)
        assert per[0] == 0.0 and per[1] == 1.0

    def test_centers(self):
        assert segment_centers(PLAN53) == [10, 26, 42]

    def test_zero_vector(self):
        with pytest.raises(NumericDomainError):
            frame_skip_similarity(np.zeros((53, 3)), PLAN53)

    def test_single_segment(self):
        assert frame_skip_similarity(np.ones((10, 2)), plan_segments(10, 21, 5)) == ([], 1.0)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (53, 3), elements=st.floats(0.1, 10)), st.floats(1e-3, 1e3))
    def test_scale_invariant(self, f, alpha):
        a, _ = frame_skip_similarity(f, PLAN53)
        b, _ = frame_skip_similarity(alpha * f, PLAN53)
        np.testing.assert_allclose(a, b, atol=1e-12)
        assert all(-1 <= v <= 1 for v in a)


class TestSlice:
    def test_constant_is_mid_gray(self):
        row, img = temporal_slice(np.full((9, 2), 3.0), 1)
        assert np.all(img == 128) and img.shape == (1, 9)

    def test_ramp(self):
        z = np.arange(256, dtype=float)[:, None] * np.ones((1, 2))
        row, img = temporal_slice(z, 0)
        np.testing.assert_array_equal(img[0], np.arange(256))

    def test_round_trip(self, rng):
        z = rng.standard_normal((17, 3))
        row, img = temporal_slice(z, 2, height=4)
        assert row.tobytes() == z[:, 2].tobytes()
        assert img.shape == (4, 17)

    def test_channel_range(self):
        with pytest.raises(OutOfRangeError):
            temporal_slice(np.zeros((4, 2)), 2)

    def test_pgm(self, tmp_path, rng):
        _, img = temporal_slice(rng.standard_normal((30, 2)), 0, height=5)
        path = tmp_path / "s.pgm"
        write_pgm(path, img)
        assert path.read_bytes().startswith(b"P5\n30 5\n255\n")
        np.testing.assert_array_equal(read_pgm(path), img)


class TestReport:
    def test_csv_format(self, rng):
        z = rng.standard_normal((53, 4))
        report = MetricsReport.compute(z, PLAN53, rng.standard_normal((53, 6)))
        text = report.to_csv()
        assert "\r" not in text
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0] == ["kind", "index", "frame", "value"]
        assert [r[0] for r in rows[1:]] == ["boundary_jump"] * 2 + ["frame_skip_similarity"] * 2 + \
            ["boundary_jump_mean", "interior_jump_mean", "frame_skip_similarity_mean"]
        assert float(rows[-3][3]) == report.boundary_jump_mean  # 17 digits round-trip exactly

    def test_read_back(self, tmp_path, rng):
        report = MetricsReport.compute(rng.standard_normal((53, 4)), PLAN53, rng.standard_normal((53, 6)))
        path = tmp_path / "metrics.csv"
        path.write_text(report.to_csv())
        assert read_metrics_summary(path) == report.summary()

    def test_malformed(self, tmp_path):
        path = tmp_path / "metrics.csv"
        path.write_text("kind,index,frame,value\nboundary_jump_mean,,,abc\n")
        with pytest.raises(MLVError, match="metrics.csv"):
            read_metrics_summary(path)
        path.write_text("nonsense\n")
        with pytest.raises(MLVError, match="metrics.csv"):
            read_metrics_summary(path)

    def test_missing(self, tmp_path):
        with pytest.raises(MLVError, match="cannot read"):
            read_metrics_summary(tmp_path / "nope.csv")
