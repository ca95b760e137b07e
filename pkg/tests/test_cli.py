import numpy as np
import pytest

from mlvedit.cli import (
    SCHEMA,
    RunManifest,
    compare_runs,
    main,
    parse_config,
    parse_config_text,
    run_experiment,
)
from mlvedit.errors import ConfigError, MLVError
from mlvedit.fixtures import make_fixture
from mlvedit.latent import read_latent, write_latent
from mlvedit.metrics import read_metrics_summary, read_pgm

FAST = "T = 5\nframes = 40\n"


def run(tmp_path, name, text=FAST, mode="mlv", trace=False):
    out = tmp_path / name
    assert run_experiment(RunManifest(parse_config_text(text), mode, trace), out) == 0
    return out


class TestConfig:
    def test_empty_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.cfg"
        path.write_text("")
        config = parse_config(path)
        assert config.values == {key: default for key, (_, default) in SCHEMA.items()}
        assert config.edit.n == 21 and config.edit.k == 5 and config.edit.steps == 25

    def test_comments_and_whitespace(self):
        config = parse_config_text("# header\n  n=13   # inline\n\nk = 3\n")
        assert (config["n"], config["k"]) == (13, 3)

    def test_k_equal_n_names_line(self):
        with pytest.raises(ConfigError) as info:
            parse_config_text("n = 21\nk = 21\n", "bad.cfg")
        assert info.value.line_no == 2
        assert "bad.cfg:2" in str(info.value) and "k = 21" in str(info.value)

    @pytest.mark.parametrize("text, needle", [
        ("colour = red\n", "unknown key"),
        ("n = 21\nn = 22\n", "duplicate"),
        ("n 21\n", "key = value"),
        ("T = many\n", "bad value"),
        ("sink_policy = sometimes\n", "bad value"),
        ("slice_channels = 9\n", "slice channel"),
        ("frames = 0\n", "frames"),
    ])
    def test_rejections(self, text, needle):
        with pytest.raises(ConfigError, match=needle):
            parse_config_text(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config(tmp_path / "nope.cfg")


class TestManifest:
    def test_same_seed_same_hash(self):
        a = RunManifest(parse_config_text("seed = 42\n"), "mlv")
        b = RunManifest(parse_config_text("seed=42"), "mlv")
        assert a.digest == b.digest
        assert a.digest != RunManifest(parse_config_text("seed = 43\n"), "mlv").digest
        assert a.digest != RunManifest(parse_config_text("seed = 42\n"), "naive").digest

    def test_round_trip(self):
        m = RunManifest(parse_config_text("seed = 7\nmodel = drift\ncfg_scale = 0.1\n"), "wan", True)
        back = RunManifest.parse(m.text())
        assert back == m and back.digest == m.digest

    def test_tamper_detected(self):
        text = RunManifest(parse_config_text(""), "mlv").text().replace("k = 5", "k = 4")
        with pytest.raises(ConfigError, match="checksum"):
            RunManifest.parse(text)


class TestRun:
    def test_outputs(self, tmp_path):
        out = run(tmp_path, "a", FAST + "slice_channels = 0,3\n", trace=True)
        names = sorted(p.name for p in out.iterdir())
        assert names == ["edited.mlv1", "manifest.txt", "metrics.csv", "slice_ch0.pgm", "slice_ch3.pgm",
                         "trace.csv"]
        assert read_latent(out / "edited.mlv1").shape == (40, 4)
        assert read_pgm(out / "slice_ch3.pgm").shape == (16, 40)
        trace = (out / "trace.csv").read_text().splitlines()
        assert trace[0].startswith("step,t,t_next,boundary")
        assert len(trace) == 1 + 5 * 2

    def test_wan_equals_mlv_single_segment(self, tmp_path):
        text = "T = 5\nframes = 21\n"
        a = run(tmp_path, "wan", text, "wan")
        b = run(tmp_path, "mlv", text, "mlv")
        assert (a / "edited.mlv1").read_bytes() == (b / "edited.mlv1").read_bytes()

    @pytest.mark.parametrize("mode", ["mlv", "naive", "wan"])
    def test_identity_prompts_reproduce_input(self, tmp_path, mode):
        out = run(tmp_path, mode, FAST + "identity_prompts = true\nfixture_seed = 5\n", mode)
        ref = tmp_path / "ref.mlv1"
        write_latent(ref, make_fixture("random", 40, 4, 5))
        assert (out / "edited.mlv1").read_bytes() == ref.read_bytes()

    def test_naive_rougher_than_mlv(self, tmp_path):
        text = "T = 5\nmodel = segment_bias\nfixture = constant\n"
        mlv = read_metrics_summary(run(tmp_path, "m", text, "mlv") / "metrics.csv")
        naive = read_metrics_summary(run(tmp_path, "n", text, "naive") / "metrics.csv")
        assert naive["boundary_jump_mean"] > mlv["boundary_jump_mean"]

    def test_input_file(self, tmp_path, rng):
        x = rng.standard_normal((30, 4))
        write_latent(tmp_path / "in.mlv1", x)
        out = run(tmp_path, "f", f"T = 3\ninput = {tmp_path / 'in.mlv1'}\nidentity_prompts = true\n")
        np.testing.assert_array_equal(read_latent(out / "edited.mlv1"), x)
        assert "input_descriptor = file:" in (out / "manifest.txt").read_text()

    def test_channel_mismatch_fails(self, tmp_path, rng, capsys):
        write_latent(tmp_path / "in.mlv1", rng.standard_normal((30, 3)))
        manifest = RunManifest(parse_config_text(f"input = {tmp_path / 'in.mlv1'}\n"), "mlv")
        assert run_experiment(manifest, tmp_path / "out") == 1
        assert (tmp_path / "out" / "manifest.txt").exists()
        assert not (tmp_path / "out" / "edited.mlv1").exists()
        assert "channels" in capsys.readouterr().err


class TestCompare:
    def test_identical_dirs(self, tmp_path):
        a = run(tmp_path, "a")
        report = compare_runs(a, a)
        rows = [line.split() for line in report.splitlines() if not line.startswith(("#", "metric"))]
        assert len(rows) == 3 and all(float(r[-1]) == 0.0 for r in rows)

    def test_malformed_names_file(self, tmp_path):
        a = run(tmp_path, "a")
        b = tmp_path / "b"
        b.mkdir()
        (b / "metrics.csv").write_text("kind,index,frame,value\nboundary_jump_mean,,,x\n")
        with pytest.raises(MLVError, match=str(b / "metrics.csv")):
            compare_runs(a, b)


class TestMain:
    def test_run_and_replay(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(FAST)
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "9", "--trace"]) == 0
        assert "seed = 9\n" in (tmp_path / "a" / "manifest.txt").read_text()
        assert main(["replay", str(tmp_path / "a" / "manifest.txt"), "--out", str(tmp_path / "b")]) == 0
        for name in ("edited.mlv1", "metrics.csv", "trace.csv", "manifest.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_compare_output(self, tmp_path, capsys):
        a = run(tmp_path, "a")
        assert main(["compare", str(a), str(a)]) == 0
        assert "boundary_jump_mean" in capsys.readouterr().out

    def test_bad_config_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("n = 21\nk = 21\n")
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "c.cfg:2" in capsys.readouterr().err

    def test_compare_missing_dir(self, tmp_path):
        assert main(["compare", str(tmp_path / "x"), str(tmp_path / "y")]) == 2

    def test_bad_mode_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["run", "--mode", "fast", "--out", str(tmp_path)])
        assert info.value.code == 2
