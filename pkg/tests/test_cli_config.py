"""Config parsing, CLI subcommands, image IO and the plot rasterizer."""

import json

import numpy as np
import pytest

from maskrl import cli, images, plotting
from maskrl.config import (ConfigError, PRESETS, build_run_config,
                           parse_config_file)


class TestConfigParsing:
    def test_empty_file_plus_preset_is_complete(self, tmp_path):
        cfg_file = tmp_path / "empty.cfg"
        cfg_file.write_text("")
        rc = build_run_config(parse_config_file(cfg_file), "desk")
        assert rc.env.image_size == 64
        assert rc.agent.batch_size == 64
        assert rc.agent.latent_dim == 1024
        assert rc.run.preset == "desk"

    def test_paper_preset_values(self):
        rc = build_run_config(None, "paper")
        assert rc.env.image_size == 84
        assert rc.agent.latent_dim == 4096
        assert rc.agent.batch_size == 256
        assert rc.agent.replay_capacity == 250_000
        assert rc.agent.discount == 0.99
        assert rc.agent.n_step == 3
        assert rc.agent.tau == 0.01
        assert rc.agent.loss_weights.c1 == 0.01
        assert rc.agent.loss_weights.c2 == 0.0025

    def test_file_values_applied(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("""
# comment line
[env]
image_size = 32
task = "reach-obstacle"

[agent]
variant = "drq"
c1 = 0.5

[run]
seed = 42
total_frames = 1000
""")
        rc = build_run_config(parse_config_file(cfg), "desk")
        assert rc.env.image_size == 32
        assert rc.env.task == "reach-obstacle"
        assert rc.agent.variant == "drq"
        assert rc.agent.loss_weights.c1 == 0.5
        assert rc.run.seed == 42 and rc.agent.seed == 42

    def test_unknown_key_is_hard_error_with_line(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[agent]\nbatchsize = 32\n")
        with pytest.raises(ConfigError, match="line 2.*batchsize"):
            build_run_config(parse_config_file(cfg), "desk")

    def test_negative_coefficient_rejected(self, tmp_path):
        cfg = tmp_path / "neg.cfg"
        cfg.write_text("[agent]\nc2 = -1\n")
        with pytest.raises(ConfigError):
            build_run_config(parse_config_file(cfg), "desk")

    def test_override_beats_file(self, tmp_path):
        cfg = tmp_path / "a.cfg"
        cfg.write_text("[env]\nimage_size = 48\n")
        rc = build_run_config(parse_config_file(cfg), "desk",
                              overrides=["env.image_size=32"])
        assert rc.env.image_size == 32

    def test_bad_override_format(self):
        with pytest.raises(ConfigError):
            build_run_config(None, "desk", overrides=["image_size=32"])

    def test_unquoted_string_rejected(self, tmp_path):
        cfg = tmp_path / "uq.cfg"
        cfg.write_text("[agent]\nvariant = sear\n")
        with pytest.raises(ConfigError, match=r"uq.cfg:2: cannot parse"):
            parse_config_file(cfg)

    def test_scientific_notation(self, tmp_path):
        cfg = tmp_path / "sci.cfg"
        cfg.write_text("[agent]\nreplay_capacity = 250000\nlr = 1e-4\n")
        rc = build_run_config(parse_config_file(cfg), "desk")
        assert rc.agent.lr == pytest.approx(1e-4)

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="not found"):
            parse_config_file("/nonexistent/path.cfg")

    def test_unknown_section(self, tmp_path):
        cfg = tmp_path / "sec.cfg"
        cfg.write_text("[banana]\nx = 1\n")
        with pytest.raises(ConfigError, match="unknown section"):
            parse_config_file(cfg)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="preset"):
            build_run_config(None, "gpu-cluster")

    def test_defaults_echoed(self):
        rc = build_run_config(None, "desk")
        d = rc.as_dict()
        assert d["agent"]["loss_weights"]["c2"] == 0.0025
        assert d["env"]["episode_length"] == 100
        assert d["run"]["preset"] == "desk"


class TestImageIO:
    def test_ppm_roundtrip(self, tmp_path):
        rgb = np.random.default_rng(0).integers(0, 256, (12, 9, 3)).astype(np.uint8)
        path = images.write_ppm(tmp_path / "x.ppm", rgb)
        np.testing.assert_array_equal(images.read_ppm(path), rgb)

    def test_pgm_roundtrip_and_binary_scaling(self, tmp_path):
        mask = (np.random.default_rng(1).random((7, 5)) > 0.5).astype(np.uint8)
        path = images.write_pgm(tmp_path / "m.pgm", mask)
        np.testing.assert_array_equal(images.read_pgm(path), mask * 255)

    def test_png_structure(self, tmp_path):
        rgb = np.random.default_rng(2).integers(0, 256, (8, 8, 3)).astype(np.uint8)
        path = images.write_png(tmp_path / "p.png", rgb)
        data = path.read_bytes()
        assert data[:8] == b"\x89PNG\r\n\x1a\n"
        assert b"IHDR" in data and b"IDAT" in data and data.endswith(b"IEND" + data[-4:])


class TestPlotting:
    def test_single_series(self, tmp_path):
        xs = np.arange(0, 100, 10)
        path = plotting.plot_curves(
            [{"x": xs, "y": np.tanh(xs / 50), "label": "success"}],
            tmp_path / "single.png", title="test", xlabel="step", ylabel="v")
        assert path.exists() and path.stat().st_size > 100

    def test_two_identical_runs_zero_band(self):
        xs = np.arange(5.0)
        ys = xs ** 2
        grid, mean, lo, hi = plotting.aggregate_runs([(xs, ys), (xs, ys)])
        np.testing.assert_array_equal(lo, hi)
        np.testing.assert_array_equal(mean, ys)

    def test_union_grid_interpolation(self):
        a = (np.array([0.0, 10.0]), np.array([0.0, 10.0]))
        b = (np.array([0.0, 5.0, 10.0]), np.array([0.0, 0.0, 0.0]))
        grid, mean, lo, hi = plotting.aggregate_runs([a, b])
        np.testing.assert_array_equal(grid, [0, 5, 10])
        np.testing.assert_allclose(mean, [0.0, 2.5, 5.0])

    def test_band_rendering(self, tmp_path):
        xs = np.arange(10.0)
        path = plotting.plot_curves(
            [{"x": xs, "y": xs, "band": (xs - 1, xs + 1), "label": "a"},
             {"x": xs, "y": 10 - xs, "label": "b"}],
            tmp_path / "band.ppm")
        img = images.read_ppm(path)
        assert img.shape[2] == 3
        # the canvas is not blank
        assert img.min() < 200


class TestCliCommands:
    def test_maskdemo(self, tmp_path):
        rc = cli.main(["maskdemo", "--image-size", "48", "--seed", "1",
                       "--out", str(tmp_path / "demo")])
        assert rc == 0
        files = sorted(p.name for p in (tmp_path / "demo").iterdir())
        assert "mask_clean.pgm" in files and "mask_approximate.pgm" in files
        assert "mask_noisy.pgm" in files and "mask_joint_patches.pgm" in files
        assert "mask_preprocessed.pgm" in files and "frame.ppm" in files

    def test_toy_quick(self, tmp_path, capsys):
        rc = cli.main(["toy", "--seeds", "5", "--eval-episodes", "2",
                       "--out", str(tmp_path / "toy")])
        assert rc == 0
        assert (tmp_path / "toy" / "table.json").exists()
        out = capsys.readouterr().out
        assert "env>agent" in out

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[agent]\nnope = 1\n")
        rc = cli.main(["train", "--config", str(bad)])
        assert rc == cli.EXIT_CONFIG

    def test_train_eval_plot_activations_roundtrip(self, tmp_path):
        out = tmp_path / "mini"
        rc = cli.main([
            "train", "--preset", "desk", "--seed", "2", "--out", str(out),
            "--set", "env.image_size=32", "--set", "agent.latent_dim=64",
            "--set", "agent.batch_size=8", "--set", "agent.hidden_dim=32",
            "--set", "agent.feature_dim=16", "--set", "agent.seed_frames=200",
            "--set", "agent.exploration_steps=50", "--set", "run.total_frames=480",
            "--set", "agent.eval_every=400", "--set", "agent.eval_episodes=2",
            "--set", "env.episode_length=40",
        ])
        assert rc == 0
        assert (out / "metrics.jsonl").exists()
        manifest = json.loads((out / "run.json").read_text())
        assert manifest["agent_config"]["latent_dim"] == 64

        rc = cli.main(["eval", "--checkpoint", str(out / "checkpoint_final"),
                       "--episodes", "2", "--seed", "7"])
        assert rc == 0

        rc = cli.main(["plot", "--metrics", str(out / "metrics.jsonl"),
                       "--key", "critic_loss", "--out", str(tmp_path / "c.png")])
        assert rc == 0
        assert (tmp_path / "c.png").exists()

        rc = cli.main(["activations", "--checkpoint", str(out / "checkpoint_final"),
                       "--out", str(tmp_path / "act")])
        assert rc == 0
        channel_files = list((tmp_path / "act").glob("channel_*.png"))
        assert len(channel_files) == 32
        assert (tmp_path / "act" / "contact_sheet.png").exists()

    def test_plot_missing_key_is_config_error(self, tmp_path):
        m = tmp_path / "m.jsonl"
        m.write_text('{"step": 1, "type": "update"}\n')
        rc = cli.main(["plot", "--metrics", str(m), "--key", "nope",
                       "--out", str(tmp_path / "x.png")])
        assert rc == cli.EXIT_CONFIG
