"""Config file parsing, validation messages, and the printable defaults."""

import pytest

from framefuse.config import (
    ConfigError,
    RunConfig,
    default_config_text,
    load_config,
    parse_config,
)


class TestParsing:
    def test_empty_text_gives_defaults(self):
        assert parse_config("") == RunConfig()

    def test_default_text_parses_back_to_defaults(self):
        assert parse_config(default_config_text()) == RunConfig()

    def test_values_comments_and_blank_lines(self):
        cfg = parse_config(
            """
            # a comment
            seed = 7
            n_steps=5          # trailing comment
            eta = 0.5
            fusion_mode = semantic
            save_raw = true
            """
        )
        assert cfg.seed == 7
        assert cfg.n_steps == 5
        assert cfg.eta == 0.5
        assert cfg.fusion_mode == "semantic"
        assert cfg.save_raw is True

    def test_unknown_key_names_line(self):
        with pytest.raises(ConfigError, match="line 2: unknown key 'stepz'"):
            parse_config("seed = 1\nstepz = 4\n")

    def test_missing_equals_names_line(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("just words\n")

    def test_type_error_names_field(self):
        with pytest.raises(ConfigError, match="n_steps: expected int"):
            parse_config("n_steps = soon\n")

    def test_boolean_words(self):
        assert parse_config("save_raw = on\n").save_raw is True
        assert parse_config("save_raw = 0\n").save_raw is False
        with pytest.raises(ConfigError, match="save_raw"):
            parse_config("save_raw = maybe\n")

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("seed = 3\nworkers = 2\n")
        cfg = load_config(path)
        assert (cfg.seed, cfg.workers) == (3, 2)


class TestValidation:
    @pytest.mark.parametrize("line,field", [
        ("seed = -1", "seed"),
        ("n_steps = 0", "n_steps"),
        ("beta_start = 0", "beta_start"),
        ("beta_end = 1.5", "beta_end"),
        ("train_steps = 5", "train_steps"),
        ("eta = 2", "eta"),
        ("stage_boundary_fraction = 0", "stage_boundary_fraction"),
        ("anchor_policy = dice", "anchor_policy"),
        ("fusion_mode = sometimes", "fusion_mode"),
        ("solver_method = lu", "solver_method"),
        ("residual_tolerance = 0", "residual_tolerance"),
        ("max_iterations = -2", "max_iterations"),
        ("occlusion_tolerance_px = -1", "occlusion_tolerance_px"),
        ("occlusion_dilation = -1", "occlusion_dilation"),
        ("denoiser = magic", "denoiser"),
        ("toy_lambda = 1.5", "toy_lambda"),
        ("workers = 0", "workers"),
        ("x0_clip = 1,0", "x0_clip"),
        ("x0_clip = wide", "x0_clip"),
    ])
    def test_error_message_names_field(self, line, field):
        with pytest.raises(ConfigError, match=f"^{field}"):
            parse_config(line + "\n")

    def test_bridge_requires_endpoint(self):
        with pytest.raises(ConfigError, match="bridge_command"):
            parse_config("denoiser = bridge\n")
        parse_config("denoiser = bridge\nbridge_command = cat\n")
        parse_config("denoiser = bridge\nbridge_host = localhost\nbridge_port = 9000\n")
        with pytest.raises(ConfigError, match="bridge_port"):
            parse_config("denoiser = bridge\nbridge_host = localhost\n")

    def test_x0_clip_values(self):
        assert RunConfig().parse_x0_clip() is None
        assert RunConfig(x0_clip="off").parse_x0_clip() is None
        assert RunConfig(x0_clip="-1,1").parse_x0_clip() == (-1.0, 1.0)
        assert RunConfig(x0_clip=" 0 , 1 ").parse_x0_clip() == (0.0, 1.0)


class TestBuilders:
    def test_schedule_respects_fields(self):
        cfg = parse_config("n_steps = 4\ntrain_steps = 100\n")
        schedule = cfg.schedule()
        assert schedule.n_steps == 4
        assert list(schedule.timesteps) == [75, 50, 25, 0]

    def test_fusion_carries_seed_and_policy(self):
        cfg = parse_config("seed = 11\nanchor_policy = round-robin\n")
        fusion = cfg.fusion()
        assert fusion.rng_seed == 11
        assert fusion.anchor_policy == "round-robin"

    def test_solver_zero_means_automatic_cap(self):
        assert parse_config("").solver().max_iterations is None
        assert parse_config("max_iterations = 50\n").solver().max_iterations == 50
