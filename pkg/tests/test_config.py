import pytest
from hypothesis import given
from hypothesis import strategies as st

from boxsense.config import (
    ConfigError,
    RunConfig,
    config_digest,
    load_run_config,
    parse_run_config,
    resolved_text,
    with_overrides,
)
from boxsense.model import desk_preset, full_scale_preset


class TestDefaults:
    def test_default_orm_is_the_desk_preset(self):
        cfg = RunConfig()
        assert cfg.orm == desk_preset()
        assert cfg.orm.embed_dim == 64
        assert cfg.orm.num_blocks == 2
        assert cfg.orm.epochs == 10

    def test_validation(self):
        with pytest.raises(ConfigError, match="cap_per_mode"):
            RunConfig(cap_per_mode=0)
        with pytest.raises(ConfigError, match="stride"):
            RunConfig(stride=-1)
        with pytest.raises(ConfigError, match="master_seed"):
            RunConfig(master_seed=-3)
        with pytest.raises(ConfigError, match="categories"):
            RunConfig(categories=())


class TestParsing:
    def test_comments_and_blanks_ignored(self):
        cfg = parse_run_config(
            """
            # a comment
            master_seed = 7   # trailing comment

            categories = easy, medium
            """
        )
        assert cfg.master_seed == 7
        assert cfg.categories == ("easy", "medium")

    def test_orm_preset_then_field_overrides(self):
        cfg = parse_run_config("orm.preset = full\norm.epochs = 3\n")
        assert cfg.orm == full_scale_preset(epochs=3)
        assert cfg.orm.embed_dim == 512

    def test_channel_mask_and_alphas_parse_as_tuples(self):
        cfg = parse_run_config("orm.channel_mask = tau, pose\norm.alphas = 1,2,0.5,4\n")
        assert cfg.orm.channel_mask == ("tau", "pose")
        assert cfg.orm.alphas == (1.0, 2.0, 0.5, 4.0)

    def test_unknown_key_names_the_line(self):
        with pytest.raises(ConfigError, match="line 2: unknown key 'bogus'"):
            parse_run_config("master_seed = 1\nbogus = 2\n")

    def test_missing_equals_sign(self):
        with pytest.raises(ConfigError, match="expected key = value"):
            parse_run_config("just words\n")

    def test_bad_int_value(self):
        with pytest.raises(ConfigError, match="expected int"):
            parse_run_config("master_seed = soon\n")

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown preset"):
            parse_run_config("orm.preset = huge\n")

    def test_invalid_model_shape_becomes_config_error(self):
        with pytest.raises(ConfigError, match="divisible"):
            parse_run_config("orm.embed_dim = 10\norm.num_heads = 4\n")

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read config"):
            load_run_config(str(tmp_path / "nope.cfg"))


class TestRoundTrip:
    def test_default_round_trips(self):
        cfg = RunConfig()
        assert parse_run_config(resolved_text(cfg)) == cfg

    def test_customized_round_trips(self):
        cfg = RunConfig(
            master_seed=99,
            categories=("hard",),
            episodes_per_category=5,
            cap_per_mode=2,
            stride=1,
            dataset_path="x.jsonl",
            orm=full_scale_preset(alphas=(0.5, 1.0, 2.0, 3.0), channel_mask=("tau", "pose")),
        )
        assert parse_run_config(resolved_text(cfg)) == cfg

    @given(
        master_seed=st.integers(0, 2**31),
        episodes=st.integers(0, 10_000),
        cap=st.integers(1, 10_000),
        stride=st.integers(1, 25),
        lr=st.floats(1e-6, 1.0, allow_nan=False),
    )
    def test_scalars_survive_the_text_form(self, master_seed, episodes, cap, stride, lr):
        cfg = RunConfig(
            master_seed=master_seed,
            episodes_per_category=episodes,
            cap_per_mode=cap,
            stride=stride,
            orm=desk_preset(learning_rate=lr),
        )
        assert parse_run_config(resolved_text(cfg)) == cfg


class TestDigest:
    def test_twelve_hex_chars_and_stable(self):
        digest = config_digest(RunConfig())
        assert len(digest) == 12
        int(digest, 16)
        assert digest == config_digest(RunConfig())

    def test_any_field_change_moves_the_digest(self):
        base = config_digest(RunConfig())
        assert config_digest(RunConfig(master_seed=43)) != base
        assert config_digest(RunConfig(orm=desk_preset(seed=1))) != base


class TestOverrides:
    def test_none_values_are_ignored(self):
        cfg = RunConfig()
        assert with_overrides(cfg, master_seed=None, episodes_per_category=None) == cfg

    def test_flags_win_over_file_values(self):
        cfg = parse_run_config("master_seed = 5\norm.epochs = 9\n")
        out = with_overrides(cfg, master_seed=10, orm_epochs=2, orm_seed=4)
        assert out.master_seed == 10
        assert out.orm.epochs == 2
        assert out.orm.seed == 4
        assert out.stride == cfg.stride
