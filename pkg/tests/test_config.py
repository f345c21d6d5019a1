"""Config loading, overrides, validation, and digests."""

import pytest

from bertese.config import ConfigError, config_digest, config_to_ini, load_config


class TestDefaults:
    def test_pure_defaults(self):
        cfg = load_config()
        assert cfg.run.seed == 0
        assert cfg.bertese_stage.lambda1 == 0.3
        assert cfg.bertese_stage.lambda2 == 0.5
        assert cfg.bertese_stage.ste_mode == "hard"
        assert cfg.bertese_stage.snap_input is False
        assert cfg.predictor.dim == 64

    def test_world_spec_uses_run_seed(self):
        cfg = load_config(overrides=["run.seed=42"])
        assert cfg.world_spec().seed == 42

    def test_predictor_config_takes_vocab_size(self):
        cfg = load_config()
        pc = cfg.predictor_config(vocab_size=123)
        assert pc.vocab_size == 123 and pc.dim == 64


class TestFileAndOverrides:
    def write(self, tmp_path, text):
        p = tmp_path / "run.cfg"
        p.write_text(text, encoding="utf-8")
        return p

    def test_file_values_applied(self, tmp_path):
        p = self.write(tmp_path, "[run]\nseed = 7\n\n[bertese_stage]\nlambda1 = 0.1\n")
        cfg = load_config(p)
        assert cfg.run.seed == 7
        assert cfg.bertese_stage.lambda1 == 0.1

    def test_override_beats_file(self, tmp_path):
        p = self.write(tmp_path, "[run]\nseed = 7\n")
        cfg = load_config(p, overrides=["run.seed=9"])
        assert cfg.run.seed == 9

    def test_override_equals_editing_file(self, tmp_path):
        p = self.write(tmp_path, "[bertese_stage]\nlambda2 = 0.25\n")
        from_file = load_config(p)
        from_override = load_config(overrides=["bertese_stage.lambda2=0.25"])
        assert config_digest(from_file) == config_digest(from_override)

    def test_bool_parsing(self):
        assert load_config(overrides=["bertese_stage.snap_input=true"]).bertese_stage.snap_input
        assert not load_config(overrides=["bertese_stage.snap_input=no"]).bertese_stage.snap_input

    def test_ini_round_trip_preserves_digest(self, tmp_path):
        cfg = load_config(overrides=["run.seed=5", "ft_stage.epochs=12"])
        p = self.write(tmp_path, config_to_ini(cfg))
        assert config_digest(load_config(p)) == config_digest(cfg)


class TestErrors:
    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="bertese_stage.lambada"):
            load_config(overrides=["bertese_stage.lambada=0.3"])

    def test_unknown_section_named(self):
        with pytest.raises(ConfigError, match="rewriter_stage"):
            load_config(overrides=["rewriter_stage.epochs=3"])

    def test_unknown_key_in_file(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("[run]\nsede = 3\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="run.sede"):
            load_config(p)

    def test_bad_value_type_names_key(self):
        with pytest.raises(ConfigError, match="run.seed"):
            load_config(overrides=["run.seed=banana"])

    def test_malformed_override(self):
        with pytest.raises(ConfigError, match="section.key=value"):
            load_config(overrides=["run.seed"])

    def test_validation_positive_lr(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            load_config(overrides=["bertese_stage.learning_rate=0"])

    def test_validation_ste_mode(self):
        with pytest.raises(ConfigError, match="ste_mode"):
            load_config(overrides=["bertese_stage.ste_mode=medium"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "nope.cfg")


class TestDigest:
    def test_digest_stable(self):
        assert config_digest(load_config()) == config_digest(load_config())

    def test_digest_changes_with_value(self):
        a = config_digest(load_config())
        b = config_digest(load_config(overrides=["bertese_stage.lambda1=0.0"]))
        assert a != b

    def test_ablation_variants_differ_only_in_lambdas(self):
        full = load_config()
        none = load_config(overrides=["bertese_stage.lambda1=0", "bertese_stage.lambda2=0"])
        ini_full = config_to_ini(full).splitlines()
        ini_none = config_to_ini(none).splitlines()
        diff = [
            (a, b) for a, b in zip(ini_full, ini_none) if a != b
        ]
        assert sorted(x.split(" = ")[0] for x, _ in diff) == ["lambda1", "lambda2"]
