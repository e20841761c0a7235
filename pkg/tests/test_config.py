from pathlib import Path

import pytest

import tripletdet as td
from tripletdet.config import (DataConfig, EvalConfig, ModelConfig, RunConfig,
                               StageConfig, apply_override, describe_keys,
                               load_config)

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


class TestDefaults:
    def test_model_defaults_match_full_scale_setup(self):
        m = ModelConfig()
        assert (m.image_height, m.image_width) == (256, 448)
        assert (m.d, m.b_l, m.t_l, m.heads) == (512, 2, 4, 8)
        assert m.backbone == "resnet-like" and m.roi_grid == 7
        assert m.d_prime == 128
        assert (m.mp_variant, m.mp_layers, m.mp_heads) == ("gat", 2, 2)
        assert m.class_embed_dim == 128  # d // 4 when unset

    def test_stage_defaults(self):
        s = StageConfig()
        assert s.optimizer == "sgd" and s.momentum == 0.9
        assert (s.epochs, s.batch_size) == (30, 32)
        assert s.lr_decay == 0.99
        assert (s.alpha, s.beta) == (1.0, 0.5)

    def test_second_stage_default_uses_adam(self):
        cfg = RunConfig()
        assert cfg.stage2.optimizer == "adam"
        assert cfg.stage2.weight_decay == 0.0
        assert cfg.stage1.optimizer == "sgd"

    def test_misc_defaults(self):
        cfg = RunConfig()
        assert cfg.seed == 0
        assert cfg.eval.iou_threshold == 0.5 and cfg.eval.max_dets == 0
        assert cfg.data.augment_hflip is True
        assert cfg.data.pseudo_label_policy == "random"
        assert cfg.synth.frames == 500 and cfg.synth.videos == 10


class TestValidation:
    @pytest.mark.parametrize("kw", [
        dict(backbone="vgg"), dict(mp_variant="mlp"), dict(d=30),
        dict(d=36, heads=8), dict(d_cls=512), dict(d_prime=9, mp_heads=2),
        dict(ig_target_source="middle"),
    ])
    def test_bad_model_values_rejected(self, kw):
        with pytest.raises(td.ConfigError):
            ModelConfig(**kw)

    @pytest.mark.parametrize("kw", [
        dict(optimizer="rmsprop"), dict(epochs=-1), dict(batch_size=0),
        dict(alpha=-0.1),
    ])
    def test_bad_stage_values_rejected(self, kw):
        with pytest.raises(td.ConfigError):
            StageConfig(**kw)

    def test_bad_eval_and_data_values_rejected(self):
        with pytest.raises(td.ConfigError):
            EvalConfig(iou_threshold=0.0)
        with pytest.raises(td.ConfigError):
            DataConfig(pseudo_label_policy="vote")


class TestTomlLoading:
    def test_full_scale_config_parses(self):
        cfg = load_config(f"{CONFIG_DIR}/paper.toml")
        assert cfg.model.d == 512 and cfg.model.backbone == "resnet-like"
        assert cfg.model.d_prime == 128
        assert cfg.stage2.optimizer == "adam"

    def test_desk_scale_config_parses(self):
        cfg = load_config(f"{CONFIG_DIR}/toy.toml")
        assert cfg.model.backbone == "toy"
        assert cfg.model.d == 32 and cfg.model.d_prime == 64
        assert cfg.data.val_videos == ("v08", "v09")
        assert cfg.synth.frames == 500

    def test_missing_file_rejected(self):
        with pytest.raises(td.ConfigError, match="not found"):
            load_config("configs/nope.toml")

    def test_invalid_toml_rejected(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("[model\nd = 3")
        with pytest.raises(td.ConfigError, match="TOML"):
            load_config(p)

    def test_unknown_key_rejected_with_name(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("[model]\nwidth = 64\n")
        with pytest.raises(td.ConfigError, match="width"):
            load_config(p)

    def test_wrong_type_rejected(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text('[model]\nd = "big"\n')
        with pytest.raises(td.ConfigError, match="expected int"):
            load_config(p)

    def test_section_must_be_table(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("model = 3\n")
        with pytest.raises(td.ConfigError, match="table"):
            load_config(p)

    def test_round_trip_through_dict(self):
        cfg = load_config(f"{CONFIG_DIR}/toy.toml")
        again = RunConfig.from_dict(cfg.to_dict())
        assert again.to_dict() == cfg.to_dict()


class TestOverrides:
    def test_top_level_int(self):
        cfg = apply_override(RunConfig(), "seed=7")
        assert cfg.seed == 7

    def test_nested_string_and_float(self):
        cfg = RunConfig()
        apply_override(cfg, "model.mp_variant=sage")
        apply_override(cfg, "stage1.lr_base=0.5")
        assert cfg.model.mp_variant == "sage"
        assert cfg.stage1.lr_base == 0.5

    def test_comma_separated_tuple(self):
        cfg = apply_override(RunConfig(), "data.val_videos=v02, v03")
        assert cfg.data.val_videos == ("v02", "v03")

    def test_bool_parsing(self):
        cfg = apply_override(RunConfig(), "data.augment_hflip=false")
        assert cfg.data.augment_hflip is False
        apply_override(cfg, "data.augment_hflip=true")
        assert cfg.data.augment_hflip is True

    def test_unknown_key_rejected(self):
        with pytest.raises(td.ConfigError, match="unknown key"):
            apply_override(RunConfig(), "model.width=3")

    def test_unknown_section_rejected(self):
        with pytest.raises(td.ConfigError, match="unknown section"):
            apply_override(RunConfig(), "optim.lr=3")

    def test_malformed_item_rejected(self):
        with pytest.raises(td.ConfigError, match="key=value"):
            apply_override(RunConfig(), "seed")

    def test_unparsable_number_rejected(self):
        with pytest.raises(td.ConfigError):
            apply_override(RunConfig(), "seed=pi")

    def test_validation_runs_after_override(self):
        with pytest.raises(td.ConfigError, match="divisible"):
            apply_override(RunConfig(), "model.d=30")

    def test_load_config_applies_override_list(self):
        cfg = load_config(f"{CONFIG_DIR}/toy.toml",
                          overrides=["seed=3", "model.mp_variant=gcn"])
        assert cfg.seed == 3 and cfg.model.mp_variant == "gcn"


class TestDescribeKeys:
    def test_lists_every_section_key_with_default(self):
        text = describe_keys()
        for needle in ("seed = 0", "model.d_prime = 128", "stage1.lr_base",
                       "stage2.optimizer = 'adam'", "data.val_videos",
                       "eval.iou_threshold = 0.5", "synth.frames = 500"):
            assert needle in text
