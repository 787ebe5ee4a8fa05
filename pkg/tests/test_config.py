import pytest

from megcn.config import (
    ConfigError,
    ModelConfig,
    RunConfig,
    apply_overrides,
    dump_config,
    load_config,
    parse_config,
)


def test_defaults():
    cfg = RunConfig()
    assert cfg.model.num_layers == 10 and cfg.model.reduction == 8
    assert cfg.train.base_lr == 0.01 and cfg.train.milestones == (35, 55) and cfg.train.momentum == 0.9
    assert cfg.train.weight_decay == 0.0004 and cfg.train.nesterov
    assert [c for c, _, _ in cfg.model.plan][:2] == [3, 64]


def test_dump_parse_round_trip():
    cfg = apply_overrides(RunConfig(), ["channels=16,32", "strides=1,2", "base_lr=0.05", "center=false"])
    text = dump_config(cfg)
    assert parse_config(text) == cfg
    assert dump_config(parse_config(text)) == text


def test_comments_and_blank_lines():
    cfg = parse_config("# tiny\n\nepochs = 7  # short\npreset=hand21\n")
    assert cfg.train.epochs == 7 and cfg.model.preset == "hand21"


def test_depth_change_resizes_per_layer_lists():
    cfg = parse_config("channels=8,8,16\n")
    assert cfg.model.strides == (1, 1, 1) and cfg.model.mutual_mte == (True,) * 3


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match="run.cfg:3: unknown config key 'learning_rate'"):
        parse_config("epochs=2\n\nlearning_rate=0.1\n", source="run.cfg")


def test_malformed_line():
    with pytest.raises(ConfigError, match="cfg:1"):
        parse_config("epochs\n", source="cfg")


def test_bad_value():
    with pytest.raises(ConfigError, match="cfg:2: bad value for epochs"):
        parse_config("dropout=0.1\nepochs=many\n", source="cfg")
    with pytest.raises(ConfigError, match="bad value for nesterov"):
        parse_config("nesterov=maybe\n")


def test_invalid_model():
    with pytest.raises(ConfigError, match="invalid model config"):
        parse_config("channels=12,16\n")
    with pytest.raises(ConfigError):
        ModelConfig(variant="mid_fusion")


def test_override_errors():
    with pytest.raises(ConfigError, match="--set"):
        apply_overrides(RunConfig(), ["epochs"])
    with pytest.raises(ConfigError, match="unknown config key 'epoch'"):
        apply_overrides(RunConfig(), ["epoch=3"])


def test_load_config(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("epochs=4\nbogus=1\n")
    with pytest.raises(ConfigError, match=f"{path}:2"):
        load_config(path)
    path.write_text("epochs=4\n")
    assert load_config(path).train.epochs == 4
