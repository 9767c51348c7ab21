"""Config file parsing, override precedence, and derived fields."""

import pytest

from xcb.config import (
    build_run_config,
    parse_kv_file,
    replace_seed,
    to_flat_dict,
    write_kv_file,
)
from xcb.errors import ConfigError


def test_defaults():
    cfg = build_run_config()
    assert cfg.model.d_model == 64
    assert cfg.model.adapter_bottleneck == 16
    assert cfg.model.cif_threshold == 1.0
    assert cfg.train.lr == 0.0002
    assert cfg.train.batch_size == 30
    assert cfg.train.epochs == 10
    assert cfg.train.alpha == 0.3
    assert cfg.eval.hotword_n == 60
    assert cfg.corpus.l1_vocab == 40
    assert cfg.corpus.l2_vocab == 30
    assert cfg.corpus.noise_sigma == 0.1
    assert cfg.corpus.duration_range == (2, 4)
    # vocab covers both inventories plus the specials
    assert cfg.model.vocab_size == 3 + 40 + 30
    assert cfg.model.d_feat == cfg.corpus.d_feat


def test_file_and_override_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\n\nmodel.d_model=32\ntrain.epochs=4\n"
                    "corpus.duration_range=1..2\n")
    kvs = parse_kv_file(path)
    cfg = build_run_config(kvs, {"train.epochs": "7", "train.freeze_backbone": "true"})
    assert cfg.model.d_model == 32
    assert cfg.train.epochs == 7
    assert cfg.train.freeze_backbone is True
    assert cfg.corpus.duration_range == (1, 2)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        build_run_config({"model.nonsense": "3"})
    with pytest.raises(ConfigError):
        build_run_config({"nonsense.d_model": "3"})
    with pytest.raises(ConfigError):
        build_run_config({"d_model": "3"})


def test_bad_values_rejected(tmp_path):
    with pytest.raises(ConfigError):
        build_run_config({"train.epochs": "three"})
    with pytest.raises(ConfigError):
        build_run_config({"train.freeze_backbone": "maybe"})
    with pytest.raises(ConfigError):
        build_run_config({"eval.mode": "sideways"})
    path = tmp_path / "bad.cfg"
    path.write_text("model.d_model 32\n")
    with pytest.raises(ConfigError):
        parse_kv_file(path)


def test_vocab_consistency_checked():
    with pytest.raises(ConfigError):
        build_run_config({"model.vocab_size": "10"})  # too small for 40+30+3
    with pytest.raises(ConfigError):
        build_run_config({"model.d_feat": "99"})


def test_flat_round_trip(tmp_path):
    cfg = build_run_config({"model.d_model": "24", "corpus.seed": "9",
                            "train.alpha": "0.25"})
    flat = to_flat_dict(cfg)
    assert flat["model.d_model"] == "24"
    assert flat["corpus.duration_range"] == "2..4"
    path = tmp_path / "echo.cfg"
    write_kv_file(path, flat)
    again = build_run_config(parse_kv_file(path))
    assert to_flat_dict(again) == flat


def test_replace_seed():
    cfg = replace_seed(build_run_config(), 123)
    assert cfg.corpus.seed == 123
    assert cfg.train.seed == 123
    assert cfg.eval.seed == 123
