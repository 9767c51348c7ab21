"""Checkpoint round-trips: bit-exact values, byte-identical rewrites."""

import pytest

from xcb.checkpoint import load_checkpoint, save_checkpoint
from xcb.errors import DataError
from xcb.model import ModelConfig, init_params, param_manifest

CONFIG = ModelConfig(d_model=8, encoder_layers=1, decoder_layers=1,
                     adapter_bottleneck=4, vocab_size=12, d_feat=3, ffn_dim=12)


def test_round_trip_bit_exact(tmp_path):
    params = init_params(CONFIG, seed=1, variant="xcb")
    meta = {"variant": "xcb", "seed": 1, "config": {"model.d_model": "8"}}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, params, meta)
    loaded, got_meta = load_checkpoint(path)
    assert got_meta == meta
    assert set(loaded) == set(params)
    for name in params:
        assert loaded[name].data.tobytes() == params[name].data.tobytes()
        assert loaded[name].requires_grad


def test_write_read_write_byte_identical(tmp_path):
    params = init_params(CONFIG, seed=2, variant="baseline")
    meta = {"variant": "baseline", "seed": 2, "config": {}}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, params, meta)
    loaded, meta2 = load_checkpoint(p1)
    save_checkpoint(p2, loaded, meta2)
    assert p1.read_bytes() == p2.read_bytes()


def test_manifest_scan_for_variant_tensors(tmp_path):
    for variant in ("baseline", "xcb"):
        path = tmp_path / f"{variant}.ckpt"
        save_checkpoint(path, init_params(CONFIG, 3, variant), {"variant": variant})
        loaded, _ = load_checkpoint(path)
        has_adapter = any(n.startswith("xcb.") for n in loaded)
        assert has_adapter == (variant == "xcb")
        assert set(loaded) == {n for n, _ in param_manifest(CONFIG, variant)}


def test_not_a_checkpoint(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"definitely not a checkpoint")
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_truncated_blob(tmp_path):
    params = init_params(CONFIG, seed=4, variant="baseline")
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, params, {"variant": "baseline"})
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 64])
    with pytest.raises(DataError):
        load_checkpoint(path)
