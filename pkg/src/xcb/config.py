"""Run configuration: dotted key=value files plus flag overrides.

A config file is line-oriented, one `namespace.key=value` per line, with
`#` comments and blank lines allowed, e.g.

    corpus.n_train=240
    model.d_model=64
    train.epochs=10
    eval.hotword_n=60

Ranges use `lo..hi` (duration_range=2..4). Every run artifact embeds its
fully resolved configuration so experiments can be replayed from the
output alone.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Any

from .data import CorpusConfig, N_SPECIAL
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig


@dataclass
class EvalOptions:
    mode: str = "active"
    hotword_n: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("active", "inactive"):
            raise ConfigError(f"eval.mode must be 'active' or 'inactive', got {self.mode!r}")
        if self.hotword_n < 1:
            raise ConfigError("eval.hotword_n must be >= 1")


@dataclass
class RunConfig:
    corpus: CorpusConfig
    model: ModelConfig
    train: TrainConfig
    eval: EvalOptions


_SECTIONS = {"corpus": CorpusConfig, "model": ModelConfig,
             "train": TrainConfig, "eval": EvalOptions}


def _coerce(raw: str, target_type: Any, key: str):
    raw = raw.strip()
    if target_type is bool:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if target_type is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if target_type is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if target_type is str:
        return raw
    # remaining case: (int, int) range tuples written as lo..hi
    if ".." in raw:
        lo, _, hi = raw.partition("..")
        try:
            return (int(lo), int(hi))
        except ValueError:
            raise ConfigError(f"{key}: expected lo..hi, got {raw!r}") from None
    raise ConfigError(f"{key}: cannot parse {raw!r}")


def parse_kv_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{i}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def _field_types(cls) -> dict[str, Any]:
    types = {}
    for f in fields(cls):
        if f.type in ("int", int):
            types[f.name] = int
        elif f.type in ("float", float):
            types[f.name] = float
        elif f.type in ("bool", bool):
            types[f.name] = bool
        elif f.type in ("str", str):
            types[f.name] = str
        else:
            types[f.name] = tuple
    return types


def build_run_config(file_kvs: dict[str, str] | None = None,
                     overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then config-file values, then flag overrides.

    model.vocab_size and model.d_feat follow the corpus settings unless
    explicitly set.
    """
    merged: dict[str, str] = {}
    merged.update(file_kvs or {})
    merged.update(overrides or {})

    section_kwargs: dict[str, dict] = {name: {} for name in _SECTIONS}
    for key, raw in merged.items():
        if "." not in key:
            raise ConfigError(f"config key {key!r} needs a namespace prefix")
        section, _, field_name = key.partition(".")
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r} in {key!r}")
        types = _field_types(_SECTIONS[section])
        if field_name not in types:
            raise ConfigError(f"unknown config key {key!r}")
        section_kwargs[section][field_name] = _coerce(raw, types[field_name], key)

    try:
        corpus = CorpusConfig(**section_kwargs["corpus"])
        model_kwargs = section_kwargs["model"]
        model_kwargs.setdefault("vocab_size", N_SPECIAL + corpus.l1_vocab + corpus.l2_vocab)
        model_kwargs.setdefault("d_feat", corpus.d_feat)
        model = ModelConfig(**model_kwargs)
        train = TrainConfig(**section_kwargs["train"])
        eval_opts = EvalOptions(**section_kwargs["eval"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if model.d_feat != corpus.d_feat:
        raise ConfigError(
            f"model.d_feat={model.d_feat} conflicts with corpus.d_feat={corpus.d_feat}")
    if model.vocab_size < N_SPECIAL + corpus.l1_vocab + corpus.l2_vocab:
        raise ConfigError("model.vocab_size does not cover both language inventories")
    return RunConfig(corpus, model, train, eval_opts)


def _flatten_value(v) -> str:
    if isinstance(v, tuple):
        return f"{v[0]}..{v[1]}"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def to_flat_dict(config: RunConfig) -> dict[str, str]:
    """Dotted-key view of the full resolved configuration."""
    flat: dict[str, str] = {}
    for section_name in _SECTIONS:
        section = getattr(config, section_name)
        for f in fields(section):
            flat[f"{section_name}.{f.name}"] = _flatten_value(getattr(section, f.name))
    return flat


def write_kv_file(path, flat: dict[str, str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(flat):
            fh.write(f"{key}={flat[key]}\n")


def replace_seed(config: RunConfig, seed: int) -> RunConfig:
    """One seed to govern corpus synthesis, training, and list sampling."""
    return RunConfig(
        dataclasses.replace(config.corpus, seed=seed),
        config.model,
        dataclasses.replace(config.train, seed=seed),
        dataclasses.replace(config.eval, seed=seed),
    )
