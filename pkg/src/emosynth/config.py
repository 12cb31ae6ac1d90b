"""Flat key=value run configuration with CLI overrides.

The config file is plain text, one ``key=value`` per line, ``#`` comments
allowed. Values are coerced to the declared field types, so files diff
cleanly and tests can generate them trivially. The environment variable
``EMOSYNTH_CONFIG`` supplies a default config path.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

from .acoustic import ModelConfig

CONFIG_ENV_VAR = "EMOSYNTH_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 7
    # corpus generation
    n_per_emotion: int = 100
    # model dimensions (must match the corpus the model is trained on)
    vocab_size: int = 40
    mel_bins: int = 20
    n_categories: int = 7
    d_enc: int = 128
    d_dec: int = 256
    attn_mixtures: int = 3
    d_g: int = 64
    d_u: int = 64
    d_l: int = 64
    lambda_local: float = 1.0
    lambda_utt: float = 1.0
    dropout: float = 0.1
    max_decode_steps: int = 1000
    # ranker
    ranker_c: float = 10.0
    ranker_tol: float = 1e-6
    ranker_max_iter: int = 50
    max_pairs: int = 5000
    # tts training
    steps: int = 500
    batch_size: int = 8
    learning_rate: float = 1e-3

    def to_model_config(self) -> ModelConfig:
        return ModelConfig(
            vocab_size=self.vocab_size,
            mel_bins=self.mel_bins,
            n_categories=self.n_categories,
            d_enc=self.d_enc,
            d_dec=self.d_dec,
            attn_mixtures=self.attn_mixtures,
            d_g=self.d_g,
            d_u=self.d_u,
            d_l=self.d_l,
            lambda_local=self.lambda_local,
            lambda_utt=self.lambda_utt,
            dropout=self.dropout,
            max_decode_steps=self.max_decode_steps,
        )

    def describe(self) -> str:
        return " ".join(
            f"{f.name}={getattr(self, f.name)}" for f in dataclasses.fields(self)
        )


def _coerce(name: str, raw: str, target_type: type) -> object:
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {name}: cannot parse {raw!r} as {target_type.__name__}") from exc


def parse_config_text(text: str, base: RunConfig | None = None, source: str = "<config>") -> RunConfig:
    fields = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    types = {"int": int, "float": float, "str": str}
    config = dataclasses.replace(base) if base else RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in fields:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        target = types.get(str(fields[key]), str)
        setattr(config, key, _coerce(key, raw, target))
    return config


def load_run_config(path: str | Path | None, overrides: dict[str, object] | None = None) -> RunConfig:
    """Resolve the run config: file (or EMOSYNTH_CONFIG), then overrides."""
    if path is None:
        env = os.environ.get(CONFIG_ENV_VAR)
        path = Path(env) if env else None
    config = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        config = parse_config_text(path.read_text(encoding="utf-8"), config, source=str(path))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if not hasattr(config, key):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(config, key, value)
    return config


def write_run_config(config: RunConfig, path: str | Path) -> None:
    lines = [f"{f.name}={getattr(config, f.name)}" for f in dataclasses.fields(config)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
