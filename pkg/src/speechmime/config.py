"""Run configuration: one flat key=value text file plus CLI overrides.

Every key is registered with a type and default; unknown keys are an
error that names the key. The canonical JSON of the resolved settings is
hashed and stamped into every artifact a run produces.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .errors import ConfigError

_REGISTRY: dict[str, tuple[type, object]] = {
    "corpus.n": (int, 556),
    "corpus.seed": (int, 11),
    "synth.frames_per_char": (int, 2),
    "synth.d_feat": (int, 16),
    "synth.jitter": (float, 0.05),
    "synth.seed": (int, 0),
    "lm.d_model": (int, 64),
    "lm.layers": (int, 2),
    "lm.heads": (int, 4),
    "lm.context": (int, 256),
    "lm.seed": (int, 5),
    "encoder.d_enc": (int, 32),
    "encoder.seed": (int, 3),
    "connector.hidden": (int, 128),
    "connector.seed": (int, 9),
    "pretrain.steps": (int, 2500),
    "pretrain.batch_size": (int, 16),
    "pretrain.lr": (float, 3e-3),
    "pretrain.seed": (int, 7),
    "pretrain.role_fills": (int, 6),
    "train.learning_rate": (float, 4e-3),
    "train.batch_size": (int, 16),
    "train.epochs": (int, 1),
    "train.steps": (int, 1500),  # -1: derive from epochs and example count
    "train.interleave_prob": (float, 0.4),
    "train.span_lo": (float, 0.4),
    "train.span_hi": (float, 0.6),
    "train.seed": (int, 17),
    "train.checkpoint_every": (int, 500),
    "train.gate": (str, "batch"),  # or "example": one interleave coin per example
    "gen.temperature": (float, 0.7),
    "gen.top_p": (float, 0.85),
    "gen.max_new_tokens": (int, 100),
    "eval.seed": (int, 23),
    "eval.asr_items": (int, 28),
    "tasks.config": (str, ""),  # empty: packaged defaults
    "ablate.steps": (int, 400),
}


def default_settings() -> dict:
    return {key: default for key, (_, default) in _REGISTRY.items()}


def coerce(key: str, raw: str):
    if key not in _REGISTRY:
        raise ConfigError(f"unknown config key {key!r}")
    typ, _ = _REGISTRY[key]
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return str(raw)
    except ValueError as e:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {typ.__name__}") from e


def parse_config_file(path: str | Path) -> dict:
    settings: dict = {}
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in text.split("=", 1))
        settings[key] = coerce(key, raw)
    return settings


def resolve_settings(config_path: str | Path | None = None,
                     overrides: dict | None = None) -> dict:
    """Defaults, then the config file, then explicit overrides."""
    settings = default_settings()
    if config_path is not None:
        settings.update(parse_config_file(config_path))
    for key, raw in (overrides or {}).items():
        settings[key] = coerce(key, raw) if isinstance(raw, str) else raw
    for key in settings:
        if key not in _REGISTRY:
            raise ConfigError(f"unknown config key {key!r}")
    return settings


def config_hash(settings: dict) -> str:
    canon = json.dumps(settings, sort_keys=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def write_settings(settings: dict, path: str | Path) -> None:
    obj = {"settings": settings, "config_hash": config_hash(settings)}
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n",
                          encoding="utf-8")


def read_settings(path: str | Path) -> dict:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    settings = obj["settings"]
    if config_hash(settings) != obj.get("config_hash"):
        raise ConfigError(f"{path}: config snapshot hash mismatch")
    return settings
