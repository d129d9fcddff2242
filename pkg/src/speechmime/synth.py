"""Deterministic pseudo-speech synthesis from text.

Stands in for a TTS engine plus waveform frontend: each character of the
source text becomes a fixed number of feature frames, so feature length is
an exact linear function of text length. A frame is the character's seeded
embedding plus a positional ramp plus small seeded jitter, which keeps the
features decodable by a small convolutional stack while not being trivially
one-hot.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DataError

RAMP_SCALE = 0.25


@dataclass(frozen=True)
class SynthConfig:
    frames_per_char: int = 2
    d_feat: int = 16
    jitter: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.frames_per_char < 1:
            raise ConfigError("frames_per_char must be >= 1")
        if self.d_feat < 1:
            raise ConfigError("d_feat must be >= 1")
        if self.jitter < 0:
            raise ConfigError("jitter must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must fit in u64")


@dataclass(frozen=True)
class SpeechFeatures:
    """Frame matrix [T, d_feat] synthesized from source_text."""

    frames: np.ndarray
    frame_rate: int
    source_text: str

    def __post_init__(self):
        expected = self.frame_rate * len(self.source_text)
        if self.frames.shape != (expected, self.frames.shape[1]):
            raise DataError(
                f"frame count {self.frames.shape[0]} != "
                f"frames_per_char * len(text) = {expected}"
            )

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@lru_cache(maxsize=8)
def _char_table(seed: int, d_feat: int) -> np.ndarray:
    """Seeded embedding per code point 0..255 (non-latin1 chars hash into it)."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xC8A6])))
    return rng.standard_normal((256, d_feat)).astype(np.float32)

def _text_seed(seed: int, text: str) -> np.random.SeedSequence:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.SeedSequence([seed, *words])


def synth_pseudo_speech(text: str, cfg: SynthConfig) -> SpeechFeatures:
    """Render text to a [frames_per_char * len(text), d_feat] frame matrix."""
    if not text:
        raise DataError("cannot synthesize empty text")
    table = _char_table(cfg.seed, cfg.d_feat)
    codes = np.array([ord(c) % 256 for c in text], dtype=np.int64)
    frames = np.repeat(table[codes], cfg.frames_per_char, axis=0)
    t = frames.shape[0]
    ramp = (np.arange(t, dtype=np.float32) / max(t - 1, 1)) - 0.5
    frames = frames + RAMP_SCALE * ramp[:, None]
    if cfg.jitter > 0:
        rng = np.random.Generator(np.random.PCG64(_text_seed(cfg.seed, text)))
        frames = frames + cfg.jitter * rng.standard_normal(frames.shape).astype(np.float32)
    return SpeechFeatures(frames=frames.astype(np.float32), frame_rate=cfg.frames_per_char,
                          source_text=text)
