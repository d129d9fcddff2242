"""Speech-text interleaving of transcripts.

A contiguous span covering roughly 40-60% of the transcript's words is
replaced by pseudo-speech of exactly those words; the rest stays text. One
coin per batch decides whether a batch trains on interleaved inputs. The
task prompt is assembled outside and is never part of the span.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .model import MixedSequence, SpeechSegment, TextSegment, ROLE_INPUT
from .synth import SynthConfig, synth_pseudo_speech
from .tokenizer import Tokenizer


@dataclass(frozen=True)
class SpanChoice:
    start_word_index: int
    word_count: int
    total_words: int

    def __post_init__(self):
        if self.word_count < 1 or self.start_word_index < 0:
            raise DataError("degenerate span")
        if self.start_word_index + self.word_count > self.total_words:
            raise DataError("span exceeds transcript")

    @property
    def fraction(self) -> float:
        return self.word_count / self.total_words


def select_span(total_words: int, rng: np.random.Generator,
                ratio_lo: float = 0.4, ratio_hi: float = 0.6) -> SpanChoice | None:
    """Pick a contiguous word span; None signals a transcript too short to split."""
    if total_words < 2:
        return None
    fraction = rng.uniform(ratio_lo, ratio_hi)
    count = int(round(fraction * total_words))
    count = max(1, min(total_words - 1, count))
    start = int(rng.integers(0, total_words - count + 1))
    return SpanChoice(start_word_index=start, word_count=count, total_words=total_words)


def interleave_transcript(transcript: str, span: SpanChoice, synth_cfg: SynthConfig,
                          tokenizer: Tokenizer) -> MixedSequence:
    """Text-speech-text input segments; empty text edges are dropped."""
    words = transcript.split()
    if span.total_words != len(words):
        raise DataError("span was chosen for a different transcript length")
    before = words[:span.start_word_index]
    inside = words[span.start_word_index:span.start_word_index + span.word_count]
    after = words[span.start_word_index + span.word_count:]
    segments = []
    if before:
        segments.append(TextSegment(ids=tuple(tokenizer.encode(" ".join(before))),
                                    role=ROLE_INPUT))
    segments.append(SpeechSegment(features=synth_pseudo_speech(" ".join(inside), synth_cfg),
                                  role=ROLE_INPUT))
    if after:
        segments.append(TextSegment(ids=tuple(tokenizer.encode(" ".join(after))),
                                    role=ROLE_INPUT))
    return MixedSequence(segments=tuple(segments))


def batch_gate(prob: float, rng: np.random.Generator) -> bool:
    """One coin per batch: True applies interleaving to every example in it."""
    if not 0 <= prob <= 1:
        raise DataError(f"interleave probability {prob} outside [0, 1]")
    return bool(rng.random() < prob)
