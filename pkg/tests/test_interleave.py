"""Span selection statistics and transcript splitting."""
import numpy as np
import pytest

from speechmime.errors import DataError
from speechmime.interleave import (SpanChoice, batch_gate, interleave_transcript,
                                   select_span)
from speechmime.model import SpeechSegment, TextSegment, ROLE_INPUT
from speechmime.synth import SynthConfig
from speechmime.tokenizer import build_tokenizer


def test_span_fraction_bounds():
    rng = np.random.Generator(np.random.PCG64(0))
    fracs = []
    for _ in range(10_000):
        span = select_span(100, rng)
        assert span is not None
        assert 40 <= span.word_count <= 60
        assert 0 <= span.start_word_index
        assert span.start_word_index + span.word_count <= 100
        fracs.append(span.fraction)
    assert min(fracs) >= 0.4
    assert max(fracs) <= 0.6


def test_span_uniformity_ks():
    """Kolmogorov-Smirnov distance of drawn fractions vs uniform on [0.4, 0.6]."""
    rng = np.random.Generator(np.random.PCG64(1))
    n = 10_000
    fracs = np.sort([select_span(1000, rng).fraction for _ in range(n)])
    grid = (fracs - 0.4) / 0.2
    ecdf_hi = np.arange(1, n + 1) / n
    ecdf_lo = np.arange(0, n) / n
    ks = max(np.abs(ecdf_hi - grid).max(), np.abs(ecdf_lo - grid).max())
    assert ks < 0.02, f"KS statistic {ks:.4f}"


def test_two_word_transcript_takes_one():
    rng = np.random.Generator(np.random.PCG64(2))
    for _ in range(100):
        span = select_span(2, rng)
        assert span.word_count == 1
        assert span.start_word_index in (0, 1)


def test_short_transcripts_signal_none():
    rng = np.random.Generator(np.random.PCG64(3))
    assert select_span(1, rng) is None
    assert select_span(0, rng) is None


def test_span_never_swallows_whole_transcript():
    rng = np.random.Generator(np.random.PCG64(4))
    for total in range(2, 30):
        for _ in range(50):
            span = select_span(total, rng)
            assert 1 <= span.word_count <= total - 1


def test_span_choice_validation():
    with pytest.raises(DataError):
        SpanChoice(start_word_index=0, word_count=0, total_words=5)
    with pytest.raises(DataError):
        SpanChoice(start_word_index=3, word_count=3, total_words=5)


@pytest.fixture(scope="module")
def tok():
    return build_tokenizer(["hope you friend", "the cat runs quickly today"])


def test_interleave_middle_span(tok):
    span = SpanChoice(start_word_index=2, word_count=1, total_words=3)
    seq = interleave_transcript("hope you friend", span, SynthConfig(), tok)
    assert len(seq.segments) == 2
    text, speech = seq.segments
    assert isinstance(text, TextSegment)
    assert tok.decode(list(text.ids)) == "hope you"
    assert isinstance(speech, SpeechSegment)
    assert speech.features.source_text == "friend"
    assert all(seg.role == ROLE_INPUT for seg in seq.segments)


def test_interleave_prefix_span(tok):
    span = SpanChoice(start_word_index=0, word_count=1, total_words=3)
    seq = interleave_transcript("hope you friend", span, SynthConfig(), tok)
    assert isinstance(seq.segments[0], SpeechSegment)
    assert seq.segments[0].features.source_text == "hope"
    assert tok.decode(list(seq.segments[1].ids)) == "you friend"


def test_interleave_exactly_one_speech_segment(tok):
    rng = np.random.Generator(np.random.PCG64(5))
    text = "the cat runs quickly today"
    for _ in range(200):
        span = select_span(5, rng)
        seq = interleave_transcript(text, span, SynthConfig(), tok)
        assert len(seq.speech_segments()) == 1


def test_interleave_reconstruction_property(grammar, tokenizer):
    """Decoded text around the span plus the span's source words rebuild the transcript."""
    from speechmime.corpus import generate_sentence
    rng = np.random.Generator(np.random.PCG64(6))
    synth_cfg = SynthConfig()
    for i in range(10_000):
        text = generate_sentence(grammar, i % 700)
        words = text.split()
        span = select_span(len(words), rng)
        if span is None:
            continue
        seq = interleave_transcript(text, span, synth_cfg, tokenizer)
        parts = []
        for seg in seq.segments:
            if isinstance(seg, TextSegment):
                parts.append(tokenizer.decode(list(seg.ids)))
            else:
                parts.append(seg.features.source_text)
        assert " ".join(parts) == text, (text, span)


def test_interleave_wrong_length_rejected(tok):
    span = SpanChoice(start_word_index=0, word_count=2, total_words=4)
    with pytest.raises(DataError):
        interleave_transcript("hope you friend", span, SynthConfig(), tok)


def test_batch_gate_rate():
    rng = np.random.Generator(np.random.PCG64(7))
    hits = sum(batch_gate(0.4, rng) for _ in range(5000))
    assert hits / 5000 == pytest.approx(0.40, abs=0.02)


def test_batch_gate_degenerate():
    rng = np.random.Generator(np.random.PCG64(8))
    assert not any(batch_gate(0.0, rng) for _ in range(200))
    assert all(batch_gate(1.0, rng) for _ in range(200))


def test_batch_gate_bad_prob():
    rng = np.random.Generator(np.random.PCG64(9))
    with pytest.raises(DataError):
        batch_gate(1.5, rng)
    with pytest.raises(DataError):
        batch_gate(-0.1, rng)
