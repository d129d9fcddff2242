"""Report files, the human table, and rendered figures."""
import json

import pytest

from speechmime.errors import DataError
from speechmime.evalbench import JudgeVerdict, Report, REPORT_FORMAT_VERSION
from speechmime.reporting import (emit_report, read_report,
                                  render_ablation_figure, render_human,
                                  render_loss_figure, render_score_figure)

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@pytest.fixture
def report():
    verdicts = [
        JudgeVerdict(item_id="asr0", passed=True, rationale="wer 0.0",
                     detail={"task": "asr", "wer": 0.0}),
        JudgeVerdict(item_id="prompt_gen0", passed=False, rationale="judge reject",
                     detail={"task": "prompt_gen", "family": "color"}),
    ]
    return Report(scores={"asr_wer": 0.0, "prompt_gen": 0.0},
                  verdicts=verdicts,
                  metadata={"checkpoint_checksum": "abc123", "config_hash": "ff00",
                            "seed": 23, "suite": "asr,prompt_gen"},
                  format_version=REPORT_FORMAT_VERSION)


def test_machine_round_trip(report, tmp_path):
    path = emit_report(report, tmp_path / "report.json")
    back = read_report(path)
    assert back.scores == report.scores
    assert back.metadata == report.metadata
    assert [v.item_id for v in back.verdicts] == ["asr0", "prompt_gen0"]
    assert back.verdicts[0].detail["wer"] == 0.0


def test_machine_report_is_sorted_json(report, tmp_path):
    path = emit_report(report, tmp_path / "report.json")
    obj = json.loads(path.read_text())
    assert list(obj) == sorted(obj)
    assert obj["format_version"] == REPORT_FORMAT_VERSION


def test_human_table(report, tmp_path):
    path = emit_report(report, tmp_path / "report.txt", format="human")
    text = path.read_text()
    assert "checkpoint_checksum: abc123" in text
    assert "transcription WER (down)" in text
    assert "prompt following acc (up)" in text
    lines = text.splitlines()
    assert lines[0] == "evaluation summary"


def test_missing_checksum_rejected(report, tmp_path):
    del report.metadata["checkpoint_checksum"]
    with pytest.raises(DataError, match="checkpoint_checksum"):
        emit_report(report, tmp_path / "report.json")


def test_unknown_format_rejected(report, tmp_path):
    with pytest.raises(DataError, match="format"):
        emit_report(report, tmp_path / "report.json", format="yaml")


def test_read_rejects_other_format_version(report, tmp_path):
    path = emit_report(report, tmp_path / "report.json")
    obj = json.loads(path.read_text())
    obj["format_version"] = 999
    path.write_text(json.dumps(obj))
    with pytest.raises(DataError, match="999"):
        read_report(path)


def test_score_figure_renders_png(report, tmp_path):
    path = render_score_figure(report, tmp_path / "figs" / "scores.png")
    assert path.exists()
    assert path.read_bytes()[:8] == PNG_MAGIC


def test_loss_figure_renders_png(tmp_path):
    losses = [2.5 - 0.01 * i for i in range(120)]
    path = render_loss_figure(losses, tmp_path / "loss.png", window=50)
    assert path.read_bytes()[:8] == PNG_MAGIC


def test_loss_figure_short_history(tmp_path):
    path = render_loss_figure([2.0, 1.5], tmp_path / "loss.png", window=50)
    assert path.read_bytes()[:8] == PNG_MAGIC


def test_ablation_figure_renders_png(tmp_path):
    rows = [
        {"label": "all tasks, interleave", "held_out_match": 0.55, "prompt_gen": 0.4},
        {"label": "all tasks, plain", "held_out_match": 0.53, "prompt_gen": 0.3},
        {"label": "no asr", "held_out_match": 0.40, "prompt_gen": 0.2},
    ]
    path = render_ablation_figure(rows, tmp_path / "ablate.png")
    assert path.read_bytes()[:8] == PNG_MAGIC
