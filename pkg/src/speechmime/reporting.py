"""Report serialization and figure rendering.

Machine reports are JSON with full per-item detail; human reports are
fixed-width tables. Both embed the run's config hash and checkpoint
checksum. Score and loss-curve figures are rendered next to the report
files.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import DataError  # noqa: E402
from .evalbench import JudgeVerdict, Report, REPORT_FORMAT_VERSION  # noqa: E402

SCORE_LABELS = {
    "asr_wer": "transcription WER (down)",
    "prompt_gen": "prompt following acc (up)",
    "role": "speaker role acc (up)",
    "math": "math 0-shot acc (up)",
    "math1": "math 1-shot acc (up)",
}


def _validate(report: Report) -> None:
    if "checkpoint_checksum" not in report.metadata:
        raise DataError("report metadata lacks checkpoint_checksum")


def report_to_obj(report: Report) -> dict:
    return {
        "format_version": report.format_version,
        "scores": report.scores,
        "metadata": report.metadata,
        "verdicts": [{
            "item_id": v.item_id,
            "passed": v.passed,
            "rationale": v.rationale,
            "detail": v.detail,
        } for v in report.verdicts],
    }


def emit_report(report: Report, path: str | Path, format: str = "machine") -> Path:
    _validate(report)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if format == "machine":
        path.write_text(json.dumps(report_to_obj(report), sort_keys=True, indent=1) + "\n",
                        encoding="utf-8")
    elif format == "human":
        path.write_text(render_human(report), encoding="utf-8")
    else:
        raise DataError(f"unknown report format {format!r}")
    return path


def read_report(path: str | Path) -> Report:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("format_version") != REPORT_FORMAT_VERSION:
        raise DataError(f"unsupported report format_version {obj.get('format_version')!r}")
    verdicts = [JudgeVerdict(item_id=v["item_id"], passed=v["passed"],
                             rationale=v["rationale"], detail=v.get("detail", {}))
                for v in obj["verdicts"]]
    return Report(scores=obj["scores"], verdicts=verdicts, metadata=obj["metadata"],
                  format_version=obj["format_version"])


def render_human(report: Report) -> str:
    lines = ["evaluation summary", "=" * 46]
    for key in ("checkpoint_checksum", "config_hash", "seed", "suite", "shots"):
        if key in report.metadata:
            lines.append(f"{key}: {report.metadata[key]}")
    lines.append("-" * 46)
    lines.append(f"{'measure':<32}{'value':>8}{'n':>6}")
    counts: dict[str, int] = {}
    for v in report.verdicts:
        task = v.detail.get("task", "?")
        counts[task] = counts.get(task, 0) + 1
    for name, score in sorted(report.scores.items()):
        label = SCORE_LABELS.get(name, name)
        task = "asr" if name == "asr_wer" else name
        n = counts.get(task, len(report.verdicts))
        lines.append(f"{label:<32}{score:>8.3f}{n:>6}")
    lines.append("=" * 46)
    return "\n".join(lines) + "\n"


def render_score_figure(report: Report, path: str | Path) -> Path:
    """Bar chart of suite scores next to the report files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(report.scores)
    values = [report.scores[n] for n in names]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    bars = ax.bar(range(len(names)), values, color="#4878cf")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("score")
    ax.set_title("benchmark scores")
    for b, v in zip(bars, values):
        ax.text(b.get_x() + b.get_width() / 2, v, f"{v:.2f}",
                ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_loss_figure(losses, path: str | Path, window: int = 50,
                       title: str = "training loss") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(losses, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.plot(arr, lw=0.6, alpha=0.45, label="per step")
    if arr.size >= window:
        kernel = np.ones(window) / window
        smooth = np.convolve(arr, kernel, mode="valid")
        ax.plot(np.arange(window - 1, arr.size), smooth, lw=1.6,
                label=f"mean over {window}")
    ax.set_xlabel("step")
    ax.set_ylabel("loss (nats/token)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_ablation_figure(rows: list[dict], path: str | Path) -> Path:
    """Grouped bars of held-out match and prompt-following per grid row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    labels = [r["label"] for r in rows]
    match = [r.get("held_out_match", 0.0) for r in rows]
    pg = [r.get("prompt_gen", 0.0) for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(7, 3.4))
    ax.bar(x - 0.2, match, width=0.4, label="held-out match", color="#4878cf")
    ax.bar(x + 0.2, pg, width=0.4, label="prompt following", color="#d1894b")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("rate")
    ax.set_title("task and interleaving contributions")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
