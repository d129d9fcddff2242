"""Two-stage behavior imitation.

Stage 1: the sealed decoder answers every (task prompt, transcript) pair
greedily; answers are cached on disk keyed by content hash and decoder
checksum. Stage 2: the connector alone is trained so the same decoder,
fed speech (or interleaved speech) instead of the transcript, predicts the
cached answer token for token.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, NumericError
from .interleave import batch_gate, interleave_transcript, select_span
from .model import (Connector, MixedSequence, ROLE_INPUT, ROLE_TARGET,
                    SpeechEncoder, SpeechSegment, TextSegment, TinyLM,
                    build_full, build_prefix, embed_sequence, param_checksum)
from .optim import Adam
from .sampling import GenerationConfig, generate
from .synth import SynthConfig
from .tasks import TaskMixer, TrainingExample
from .tokenizer import Tokenizer

log = logging.getLogger(__name__)

INPUT_MODES = ("speech", "interleaved", "text")


def prompt_hash(system_prompt: str, task_prompt: str, transcript: str) -> str:
    payload = json.dumps([system_prompt, task_prompt, transcript])
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TeacherTarget:
    example_id: str
    target_tokens: tuple[int, ...]
    teacher_checksum: str
    prompt_hash: str
    decode_mode: str = "greedy"


class TeacherCache:
    """Line-delimited store of stage-1 answers, keyed by
    (example_id, prompt_hash, teacher_checksum)."""

    def __init__(self, path: str | Path | None = None, header: dict | None = None):
        self.path = Path(path) if path is not None else None
        self.header: dict = dict(header or {})
        self.entries: dict[tuple[str, str, str], TeacherTarget] = {}
        if self.path is not None and self.path.exists():
            self._read()

    def _read(self) -> None:
        for lineno, line in enumerate(self.path.read_text("utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if rec.get("kind") == "teacher_cache":
                    self.header.update({k: v for k, v in rec.items() if k != "kind"})
                    continue
                target = TeacherTarget(
                    example_id=rec["example_id"],
                    target_tokens=tuple(int(t) for t in rec["target_token_ids"]),
                    teacher_checksum=rec["teacher_checksum"],
                    prompt_hash=rec["prompt_hash"],
                    decode_mode=rec.get("decode_mode", "greedy"),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DataError(f"{self.path}: bad cache record on line {lineno}: {e}") from e
            self.entries[self._key(target)] = target

    @staticmethod
    def _key(t: TeacherTarget) -> tuple[str, str, str]:
        return (t.example_id, t.prompt_hash, t.teacher_checksum)

    def get(self, example_id: str, phash: str, checksum: str) -> TeacherTarget | None:
        return self.entries.get((example_id, phash, checksum))

    def put(self, target: TeacherTarget) -> None:
        stale = [k for k in self.entries
                 if k[0] == target.example_id and k[1] == target.prompt_hash
                 and k[2] != target.teacher_checksum]
        for k in stale:
            log.info("evicting stale teacher answer for %s", k[0])
            del self.entries[k]
        self.entries[self._key(target)] = target
        if self.path is not None:
            if stale or not self.path.exists():
                self.flush()
            else:
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(self._line(target) + "\n")

    @staticmethod
    def _line(t: TeacherTarget) -> str:
        return json.dumps({
            "example_id": t.example_id,
            "prompt_hash": t.prompt_hash,
            "teacher_checksum": t.teacher_checksum,
            "decode_mode": t.decode_mode,
            "target_token_ids": list(t.target_tokens),
        }, sort_keys=True)

    def flush(self) -> None:
        """Rewrite the file with exactly the live entries (compaction)."""
        if self.path is None:
            return
        lines = []
        if self.header:
            lines.append(json.dumps({"kind": "teacher_cache", **self.header}, sort_keys=True))
        lines += [self._line(t) for _, t in sorted(self.entries.items())]
        self.path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    def __len__(self) -> int:
        return len(self.entries)


def teacher_generate(examples: list[TrainingExample], lm: TinyLM,
                     encoder: SpeechEncoder, connector: Connector,
                     tokenizer: Tokenizer, cache: TeacherCache,
                     max_target_tokens: int = 100) -> dict[str, TeacherTarget]:
    """Stage 1: greedy text-only answers for every teacher-sourced example.

    Answers already cached for the current decoder checksum are reused.
    """
    if not lm.sealed:
        raise ConfigError("teacher decoder must be sealed before stage 1")
    checksum = param_checksum(lm)
    cfg = GenerationConfig(max_new_tokens=max_target_tokens, greedy=True)
    out: dict[str, TeacherTarget] = {}
    generated = 0
    for ex in examples:
        phash = prompt_hash(ex.system_prompt, ex.task_prompt, ex.transcript)
        hit = cache.get(ex.example_id, phash, checksum)
        if hit is None:
            prefix = build_prefix(tokenizer, ex.system_prompt, ex.task_prompt,
                                  [TextSegment(ids=tuple(tokenizer.encode(ex.transcript)),
                                               role=ROLE_INPUT)])
            gen = generate(lm, encoder, connector, prefix, cfg)
            hit = TeacherTarget(example_id=ex.example_id,
                                target_tokens=tuple(gen.token_ids),
                                teacher_checksum=checksum, prompt_hash=phash)
            cache.put(hit)
            generated += 1
        out[ex.example_id] = hit
    log.info("stage 1: %d generated, %d from cache", generated, len(examples) - generated)
    return out


def fill_targets(examples: list[TrainingExample],
                 targets: dict[str, TeacherTarget]) -> None:
    for ex in examples:
        if ex.target_tokens is None:
            if ex.example_id not in targets:
                raise DataError(f"{ex.example_id}: no teacher target; run stage 1 first")
            ex.target_tokens = list(targets[ex.example_id].target_tokens)


def assemble_student_sequence(example: TrainingExample, tokenizer: Tokenizer,
                              input_mode: str, synth_cfg: SynthConfig,
                              rng: np.random.Generator | None = None,
                              span_ratio: tuple[float, float] = (0.4, 0.6)) -> MixedSequence:
    """Full training layout with the chosen input representation."""
    if input_mode not in INPUT_MODES:
        raise ConfigError(f"unknown input mode {input_mode!r}")
    if example.target_tokens is None:
        raise DataError(f"{example.example_id}: target missing; run stage 1 first")
    if input_mode == "text":
        segments = [TextSegment(ids=tuple(tokenizer.encode(example.transcript)),
                                role=ROLE_INPUT)]
    elif input_mode == "speech":
        segments = [SpeechSegment(features=example.speech, role=ROLE_INPUT)]
    else:
        if rng is None:
            raise ConfigError("interleaved mode needs a random generator")
        total = len(example.transcript.split())
        span = select_span(total, rng, span_ratio[0], span_ratio[1])
        if span is None:
            segments = [SpeechSegment(features=example.speech, role=ROLE_INPUT)]
        else:
            segments = list(interleave_transcript(example.transcript, span,
                                                  synth_cfg, tokenizer).segments)
    return build_full(tokenizer, example.system_prompt, example.task_prompt,
                      segments, list(example.target_tokens))


def imitation_loss(seq: MixedSequence, lm: TinyLM, encoder: SpeechEncoder,
                   connector: Connector) -> torch.Tensor:
    """Mean next-token cross-entropy over target positions only."""
    embedded = embed_sequence(seq, lm, encoder, connector)
    logits = lm(embedded.embeddings)
    positions = [i for i in range(len(embedded.roles) - 1)
                 if embedded.roles[i + 1] == ROLE_TARGET]
    if not positions:
        raise DataError("sequence has no target positions")
    idx = torch.as_tensor(positions, dtype=torch.long)
    labels = torch.as_tensor([embedded.token_ids[i + 1] for i in positions],
                             dtype=torch.long)
    return torch.nn.functional.cross_entropy(logits[idx], labels)


@dataclass(frozen=True)
class RunConfig:
    learning_rate: float = 1e-5
    batch_size: int = 16
    epochs: int = 1
    interleave_prob: float = 0.4
    span_ratio: tuple[float, float] = (0.4, 0.6)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    seed: int = 0
    steps: int | None = None  # None: one pass of epochs x examples / batch
    checkpoint_every: int = 500
    gate: str = "batch"  # one interleaving coin per batch, or per example

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if not 0 <= self.interleave_prob <= 1:
            raise ConfigError("interleave_prob must lie in [0, 1]")
        lo, hi = self.span_ratio
        if not 0 < lo <= hi < 1:
            raise ConfigError("span_ratio must satisfy 0 < lo <= hi < 1")
        if self.gate not in ("batch", "example"):
            raise ConfigError(f"gate must be 'batch' or 'example', got {self.gate!r}")

    def resolve_steps(self, n_examples: int) -> int:
        if self.steps is not None:
            return self.steps
        return max(1, (self.epochs * n_examples) // self.batch_size)


@dataclass
class TrainState:
    connector: Connector
    optimizer: Adam
    step: int = 0
    losses: list[float] = field(default_factory=list)
    mixer_state: dict | None = None


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x7127, step])))


def save_train_state(path: str | Path, state: TrainState, meta: dict | None = None) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, tensor in sorted(state.connector.state_dict().items()):
        arrays[f"connector.{name}"] = tensor.detach().cpu().numpy()
    arrays.update(state.optimizer.state_arrays("adam"))
    arrays["loss_history"] = np.asarray(state.losses, dtype=np.float32)
    header = {"step": state.step, "mixer_state": state.mixer_state,
              "kind": "train_state"}
    header.update(meta or {})
    save_checkpoint(path, arrays, meta=header)


def load_train_state(path: str | Path, connector: Connector,
                     optimizer: Adam) -> TrainState:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "train_state":
        raise DataError(f"{path}: not a training-state checkpoint")
    sd = {}
    for name, tensor in connector.state_dict().items():
        sd[name] = torch.from_numpy(arrays[f"connector.{name}"].copy())
    connector.load_state_dict(sd)
    optimizer.load_state_arrays(arrays, "adam")
    return TrainState(connector=connector, optimizer=optimizer,
                      step=int(meta["step"]),
                      losses=[float(x) for x in arrays["loss_history"]],
                      mixer_state=meta.get("mixer_state"))


def train(mixer: TaskMixer, cfg: RunConfig, state: TrainState, lm: TinyLM,
          encoder: SpeechEncoder, tokenizer: Tokenizer, synth_cfg: SynthConfig,
          checkpoint_dir: str | Path | None = None,
          log_path: str | Path | None = None,
          checkpoint_meta: dict | None = None) -> TrainState:
    """Stage 2: connector-only optimization against cached teacher targets.

    Deterministic given cfg.seed: batch composition, the per-batch
    interleaving coin, and span choices all come from a per-step stream, so
    a run resumed from a saved state is bit-identical to an uninterrupted
    one.
    """
    n_examples = sum(len(v) for v in mixer.groups.values())
    total_steps = cfg.resolve_steps(n_examples)
    if state.mixer_state is not None:
        mixer.restore(state.mixer_state)
    log_f = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for step in range(state.step, total_steps):
            rng = _step_rng(cfg.seed, step)
            batch = mixer.sample_batch(cfg.batch_size, rng)
            whole_batch = batch_gate(cfg.interleave_prob, rng) if cfg.gate == "batch" else False
            state.optimizer.zero_grad()
            batch_loss = 0.0
            n_interleaved = 0
            for ex in batch:
                interleaved = whole_batch if cfg.gate == "batch" \
                    else batch_gate(cfg.interleave_prob, rng)
                n_interleaved += int(interleaved)
                mode = "interleaved" if interleaved else "speech"
                seq = assemble_student_sequence(ex, tokenizer, mode, synth_cfg,
                                                rng, cfg.span_ratio)
                loss = imitation_loss(seq, lm, encoder, state.connector)
                (loss / cfg.batch_size).backward()
                batch_loss += float(loss.detach()) / cfg.batch_size
            if not np.isfinite(batch_loss):
                ids = [ex.example_id for ex in batch]
                raise NumericError(f"non-finite loss at step {step}; batch {ids}")
            state.optimizer.step()
            state.step = step + 1
            state.losses.append(batch_loss)
            state.mixer_state = mixer.state()
            if log_f:
                tasks = {}
                for ex in batch:
                    tasks[ex.task] = tasks.get(ex.task, 0) + 1
                log_f.write(json.dumps({"step": step, "loss": round(batch_loss, 6),
                                        "interleaved": n_interleaved,
                                        "tasks": tasks}, sort_keys=True) + "\n")
            if step % 100 == 0 or step == total_steps - 1:
                log.info("train step %d/%d loss %.4f", step, total_steps, batch_loss)
            if checkpoint_dir is not None and (state.step % cfg.checkpoint_every == 0
                                               or state.step == total_steps):
                path = Path(checkpoint_dir) / f"state_{state.step:06d}.smck"
                save_train_state(path, state, meta=checkpoint_meta)
    finally:
        if log_f:
            log_f.close()
    return state


def imitation_match(examples: list[TrainingExample], lm: TinyLM,
                    encoder: SpeechEncoder, connector: Connector,
                    tokenizer: Tokenizer, max_new_tokens: int = 100,
                    input_mode: str = "speech") -> dict:
    """Greedy student decode vs cached targets: exact match and edit similarity."""
    cfg = GenerationConfig(max_new_tokens=max_new_tokens, greedy=True)
    per_task: dict[str, dict[str, float]] = {}
    for ex in examples:
        if ex.target_tokens is None:
            raise DataError(f"{ex.example_id}: target missing; run stage 1 first")
        if input_mode == "speech":
            segments = [SpeechSegment(features=ex.speech, role=ROLE_INPUT)]
        elif input_mode == "text":
            segments = [TextSegment(ids=tuple(tokenizer.encode(ex.transcript)),
                                    role=ROLE_INPUT)]
        else:
            raise ConfigError(f"imitation match does not support mode {input_mode!r}")
        prefix = build_prefix(tokenizer, ex.system_prompt, ex.task_prompt, segments)
        gen = generate(lm, encoder, connector, prefix, cfg)
        target = list(ex.target_tokens)
        exact = gen.token_ids == target
        sim = _token_similarity(gen.token_ids, target)
        bucket = per_task.setdefault(ex.task, {"n": 0, "exact": 0, "similarity": 0.0})
        bucket["n"] += 1
        bucket["exact"] += int(exact)
        bucket["similarity"] += sim
    overall = {"n": 0, "exact": 0, "similarity": 0.0}
    for bucket in per_task.values():
        overall["n"] += bucket["n"]
        overall["exact"] += bucket["exact"]
        overall["similarity"] += bucket["similarity"]
    def _finish(b):
        n = b["n"]
        return {"n": n, "exact_match": b["exact"] / n, "similarity": b["similarity"] / n}
    return {"overall": _finish(overall),
            "per_task": {task: _finish(b) for task, b in sorted(per_task.items())}}


def _token_similarity(a: list[int], b: list[int]) -> float:
    if not a and not b:
        return 1.0
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return 1.0 - prev[len(b)] / max(len(a), len(b))
