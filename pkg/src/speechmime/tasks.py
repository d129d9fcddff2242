"""Task definitions, example building, and the multi-task batch sampler.

Each task is a single fixed prompt plus a target policy. Transcription
targets come straight from the transcript; every other task is trained by
imitating a frozen text-model response, but also has a rule oracle here so
the text model can be pretrained on the same behaviors and so evaluation
has exact references.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .corpus import Manifest, ToyGrammar, parse_utterance, render_items, tokenize_words
from .errors import ConfigError, DataError
from .synth import SpeechFeatures, SynthConfig, synth_pseudo_speech
from .tokenizer import Tokenizer

TARGET_SOURCES = ("rule", "teacher")
TASK_NAMES = ("asr_sft", "continuation", "rewriting", "selecting", "ic", "sf", "st")
TASK_CONFIG_VERSION = 1


@dataclass(frozen=True)
class TaskSpec:
    name: str
    prompt: str
    target_source: str
    max_target_tokens: int = 100

    def __post_init__(self):
        if self.name not in TASK_NAMES:
            raise ConfigError(f"unknown task name {self.name!r}")
        if self.target_source not in TARGET_SOURCES:
            raise ConfigError(f"unknown target source {self.target_source!r}")
        if not self.prompt:
            raise ConfigError(f"task {self.name}: empty prompt")
        if self.max_target_tokens < 1:
            raise ConfigError(f"task {self.name}: max_target_tokens must be >= 1")


@dataclass
class TrainingExample:
    example_id: str
    task: str
    system_prompt: str
    task_prompt: str
    transcript: str
    speech: SpeechFeatures
    target_tokens: list[int] | None = None

    def __post_init__(self):
        if self.transcript != self.speech.source_text:
            raise DataError(f"{self.example_id}: transcript does not match speech source")


@dataclass(frozen=True)
class TaskConfig:
    """Parsed task configuration: prompts, active set, weights, system prompt."""

    system_prompt: str
    specs: dict[str, TaskSpec]
    active: tuple[str, ...]

    def spec(self, name: str) -> TaskSpec:
        if name not in self.specs:
            raise ConfigError(f"unknown task name {name!r}")
        return self.specs[name]

    def active_specs(self) -> list[TaskSpec]:
        return [self.specs[n] for n in self.active]


def task_prompt(cfg: TaskConfig, name: str) -> str:
    return cfg.spec(name).prompt


_CONFIG_KEYS = {"format_version", "system_prompt", "tasks", "active"}
_TASK_KEYS = {"name", "prompt", "target_source", "max_target_tokens"}


def parse_task_config(obj: dict) -> TaskConfig:
    unknown = set(obj) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown task-config keys: {sorted(unknown)}")
    if obj.get("format_version") != TASK_CONFIG_VERSION:
        raise ConfigError(f"unsupported task-config format_version {obj.get('format_version')!r}")
    specs: dict[str, TaskSpec] = {}
    for ent in obj["tasks"]:
        bad = set(ent) - _TASK_KEYS
        if bad:
            raise ConfigError(f"unknown task keys: {sorted(bad)}")
        spec = TaskSpec(name=ent["name"], prompt=ent["prompt"],
                        target_source=ent["target_source"],
                        max_target_tokens=ent.get("max_target_tokens", 100))
        if spec.name in specs:
            raise ConfigError(f"duplicate task {spec.name!r} in config")
        specs[spec.name] = spec
    active = tuple(obj["active"])
    for name in active:
        if name not in specs:
            raise ConfigError(f"active task {name!r} has no spec")
    if not active:
        raise ConfigError("active task list is empty")
    return TaskConfig(system_prompt=obj["system_prompt"], specs=specs, active=active)


def load_task_config(path: str | Path | None = None) -> TaskConfig:
    """Load a task config file; None loads the packaged default."""
    if path is None:
        text = resources.files("speechmime.data").joinpath("tasks_default.json").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"task config is not valid JSON: {e}") from e
    return parse_task_config(obj)


def selecting_oracle(grammar: ToyGrammar, transcript: str) -> list[str]:
    """Verbs and nouns of the transcript, in utterance order."""
    out = []
    for word in tokenize_words(transcript):
        if grammar.word_pos(word) in ("verb", "noun"):
            out.append(word)
    return out


def rule_target(grammar: ToyGrammar, task: str, transcript: str) -> str:
    """Deterministic reference answer for a task on one transcript."""
    words = tokenize_words(transcript)
    if task == "asr_sft":
        return " ".join(words)
    if task == "continuation":
        template, bindings = parse_utterance(grammar, transcript)
        return render_items(template.sequel, bindings)
    if task == "rewriting":
        return " ".join(grammar.rewrite_pairs.get(w, w) for w in words)
    if task == "selecting":
        return " ".join(selecting_oracle(grammar, transcript))
    if task == "ic":
        template, _ = parse_utterance(grammar, transcript)
        return template.intent
    if task == "sf":
        template, bindings = parse_utterance(grammar, transcript)
        keys = [it[2] for it in template.pattern if it[0] == "slot"]
        return " ".join(f"{k} {bindings[k]}" for k in keys)
    if task == "st":
        return " ".join(reversed(words))
    raise ConfigError(f"unknown task name {task!r}")


def build_examples(manifest: Manifest, spec: TaskSpec, system_prompt: str,
                   synth_cfg: SynthConfig, tokenizer: Tokenizer | None = None,
                   split: str | None = None) -> list[TrainingExample]:
    """One example per utterance; rule targets filled now, teacher targets later."""
    entries = manifest.by_split(split) if split else manifest.entries
    if not entries:
        raise DataError("no utterances to build examples from")
    if spec.target_source == "rule" and tokenizer is None:
        raise ConfigError(f"task {spec.name} needs a tokenizer for rule targets")
    out = []
    for utt in entries:
        target = None
        if spec.target_source == "rule":
            target = tokenizer.encode(utt.text)
        out.append(TrainingExample(
            example_id=f"{spec.name}:{utt.id}",
            task=spec.name,
            system_prompt=system_prompt,
            task_prompt=spec.prompt,
            transcript=utt.text,
            speech=synth_pseudo_speech(utt.text, synth_cfg),
            target_tokens=target,
        ))
    return out


@dataclass(frozen=True)
class MixWeights:
    weights: dict[str, float]

    def __post_init__(self):
        if not self.weights:
            raise ConfigError("empty mix weights")
        for task, w in self.weights.items():
            if w < 0:
                raise ConfigError(f"negative weight for task {task!r}")
        total = sum(self.weights.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"mix weights sum to {total}, expected 1")

    @classmethod
    def uniform(cls, tasks) -> "MixWeights":
        tasks = list(tasks)
        return cls({t: 1.0 / len(tasks) for t in tasks})

    def vector(self, order) -> np.ndarray:
        return np.array([self.weights[t] for t in order], dtype=np.float64)


def _task_tag(task: str) -> int:
    return int.from_bytes(hashlib.sha256(task.encode("utf-8")).digest()[:4], "big")


class TaskMixer:
    """Equal-or-weighted task draws; uniform without-replacement within a task.

    Each task walks a permutation of its examples; a fresh permutation is a
    pure function of (seed, task, epoch), so mixer state is just the
    (epoch, cursor) pair per task and resume is exact.
    """

    def __init__(self, groups: dict[str, list[TrainingExample]], weights: MixWeights,
                 seed: int):
        if not groups:
            raise ConfigError("mixer needs at least one task group")
        for task, examples in groups.items():
            if not examples:
                raise ConfigError(f"task {task!r} has no examples")
        if set(weights.weights) != set(groups):
            raise ConfigError("mix weights do not match the active task set")
        self.groups = groups
        self.weights = weights
        self.seed = seed
        self.order = sorted(groups)
        self._pvec = weights.vector(self.order)
        self._epoch = {t: 0 for t in self.order}
        self._cursor = {t: 0 for t in self.order}
        self._perm = {t: self._permutation(t, 0) for t in self.order}

    def _permutation(self, task: str, epoch: int) -> np.ndarray:
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([self.seed, _task_tag(task), epoch])))
        return rng.permutation(len(self.groups[task]))

    def _next(self, task: str) -> TrainingExample:
        i = self._cursor[task]
        example = self.groups[task][int(self._perm[task][i])]
        i += 1
        if i >= len(self.groups[task]):
            self._epoch[task] += 1
            self._cursor[task] = 0
            self._perm[task] = self._permutation(task, self._epoch[task])
        else:
            self._cursor[task] = i
        return example

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> list[TrainingExample]:
        picks = rng.choice(len(self.order), size=batch_size, p=self._pvec)
        return [self._next(self.order[int(k)]) for k in picks]

    def state(self) -> dict:
        return {"epoch": dict(self._epoch), "cursor": dict(self._cursor)}

    def restore(self, state: dict) -> None:
        for task in self.order:
            self._epoch[task] = int(state["epoch"][task])
            self._cursor[task] = int(state["cursor"][task])
            self._perm[task] = self._permutation(task, self._epoch[task])


def sample_batch(mixer: TaskMixer, batch_size: int,
                 rng: np.random.Generator) -> list[TrainingExample]:
    return mixer.sample_batch(batch_size, rng)
