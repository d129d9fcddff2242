"""Generalization benchmark: instruction following over fixed clips, speaker
role inference, spoken arithmetic (0-shot and 1-shot), and transcription WER.

Every suite is built deterministically from shipped data plus a seed, and
every judge is a pure rule so verdicts are reproducible. The model under
test is anything that maps an embedded prefix to text.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .corpus import ToyGrammar, Utterance, tokenize_words
from .errors import ConfigError, DataError
from .model import (MixedSequence, ROLE_INPUT, Segment, SpeechSegment,
                    TextSegment, build_prefix)
from .sampling import GenerationConfig
from .synth import SpeechFeatures, SynthConfig, synth_pseudo_speech
from .tokenizer import Tokenizer

REPORT_FORMAT_VERSION = 1
ROLE_OPTIONS = ("student", "teacher", "doctor", "police", "engineer")
ROLE_PROMPT = "choose the role of the speaker from student teacher doctor police engineer"
MATH_PROMPT = "solve the problem and give the number"
EVAL_TASKS = ("prompt_gen", "role", "math", "asr")


def wer(reference: str, hypothesis: str) -> float:
    """Word error rate: edit operations over reference word count."""
    ref = tokenize_words(reference)
    hyp = tokenize_words(hypothesis)
    if not ref:
        if hyp:
            raise DataError("WER undefined: empty reference, non-empty hypothesis")
        return 0.0
    return word_edit_distance(ref, hyp) / len(ref)


def word_edit_distance(ref: list[str], hyp: list[str]) -> int:
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[len(hyp)]


@dataclass(frozen=True)
class PromptFamily:
    """A machine-checkable instruction over a fixed clip.

    answer() is the oracle response; predicate() checks the response's shape;
    normalize() maps a shaped response back to plain transcript words for the
    content check.
    """

    family_id: str
    instruction: str
    seen: bool
    answer: Callable[[str], str]
    predicate: Callable[[str], bool]
    normalize: Callable[[str], str]


def _halves_equal(response: str) -> bool:
    words = tokenize_words(response)
    if not words or len(words) % 2:
        return False
    half = len(words) // 2
    return words[:half] == words[half:]


def _first_half(response: str) -> str:
    words = tokenize_words(response)
    return " ".join(words[: len(words) // 2])


def _pairs_equal(response: str) -> bool:
    words = tokenize_words(response)
    if not words or len(words) % 2:
        return False
    return all(words[i] == words[i + 1] for i in range(0, len(words), 2))


def _even_words(response: str) -> str:
    words = tokenize_words(response)
    return " ".join(words[0::2])


def build_families(grammar: ToyGrammar) -> list[PromptFamily]:
    """The ten instruction families; five are rendered during LM pretraining
    (seen) and five are not."""

    def swap(text: str) -> str:
        return " ".join(grammar.rewrite_pairs.get(w, w) for w in tokenize_words(text))

    def drop_first(marker):
        def norm(response: str) -> str:
            words = tokenize_words(response)
            if words and words[0] == marker:
                words = words[1:]
            return " ".join(words)
        return norm

    def drop_last(marker):
        def norm(response: str) -> str:
            words = tokenize_words(response)
            if words and words[-1] == marker:
                words = words[:-1]
            return " ".join(words)
        return norm

    ident = lambda s: " ".join(tokenize_words(s))
    rev = lambda s: " ".join(reversed(tokenize_words(s)))

    return [
        PromptFamily("echo", "repeat the utterance exactly", True,
                     answer=ident, predicate=lambda r: True, normalize=ident),
        PromptFamily("prefix", "begin your answer with the word transcript then repeat the utterance",
                     True, answer=lambda t: "transcript " + ident(t),
                     predicate=lambda r: tokenize_words(r)[:1] == ["transcript"],
                     normalize=drop_first("transcript")),
        PromptFamily("reverse", "say the utterance in reverse word order", True,
                     answer=rev, predicate=lambda r: True, normalize=rev),
        PromptFamily("doubleword", "say every word of the utterance two times", True,
                     answer=lambda t: " ".join(w for w in tokenize_words(t) for _ in (0, 1)),
                     predicate=_pairs_equal, normalize=_even_words),
        PromptFamily("swap", "replace every word with its partner word", True,
                     answer=swap, predicate=lambda r: True, normalize=swap),
        PromptFamily("suffix", "repeat the utterance and finish your answer with the word over",
                     False, answer=lambda t: ident(t) + " over",
                     predicate=lambda r: tokenize_words(r)[-1:] == ["over"],
                     normalize=drop_last("over")),
        PromptFamily("wrap", "put the word begin before the utterance and the word end after it",
                     False, answer=lambda t: "begin " + ident(t) + " end",
                     predicate=lambda r: tokenize_words(r)[:1] == ["begin"]
                     and tokenize_words(r)[-1:] == ["end"],
                     normalize=lambda r: drop_last("end")(drop_first("begin")(r))),
        PromptFamily("double", "say the whole utterance two times", False,
                     answer=lambda t: ident(t) + " " + ident(t),
                     predicate=_halves_equal, normalize=_first_half),
        PromptFamily("uppercase", "write the utterance in uppercase letters", False,
                     answer=lambda t: t.upper(),
                     predicate=lambda r: any(c.isalpha() for c in r) and r == r.upper(),
                     normalize=lambda r: r.lower()),
        PromptFamily("commas", "say the words of the utterance separated by commas", False,
                     answer=lambda t: ", ".join(tokenize_words(t)),
                     predicate=lambda r: "," in r,
                     normalize=lambda r: r.replace(",", " ")),
    ]


@dataclass
class EvalItem:
    item_id: str
    task: str
    prompt: str
    speech: SpeechFeatures
    reference: str | float
    metadata: dict = field(default_factory=dict)
    text_prefix: str | None = None  # worked exemplar for 1-shot math

    def __post_init__(self):
        if self.task not in EVAL_TASKS:
            raise ConfigError(f"unknown eval task {self.task!r}")
        if self.task == "math":
            if not isinstance(self.reference, (int, float)):
                raise DataError(f"{self.item_id}: math reference must be numeric")
        elif not isinstance(self.reference, str):
            raise DataError(f"{self.item_id}: reference must be text")


@dataclass
class JudgeVerdict:
    item_id: str
    passed: bool
    rationale: str
    detail: dict = field(default_factory=dict)


def build_prompt_gen_set(clips: list[Utterance], families: list[PromptFamily],
                         synth_cfg: SynthConfig) -> list[EvalItem]:
    """Cross product of fixed clips and instruction families."""
    if len(clips) != 10:
        raise ConfigError(f"prompt generalization needs exactly 10 clips, got {len(clips)}")
    if len(families) != 10:
        raise ConfigError(f"prompt generalization needs exactly 10 families, got {len(families)}")
    ids = [f.family_id for f in families]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate family ids")
    items = []
    for fam in families:
        for clip in clips:
            items.append(EvalItem(
                item_id=f"pg:{fam.family_id}:{clip.id}",
                task="prompt_gen",
                prompt=fam.instruction,
                speech=synth_pseudo_speech(clip.text, synth_cfg),
                reference=clip.text,
                metadata={"family": fam.family_id, "clip": clip.id, "seen": fam.seen},
            ))
    return items


def judge_prompt_gen(item: EvalItem, response: str,
                     families: dict[str, PromptFamily]) -> JudgeVerdict:
    """Pass iff the family's shape predicate holds and content survives
    normalization with WER at most 0.2."""
    fam = families[item.metadata["family"]]
    if not fam.predicate(response):
        return JudgeVerdict(item.item_id, False, f"shape check failed for {fam.family_id}")
    normalized = fam.normalize(response)
    if not tokenize_words(normalized):
        return JudgeVerdict(item.item_id, False, "empty response after normalization")
    rate = wer(str(item.reference), normalized)
    if rate <= 0.2:
        return JudgeVerdict(item.item_id, True, f"content WER {rate:.3f}", {"wer": rate})
    return JudgeVerdict(item.item_id, False, f"content WER {rate:.3f} above 0.2", {"wer": rate})


_SLOT_RE = re.compile(r"\{(verb|adj|adv|num|noun)\}")


def load_role_templates(path: str | Path | None = None) -> dict[str, list[str]]:
    if path is None:
        text = resources.files("speechmime.data").joinpath("role_templates.json").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    obj = json.loads(text)
    roles = obj.get("roles")
    if not isinstance(roles, dict) or set(roles) != set(ROLE_OPTIONS):
        raise DataError("role template file must define exactly the five roles")
    return {role: list(patterns) for role, patterns in roles.items()}


def fill_role_pattern(pattern: str, grammar: ToyGrammar, rng: np.random.Generator) -> str:
    def sub(match):
        words = grammar.lexicon[match.group(1)]
        return words[int(rng.integers(len(words)))]
    return _SLOT_RE.sub(sub, pattern)


def build_role_set(templates: dict[str, list[str]], grammar: ToyGrammar,
                   synth_cfg: SynthConfig, rng: np.random.Generator) -> list[EvalItem]:
    """60 spoken utterances, 12 per role, each asking for a role choice."""
    items = []
    seen_texts: set[str] = set()
    for role in ROLE_OPTIONS:
        patterns = templates.get(role, [])
        if len(patterns) < 12:
            raise ConfigError(f"role {role!r} needs at least 12 templates, has {len(patterns)}")
        for k, pattern in enumerate(patterns[:12]):
            text = fill_role_pattern(pattern, grammar, rng)
            for _ in range(8):
                if text not in seen_texts:
                    break
                text = fill_role_pattern(pattern, grammar, rng)
            seen_texts.add(text)
            items.append(EvalItem(
                item_id=f"role:{role}:{k:02d}",
                task="role",
                prompt=ROLE_PROMPT,
                speech=synth_pseudo_speech(text, synth_cfg),
                reference=role,
                metadata={"utterance": text},
            ))
    return items


def parse_role(response: str, options=ROLE_OPTIONS) -> str | None:
    """The unique option mentioned in the response, else None."""
    words = set(tokenize_words(response))
    mentioned = [opt for opt in options if opt in words]
    if len(mentioned) == 1:
        return mentioned[0]
    return None


BLOCKLIST_CHARS = "=^_\\{}|<>*#[]"
_DIGIT_SLASH = re.compile(r"\d\s*/|/\s*\d")


def filter_math_problem(problem_text: str, blocklist: str = BLOCKLIST_CHARS) -> bool:
    """True keeps the problem; symbol-heavy text is dropped."""
    if any(c in problem_text for c in blocklist):
        return False
    if _DIGIT_SLASH.search(problem_text):
        return False
    return True


_NUMBER_RE = re.compile(r"[-+]?\d[\d,]*(?:\.\d+)?")


def _parse_number(text: str) -> float | None:
    cleaned = text.replace(",", "").replace("$", "").strip()
    m = re.search(r"[-+]?\d+(?:\.\d+)?", cleaned)
    if not m:
        return None
    return float(m.group(0))


def extract_math_answer(response: str) -> float | None:
    """Value after the last '####' marker, else the last number anywhere."""
    if "####" in response:
        tail = response.rsplit("####", 1)[1].split("\n", 1)[0]
        value = _parse_number(tail)
        if value is not None:
            return value
    numbers = _NUMBER_RE.findall(response)
    if not numbers:
        return None
    return float(numbers[-1].replace(",", ""))


def read_math_problems(path: str | Path | None = None) -> list[dict]:
    if path is None:
        text = resources.files("speechmime.data").joinpath("math_toy.jsonl").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    problems = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            problems.append({"id": rec["id"], "question": rec["question"],
                             "answer": float(rec["answer"])})
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DataError(f"math problem file line {lineno}: {e}") from e
    return problems


def load_math_shot(path: str | Path | None = None) -> str:
    if path is None:
        text = resources.files("speechmime.data").joinpath("math_shot.json").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    obj = json.loads(text)
    return f"{obj['question']} {obj['solution']}"


def build_math_set(problems: list[dict], synth_cfg: SynthConfig,
                   shots: int = 0, shot_text: str | None = None) -> list[EvalItem]:
    if shots not in (0, 1):
        raise ConfigError(f"shots must be 0 or 1, got {shots}")
    if shots == 1 and not shot_text:
        raise ConfigError("1-shot evaluation needs a worked exemplar")
    items = []
    for p in problems:
        if not filter_math_problem(p["question"]):
            continue
        items.append(EvalItem(
            item_id=f"math{shots}:{p['id']}",
            task="math",
            prompt=MATH_PROMPT,
            speech=synth_pseudo_speech(p["question"], synth_cfg),
            reference=float(p["answer"]),
            metadata={"shots": shots},
            text_prefix=shot_text if shots == 1 else None,
        ))
    return items


def build_asr_set(utterances: list[Utterance], synth_cfg: SynthConfig,
                  prompt: str) -> list[EvalItem]:
    return [EvalItem(
        item_id=f"asr:{u.id}",
        task="asr",
        prompt=prompt,
        speech=synth_pseudo_speech(u.text, synth_cfg),
        reference=u.text,
    ) for u in utterances]


class EvalModel(Protocol):
    """Anything that can answer an eval item from its embedded prefix."""

    def generate_text(self, item: EvalItem, prefix: MixedSequence,
                      cfg: GenerationConfig, rng: np.random.Generator) -> str: ...


def build_eval_prefix(item: EvalItem, tokenizer: Tokenizer,
                      system_prompt: str) -> MixedSequence:
    segments: list[Segment] = []
    if item.text_prefix:
        segments.append(TextSegment(ids=tuple(tokenizer.encode(item.text_prefix)),
                                    role=ROLE_INPUT))
    segments.append(SpeechSegment(features=item.speech, role=ROLE_INPUT))
    return build_prefix(tokenizer, system_prompt, item.prompt, segments)


def _item_rng(seed: int, item_id: str) -> np.random.Generator:
    tag = int.from_bytes(hashlib.sha256(item_id.encode("utf-8")).digest()[:4], "big")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, tag])))


@dataclass
class Report:
    scores: dict[str, float]
    verdicts: list[JudgeVerdict]
    metadata: dict
    format_version: int = REPORT_FORMAT_VERSION


def _judge(item: EvalItem, response: str, families: dict[str, PromptFamily]) -> JudgeVerdict:
    if item.task == "prompt_gen":
        return judge_prompt_gen(item, response, families)
    if item.task == "role":
        picked = parse_role(response)
        ok = picked == item.reference
        return JudgeVerdict(item.item_id, ok,
                            f"parsed {picked!r}, expected {item.reference!r}",
                            {"parsed": picked})
    if item.task == "math":
        value = extract_math_answer(response)
        ok = value is not None and abs(value - float(item.reference)) <= 1e-6
        return JudgeVerdict(item.item_id, ok,
                            f"extracted {value!r}, expected {item.reference}",
                            {"extracted": value})
    if item.task == "asr":
        ref_words = tokenize_words(str(item.reference))
        errors = word_edit_distance(ref_words, tokenize_words(response))
        rate = errors / len(ref_words) if ref_words else 0.0
        return JudgeVerdict(item.item_id, errors == 0, f"WER {rate:.3f}",
                            {"errors": errors, "ref_words": len(ref_words), "wer": rate})
    raise ConfigError(f"no judge for task {item.task!r}")


def aggregate_scores(verdicts: list[JudgeVerdict], items: list[EvalItem]) -> dict[str, float]:
    by_task: dict[str, list[JudgeVerdict]] = {}
    item_task = {i.item_id: i.task for i in items}
    for v in verdicts:
        by_task.setdefault(item_task[v.item_id], []).append(v)
    scores: dict[str, float] = {}
    for task, vs in sorted(by_task.items()):
        if task == "asr":
            errors = sum(v.detail.get("errors", 0) for v in vs)
            words = sum(v.detail.get("ref_words", 0) for v in vs)
            scores["asr_wer"] = errors / words if words else 0.0
        else:
            scores[task] = sum(v.passed for v in vs) / len(vs)
    return scores


def run_eval(model: EvalModel, items: list[EvalItem], tokenizer: Tokenizer,
             system_prompt: str, gen_cfg: GenerationConfig, seed: int,
             families: list[PromptFamily], metadata: dict | None = None) -> Report:
    """Evaluate every item with its own derived RNG stream; one Report out.

    A model exception on an item scores it incorrect and flags it rather
    than aborting the run.
    """
    fam_map = {f.family_id: f for f in families or []}
    verdicts = []
    for item in sorted(items, key=lambda i: i.item_id):
        rng = _item_rng(seed, item.item_id)
        budget = 200 if item.task == "math" else 100
        cfg = replace(gen_cfg, max_new_tokens=budget)
        prefix = build_eval_prefix(item, tokenizer, system_prompt)
        try:
            response = model.generate_text(item, prefix, cfg, rng)
        except Exception as e:  # noqa: BLE001 - contract: flag and continue
            verdicts.append(JudgeVerdict(item.item_id, False,
                                         f"model failure: {type(e).__name__}: {e}",
                                         {"model_failure": True, "task": item.task}))
            continue
        verdict = _judge(item, response, fam_map)
        verdict.detail["response"] = response
        verdict.detail["task"] = item.task
        verdicts.append(verdict)
    scores = aggregate_scores(verdicts, items)
    meta = {"seed": seed, "n_items": len(items)}
    meta.update(metadata or {})
    return Report(scores=scores, verdicts=verdicts, metadata=meta)
