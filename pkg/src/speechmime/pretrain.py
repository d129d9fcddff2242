"""Text-only pretraining of the frozen decoder.

The decoder must already know every behavior it will later be asked to
teach (transcription, the constructed tasks, half of the instruction
families, role naming, toy sums) before it is sealed. Renders come in a
plain form and in "stretched" forms where words repeat once per connector
output position for their character span; the stretched forms teach the
decoder to read the elongated, speech-shaped inputs the connector will
later produce.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from .corpus import Manifest, ToyGrammar, tokenize_words
from .errors import ConfigError, DataError
from .evalbench import (MATH_PROMPT, ROLE_OPTIONS, ROLE_PROMPT, PromptFamily,
                        fill_role_pattern)
from .interleave import select_span
from .model import LMConfig, TinyLM, subsampled_length
from .optim import Adam
from .tasks import TaskConfig, rule_target
from .tokenizer import BOS, EOS, SEP, Tokenizer, build_tokenizer

log = logging.getLogger(__name__)

MATH_PATTERNS = (
    "the {noun} counts {a} and {b} how many in all",
    "some {noun} counts {a} then {b} how many in all",
    "every {noun} counts {a} and {b} how many together",
)
NUMBER_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven",
                "eight", "nine")
DIGITS = tuple(str(d) for d in range(10))


def stretch_words(text: str, frames_per_char: int = 2) -> list[str]:
    """One word per connector output position, repeats included.

    Position i of the subsampled speech path covers frames [4i, 4i+4); its
    word is the word owning the character under the position's early-center
    frame. This is the text-side picture of what pseudo-speech for `text`
    turns into after subsampling.
    """
    if not text:
        raise DataError("cannot stretch empty text")
    words = text.split()
    char_word = []
    w = -1
    in_word = False
    for ch in text:
        if ch.isspace():
            in_word = False
            char_word.append(None)
        else:
            if not in_word:
                w += 1
                in_word = True
            char_word.append(w)
    positions = subsampled_length(frames_per_char * len(text))
    out = []
    for i in range(positions):
        c = min((4 * i + 1) // frames_per_char, len(text) - 1)
        k = char_word[c]
        if k is None:
            forward = next((char_word[j] for j in range(c + 1, len(text))
                            if char_word[j] is not None), None)
            k = forward if forward is not None else char_word[c - 1]
        out.append(words[k])
    return out


def render_ids(tok: Tokenizer, system_prompt: str, prompt: str, input_text: str,
               target_text: str) -> list[int]:
    return [BOS, *tok.encode(system_prompt), SEP, *tok.encode(prompt), SEP,
            *tok.encode(input_text), SEP, *tok.encode(target_text), EOS]


def _stretch_span_text(text: str, rng: np.random.Generator,
                       frames_per_char: int) -> str:
    """Stretch only a contiguous 40-60% word span, mirroring interleaving."""
    words = text.split()
    span = select_span(len(words), rng)
    if span is None:
        return " ".join(stretch_words(text, frames_per_char))
    before = words[:span.start_word_index]
    inside = " ".join(words[span.start_word_index:span.start_word_index + span.word_count])
    after = words[span.start_word_index + span.word_count:]
    return " ".join([*before, *stretch_words(inside, frames_per_char), *after])


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *tags])))


def math_pretrain_pairs(grammar: ToyGrammar, seed: int) -> list[tuple[str, str]]:
    """Every two-term sum with a single-digit total, in several phrasings."""
    nouns = grammar.lexicon["noun"]
    pairs = []
    rng = _rng(seed, 0x3A7)
    for a in range(1, 9):
        for b in range(1, 10 - a):
            for pattern in MATH_PATTERNS:
                noun = nouns[int(rng.integers(len(nouns)))]
                question = pattern.format(noun=noun, a=NUMBER_WORDS[a], b=NUMBER_WORDS[b])
                pairs.append((question, f"#### {a + b}"))
    return pairs


def tokenizer_training_texts(grammar: ToyGrammar, task_cfg: TaskConfig,
                             families: list[PromptFamily],
                             role_templates: dict[str, list[str]],
                             extra: list[str] = ()) -> list[str]:
    """Everything the vocabulary must cover as whole words."""
    texts = [" ".join(grammar.all_words()), task_cfg.system_prompt]
    texts.extend(spec.prompt for spec in task_cfg.specs.values())
    texts.append(" ".join(t.intent for t in grammar.templates))
    slot_keys = sorted({it[2] for t in grammar.templates for it in t.pattern
                        if it[0] == "slot"})
    texts.append(" ".join(slot_keys))
    texts.extend(f.instruction for f in families)
    texts.append(ROLE_PROMPT)
    texts.append(MATH_PROMPT)
    texts.extend(p.format(noun="cat", a="one", b="two") for p in MATH_PATTERNS)
    rng = _rng(0, 0x70C)
    for role, patterns in sorted(role_templates.items()):
        for pattern in patterns:
            texts.append(fill_role_pattern(pattern, grammar, rng))
    texts.append(" ".join(NUMBER_WORDS))
    texts.append(" ".join(DIGITS))
    texts.append("####")
    texts.extend(extra)
    return texts


def build_default_tokenizer(grammar: ToyGrammar, task_cfg: TaskConfig,
                            families: list[PromptFamily],
                            role_templates: dict[str, list[str]],
                            extra: list[str] = ()) -> Tokenizer:
    return build_tokenizer(tokenizer_training_texts(grammar, task_cfg, families,
                                                    role_templates, extra))


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 2500
    batch_size: int = 16
    lr: float = 3e-3
    seed: int = 0
    role_fills: int = 6

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")


def build_pretrain_renders(grammar: ToyGrammar, manifest: Manifest,
                           task_cfg: TaskConfig, tok: Tokenizer,
                           families: list[PromptFamily],
                           role_templates: dict[str, list[str]],
                           cfg: PretrainConfig,
                           frames_per_char: int = 2,
                           context: int = 256) -> list[list[int]]:
    """The full text curriculum as token id sequences."""
    renders: list[list[int]] = []
    sys_p = task_cfg.system_prompt

    def add(prompt: str, input_text: str, target_text: str) -> None:
        ids = render_ids(tok, sys_p, prompt, input_text, target_text)
        if len(ids) > context:
            raise DataError(f"render of {len(ids)} tokens exceeds context {context}")
        renders.append(ids)

    train = manifest.by_split("train")
    if not train:
        raise DataError("manifest has no training utterances")

    for i, utt in enumerate(train):
        span_rng = _rng(cfg.seed, 0x57E7, i)
        stretched_whole = " ".join(stretch_words(utt.text, frames_per_char))
        stretched_span = _stretch_span_text(utt.text, span_rng, frames_per_char)
        for spec in task_cfg.active_specs():
            target = rule_target(grammar, spec.name, utt.text)
            add(spec.prompt, utt.text, target)
            add(spec.prompt, stretched_whole, target)
            add(spec.prompt, stretched_span, target)
        for fam in families:
            if not fam.seen:
                continue
            answer = fam.answer(utt.text)
            add(fam.instruction, utt.text, answer)
            variant = stretched_whole if i % 2 == 0 else stretched_span
            add(fam.instruction, variant, answer)

    for role in ROLE_OPTIONS:
        patterns = role_templates[role]
        for p, pattern in enumerate(patterns):
            for f in range(cfg.role_fills):
                fill_rng = _rng(cfg.seed, 0x801E, p, f, ROLE_OPTIONS.index(role))
                text = fill_role_pattern(pattern, grammar, fill_rng)
                add(ROLE_PROMPT, text, role)
                add(ROLE_PROMPT, " ".join(stretch_words(text, frames_per_char)), role)

    for question, answer in math_pretrain_pairs(grammar, cfg.seed):
        add(MATH_PROMPT, question, answer)
        add(MATH_PROMPT, " ".join(stretch_words(question, frames_per_char)), answer)

    return renders


def pretrain_toy_lm(renders: list[list[int]], lm: TinyLM,
                    cfg: PretrainConfig) -> np.ndarray:
    """Train all decoder parameters on the curriculum, then seal the model.

    Returns the per-step loss history (nats per token, float32).
    """
    if not renders:
        raise DataError("no pretraining renders")
    params = lm.writable_parameters()
    opt = Adam(params, lr=cfg.lr)
    tensors = [torch.as_tensor(ids, dtype=torch.long) for ids in renders]
    losses = np.zeros(cfg.steps, dtype=np.float32)
    for step in range(cfg.steps):
        rng = _rng(cfg.seed, 0x9E7, step)
        picks = rng.integers(0, len(tensors), size=cfg.batch_size)
        opt.zero_grad()
        total = None
        for k in picks:
            ids = tensors[int(k)]
            x = lm.tok_emb.weight[ids[:-1]]
            logits = lm(x)
            loss = torch.nn.functional.cross_entropy(logits, ids[1:])
            total = loss if total is None else total + loss
        total = total / cfg.batch_size
        total.backward()
        opt.step()
        losses[step] = float(total.detach())
        if step % 200 == 0 or step == cfg.steps - 1:
            log.info("pretrain step %d loss %.4f", step, losses[step])
    lm.seal()
    return losses
