"""Deterministic toy text corpus: template grammar, generation, manifest files.

The grammar plays the role of a large read-speech corpus at desk scale.
Every sentence is built from a fixed template over disjoint part-of-speech
word lists, so any generated sentence can be parsed back into its template
and slot bindings from the text alone. Downstream task rules (continuation
sequels, rewriting partners, selecting verbs/nouns) lean on that parse.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, VersionError

MANIFEST_FORMAT_VERSION = 1

TERMINAL_PUNCT = ".,!?;"


def tokenize_words(text: str) -> list[str]:
    """Lowercase, strip terminal punctuation per token, split on whitespace runs."""
    words = []
    for raw in text.lower().split():
        word = raw.rstrip(TERMINAL_PUNCT)
        if word:
            words.append(word)
    return words


# Template pattern items: ("lit", word) fixed word, ("slot", pos, key) lexicon draw.
# Sequel items: ("lit", word) or ("ref", key) reusing a bound slot.
Item = tuple


@dataclass(frozen=True)
class Template:
    name: str
    intent: str
    pattern: tuple[Item, ...]
    sequel: tuple[Item, ...]

    def signature(self) -> tuple:
        return tuple(it[:2] if it[0] == "lit" else ("slot", it[1]) for it in self.pattern)


@dataclass(frozen=True)
class ToyGrammar:
    """Sentence templates plus disjoint slot lexicons and a generation seed."""

    templates: tuple[Template, ...]
    lexicon: dict[str, tuple[str, ...]]
    seed: int
    # Partner word maps used by the rewriting rule; pairs live inside one slot list.
    rewrite_pairs: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.templates:
            raise ConfigError("grammar needs at least one template")
        if not any(self.lexicon.values()):
            raise ConfigError("grammar lexicon is empty")
        seen: dict[str, str] = {}
        for pos, words in self.lexicon.items():
            for w in words:
                if w in seen:
                    raise ConfigError(f"word {w!r} appears in both {seen[w]} and {pos}")
                seen[w] = pos
        sigs = [t.signature() for t in self.templates]
        if len(set(sigs)) != len(sigs):
            raise ConfigError("template signatures are ambiguous")

    def word_pos(self, word: str) -> str:
        for pos, words in self.lexicon.items():
            if word in words:
                return pos
        raise DataError(f"word {word!r} not in lexicon")

    def all_words(self) -> list[str]:
        out: set[str] = set()
        for words in self.lexicon.values():
            out.update(words)
        return sorted(out)


@dataclass(frozen=True)
class Utterance:
    id: str
    text: str
    split: str

    def __post_init__(self):
        if not self.text:
            raise DataError(f"utterance {self.id}: empty text")
        if self.split not in SPLITS:
            raise DataError(f"utterance {self.id}: unknown split {self.split!r}")


SPLITS = ("train", "held_in_eval", "held_out_eval")
DEFAULT_SPLIT_FRACTIONS = (0.90, 0.05, 0.05)


@dataclass
class Manifest:
    entries: list[Utterance]
    format_version: int = MANIFEST_FORMAT_VERSION
    header_extra: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [u.id for u in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate utterance ids in manifest")

    def by_split(self, split: str) -> list[Utterance]:
        return [u for u in self.entries if u.split == split]


def _sentence_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index])))


def render_items(items: tuple[Item, ...], bindings: dict[str, str]) -> str:
    words = []
    for it in items:
        if it[0] == "lit":
            words.append(it[1])
        elif it[0] == "ref":
            words.append(bindings[it[1]])
        else:
            raise DataError(f"cannot render unbound item {it!r}")
    return " ".join(words)


def generate_sentence(grammar: ToyGrammar, index: int) -> str:
    """Sentence i as a pure function of (grammar, grammar.seed, i)."""
    rng = _sentence_rng(grammar.seed, index)
    template = grammar.templates[int(rng.integers(len(grammar.templates)))]
    bindings: dict[str, str] = {}
    words = []
    for it in template.pattern:
        if it[0] == "lit":
            words.append(it[1])
        else:
            _, pos, key = it
            choices = grammar.lexicon[pos]
            word = choices[int(rng.integers(len(choices)))]
            bindings[key] = word
            words.append(word)
    return " ".join(words)


def parse_utterance(grammar: ToyGrammar, text: str) -> tuple[Template, dict[str, str]]:
    """Recover (template, slot bindings) from a generated sentence.

    Works because slot lexicons are disjoint and template signatures unique.
    """
    words = tokenize_words(text)
    for template in grammar.templates:
        if len(template.pattern) != len(words):
            continue
        bindings: dict[str, str] = {}
        ok = True
        for it, word in zip(template.pattern, words):
            if it[0] == "lit":
                if it[1] != word:
                    ok = False
                    break
            else:
                _, pos, key = it
                if word not in grammar.lexicon[pos]:
                    ok = False
                    break
                bindings[key] = word
        if ok:
            return template, bindings
    raise DataError(f"text does not parse against the grammar: {text!r}")


def split_counts(n: int, fractions=DEFAULT_SPLIT_FRACTIONS) -> tuple[int, ...]:
    """Largest-remainder apportionment; each count within 1 of n * fraction."""
    raw = [n * f for f in fractions]
    counts = [int(x) for x in raw]
    rem = n - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:rem]:
        counts[i] += 1
    return tuple(counts)


def gen_toy_corpus(grammar: ToyGrammar, n: int,
                   fractions=DEFAULT_SPLIT_FRACTIONS) -> Manifest:
    """Generate n utterances with deterministic split assignment."""
    if n < 1:
        raise ConfigError(f"corpus size must be >= 1, got {n}")
    counts = split_counts(n, fractions)
    entries = []
    for i in range(n):
        text = generate_sentence(grammar, i)
        if i < counts[0]:
            split = SPLITS[0]
        elif i < counts[0] + counts[1]:
            split = SPLITS[1]
        else:
            split = SPLITS[2]
        entries.append(Utterance(id=f"utt{i:05d}", text=text, split=split))
    return Manifest(entries=entries)


def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    header = {"format_version": manifest.format_version}
    header.update(manifest.header_extra)
    lines = [json.dumps(header, sort_keys=True)]
    for u in manifest.entries:
        lines.append(json.dumps({"id": u.id, "text": u.text, "split": u.split},
                                sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> Manifest:
    path = Path(path)
    raw_lines = path.read_text(encoding="utf-8").splitlines()
    if not raw_lines:
        raise DataError(f"{path}: empty manifest")
    try:
        header = json.loads(raw_lines[0])
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: malformed header on line 1: {e}") from e
    if not isinstance(header, dict) or "format_version" not in header:
        raise DataError(f"{path}: line 1 is not a manifest header")
    version = header.pop("format_version")
    if version != MANIFEST_FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported manifest format_version {version}")
    entries = []
    for lineno, line in enumerate(raw_lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            entries.append(Utterance(id=rec["id"], text=rec["text"], split=rec["split"]))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise DataError(f"{path}: malformed record on line {lineno}: {e or type(e).__name__}") from e
    return Manifest(entries=entries, format_version=version, header_extra=header)


def _paired(words: tuple[str, ...]) -> dict[str, str]:
    pairs = {}
    for i in range(0, len(words) - 1, 2):
        pairs[words[i]] = words[i + 1]
        pairs[words[i + 1]] = words[i]
    return pairs


def default_grammar(seed: int = 0) -> ToyGrammar:
    """The stock corpus grammar: 8 templates, ~110 word types."""
    nouns = (
        "cat", "dog", "bird", "fish", "horse", "mouse", "fox", "wolf", "bear",
        "deer", "goat", "sheep", "cow", "duck", "owl", "crow", "seal", "crab",
        "student", "teacher", "doctor", "police", "engineer", "farmer",
        "singer", "painter", "miner", "pilot", "lesson", "homework", "exam",
        "patient", "medicine", "clinic", "badge", "patrol", "machine",
        "circuit", "bridge", "book",
    )
    # Even-index word pairs with the following word; rewriting swaps partners.
    verbs = (
        "runs", "dashes", "walks", "strolls", "jumps", "hops", "sings", "hums",
        "reads", "scans", "writes", "types", "paints", "draws", "hides", "lurks",
        "eats", "feeds", "sleeps", "naps",
    )
    adjs = (
        "big", "large", "small", "little", "happy", "glad", "quick", "rapid",
        "calm", "quiet", "brave", "bold", "dark", "dim", "warm", "cozy",
    )
    advs = (
        "quickly", "swiftly", "slowly", "softly", "often", "daily",
        "loudly", "noisily", "gladly", "freely", "gently", "neatly",
    )
    nums = (
        "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
    )
    markers = (
        "the", "every", "this", "that", "some", "and", "then", "again", "too",
        "later", "alone", "together", "near", "stays", "rests", "counts",
        "how", "many", "today",
    )
    lexicon = {
        "noun": nouns,
        "verb": verbs,
        "adj": adjs,
        "adv": advs,
        "num": nums,
        "marker": markers,
    }
    rewrite_pairs = {}
    rewrite_pairs.update(_paired(verbs))
    rewrite_pairs.update(_paired(adjs))
    rewrite_pairs.update(_paired(advs))

    def lit(w):
        return ("lit", w)

    def slot(pos, key):
        return ("slot", pos, key)

    def ref(key):
        return ("ref", key)

    templates = (
        Template(
            name="report", intent="report",
            pattern=(lit("the"), slot("noun", "n1"), slot("verb", "v1"), slot("adv", "a1")),
            sequel=(lit("then"), lit("the"), ref("n1"), ref("v1"), lit("again")),
        ),
        Template(
            name="action", intent="action",
            pattern=(lit("the"), slot("adj", "j1"), slot("noun", "n1"), slot("verb", "v1"),
                     lit("the"), slot("noun", "n2")),
            sequel=(lit("then"), lit("the"), ref("n2"), ref("v1"), lit("the"), ref("n1")),
        ),
        Template(
            name="group", intent="group",
            pattern=(lit("the"), slot("noun", "n1"), lit("and"), lit("the"), slot("noun", "n2"),
                     slot("verb", "v1"), lit("together")),
            sequel=(lit("later"), lit("the"), ref("n1"), ref("v1"), lit("alone")),
        ),
        Template(
            name="habit", intent="habit",
            pattern=(lit("every"), slot("noun", "n1"), slot("verb", "v1"), lit("the"),
                     slot("noun", "n2"), slot("adv", "a1")),
            sequel=(lit("then"), lit("the"), ref("n2"), lit("rests")),
        ),
        Template(
            name="style", intent="style",
            pattern=(lit("this"), slot("adj", "j1"), slot("noun", "n1"), slot("verb", "v1"),
                     slot("adv", "a1")),
            sequel=(lit("that"), ref("n1"), ref("v1"), ref("a1"), lit("too")),
        ),
        Template(
            name="place", intent="place",
            pattern=(lit("some"), slot("noun", "n1"), slot("verb", "v1"), lit("near"),
                     lit("the"), slot("noun", "n2")),
            sequel=(lit("the"), ref("n2"), lit("stays"), lit("near"), lit("the"), ref("n1")),
        ),
        Template(
            name="count", intent="count",
            pattern=(lit("the"), slot("noun", "n1"), lit("counts"), slot("num", "m1"),
                     lit("and"), slot("num", "m2")),
            sequel=(lit("then"), lit("the"), ref("n1"), lit("counts"), ref("m2"), lit("again")),
        ),
        Template(
            name="ask", intent="ask",
            pattern=(lit("how"), lit("many"), slot("noun", "n1"), slot("verb", "v1"),
                     lit("today")),
            sequel=(lit("some"), ref("n1"), ref("v1"), lit("today")),
        ),
    )
    return ToyGrammar(templates=templates, lexicon=lexicon, seed=seed,
                      rewrite_pairs=rewrite_pairs)
