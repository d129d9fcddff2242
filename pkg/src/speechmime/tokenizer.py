"""Word-level tokenizer with character-piece fallback.

Specials come first (ids 0..4), then single-character pieces and their
"##"-prefixed continuation variants, then whole words sorted. Known words
encode to one id; anything else decomposes into character pieces, so any
ASCII string round-trips. The vocabulary file is line-oriented
"token<TAB>id", specials first.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError

SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<sep>", "<gap>")
PAD, BOS, EOS, SEP, SPEECH_GAP = range(5)

_PIECE_CHARS = string.ascii_letters + string.digits + string.punctuation
CONT_PREFIX = "##"


@dataclass(frozen=True)
class Tokenizer:
    vocab: dict[str, int]

    def __post_init__(self):
        for i, tok in enumerate(SPECIAL_TOKENS):
            if self.vocab.get(tok) != i:
                raise DataError(f"special token {tok!r} must have id {i}")
        ids = list(self.vocab.values())
        if len(set(ids)) != len(ids):
            raise DataError("duplicate ids in vocabulary")

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def id_to_token(self) -> dict[int, str]:
        return {i: t for t, i in self.vocab.items()}

    def encode_word(self, word: str) -> list[int]:
        if word in self.vocab:
            return [self.vocab[word]]
        ids = []
        for k, ch in enumerate(word):
            piece = ch if k == 0 else CONT_PREFIX + ch
            if piece not in self.vocab:
                raise DataError(f"cannot encode character {ch!r} in word {word!r}")
            ids.append(self.vocab[piece])
        return ids

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for word in text.split():
            ids.extend(self.encode_word(word))
        return ids

    def decode(self, ids: list[int]) -> str:
        rev = self.id_to_token
        words: list[str] = []
        for i in ids:
            tok = rev.get(int(i))
            if tok is None:
                raise DataError(f"unknown token id {i}")
            if tok in SPECIAL_TOKENS:
                continue
            if tok.startswith(CONT_PREFIX) and len(tok) == len(CONT_PREFIX) + 1 and words:
                words[-1] += tok[len(CONT_PREFIX):]
            else:
                words.append(tok)
        return " ".join(words)

    def save(self, path, header: dict | None = None) -> None:
        # Header lines are "# key=value"; a real "#" token line is "#<TAB>id",
        # so the leading "# " prefix cannot collide with vocabulary entries.
        lines = [f"# {k}={v}" for k, v in (header or {}).items()]
        lines += [f"{tok}\t{idx}" for tok, idx in sorted(self.vocab.items(), key=lambda kv: kv[1])]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Tokenizer":
        vocab: dict[str, int] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if not line or line.startswith("# "):
                continue
            try:
                tok, idx = line.split("\t")
                vocab[tok] = int(idx)
            except ValueError as e:
                raise DataError(f"{path}: malformed vocab line {lineno}") from e
        return cls(vocab=vocab)


def build_tokenizer(texts) -> Tokenizer:
    """Vocabulary over whitespace tokens of `texts` plus the char-piece inventory."""
    vocab: dict[str, int] = {tok: i for i, tok in enumerate(SPECIAL_TOKENS)}
    for ch in _PIECE_CHARS:
        vocab[ch] = len(vocab)
    for ch in _PIECE_CHARS:
        vocab[CONT_PREFIX + ch] = len(vocab)
    words = set()
    for text in texts:
        words.update(text.split())
    for word in sorted(words):
        if word not in vocab:
            vocab[word] = len(vocab)
    return Tokenizer(vocab=vocab)
