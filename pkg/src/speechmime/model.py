"""Three-block architecture at toy scale.

Frozen speech encoder (per-frame linear + one stride-1 conv), trainable
convolutional subsampler connector (two stride-2 convs + projection,
overall factor 4), and a frozen decoder-only language model. All weights
are initialized from numpy generators so a model is a pure function of
(config, seed); torch supplies the math and autograd only.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import ContextOverflowError, DataError, SealedModelError
from .synth import SpeechFeatures
from .tokenizer import BOS, EOS, SEP, SPEECH_GAP, Tokenizer

ROLE_PROMPT = "prompt"
ROLE_INPUT = "input"
ROLE_TARGET = "target"
ROLES = (ROLE_PROMPT, ROLE_INPUT, ROLE_TARGET)


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, tag])))


def _normal(rng, shape, std=0.02):
    return torch.from_numpy((rng.standard_normal(shape) * std).astype(np.float32))


def param_checksum(module: nn.Module) -> str:
    """SHA-256 over named parameters, canonicalized to little-endian float32."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode("utf-8"))
        h.update(b"\0")
        arr = tensor.detach().cpu().numpy().astype("<f4")
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


class SpeechEncoder(nn.Module):
    """Frozen per-frame linear map followed by one stride-1 conv (length preserving)."""

    def __init__(self, d_feat: int = 16, d_enc: int = 32, seed: int = 0):
        super().__init__()
        self.d_feat = d_feat
        self.d_enc = d_enc
        rng = _rng(seed, 0xE4C)
        self.lin = nn.Linear(d_feat, d_enc)
        self.conv = nn.Conv1d(d_enc, d_enc, kernel_size=3, stride=1, padding=1)
        with torch.no_grad():
            self.lin.weight.copy_(_normal(rng, (d_enc, d_feat), std=1.0 / math.sqrt(d_feat)))
            self.lin.bias.copy_(_normal(rng, (d_enc,)))
            self.conv.weight.copy_(_normal(rng, (d_enc, d_enc, 3), std=1.0 / math.sqrt(3 * d_enc)))
            self.conv.bias.copy_(_normal(rng, (d_enc,)))
        self.requires_grad_(False)

    def forward(self, features: SpeechFeatures) -> torch.Tensor:
        frames = torch.as_tensor(np.asarray(features.frames), dtype=self.lin.weight.dtype)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise DataError("speech features must be a non-empty [T, d_feat] matrix")
        x = torch.tanh(self.lin(frames))
        x = self.conv(x.T.unsqueeze(0)).squeeze(0).T
        return torch.tanh(x)


def subsampled_length(t: int) -> int:
    return math.ceil(math.ceil(t / 2) / 2)


class Connector(nn.Module):
    """Trainable subsampler: two stride-2 convs then a projection to d_model."""

    subsample_factor = 4

    def __init__(self, d_enc: int = 32, d_model: int = 64, hidden: int = 128, seed: int = 0):
        super().__init__()
        self.d_enc = d_enc
        self.d_model = d_model
        rng = _rng(seed, 0xC0)
        self.conv1 = nn.Conv1d(d_enc, hidden, kernel_size=3, stride=2, padding=1)
        self.conv2 = nn.Conv1d(hidden, hidden, kernel_size=3, stride=2, padding=1)
        self.proj = nn.Linear(hidden, d_model)
        with torch.no_grad():
            self.conv1.weight.copy_(_normal(rng, (hidden, d_enc, 3), std=1.0 / math.sqrt(3 * d_enc)))
            self.conv1.bias.zero_()
            self.conv2.weight.copy_(_normal(rng, (hidden, hidden, 3), std=1.0 / math.sqrt(3 * hidden)))
            self.conv2.bias.zero_()
            self.proj.weight.copy_(_normal(rng, (d_model, hidden), std=1.0 / math.sqrt(hidden)))
            self.proj.bias.zero_()

    def forward(self, states: torch.Tensor) -> torch.Tensor:
        if states.ndim != 2 or states.shape[0] < 1:
            raise DataError("encoder states must be a non-empty [T, d_enc] matrix")
        x = states.T.unsqueeze(0)
        x = torch.nn.functional.gelu(self.conv1(x))
        x = torch.nn.functional.gelu(self.conv2(x))
        x = x.squeeze(0).T
        return self.proj(x)


@dataclass(frozen=True)
class LMConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    context: int = 256

    @property
    def d_ff(self) -> int:
        return 4 * self.d_model


class _Block(nn.Module):
    def __init__(self, cfg: LMConfig, rng):
        super().__init__()
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.ln1 = nn.LayerNorm(d)
        self.ln2 = nn.LayerNorm(d)
        self.qkv = nn.Linear(d, 3 * d)
        self.attn_out = nn.Linear(d, d)
        self.ff1 = nn.Linear(d, cfg.d_ff)
        self.ff2 = nn.Linear(cfg.d_ff, d)
        with torch.no_grad():
            for lin in (self.qkv, self.attn_out, self.ff1, self.ff2):
                fan_in = lin.weight.shape[1]
                lin.weight.copy_(_normal(rng, tuple(lin.weight.shape), std=1.0 / math.sqrt(fan_in)))
                lin.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        length, d = x.shape
        h = self.ln1(x)
        qkv = self.qkv(h).view(length, 3, self.n_heads, d // self.n_heads)
        q, k, v = qkv[:, 0], qkv[:, 1], qkv[:, 2]
        scores = torch.einsum("qhd,khd->hqk", q, k) / math.sqrt(d // self.n_heads)
        mask = torch.triu(torch.ones(length, length, dtype=torch.bool, device=x.device), diagonal=1)
        scores = scores.masked_fill(mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        ctx = torch.einsum("hqk,khd->qhd", attn, v).reshape(length, d)
        x = x + self.attn_out(ctx)
        x = x + self.ff2(torch.nn.functional.gelu(self.ff1(self.ln2(x))))
        return x


class TinyLM(nn.Module):
    """Decoder-only causal LM; sealed after pretraining, frozen thereafter."""

    def __init__(self, cfg: LMConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = _rng(seed, 0x71)
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_emb = nn.Embedding(cfg.context, cfg.d_model)
        self.blocks = nn.ModuleList(_Block(cfg, rng) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, cfg.vocab_size)
        with torch.no_grad():
            self.tok_emb.weight.copy_(_normal(rng, (cfg.vocab_size, cfg.d_model)))
            self.pos_emb.weight.copy_(_normal(rng, (cfg.context, cfg.d_model)))
            self.head.weight.copy_(_normal(rng, (cfg.vocab_size, cfg.d_model),
                                           std=1.0 / math.sqrt(cfg.d_model)))
            self.head.bias.zero_()
        self._sealed = False

    @property
    def sealed(self) -> bool:
        return self._sealed

    def seal(self) -> None:
        self.requires_grad_(False)
        self._sealed = True

    def writable_parameters(self):
        """Parameters for an optimizer; refuses once the model is sealed."""
        if self._sealed:
            raise SealedModelError("TinyLM is sealed; its parameters are immutable")
        return list(self.parameters())

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        """Next-token logits [L, V] for token-level embeddings [L, d_model].

        Positional embeddings are added here, so callers pass bare token or
        connector embeddings.
        """
        length = embeddings.shape[0]
        if length > self.cfg.context:
            raise ContextOverflowError(
                f"sequence length {length} exceeds context {self.cfg.context}; "
                "truncate the prefix before calling the model"
            )
        x = embeddings + self.pos_emb.weight[:length]
        for block in self.blocks:
            x = block(x)
        return self.head(self.ln_f(x))


@dataclass(frozen=True)
class TextSegment:
    ids: tuple[int, ...]
    role: str = ROLE_PROMPT

    def __post_init__(self):
        if self.role not in ROLES:
            raise DataError(f"unknown role {self.role!r}")


@dataclass(frozen=True)
class SpeechSegment:
    features: SpeechFeatures
    role: str = ROLE_INPUT

    def __post_init__(self):
        if self.role not in ROLES:
            raise DataError(f"unknown role {self.role!r}")


Segment = TextSegment | SpeechSegment


@dataclass(frozen=True)
class MixedSequence:
    """Ordered text/speech segments; the universal model-input representation."""

    segments: tuple[Segment, ...]

    def __post_init__(self):
        if not self.segments:
            raise DataError("MixedSequence needs at least one segment")

    def speech_segments(self) -> list[SpeechSegment]:
        return [s for s in self.segments if isinstance(s, SpeechSegment)]

    def final_length(self) -> int:
        """Number of embedded positions after connector subsampling."""
        total = 0
        for seg in self.segments:
            if isinstance(seg, TextSegment):
                total += len(seg.ids)
            else:
                total += subsampled_length(seg.features.num_frames)
        return total


@dataclass
class EmbeddedSequence:
    embeddings: torch.Tensor
    roles: list[str]
    token_ids: list[int]  # SPEECH_GAP at speech positions


def embed_sequence(seq: MixedSequence, lm: TinyLM, encoder: SpeechEncoder,
                   connector: Connector) -> EmbeddedSequence:
    """Embed text via the LM table and speech via encoder + connector, in order."""
    parts = []
    roles: list[str] = []
    token_ids: list[int] = []
    vocab_size = lm.cfg.vocab_size
    for seg in seq.segments:
        if isinstance(seg, TextSegment):
            for i in seg.ids:
                if not 0 <= i < vocab_size:
                    raise DataError(f"unknown token id {i} (vocab size {vocab_size})")
            idx = torch.as_tensor(seg.ids, dtype=torch.long)
            parts.append(lm.tok_emb.weight[idx])
            roles.extend([seg.role] * len(seg.ids))
            token_ids.extend(seg.ids)
        else:
            z = connector(encoder(seg.features))
            parts.append(z)
            roles.extend([seg.role] * z.shape[0])
            token_ids.extend([SPEECH_GAP] * z.shape[0])
    return EmbeddedSequence(embeddings=torch.cat(parts, dim=0), roles=roles,
                            token_ids=token_ids)


def lm_forward(lm: TinyLM, embedded: EmbeddedSequence) -> torch.Tensor:
    return lm(embedded.embeddings)


def prompt_segments(tok: Tokenizer, system_prompt: str, task_prompt: str) -> list[Segment]:
    """[BOS] system [SEP] task_prompt [SEP], all labeled prompt."""
    ids = [BOS, *tok.encode(system_prompt), SEP, *tok.encode(task_prompt), SEP]
    return [TextSegment(ids=tuple(ids), role=ROLE_PROMPT)]

def build_prefix(tok: Tokenizer, system_prompt: str, task_prompt: str,
                 input_segments: list[Segment]) -> MixedSequence:
    """Prompt, then the input segments, closed by a SEP in the input role."""
    segs = prompt_segments(tok, system_prompt, task_prompt)
    segs.extend(input_segments)
    segs.append(TextSegment(ids=(SEP,), role=ROLE_INPUT))
    return MixedSequence(segments=tuple(segs))


def build_full(tok: Tokenizer, system_prompt: str, task_prompt: str,
               input_segments: list[Segment], target_ids: list[int]) -> MixedSequence:
    """Full training layout: prefix + target tokens + EOS, target-labeled."""
    prefix = build_prefix(tok, system_prompt, task_prompt, input_segments)
    target = TextSegment(ids=tuple([*target_ids, EOS]), role=ROLE_TARGET)
    return MixedSequence(segments=tuple([*prefix.segments, target]))


def text_input_segments(tok: Tokenizer, text: str) -> list[Segment]:
    return [TextSegment(ids=tuple(tok.encode(text)), role=ROLE_INPUT)]


def speech_input_segments(features: SpeechFeatures) -> list[Segment]:
    return [SpeechSegment(features=features, role=ROLE_INPUT)]
