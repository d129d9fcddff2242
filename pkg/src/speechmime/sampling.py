"""Token sampling: greedy decoding and nucleus (top-p) sampling.

Probability work happens in float64 numpy so the sampled distribution is
reproducible and independent of torch internals. Ties break toward the
lowest token id in both modes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, NumericError
from .model import (Connector, EmbeddedSequence, MixedSequence, SpeechEncoder,
                    TinyLM, embed_sequence)
from .tokenizer import EOS

_EPS = 1e-12


@dataclass(frozen=True)
class GenerationConfig:
    max_new_tokens: int = 100
    temperature: float = 0.7
    top_p: float = 0.85
    greedy: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.max_new_tokens < 0:
            raise ConfigError("max_new_tokens must be >= 0")
        if not self.greedy and self.temperature <= 0:
            raise ConfigError("temperature must be > 0 for sampling")
        if not 0 < self.top_p <= 1:
            raise ConfigError("top_p must lie in (0, 1]")


def top_p_distribution(logits: np.ndarray, temperature: float, top_p: float) -> np.ndarray:
    """Renormalized distribution over the nucleus; zero elsewhere.

    The nucleus is the smallest prefix of tokens, sorted by descending
    probability (lowest id first among equals), whose cumulative mass
    reaches top_p.
    """
    z = np.asarray(logits, dtype=np.float64) / temperature
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logits in sampler")
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    order = np.lexsort((np.arange(p.size), -p))
    csum = np.cumsum(p[order])
    k = int(np.searchsorted(csum, top_p - _EPS)) + 1
    keep = order[:k]
    out = np.zeros_like(p)
    out[keep] = p[keep]
    out /= out.sum()
    return out


def greedy_pick(logits: np.ndarray) -> int:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logits in sampler")
    return int(np.argmax(z))


def sample_next(logits: np.ndarray, cfg: GenerationConfig,
                rng: np.random.Generator | None) -> int:
    if cfg.greedy:
        return greedy_pick(logits)
    if rng is None:
        raise ConfigError("nucleus sampling needs a random generator")
    probs = top_p_distribution(logits, cfg.temperature, cfg.top_p)
    return int(rng.choice(probs.size, p=probs))


@dataclass
class Generation:
    token_ids: list[int]
    stopped_by: str  # "eos" | "max_tokens" | "context"

    @property
    def truncated(self) -> bool:
        return self.stopped_by != "eos"


def generate(lm: TinyLM, encoder: SpeechEncoder, connector: Connector,
             prefix: MixedSequence, cfg: GenerationConfig,
             rng: np.random.Generator | None = None) -> Generation:
    """Autoregressive continuation of an embedded prefix.

    EOS terminates and is not included in token_ids. Running out of budget
    or of model context is recorded in stopped_by instead of raising.
    """
    if rng is None and not cfg.greedy:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed])))
    with torch.no_grad():
        embedded: EmbeddedSequence = embed_sequence(prefix, lm, encoder, connector)
        x = embedded.embeddings
        out: list[int] = []
        stopped_by = "max_tokens"
        for _ in range(cfg.max_new_tokens):
            if x.shape[0] > lm.cfg.context:
                stopped_by = "context"
                break
            logits = lm(x)[-1].numpy()
            nxt = sample_next(logits, cfg, rng)
            if nxt == EOS:
                stopped_by = "eos"
                break
            out.append(nxt)
            x = torch.cat([x, lm.tok_emb.weight[nxt].unsqueeze(0)], dim=0)
        return Generation(token_ids=out, stopped_by=stopped_by)
