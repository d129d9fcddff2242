"""Adaptive-moment gradient descent with explicit, serializable state.

Written out by hand (rather than torch.optim) so the whole optimizer state
is a flat dict of float32 arrays: save, load, continue is bit-exact.
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import DataError


class Adam:
    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    @torch.no_grad()
    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        bc1 = 1 - b1 ** self.t
        bc2 = 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            denom = (v / bc2).sqrt().add_(self.eps)
            p.addcdiv_(m, denom, value=-self.lr / bc1)

    def state_arrays(self, prefix: str = "adam") -> dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.array([self.t], dtype=np.float32)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}.m.{i}"] = m.detach().cpu().numpy()
            out[f"{prefix}.v.{i}"] = v.detach().cpu().numpy()
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "adam") -> None:
        self.t = int(arrays[f"{prefix}.t"][0])
        for i, p in enumerate(self.params):
            m = arrays[f"{prefix}.m.{i}"]
            v = arrays[f"{prefix}.v.{i}"]
            if m.shape != tuple(p.shape) or v.shape != tuple(p.shape):
                raise DataError(
                    f"optimizer state {prefix}.*.{i} has shape {m.shape}, "
                    f"parameter has {tuple(p.shape)}")
            self.m[i] = torch.from_numpy(m.copy()).to(p.dtype)
            self.v[i] = torch.from_numpy(v.copy()).to(p.dtype)
