"""AdamW over the encoder's two parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..encoder import Checkpoint, EncoderParams


@dataclass(frozen=True)
class AdamW:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")

    def _one(self, p, grad, m, v, t):
        p = p * (1.0 - self.lr * self.weight_decay)
        m = self.beta1 * m + (1.0 - self.beta1) * grad
        v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
        m_hat = m / (1.0 - self.beta1**t)
        v_hat = v / (1.0 - self.beta2**t)
        return p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps), m, v

    def step(self, ck: Checkpoint, grad_g: np.ndarray, grad_l: np.ndarray) -> Checkpoint:
        """Return a new checkpoint one step further; ``ck`` is left untouched."""
        t = ck.step + 1
        g, m_g, v_g = self._one(ck.params.g, grad_g, ck.m_g, ck.v_g, t)
        l, m_l, v_l = self._one(ck.params.l, grad_l, ck.m_l, ck.v_l, t)
        params = EncoderParams(g, l, ck.params.fingerprint)
        return Checkpoint(params, m_g, m_l, v_g, v_l, t, ck.seed, ck.config_hash, dict(ck.extra))
