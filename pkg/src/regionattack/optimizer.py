"""Projected sign ascent with momentum smoothing.

One attack iteration is: blend the fresh gradient estimate into the
running momentum tensor, move every pixel by +/- gamma according to the
momentum's sign, project back onto [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import clip01


@dataclass
class OptimizerState:
    """Momentum buffer plus step hyperparameters.

    eta is the momentum factor (0 = no memory, 1 = frozen), gamma the
    per-step pixel magnitude. momentum_g starts at zero so the first
    update is just (1 - eta) times the first gradient.
    """

    eta: float
    gamma: float
    momentum_g: np.ndarray = None
    step_count: int = 0

    def __post_init__(self):
        if not (0.0 <= self.eta <= 1.0):
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not (self.gamma > 0.0):
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    def momentum_update(self, grad_g):
        """Blend a new gradient in: g_t = eta * g_{t-1} + (1 - eta) * grad."""
        grad_g = np.asarray(grad_g, dtype=np.float64)
        if self.momentum_g is None:
            self.momentum_g = np.zeros_like(grad_g)
        if self.momentum_g.shape != grad_g.shape:
            raise ValueError(
                f"gradient shape {grad_g.shape} does not match momentum {self.momentum_g.shape}"
            )
        self.momentum_g = self.eta * self.momentum_g + (1.0 - self.eta) * grad_g
        self.step_count += 1
        return self.momentum_g


def ascent_step(x, g, gamma):
    """Move by gamma along sign(g) and project onto the unit box; sign(0) = 0."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if x.shape != g.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {g.shape}")
    return clip01(x + gamma * np.sign(g))
