"""Warm-up selection of the region size via entropy variation.

Each candidate size gets a short, equally budgeted burst of the real
attack loop starting from a fresh copy of the image. The prediction
entropy (sum p ln p, a non-positive number) is recorded after every
step; a size that is actually making progress drives the entropy down
and then up again as mass concentrates on the target, so the variation
delta_h = h_last - min(h_j) separates working sizes from stalled ones.
Warm-up perturbations are discarded; the caller restarts from the
original image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import prediction_entropy
from .distributions import derive_seed
from .gradient import estimate_gradient_gaussian
from .optimizer import OptimizerState, ascent_step
from .oracle import query_full


@dataclass(frozen=True)
class SizeSelectionConfig:
    """Candidate sizes and the warm-up budget split evenly across them.

    Per candidate, one warm-up iteration costs warmup_batch gradient
    queries plus one probe for the entropy reading. warmup_iters=None
    derives the largest iteration count that fits total_budget.
    """

    candidates: tuple
    warmup_batch: int = 10
    warmup_iters: int | None = None
    total_budget: int = 200
    sigma: float = 0.1
    eta: float = 0.4
    gamma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(int(c) for c in self.candidates))
        if not self.candidates:
            raise ValueError("need at least one candidate size")
        if any(c < 1 for c in self.candidates):
            raise ValueError(f"candidate sizes must be positive, got {self.candidates}")
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError(f"duplicate candidate sizes in {self.candidates}")
        if self.warmup_batch < 2 or self.warmup_batch % 2:
            raise ValueError(f"warmup batch must be even and >= 2, got {self.warmup_batch}")
        if self.total_budget < 1:
            raise ValueError(f"total budget must be positive, got {self.total_budget}")
        if self.warmup_iters is not None and self.warmup_iters < 1:
            raise ValueError(f"warmup iterations must be >= 1, got {self.warmup_iters}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if not (self.sigma > 0.0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        # a lone candidate wins by default and spends nothing, so only a
        # real contest needs to fit the budget
        if len(self.candidates) > 1:
            cost = self.resolved_iters() * (self.warmup_batch + 1) * len(self.candidates)
            if cost > self.total_budget:
                raise ValueError(
                    f"{self.warmup_iters} warm-up iterations x ({self.warmup_batch}+1) queries x "
                    f"{len(self.candidates)} candidates exceeds budget {self.total_budget}"
                )

    def resolved_iters(self):
        if self.warmup_iters is not None:
            return self.warmup_iters
        t0 = self.total_budget // ((self.warmup_batch + 1) * len(self.candidates))
        if t0 < 1:
            raise ValueError(
                f"budget {self.total_budget} cannot fund one warm-up iteration for "
                f"{len(self.candidates)} candidates at batch {self.warmup_batch}"
            )
        return t0


@dataclass(frozen=True)
class SizeSelectionReport:
    """Chosen size plus the evidence: per-candidate entropy traces."""

    chosen: int
    variations: dict  # size -> delta_h
    entropies: dict  # size -> entropy after each warm-up step
    warmup_iters: int
    queries: int


def select_region_size(x, target, model, cfg, ledger):
    """Pick the candidate with the largest entropy variation.

    Ties break toward the smaller size (cheaper search space). A single
    candidate is returned immediately without spending any queries.
    """
    if not getattr(model, "supports_full", False):
        raise ValueError("size selection reads full probability vectors; oracle is top-k only")
    height, width = x.shape[0], x.shape[1]
    for c in cfg.candidates:
        if c > min(height, width):
            raise ValueError(f"candidate size {c} does not fit image {height}x{width}")

    if len(cfg.candidates) == 1:
        return SizeSelectionReport(
            chosen=cfg.candidates[0], variations={}, entropies={}, warmup_iters=0, queries=0
        )

    t0 = cfg.resolved_iters()
    start = ledger.total
    variations = {}
    entropies = {}
    for ci, size in enumerate(sorted(cfg.candidates)):
        xc = x.copy()
        state = OptimizerState(eta=cfg.eta, gamma=cfg.gamma)
        trace = []
        for t in range(1, t0 + 1):
            est = estimate_gradient_gaussian(
                xc, target, model, cfg.warmup_batch, cfg.sigma, (size, size), ledger,
                seed=derive_seed(cfg.seed, ci, t), phase="size_select",
            )
            g = state.momentum_update(est.g)
            xc = ascent_step(xc, g, cfg.gamma)
            p = query_full(model, xc, ledger, phase="size_select")
            trace.append(prediction_entropy(p))
        entropies[size] = trace
        variations[size] = trace[-1] - min(trace)

    chosen = None
    best = -np.inf
    for size in sorted(variations):
        if variations[size] > best:
            best = variations[size]
            chosen = size
    return SizeSelectionReport(
        chosen=chosen,
        variations=variations,
        entropies=entropies,
        warmup_iters=t0,
        queries=ledger.total - start,
    )
