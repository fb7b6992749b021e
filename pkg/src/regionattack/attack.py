"""Targeted attack loops, full- and partial-information, plus run metrics.

Full information: estimate the search gradient of the target's softmax
probability over a tiled region, blend into momentum, take a projected
sign step, check the argmax, repeat. Partial information: first expel
the initially dominant label from the visible top-k (gradient descent on
its score), then promote a label picked from the survivors, shrinking
the step size whenever it would fall back out of the list.

Budget handling is strict: a run never starts an iteration it cannot
afford, so the reported query count stays at or under the configured
budget even on failure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_image, gray_image, l2_distortion, linf_distortion, prediction_entropy
from .distributions import GAUSSIAN, LAPLACE, SearchDistribution, derive_seed
from .gradient import estimate_with_fitness
from .optimizer import OptimizerState, ascent_step
from .oracle import BudgetExceededError, query_full, query_topk
from .size_select import SizeSelectionConfig, select_region_size

__all__ = [
    "AttackConfig", "AttackResult", "TrajectoryRecord", "MetricsSummary",
    "attack_full_info", "attack_partial_info", "compute_metrics",
    "default_size_candidates", "gray_image",
]

DEFAULT_SIGMA = 0.1
DEFAULT_B = 0.1

SUCCESS = "success"
BUDGET_EXCEEDED = "budget_exceeded"
MAX_ITER_REACHED = "max_iter_reached"
GAMMA_UNDERFLOW = "gamma_underflow"


@dataclass(frozen=True)
class AttackConfig:
    """Everything one attack run needs besides the image and the oracle.

    target is a class id (full mode) or a label (partial mode); None in
    partial mode promotes the lowest-ranked visible label. distribution
    None picks the mode default: Gaussian sigma 0.1 for full information,
    Laplace b 0.1 for partial. region None means the whole image unless
    auto_size warms up a choice first (full mode only).
    """

    query_budget: int
    target: object = None
    max_iter: int = 1_000_000
    n: int = 20
    distribution: SearchDistribution | None = None
    region: tuple | None = None
    auto_size: bool = False
    size_config: SizeSelectionConfig | None = None
    eta: float = 0.4
    gamma: float = 0.01
    k: int = 5
    confidence: float = 0.5
    seed: int = 0
    gamma_floor: float = 1e-6
    max_halvings: int = 20

    def __post_init__(self):
        if self.query_budget < 1:
            raise ValueError(f"query budget must be positive, got {self.query_budget}")
        if self.n < 2 or self.n % 2:
            raise ValueError(f"batch size must be even and >= 2, got {self.n}")
        if not (0.0 < self.confidence < 1.0):
            raise ValueError(f"confidence must lie in (0, 1), got {self.confidence}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be positive, got {self.max_iter}")
        if not (0.0 <= self.eta <= 1.0):
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not (self.gamma > 0.0):
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if self.region is not None:
            object.__setattr__(self, "region", tuple(int(d) for d in self.region))
            if len(self.region) != 2 or any(d < 1 for d in self.region):
                raise ValueError(f"region must be a positive (h, w) pair, got {self.region}")
        if self.auto_size and self.region is not None:
            raise ValueError("give either a fixed region or auto_size, not both")
        if not (self.gamma_floor > 0.0):
            raise ValueError(f"gamma floor must be positive, got {self.gamma_floor}")
        if self.max_halvings < 0:
            raise ValueError(f"max halvings must be >= 0, got {self.max_halvings}")


@dataclass(frozen=True)
class TrajectoryRecord:
    """One attack step: what it cost and what the oracle said afterwards.

    entropy is None in partial mode (the full vector is invisible there);
    target_rank is None in full mode and in partial stage 1, where no
    promotion target exists yet.
    """

    iter: int
    queries_so_far: int
    fitness: float
    entropy: float | None
    gamma: float
    target_rank: int | None = None

    def to_dict(self):
        d = {
            "iter": self.iter,
            "queries_so_far": self.queries_so_far,
            "fitness": self.fitness,
            "entropy": self.entropy,
            "gamma": self.gamma,
        }
        if self.target_rank is not None:
            d["target_rank"] = self.target_rank
        return d


@dataclass(frozen=True)
class AttackResult:
    """Outcome of one attack run.

    queries equals the ledger delta for the run and never exceeds the
    configured budget. status is one of success / budget_exceeded /
    max_iter_reached / gamma_underflow; diagnostic carries an optional
    human-readable note on structurally hopeless configurations.
    """

    success: bool
    status: str
    queries: int
    iterations: int
    final_image: np.ndarray
    l2: float
    linf: float
    trajectory: tuple = ()
    stages: tuple | None = None
    size_report: object = None
    diagnostic: str | None = None

    def to_dict(self):
        d = {
            "success": self.success,
            "status": self.status,
            "queries": self.queries,
            "iterations": self.iterations,
            "l2": self.l2,
            "linf": self.linf,
        }
        if self.stages is not None:
            d["stages"] = list(self.stages)
        if self.diagnostic is not None:
            d["diagnostic"] = self.diagnostic
        return d


@dataclass(frozen=True)
class MetricsSummary:
    """Success rate over all attempts; query/distortion averages over successes."""

    attempts: int
    successes: int
    success_rate: float
    q_avg: float | None
    l2_avg: float | None
    linf_avg: float | None

    def to_dict(self):
        return {
            "attempts": self.attempts,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "q_avg": self.q_avg,
            "l2_avg": self.l2_avg,
            "linf_avg": self.linf_avg,
        }


def default_size_candidates(height, width):
    """Powers of two up to the short image side, plus the side itself."""
    m = min(height, width)
    if m >= 256:
        return (32, 64, 128, 256)
    cands = []
    c = 2
    while c < m:
        cands.append(c)
        c *= 2
    cands.append(m)
    return tuple(cands)


def attack_full_info(x0, model, cfg, ledger):
    """Drive the oracle's argmax to cfg.target from x0; see module docstring.

    The target class is checked once up front (the degenerate
    already-classified case) and once after every step. The loop stops as
    soon as the next iteration's n + 1 queries would pass the budget.
    """
    x0 = as_image(x0)
    if not getattr(model, "supports_full", False):
        raise ValueError("full-information attack needs a full-probability oracle")
    if cfg.target is None:
        raise ValueError("full-information attack needs an explicit target class")
    target = int(cfg.target)
    classes = getattr(model, "classes", None)
    if classes is not None and not (0 <= target < classes):
        raise ValueError(f"target {target} out of range for {classes} classes")

    height, width, _ = x0.shape
    dist = cfg.distribution or SearchDistribution(GAUSSIAN, DEFAULT_SIGMA)
    start = ledger.total
    spent = lambda: ledger.total - start
    trajectory = []
    size_report = None
    x = x0
    success = False
    status = MAX_ITER_REACHED

    try:
        p = query_full(model, x0, ledger, "check")
        if int(np.argmax(p)) == target:
            success, status = True, SUCCESS
        else:
            if cfg.auto_size:
                scfg = cfg.size_config or SizeSelectionConfig(
                    candidates=default_size_candidates(height, width), seed=cfg.seed
                )
                cost = 0
                if len(scfg.candidates) > 1:
                    cost = scfg.resolved_iters() * (scfg.warmup_batch + 1) * len(scfg.candidates)
                if spent() + cost > cfg.query_budget:
                    status = BUDGET_EXCEEDED
                else:
                    size_report = select_region_size(x0, target, model, scfg, ledger)
                    region = (size_report.chosen, size_report.chosen)
            elif cfg.region is not None:
                region = cfg.region
            else:
                region = (height, width)

            if status != BUDGET_EXCEEDED:
                x = x0.copy()
                state = OptimizerState(eta=cfg.eta, gamma=cfg.gamma)
                fitness = lambda im: query_full(model, im, ledger, "gradient")[target]
                for t in range(1, cfg.max_iter + 1):
                    if spent() + cfg.n + 1 > cfg.query_budget:
                        status = BUDGET_EXCEEDED
                        break
                    est = estimate_with_fitness(
                        x, fitness, cfg.n, dist, region, derive_seed(cfg.seed, t)
                    )
                    g = state.momentum_update(est.g)
                    x = ascent_step(x, g, cfg.gamma)
                    p = query_full(model, x, ledger, "check")
                    trajectory.append(TrajectoryRecord(
                        iter=t,
                        queries_so_far=spent(),
                        fitness=est.fitness_mean,
                        entropy=prediction_entropy(p),
                        gamma=cfg.gamma,
                    ))
                    if int(np.argmax(p)) == target:
                        success, status = True, SUCCESS
                        break
    except BudgetExceededError:
        # an externally capped ledger ran dry mid-flight
        status = BUDGET_EXCEEDED

    return AttackResult(
        success=success,
        status=status,
        queries=spent(),
        iterations=len(trajectory),
        final_image=x,
        l2=l2_distortion(x, x0),
        linf=linf_distortion(x, x0),
        trajectory=tuple(trajectory),
        size_report=size_report,
    )


def attack_partial_info(x0, model, cfg, ledger):
    """Two-stage top-k attack; see module docstring.

    Stage 1 treats the oracle as a binary classifier for the initially
    dominant label y0 (the model's designated non-object label when it
    has one, else the top-1 on x0) and descends its score until it leaves
    the top-k; skipped when y0 is not visible to begin with. Stage 2
    ascends the chosen target's score, reverting any step that knocks the
    target out of the list and halving gamma before retrying; success
    means rank 1 with score above cfg.confidence.
    """
    x0 = as_image(x0)
    if not getattr(model, "supports_topk", False):
        raise ValueError("partial-information attack needs a top-k oracle")
    if cfg.k < 2:
        raise ValueError(f"partial mode needs k >= 2, got {cfg.k}")
    if cfg.auto_size:
        raise ValueError("size selection reads full vectors; set region explicitly in partial mode")

    height, width, _ = x0.shape
    dist = cfg.distribution or SearchDistribution(LAPLACE, DEFAULT_B)
    region = cfg.region if cfg.region is not None else (height, width)
    start = ledger.total
    spent = lambda: ledger.total - start
    trajectory = []
    stages = []
    diagnostic = None
    x = x0.copy()
    success = False
    status = MAX_ITER_REACHED
    it = 0  # gradient estimates across both stages, bounded by max_iter
    rec = 0  # trajectory records (stage-2 retries each get one)

    try:
        current = query_topk(model, x0, cfg.k, ledger, "check")
        classes = getattr(model, "classes", None)
        if classes is not None and cfg.k >= classes:
            diagnostic = (
                f"k={cfg.k} covers all {classes} classes, so no label can ever "
                "leave the top-k; stage 1 cannot succeed"
            )

        # stage 1: expel y0 from the visible list
        non_object = getattr(model, "non_object", None)
        y0 = non_object if non_object is not None else (
            current.entries[0][0] if current.entries else None
        )
        if y0 is None or current.rank(y0) is None:
            stages.append({"stage": 1, "skipped": True, "expelled": None,
                           "iterations": 0, "queries": spent()})
        else:
            s1_q0, s1_it0 = spent(), it
            state1 = OptimizerState(eta=cfg.eta, gamma=cfg.gamma)
            fitness1 = lambda im: -query_topk(model, im, cfg.k, ledger, "gradient").score(y0)
            expelled = False
            while it < cfg.max_iter:
                if spent() + cfg.n + 1 > cfg.query_budget:
                    status = BUDGET_EXCEEDED
                    break
                it += 1
                est = estimate_with_fitness(
                    x, fitness1, cfg.n, dist, region, derive_seed(cfg.seed, it)
                )
                g = state1.momentum_update(est.g)
                x = ascent_step(x, g, cfg.gamma)
                current = query_topk(model, x, cfg.k, ledger, "check")
                rec += 1
                trajectory.append(TrajectoryRecord(
                    iter=rec, queries_so_far=spent(), fitness=est.fitness_mean,
                    entropy=None, gamma=cfg.gamma,
                ))
                if current.rank(y0) is None:
                    expelled = True
                    break
            stages.append({"stage": 1, "skipped": False,
                           "expelled": y0 if expelled else None,
                           "iterations": it - s1_it0, "queries": spent() - s1_q0})
            if not expelled:
                raise _StageFailed

        # stage 2: promote a surviving label to confident rank 1
        if not current.entries:
            diagnostic = "top-k list is empty after stage 1; nothing to promote"
            raise _StageFailed
        if cfg.target is not None:
            y_prime = cfg.target
            if current.rank(y_prime) is None:
                raise ValueError(f"explicit target {y_prime!r} is not in the current top-{cfg.k}")
        else:
            y_prime = current.entries[-1][0]

        s2_q0, s2_it0 = spent(), it
        gamma = cfg.gamma
        halvings = 0
        state2 = OptimizerState(eta=cfg.eta, gamma=gamma)
        fitness2 = lambda im: query_topk(model, im, cfg.k, ledger, "gradient").score(y_prime)
        if current.rank(y_prime) == 1 and current.score(y_prime) > cfg.confidence:
            success, status = True, SUCCESS
        while not success and it < cfg.max_iter:
            if spent() + cfg.n + 1 > cfg.query_budget:
                status = BUDGET_EXCEEDED
                break
            it += 1
            est = estimate_with_fitness(
                x, fitness2, cfg.n, dist, region, derive_seed(cfg.seed, it)
            )
            g = state2.momentum_update(est.g)
            accepted = False
            while True:  # line search: keep the target inside the top-k
                if spent() + 1 > cfg.query_budget:
                    status = BUDGET_EXCEEDED
                    break
                x_try = ascent_step(x, g, gamma)
                probe = query_topk(model, x_try, cfg.k, ledger, "check")
                rank = probe.rank(y_prime)
                rec += 1
                trajectory.append(TrajectoryRecord(
                    iter=rec, queries_so_far=spent(), fitness=est.fitness_mean,
                    entropy=None, gamma=gamma, target_rank=rank,
                ))
                if rank is not None:
                    x, current, accepted = x_try, probe, True
                    state2.gamma = gamma
                    break
                halvings += 1
                if halvings > cfg.max_halvings or gamma / 2.0 < cfg.gamma_floor:
                    status = GAMMA_UNDERFLOW
                    break
                gamma /= 2.0
            if status in (BUDGET_EXCEEDED, GAMMA_UNDERFLOW):
                break
            if accepted and current.rank(y_prime) == 1 and current.score(y_prime) > cfg.confidence:
                success, status = True, SUCCESS
        stages.append({"stage": 2, "target": y_prime,
                       "iterations": it - s2_it0, "queries": spent() - s2_q0})
    except _StageFailed:
        pass
    except BudgetExceededError:
        status = BUDGET_EXCEEDED

    return AttackResult(
        success=success,
        status=status,
        queries=spent(),
        iterations=it,
        final_image=x,
        l2=l2_distortion(x, x0),
        linf=linf_distortion(x, x0),
        trajectory=tuple(trajectory),
        stages=tuple(stages),
        diagnostic=diagnostic,
    )


class _StageFailed(Exception):
    """Internal: aborts the partial attack keeping the current status."""


def compute_metrics(results):
    """Summarize runs: rate over all, queries and distortions over successes."""
    results = list(results)
    if not results:
        raise ValueError("cannot summarize an empty result list")
    succ = [r for r in results if r.success]
    mean = lambda vals: float(np.mean(vals)) if vals else None
    return MetricsSummary(
        attempts=len(results),
        successes=len(succ),
        success_rate=len(succ) / len(results),
        q_avg=mean([r.queries for r in succ]),
        l2_avg=mean([r.l2 for r in succ]),
        linf_avg=mean([r.linf for r in succ]),
    )
