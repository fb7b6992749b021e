"""Search-gradient estimation over a tiled region.

The estimator perturbs only a small (h, w, c) block, tiles the block
across the image, and probes the oracle at mirrored pairs x +/- scale *
noise. Because tiling is linear, the weighted sum is accumulated in
region space and tiled once at the end, which makes the full-image
gradient exactly the tiling of the region aggregate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_image, tile_region
from .distributions import GAUSSIAN, LAPLACE, SearchDistribution, sample_antithetic
from .oracle import query_full


@dataclass(frozen=True)
class GradientEstimate:
    """Result of one estimation batch.

    g is the full-image ascent direction, region_g the pre-tiling
    aggregate (g == tile_region(region_g) bitwise), n_used the number of
    oracle evaluations spent, fitness_mean the mean fitness over them.
    """

    g: np.ndarray
    region_g: np.ndarray
    n_used: int
    fitness_mean: float


def _check_args(x, n, region_dims):
    x = as_image(x)
    h, w = region_dims
    if n < 2 or n % 2 != 0:
        raise ValueError(f"batch size must be even and >= 2, got {n}")
    if h > x.shape[0] or w > x.shape[1] or h < 1 or w < 1:
        raise ValueError(f"region {h}x{w} does not fit image {x.shape[0]}x{x.shape[1]}")
    return x, h, w


def estimate_with_fitness(x, fitness, n, dist, region_dims, seed):
    """Core estimator over an arbitrary fitness callable.

    For each of the n/2 antithetic pairs the fitness is evaluated at the
    positive and negative perturbation and the difference weights the
    sample (Gaussian) or its sign pattern (Laplace). Constant fitness
    therefore yields an exactly zero gradient. Oracle results are reduced
    in sample order, so a fixed (seed, x) gives a bitwise stable result.
    """
    x, h, w = _check_args(x, n, region_dims)
    height, width, channels = x.shape
    batch = sample_antithetic(dist, n, (h, w, channels), seed)
    half = batch.half
    acc = np.zeros((h, w, channels))
    total = 0.0
    for k in range(half):
        noise = batch.samples[k]
        tiled = tile_region(noise, height, width)
        j_plus = float(fitness(x + dist.scale * tiled))
        j_minus = float(fitness(x - dist.scale * tiled))
        total += j_plus + j_minus
        if dist.kind == GAUSSIAN:
            acc += (j_plus - j_minus) * noise
        else:
            acc += (j_plus - j_minus) * np.sign(noise)
    region_g = acc / (dist.scale * n)
    return GradientEstimate(
        g=tile_region(region_g, height, width),
        region_g=region_g,
        n_used=n,
        fitness_mean=total / n,
    )


def estimate_gradient_gaussian(x, target, model, n, sigma, region_dims, ledger, seed=0, phase="gradient"):
    """Gaussian search gradient of the target's probability; spends exactly n queries."""
    dist = SearchDistribution(GAUSSIAN, sigma)
    fitness = lambda im: query_full(model, im, ledger, phase)[target]
    return estimate_with_fitness(x, fitness, n, dist, region_dims, seed)


def estimate_gradient_laplace(x, target, model, n, b, region_dims, ledger, seed=0, phase="gradient"):
    """Laplace sign-weighted search gradient; spends exactly n queries."""
    dist = SearchDistribution(LAPLACE, b)
    fitness = lambda im: query_full(model, im, ledger, phase)[target]
    return estimate_with_fitness(x, fitness, n, dist, region_dims, seed)
