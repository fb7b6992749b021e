"""Seeded search-distribution sampling with antithetic pairing.

Reproducibility contract: all randomness flows through numpy's Philox
counter-based generator, and the uniform-to-target transforms below are
written out explicitly (Box-Muller for the Gaussian, inverse CDF for the
Laplace) so a sample batch is a pure function of (kind, n, dims, seed)
across platforms and numpy versions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GAUSSIAN = "gaussian"
LAPLACE = "laplace"

# smallest positive double of the form k * 2^-53; keeps log() finite below
_TINY = 2.0**-53


@dataclass(frozen=True)
class SearchDistribution:
    """Noise family and scale used by the gradient estimator.

    kind is "gaussian" (scale = sigma, the smoothing radius) or "laplace"
    (scale = b, the diversity parameter).
    """

    kind: str
    scale: float

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, LAPLACE):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if not (self.scale > 0.0):
            raise ValueError(f"scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class AntitheticBatch:
    """A batch of n unit-scale noise tensors with mirrored halves.

    samples[k] == -samples[n - 1 - k] holds bitwise: the second half is the
    reversed negation of the first, so every draw appears with its exact
    negative partner and the batch sums to zero in exact arithmetic.
    """

    samples: np.ndarray  # (n, h, w, c), read-only

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def half(self):
        return self.samples.shape[0] // 2


def _unit_gaussian(rng, count):
    """Standard normals via Box-Muller on Philox uniforms.

    u1 is mapped to (0, 1] as 1 - random() so the log stays finite. Pairs
    are interleaved: even slots take r*cos, odd slots r*sin.
    """
    pairs = (count + 1) // 2
    u1 = 1.0 - rng.random(pairs)
    u2 = rng.random(pairs)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * pairs, dtype=np.float64)
    z[0::2] = r * np.cos(2.0 * math.pi * u2)
    z[1::2] = r * np.sin(2.0 * math.pi * u2)
    return z[:count]


def _unit_laplace(rng, count):
    """Unit-scale Laplace draws via the inverse CDF on Philox uniforms.

    u < 1/2 maps to ln(2u), u >= 1/2 to -ln(2(1-u)); exact zeros are
    nudged by 2^-53 to keep the left branch finite.
    """
    u = rng.random(count)
    u = np.maximum(u, _TINY)
    return np.where(u < 0.5, np.log(2.0 * u), -np.log(2.0 * (1.0 - u)))


def derive_seed(*parts):
    """Fold non-negative integer parts into one 64-bit seed, reproducibly.

    Used to address per-iteration (and per-candidate) sample batches from
    a single run seed without consuming a shared stream.
    """
    parts = tuple(int(p) for p in parts)
    if any(p < 0 for p in parts):
        raise ValueError(f"seed parts must be non-negative, got {parts}")
    return int(np.random.SeedSequence(parts).generate_state(1, np.uint64)[0])


def sample_antithetic(dist, n, dims, seed):
    """Draw an antithetic batch of n unit-scale tensors of shape dims.

    n must be even and positive: n/2 fresh draws are taken from the
    distribution family, then concatenated with their negations in
    reversed order. The scale of `dist` is applied later by the gradient
    estimator, not here, so batches are reusable across scales.
    """
    if n < 2 or n % 2 != 0:
        raise ValueError(f"batch size must be even and >= 2, got {n}")
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise ValueError(f"dims must be a positive (h, w, c) triple, got {dims}")
    rng = np.random.Generator(np.random.Philox(seed))
    count = (n // 2) * int(np.prod(dims))
    if dist.kind == GAUSSIAN:
        flat = _unit_gaussian(rng, count)
    else:
        flat = _unit_laplace(rng, count)
    first = flat.reshape((n // 2,) + dims)
    samples = np.concatenate([first, -first[::-1]], axis=0)
    samples.setflags(write=False)
    return AntitheticBatch(samples=samples)
