"""Gaussian kernel density estimation as a differentiable MIL pooling layer.

Each feature column of a bag is turned into a histogram by averaging one
Gaussian kernel per instance and sampling it on a fixed grid of bins.  The
sampled histogram is then renormalized so every feature row sums to one.

Because of that renormalization a :class:`FeatureDistribution` also keeps the
row mass of the unnormalized histogram.  Mixing two distributions needs that
mass to reproduce the distribution of the union bag exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError, EmptyBagError, ShapeError
from .ndcore import as_matrix


@dataclass(frozen=True)
class KdeConfig:
    num_bins: int = 11
    bandwidth: float = 0.1
    range_lo: float = 0.0
    range_hi: float = 1.0

    def __post_init__(self):
        if self.num_bins < 2:
            raise ContractError("num_bins must be at least 2")
        if not self.bandwidth > 0:
            raise ContractError("bandwidth must be positive")
        if not self.range_lo < self.range_hi:
            raise ContractError("range_lo must be below range_hi")

    @property
    def sample_points(self) -> np.ndarray:
        b = np.arange(self.num_bins)
        return self.range_lo + b * (self.range_hi - self.range_lo) / (self.num_bins - 1)


@dataclass
class FeatureDistribution:
    """J per-feature histograms over B sample points; rows sum to one."""

    values: np.ndarray  # (J, B)
    mass: np.ndarray = field(default=None)  # (J,) row sums before normalization

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError("distribution values must be J x B")
        if self.mass is None:
            self.mass = np.ones(self.values.shape[0])
        self.mass = np.asarray(self.mass, dtype=np.float64).reshape(-1)
        if self.mass.shape[0] != self.values.shape[0]:
            raise ShapeError("mass must have one entry per feature row")

    @property
    def J(self) -> int:
        return self.values.shape[0]

    @property
    def B(self) -> int:
        return self.values.shape[1]

    def flat(self) -> np.ndarray:
        return self.values.ravel()


@dataclass
class KdeCache:
    features: np.ndarray  # (N, J)
    sizes: np.ndarray  # (nb,)
    diff: np.ndarray  # (N, J, B), v_b - f
    kernel: np.ndarray  # (N, J, B)
    raw: np.ndarray  # (nb, J, B)
    dist: np.ndarray  # (nb, J, B)


def _kernel(diff: np.ndarray, bandwidth: float) -> np.ndarray:
    norm = 1.0 / np.sqrt(2.0 * np.pi * bandwidth ** 2)
    return norm * np.exp(-diff ** 2 / (2.0 * bandwidth ** 2))


def _check_sizes(sizes, total: int) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=np.int64).reshape(-1)
    if sizes.size == 0 or np.any(sizes < 1):
        raise EmptyBagError("every bag needs at least one instance")
    if sizes.sum() != total:
        raise ShapeError(f"bag sizes sum to {sizes.sum()} but {total} feature rows given")
    return sizes


def kde_forward_batch(features, sizes, cfg: KdeConfig) -> tuple[np.ndarray, KdeCache]:
    """KDE pooling of consecutive row blocks of ``features``.

    ``sizes[k]`` rows belong to bag ``k``.  Returns (nb, J, B) normalized
    histograms and the cache needed by :func:`kde_backward_batch`.
    """
    f = as_matrix(features, "features")
    sizes = _check_sizes(sizes, f.shape[0])
    v = cfg.sample_points
    diff = v[None, None, :] - f[:, :, None]
    kern = _kernel(diff, cfg.bandwidth)
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    raw = np.add.reduceat(kern, starts, axis=0) / sizes[:, None, None]
    dist = raw / raw.sum(axis=2, keepdims=True)
    return dist, KdeCache(f, sizes, diff, kern, raw, dist)


def kde_backward_batch(cache: KdeCache, cfg: KdeConfig, upstream) -> np.ndarray:
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != cache.dist.shape:
        raise ShapeError(f"upstream shape {g.shape} != distribution shape {cache.dist.shape}")
    mass = cache.raw.sum(axis=2, keepdims=True)
    # Jacobian of the row normalization p = r / sum(r)
    g_raw = (g - np.sum(g * cache.dist, axis=2, keepdims=True)) / mass
    g_raw = g_raw / cache.sizes[:, None, None]
    per_instance = np.repeat(g_raw, cache.sizes, axis=0)
    dkernel = cache.kernel * cache.diff / cfg.bandwidth ** 2
    return np.sum(per_instance * dkernel, axis=2)


def kde_forward(features, cfg: KdeConfig) -> tuple[FeatureDistribution, KdeCache]:
    f = as_matrix(features, "features")
    if f.shape[0] == 0:
        raise EmptyBagError("cannot pool an empty bag")
    dist, cache = kde_forward_batch(f, [f.shape[0]], cfg)
    return FeatureDistribution(dist[0], cache.raw[0].sum(axis=1)), cache


def kde_backward(cache: KdeCache, cfg: KdeConfig, upstream) -> np.ndarray:
    g = np.asarray(upstream, dtype=np.float64)
    if g.ndim == 1:
        g = g.reshape(cache.dist.shape[1:])
    if g.shape != cache.dist.shape[1:]:
        raise ShapeError(f"upstream shape {g.shape} != {cache.dist.shape[1:]}")
    return kde_backward_batch(cache, cfg, g[None])


def mean_pool_batch(features, sizes) -> np.ndarray:
    f = as_matrix(features, "features")
    sizes = _check_sizes(sizes, f.shape[0])
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    return np.add.reduceat(f, starts, axis=0) / sizes[:, None]


def mean_pool_backward_batch(sizes, upstream) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=np.int64)
    g = np.asarray(upstream, dtype=np.float64) / sizes[:, None]
    return np.repeat(g, sizes, axis=0)


def mean_pool(features) -> np.ndarray:
    f = as_matrix(features, "features")
    if f.shape[0] == 0:
        raise EmptyBagError("cannot pool an empty bag")
    return mean_pool_batch(f, [f.shape[0]])[0]


def mix_distributions(parts: Sequence[tuple[FeatureDistribution, float]]) -> FeatureDistribution:
    """Cardinality-weighted mixture of distributions of disjoint sub-bags.

    Weighting by ``weight * mass`` makes the result identical to pooling the
    union directly; when all masses agree it reduces to the plain entrywise
    weighted sum.
    """
    if not parts:
        raise ContractError("nothing to mix")
    weights = np.array([w for _, w in parts], dtype=np.float64)
    if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ContractError(f"weights must be positive and sum to 1, got {weights.tolist()}")
    shape = parts[0][0].values.shape
    if any(d.values.shape != shape for d, _ in parts):
        raise ShapeError("all distributions must share J and B")
    raw = sum(w * d.mass[:, None] * d.values for d, w in parts)
    mass = raw.sum(axis=1)
    return FeatureDistribution(raw / mass[:, None], mass)
