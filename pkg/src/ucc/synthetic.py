"""Synthetic stand-ins for real datasets: Gaussian blob pools and two-texture images."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bags import InstancePool
from .errors import ContractError


@dataclass(frozen=True)
class SyntheticSpec:
    """Isotropic Gaussian blobs clipped to the unit cube.

    ``separation`` is the minimum distance between two cluster means in units
    of the cluster radius ``scale * sqrt(dim)`` (the RMS distance of a member
    from its mean).
    """

    n_classes: int = 4
    dim: int = 8
    per_class: int = 500
    scale: float = 0.05
    separation: float = 4.0
    seed: int = 0
    margin: float = 0.1

    def __post_init__(self):
        if self.n_classes < 1 or self.dim < 1 or self.per_class < 1:
            raise ContractError("n_classes, dim and per_class must be positive")
        if self.scale <= 0 or self.separation <= 0:
            raise ContractError("scale and separation must be positive")
        if not 0 <= self.margin < 0.5:
            raise ContractError("margin must lie in [0, 0.5)")

    @property
    def min_distance(self) -> float:
        return self.separation * self.scale * np.sqrt(self.dim)


def cluster_means(spec: SyntheticSpec, rng: np.random.Generator, tries: int = 10000) -> np.ndarray:
    lo, hi = spec.margin, 1.0 - spec.margin
    means = []
    for _ in range(tries):
        cand = rng.uniform(lo, hi, size=spec.dim)
        if all(np.linalg.norm(cand - m) >= spec.min_distance for m in means):
            means.append(cand)
            if len(means) == spec.n_classes:
                return np.array(means)
    raise ContractError(
        f"could not place {spec.n_classes} means {spec.min_distance:.3f} apart in the unit cube")


def gen_synthetic(spec: SyntheticSpec) -> InstancePool:
    rng = np.random.default_rng(spec.seed)
    means = cluster_means(spec, rng)
    xs, ys = [], []
    for k, mu in enumerate(means, start=1):
        xs.append(np.clip(mu + spec.scale * rng.standard_normal((spec.per_class, spec.dim)), 0, 1))
        ys.append(np.full(spec.per_class, k))
    x, y = np.concatenate(xs), np.concatenate(ys)
    order = rng.permutation(len(y))
    return InstancePool(x[order], y[order], spec.n_classes)


def ring_points(n_per_ring: int, radii=(1.0, 4.0), noise: float = 0.1,
                rng: np.random.Generator | int | None = 0) -> tuple[np.ndarray, np.ndarray]:
    """Concentric noisy rings in the plane with labels 1, 2, ..."""
    rng = np.random.default_rng(rng)
    pts, labels = [], []
    for k, r in enumerate(radii, start=1):
        t = rng.uniform(0, 2 * np.pi, n_per_ring)
        rr = r + noise * rng.standard_normal(n_per_ring)
        pts.append(np.c_[rr * np.cos(t), rr * np.sin(t)])
        labels.append(np.full(n_per_ring, k))
    return np.concatenate(pts), np.concatenate(labels)


@dataclass(frozen=True)
class TextureSpec:
    size: int = 128
    channels: int = 1
    negative_mean: float = 0.35
    negative_std: float = 0.08
    positive_mean: float = 0.6
    positive_std: float = 0.15
    boundary_wiggle: float = 0.08


def _mixed_mask(size: int, fraction: float, wiggle: float, rng) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    theta = rng.uniform(0, 2 * np.pi)
    freq = rng.uniform(1.0, 3.0)
    phase = rng.uniform(0, 2 * np.pi)
    along = xx * np.cos(theta) + yy * np.sin(theta)
    across = -xx * np.sin(theta) + yy * np.cos(theta)
    u = along + wiggle * np.sin(2 * np.pi * freq * across + phase)
    return (u > np.quantile(u, 1.0 - fraction)).astype(np.uint8)


def gen_texture_image(kind: str, spec: TextureSpec, rng: np.random.Generator,
                      fraction: float | None = None):
    """One two-texture image and its mask; ``kind`` is normal, tumor or mixed."""
    from .segmentation import LabeledImage

    s = spec.size
    if kind == "normal":
        mask = np.zeros((s, s), dtype=np.uint8)
    elif kind == "tumor":
        mask = np.ones((s, s), dtype=np.uint8)
    elif kind == "mixed":
        if fraction is None:
            fraction = rng.uniform(0.35, 0.65)
        mask = _mixed_mask(s, fraction, spec.boundary_wiggle, rng)
    else:
        raise ContractError(f"unknown image kind {kind!r}")
    shape = (s, s, spec.channels)
    neg = spec.negative_mean + spec.negative_std * rng.standard_normal(shape)
    pos = spec.positive_mean + spec.positive_std * rng.standard_normal(shape)
    pixels = np.clip(np.where(mask[:, :, None] == 1, pos, neg), 0.0, 1.0)
    return LabeledImage(pixels, mask)


def gen_texture_images(n: int, spec: TextureSpec = TextureSpec(),
                       rng: np.random.Generator | int | None = 0,
                       kinds=("normal", "tumor", "mixed")) -> list:
    rng = np.random.default_rng(rng)
    return [gen_texture_image(kinds[i % len(kinds)], spec, rng) for i in range(n)]
