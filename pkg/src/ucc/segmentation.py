"""Patch-based semantic segmentation driven by a trained ucc model.

Images become bags of non-overlapping patches.  After training on image-level
ucc labels, the patch features are clustered into two groups and each group
is painted positive or negative depending on which reference distribution
(built from pure positive / pure negative training images) it resembles.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cluster import kmeans, spectral
from .errors import ContractError, ShapeError
from .kde_pool import FeatureDistribution, kde_forward
from .model import UccModel, extract_features


@dataclass
class LabeledImage:
    pixels: np.ndarray  # (H, W, C) in [0, 1]
    mask: np.ndarray  # (H, W) in {0, 1}

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3:
            raise ShapeError(f"pixels must be H x W x C, got {px.shape}")
        mask = np.asarray(self.mask).astype(np.uint8)
        if mask.shape != px.shape[:2]:
            raise ShapeError(f"mask {mask.shape} does not match image {px.shape[:2]}")
        if np.any(mask > 1):
            raise ContractError("mask entries must be 0 or 1")
        self.pixels, self.mask = px, mask

    @property
    def positive_fraction(self) -> float:
        return float(self.mask.mean())


@dataclass(frozen=True)
class SegThresholds:
    ucc1_low: float = 0.20
    ucc1_high: float = 0.80
    ucc2_low: float = 0.30
    ucc2_high: float = 0.70

    def __post_init__(self):
        if not (self.ucc1_low < self.ucc2_low <= self.ucc2_high < self.ucc1_high):
            raise ContractError("thresholds must satisfy ucc1_low < ucc2_low <= ucc2_high < ucc1_high")


def label_from_fraction(p: float, t: SegThresholds = SegThresholds()) -> int | None:
    if p < t.ucc1_low or p > t.ucc1_high:
        return 1
    if t.ucc2_low < p < t.ucc2_high:
        return 2
    return None


def label_image(img: LabeledImage, t: SegThresholds = SegThresholds()) -> int | None:
    """ucc label from the mask's positive fraction; ``None`` for the gap bands."""
    return label_from_fraction(img.positive_fraction, t)


def _pad(pixels: np.ndarray, patch: int) -> np.ndarray:
    h, w = pixels.shape[:2]
    ph, pw = (-h) % patch, (-w) % patch
    if ph == 0 and pw == 0:
        return pixels
    mode = "reflect" if ph < h and pw < w else "symmetric"
    return np.pad(pixels, ((0, ph), (0, pw), (0, 0)), mode=mode)


def patchify(pixels, patch_size: int) -> np.ndarray:
    """Row-major non-overlapping tiles flattened to (num_patches, patch*patch*C).

    Dimensions that are not multiples of ``patch_size`` are reflection-padded.
    """
    if isinstance(pixels, LabeledImage):
        pixels = pixels.pixels
    px = np.asarray(pixels, dtype=np.float64)
    if px.ndim == 2:
        px = px[:, :, None]
    if patch_size < 1:
        raise ContractError("patch size must be positive")
    px = _pad(px, patch_size)
    h, w, c = px.shape
    tiles = px.reshape(h // patch_size, patch_size, w // patch_size, patch_size, c)
    return tiles.transpose(0, 2, 1, 3, 4).reshape(-1, patch_size * patch_size * c)


def reassemble(patches, height: int, width: int, channels: int, patch_size: int) -> np.ndarray:
    """Inverse of :func:`patchify`; crops any padding."""
    gh, gw = -(-height // patch_size), -(-width // patch_size)
    p = np.asarray(patches, dtype=np.float64)
    if p.shape != (gh * gw, patch_size * patch_size * channels):
        raise ShapeError(f"expected {(gh * gw, patch_size * patch_size * channels)} patches, got {p.shape}")
    tiles = p.reshape(gh, gw, patch_size, patch_size, channels).transpose(0, 2, 1, 3, 4)
    return tiles.reshape(gh * patch_size, gw * patch_size, channels)[:height, :width]


def patch_grid(height: int, width: int, patch_size: int) -> tuple[int, int]:
    return -(-height // patch_size), -(-width // patch_size)


def paint(patch_labels, height: int, width: int, patch_size: int) -> np.ndarray:
    gh, gw = patch_grid(height, width, patch_size)
    grid = np.asarray(patch_labels).reshape(gh, gw)
    full = np.kron(grid, np.ones((patch_size, patch_size), dtype=grid.dtype))
    return full[:height, :width].astype(np.uint8)


def image_bags(images: Sequence[LabeledImage], patch_size: int,
               t: SegThresholds = SegThresholds()) -> list[tuple[np.ndarray, int]]:
    """(patches, ucc) training bags; gap-band images are dropped."""
    out = []
    for img in images:
        label = label_image(img, t)
        if label is not None:
            out.append((patchify(img.pixels, patch_size), label))
    return out


@dataclass
class SegReference:
    positive: FeatureDistribution
    negative: FeatureDistribution


def build_reference(model: UccModel, images: Sequence[LabeledImage], patch_size: int,
                    t: SegThresholds = SegThresholds()) -> SegReference:
    """Pooled feature distributions of pure positive and pure negative images.

    Only the image-level ucc1 labelling (and which side of the band the
    image falls on) is used, never the pixel masks themselves.
    """
    pos, neg = [], []
    for img in images:
        if label_image(img, t) != 1:
            continue
        feats = extract_features(model, patchify(img.pixels, patch_size))
        (pos if img.positive_fraction > t.ucc1_high else neg).append(feats)
    if not pos or not neg:
        raise ContractError("reference needs at least one pure positive and one pure negative image")
    return SegReference(kde_forward(np.concatenate(pos), model.kde)[0],
                        kde_forward(np.concatenate(neg), model.kde)[0])


def _l1(a: FeatureDistribution, b: FeatureDistribution) -> float:
    return float(np.abs(a.values - b.values).sum())


def anchor_clusters(model: UccModel, feats: np.ndarray, cluster_ids: np.ndarray,
                    reference: SegReference) -> np.ndarray:
    """0/1 label per point: a cluster is positive if its distribution is nearer the positive reference."""
    out = np.zeros(cluster_ids.shape[0], dtype=np.uint8)
    for c in np.unique(cluster_ids):
        members = cluster_ids == c
        dist = kde_forward(feats[members], model.kde)[0]
        if _l1(dist, reference.positive) < _l1(dist, reference.negative):
            out[members] = 1
    return out


def _cluster(feats, method: str, rng):
    if method == "kmeans":
        return kmeans(feats, 2, rng=rng).labels
    if method == "spectral":
        return spectral(feats, 2, rng=rng).labels
    raise ContractError(f"unknown clusterer {method!r}")


def segment(model: UccModel, images: Sequence, patch_size: int, reference: SegReference,
            clusterer: str = "kmeans", per_image: bool = False,
            rng: np.random.Generator | int | None = 0) -> list[np.ndarray]:
    """Predicted binary masks for ``images`` (LabeledImage or H x W x C arrays).

    By default the patches of all images are clustered together; with
    ``per_image`` each image is clustered on its own.
    """
    rng = np.random.default_rng(rng)
    pixels = [img.pixels if isinstance(img, LabeledImage) else np.asarray(img, dtype=np.float64)
              for img in images]
    pixels = [p[:, :, None] if p.ndim == 2 else p for p in pixels]
    patches = [patchify(p, patch_size) for p in pixels]
    if patches and patches[0].shape[1] != model.input_dim:
        raise ShapeError(f"patch dimension {patches[0].shape[1]} != model input {model.input_dim}")
    feats = [extract_features(model, p) for p in patches]
    labels: list[np.ndarray] = []
    if per_image:
        for f in feats:
            ids = _cluster(f, clusterer, rng) if f.shape[0] >= 2 else np.zeros(f.shape[0], int)
            labels.append(anchor_clusters(model, f, ids, reference))
    else:
        allf = np.concatenate(feats)
        lab = anchor_clusters(model, allf, _cluster(allf, clusterer, rng), reference)
        labels = np.split(lab, np.cumsum([f.shape[0] for f in feats])[:-1])
    return [paint(l, p.shape[0], p.shape[1], patch_size) for l, p in zip(labels, pixels)]


@dataclass(frozen=True)
class PixelConfusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class PixelMetrics:
    tpr: float
    fpr: float
    tnr: float
    fnr: float
    pa: float
    confusion: PixelConfusion

    def row(self) -> tuple[float, float, float, float, float]:
        return self.tpr, self.fpr, self.tnr, self.fnr, self.pa


def pixel_confusion(pred, truth) -> PixelConfusion:
    pred, truth = np.asarray(pred).astype(bool), np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise ShapeError(f"predicted mask {pred.shape} != truth {truth.shape}")
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    tn = int(np.sum(~pred & ~truth))
    fn = int(np.sum(~pred & truth))
    return PixelConfusion(tp, fp, tn, fn)


def _rate(hits: int, misses: int) -> float:
    # empty denominator: no instance of that truth class, hence no errors either
    if hits + misses == 0:
        return 1.0
    return hits / (hits + misses)


def pixel_metrics(pred, truth) -> PixelMetrics:
    """TPR, FPR, TNR, FNR and pixel accuracy of a binary mask.

    Error rates are taken as complements of the matching success rates so
    TPR + FNR and TNR + FPR are exactly one in floating point.
    """
    c = pixel_confusion(pred, truth)
    tpr = _rate(c.tp, c.fn)
    tnr = _rate(c.tn, c.fp)
    return PixelMetrics(tpr=tpr, fpr=1.0 - tnr, tnr=tnr, fnr=1.0 - tpr,
                        pa=(c.tp + c.tn) / c.total, confusion=c)


def mean_metrics(metrics: Sequence[PixelMetrics]) -> dict[str, float]:
    rows = np.array([m.row() for m in metrics])
    return dict(zip(("TPR", "FPR", "TNR", "FNR", "PA"), rows.mean(axis=0).tolist()))
