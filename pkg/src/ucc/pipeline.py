"""Experiment plumbing shared by the command line and the acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bags import InstancePool, bags_from_pool, sample_bag, split_pool
from .cluster import ClusterAssignment, JsMatrix, clustering_accuracy, interclass_js, kmeans, spectral
from .config import ConfigError, RunConfig
from .errors import ContractError
from .io import load_idx, read_image_set, read_pool
from .kde_pool import KdeConfig
from .model import TrainConfig, UccModel, build_model, extract_features, predicted_labels
from .segmentation import SegThresholds


def model_from_config(cfg: RunConfig, input_dim: int) -> UccModel:
    m = cfg.model
    return build_model(input_dim, m.features, feature_hidden=m.feature_hidden,
                       drn_hidden=m.drn_hidden, decoder_hidden=m.decoder_hidden,
                       kde=KdeConfig(m.bins, m.bandwidth), alpha=m.alpha,
                       ucc_lo=m.ucc_lo, ucc_hi=m.ucc_hi, pooling=m.pooling, rng=cfg.seed)


def train_config(cfg: RunConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(t.learning_rate, t.batch_size, t.max_iterations, t.patience,
                       t.validation_period, cfg.seed)


def thresholds(cfg: RunConfig) -> SegThresholds:
    s = cfg.seg
    return SegThresholds(s.ucc1_low, s.ucc1_high, s.ucc2_low, s.ucc2_high)


def pool_from_config(cfg: RunConfig, path: str | None = None) -> InstancePool:
    d = cfg.data
    if path or d.pool:
        return read_pool(path or d.pool)
    if d.idx_images or d.idx_labels:
        pool = load_idx(d.idx_images, d.idx_labels, d.idx_classes or None)
        if d.idx_limit and d.idx_limit < pool.size:
            pool = pool.subset(np.arange(d.idx_limit))
        return pool
    raise ConfigError(["data.pool: no instance pool configured (set data.pool or data.idx_*)"])


def pool_bags(cfg: RunConfig, pool: InstancePool, rng: np.random.Generator):
    """Train/validation bag sets from a stratified split of ``pool``."""
    d, m = cfg.data, cfg.model
    train_pool, val_pool = split_pool(pool, d.val_fraction, rng)
    rng_range = (m.ucc_lo, m.ucc_hi)
    val = bags_from_pool(val_pool, rng_range, d.val_bags_per_label, d.bag_size, rng)
    if d.resample_bags:
        def train(r):
            return bags_from_pool(train_pool, rng_range, d.bags_per_label, d.bag_size, r)
    else:
        train = bags_from_pool(train_pool, rng_range, d.bags_per_label, d.bag_size, rng)
    return train, val


def image_sets(cfg: RunConfig):
    if not cfg.data.images:
        return None, None
    train = read_image_set(cfg.data.images)
    val = read_image_set(cfg.data.val_images) if cfg.data.val_images else None
    return train, val


@dataclass
class UccEvaluation:
    accuracy: float
    confusion: np.ndarray  # rows: true label, cols: predicted label
    labels: list[int]


def eval_ucc(model: UccModel, pool: InstancePool, trials: int, bag_size: int,
             rng: np.random.Generator | int | None = 0) -> UccEvaluation:
    """Balanced random bags per ucc label, argmax accuracy and confusion matrix."""
    rng = np.random.default_rng(rng)
    if model.ucc_hi > pool.n_classes or model.ucc_hi > bag_size:
        raise ContractError(
            f"ucc range {model.ucc_lo}..{model.ucc_hi} infeasible for K={pool.n_classes}, "
            f"bag size {bag_size}")
    labels = list(range(model.ucc_lo, model.ucc_hi + 1))
    confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for i, u in enumerate(labels):
        bags = [pool.instances[list(sample_bag(pool, u, bag_size, rng).indices)]
                for _ in range(trials)]
        pred = predicted_labels(model, bags) if bags else np.array([], dtype=int)
        for p in pred:
            confusion[i, p - model.ucc_lo] += 1
    total = confusion.sum()
    acc = float(np.trace(confusion) / total) if total else float("nan")
    return UccEvaluation(acc, confusion, labels)


@dataclass
class ClusterResult:
    assignment: ClusterAssignment
    accuracy: float | None
    js: JsMatrix | None


def cluster_pool(model: UccModel, pool: InstancePool, method: str = "kmeans",
                 n_clusters: int = 0, restarts: int = 10, affinity_scale: float = 0.0,
                 rng: np.random.Generator | int | None = 0) -> ClusterResult:
    feats = extract_features(model, pool.instances)
    k = n_clusters or pool.n_classes
    if k < 1:
        raise ContractError("number of clusters unknown: pool is unlabelled, set cluster.k")
    if method == "kmeans":
        assignment = kmeans(feats, k, restarts=restarts, rng=rng)
    elif method == "spectral":
        assignment = spectral(feats, k, affinity_scale or None, rng=rng, restarts=restarts)
    else:
        raise ContractError(f"unknown clustering method {method!r}")
    if not pool.labelled:
        return ClusterResult(assignment, None, None)
    return ClusterResult(assignment, clustering_accuracy(assignment, pool.labels),
                         interclass_js(feats, pool.labels, model.kde))
