"""The unique-class-count model: feature extractor, pooling, regressor, decoder.

Bags are passed around as ``(instances, ucc)`` pairs where ``instances`` is
an (n, d) array.  Batched routines concatenate the instances of many bags and
keep a vector of bag sizes so the pooling layer can split them again.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import ContractError, EmptyBagError, ShapeError, TrainingDiverged
from .kde_pool import (KdeConfig, kde_backward_batch, kde_forward_batch,
                       mean_pool_backward_batch, mean_pool_batch)
from .ndcore import GradBundle, MlpParams, as_matrix, init_mlp, mlp_backward, mlp_forward

log = logging.getLogger(__name__)

LOG_CLIP = 1e-12
POOLINGS = ("kde", "mean")

Bag = tuple[np.ndarray, int]


@dataclass
class UccModel:
    feature_net: MlpParams
    drn_net: MlpParams
    decoder_net: MlpParams
    kde: KdeConfig = field(default_factory=KdeConfig)
    alpha: float = 0.5
    ucc_lo: int = 1
    ucc_hi: int = 4
    pooling: str = "kde"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.ucc_lo < 1 or self.ucc_hi < self.ucc_lo:
            raise ContractError(f"bad ucc range {self.ucc_lo}..{self.ucc_hi}")
        if self.pooling not in POOLINGS:
            raise ContractError(f"unknown pooling {self.pooling!r}")
        if self.feature_net.layers[-1].activation != "sigmoid":
            raise ContractError("feature extractor must end in a sigmoid")
        if self.drn_net.layers[-1].activation != "softmax":
            raise ContractError("distribution regressor must end in a softmax")
        if self.drn_net.out_dim != self.num_labels:
            raise ShapeError(f"regressor outputs {self.drn_net.out_dim} classes, "
                             f"ucc range needs {self.num_labels}")
        if self.drn_net.in_dim != self.pooled_dim:
            raise ShapeError(f"regressor expects {self.drn_net.in_dim} inputs, "
                             f"pooling yields {self.pooled_dim}")
        if self.decoder_net.in_dim != self.num_features:
            raise ShapeError("decoder input must equal the feature count")
        if self.decoder_net.out_dim != self.input_dim:
            raise ShapeError("decoder output must equal the instance dimension")

    @property
    def input_dim(self) -> int:
        return self.feature_net.in_dim

    @property
    def num_features(self) -> int:
        return self.feature_net.out_dim

    @property
    def num_labels(self) -> int:
        return self.ucc_hi - self.ucc_lo + 1

    @property
    def pooled_dim(self) -> int:
        if self.pooling == "kde":
            return self.num_features * self.kde.num_bins
        return self.num_features

    @property
    def nets(self) -> tuple[MlpParams, MlpParams, MlpParams]:
        return self.feature_net, self.drn_net, self.decoder_net

    def copy(self) -> "UccModel":
        return copy.deepcopy(self)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([net.to_vector() for net in self.nets])

    def with_vector(self, vec) -> "UccModel":
        vec = np.asarray(vec, dtype=np.float64)
        sizes = [net.num_params() for net in self.nets]
        if vec.size != sum(sizes):
            raise ShapeError(f"expected {sum(sizes)} parameters, got {vec.size}")
        cuts = np.cumsum(sizes)[:-1]
        f, d, r = (net.with_vector(part) for net, part in zip(self.nets, np.split(vec, cuts)))
        return UccModel(f, d, r, self.kde, self.alpha, self.ucc_lo, self.ucc_hi, self.pooling)


@dataclass
class ModelGrads:
    feature: GradBundle
    drn: GradBundle
    decoder: GradBundle

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.feature.to_vector(), self.drn.to_vector(),
                               self.decoder.to_vector()])


def build_model(input_dim: int, num_features: int = 10, *,
                feature_hidden: Sequence[int] = (32,),
                drn_hidden: Sequence[int] = (64, 32),
                decoder_hidden: Sequence[int] = (32,),
                kde: KdeConfig | None = None, alpha: float = 0.5,
                ucc_lo: int = 1, ucc_hi: int = 4, pooling: str = "kde",
                rng: np.random.Generator | int | None = 0) -> UccModel:
    """Freshly initialized model with relu hidden layers."""
    rng = np.random.default_rng(rng)
    kde = kde or KdeConfig()
    if not drn_hidden:
        raise ContractError("the distribution regressor needs a hidden layer to be non-linear")
    pooled = num_features * kde.num_bins if pooling == "kde" else num_features
    labels = ucc_hi - ucc_lo + 1

    def chain(dims, last):
        return init_mlp(dims, ["relu"] * (len(dims) - 2) + [last], rng)

    feature = chain([input_dim, *feature_hidden, num_features], "sigmoid")
    drn = chain([pooled, *drn_hidden, labels], "softmax")
    decoder = chain([num_features, *decoder_hidden, input_dim], "linear")
    return UccModel(feature, drn, decoder, kde, alpha, ucc_lo, ucc_hi, pooling)


def _stack(bags: Sequence[np.ndarray], dim: int) -> tuple[np.ndarray, np.ndarray]:
    mats = [as_matrix(b, "bag") for b in bags]
    if any(m.shape[0] == 0 for m in mats):
        raise EmptyBagError("bags must not be empty")
    for m in mats:
        if m.shape[1] != dim:
            raise ShapeError(f"instances have dimension {m.shape[1]}, model expects {dim}")
    return np.concatenate(mats, axis=0), np.array([m.shape[0] for m in mats])


def _pool(model: UccModel, feats: np.ndarray, sizes: np.ndarray):
    if model.pooling == "kde":
        dist, cache = kde_forward_batch(feats, sizes, model.kde)
        return dist.reshape(len(sizes), -1), cache
    return mean_pool_batch(feats, sizes), None


def _pool_backward(model: UccModel, cache, sizes: np.ndarray, g: np.ndarray) -> np.ndarray:
    if model.pooling == "kde":
        return kde_backward_batch(cache, model.kde, g.reshape(cache.dist.shape))
    return mean_pool_backward_batch(sizes, g)


def extract_features(model: UccModel, instances) -> np.ndarray:
    x = as_matrix(instances)
    if x.shape[1] != model.input_dim:
        raise ShapeError(f"instances have dimension {x.shape[1]}, model expects {model.input_dim}")
    return mlp_forward(model.feature_net, x)[0]


def reconstruct(model: UccModel, instances) -> np.ndarray:
    return mlp_forward(model.decoder_net, extract_features(model, instances))[0]


def predict_ucc_batch(model: UccModel, bags: Sequence[np.ndarray]) -> np.ndarray:
    """Softmax over ucc labels for every bag, shape (nb, num_labels)."""
    x, sizes = _stack(bags, model.input_dim)
    feats = mlp_forward(model.feature_net, x)[0]
    pooled, _ = _pool(model, feats, sizes)
    return mlp_forward(model.drn_net, pooled)[0]


def predict_ucc(model: UccModel, instances) -> np.ndarray:
    return predict_ucc_batch(model, [instances])[0]


def predicted_labels(model: UccModel, bags: Sequence[np.ndarray]) -> np.ndarray:
    return predict_ucc_batch(model, bags).argmax(axis=1) + model.ucc_lo


def onehot(model: UccModel, labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if np.any(labels < model.ucc_lo) or np.any(labels > model.ucc_hi):
        raise ContractError(f"ucc labels must lie in {model.ucc_lo}..{model.ucc_hi}")
    out = np.zeros((labels.size, model.num_labels))
    out[np.arange(labels.size), labels - model.ucc_lo] = 1.0
    return out


def _branch_losses(model: UccModel, bags, targets):
    """Forward pass shared by the loss routines; returns per-bag losses and caches."""
    x, sizes = _stack(bags, model.input_dim)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (len(sizes), model.num_labels):
        raise ShapeError(f"targets must be ({len(sizes)}, {model.num_labels})")
    feats, fcache = mlp_forward(model.feature_net, x)
    pooled, pcache = _pool(model, feats, sizes)
    probs, dcache = mlp_forward(model.drn_net, pooled)
    recon, rcache = mlp_forward(model.decoder_net, feats)
    clipped = np.maximum(probs, LOG_CLIP)
    l_ucc = -np.sum(targets * np.log(clipped), axis=1)
    sq = np.sum((x - recon) ** 2, axis=1)
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    l_ae = np.add.reduceat(sq, starts) / (sizes * model.input_dim)
    state = dict(x=x, sizes=sizes, targets=targets, probs=probs, recon=recon,
                 fcache=fcache, pcache=pcache, dcache=dcache, rcache=rcache)
    return l_ucc, l_ae, state


def batch_loss_and_grads(model: UccModel, bags, targets,
                         alpha: float | None = None) -> tuple[float, ModelGrads]:
    """Mean over bags of ``alpha * cross-entropy + (1 - alpha) * reconstruction MSE``.

    The feature extractor receives the ucc-branch gradient (routed back
    through the pooling layer) scaled by alpha plus the autoencoder-branch
    gradient scaled by 1 - alpha.
    """
    alpha = model.alpha if alpha is None else float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    l_ucc, l_ae, s = _branch_losses(model, bags, targets)
    nb = len(s["sizes"])
    loss = float(np.mean(alpha * l_ucc + (1.0 - alpha) * l_ae))

    probs, targets = s["probs"], s["targets"]
    g_probs = np.where(probs > LOG_CLIP, -targets / np.maximum(probs, LOG_CLIP), 0.0)
    g_probs *= alpha / nb
    drn_g = mlp_backward(model.drn_net, s["dcache"], g_probs)
    g_feat_ucc = _pool_backward(model, s["pcache"], s["sizes"], drn_g.input)

    row_scale = np.repeat((1.0 - alpha) / (nb * s["sizes"] * model.input_dim), s["sizes"])
    g_recon = 2.0 * (s["recon"] - s["x"]) * row_scale[:, None]
    dec_g = mlp_backward(model.decoder_net, s["rcache"], g_recon)

    feat_g = mlp_backward(model.feature_net, s["fcache"], g_feat_ucc + dec_g.input)
    return loss, ModelGrads(feat_g, drn_g, dec_g)


def bag_loss_and_grads(model: UccModel, bag_instances, ucc_onehot,
                       alpha: float | None = None) -> tuple[float, ModelGrads]:
    target = np.asarray(ucc_onehot, dtype=np.float64).reshape(1, -1)
    if target.shape[1] != model.num_labels or not np.isclose(target.sum(), 1.0) \
            or np.any((target != 0) & (target != 1)):
        raise ContractError("ucc_onehot must be a one-hot vector over the ucc range")
    return batch_loss_and_grads(model, [bag_instances], target, alpha)


def branch_losses(model: UccModel, bags, targets) -> tuple[np.ndarray, np.ndarray]:
    """Per-bag (ucc cross-entropy, reconstruction MSE) without any gradients."""
    l_ucc, l_ae, _ = _branch_losses(model, bags, targets)
    return l_ucc, l_ae


def apply_sgd(model: UccModel, grads: ModelGrads, lr: float) -> None:
    for net, g in zip(model.nets, (grads.feature, grads.drn, grads.decoder)):
        for layer, gw, gb in zip(net.layers, g.weights, g.biases):
            layer.weight -= lr * gw
            layer.bias -= lr * gb


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    learning_rate: float = 0.5
    batch_size: int = 16
    max_iterations: int = 20000
    patience: int = 3000
    validation_period: int = 250
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.validation_period < 1:
            raise ContractError("learning rate, batch size and validation period must be positive")
        if self.max_iterations < 0:
            raise ContractError("max_iterations must be non-negative")
        if self.patience < self.validation_period:
            raise ContractError("patience must be at least one validation period")


@dataclass
class TrainReport:
    iterations: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    stopped_at: int = 0
    best_iteration: int = 0

    @property
    def best_val_loss(self) -> float:
        return min(self.val_loss) if self.val_loss else float("nan")

    @property
    def best_val_accuracy(self) -> float:
        if not self.val_loss:
            return float("nan")
        return self.val_accuracy[int(np.argmin(self.val_loss))]

    def as_dict(self) -> dict:
        return dict(iterations=self.iterations, train_loss=self.train_loss,
                    val_loss=self.val_loss, val_accuracy=self.val_accuracy,
                    stopped_at=self.stopped_at, best_iteration=self.best_iteration)


def evaluate(model: UccModel, bags: Sequence[Bag], chunk: int = 512) -> tuple[float, float]:
    """Mean loss (at the model's alpha) and argmax ucc accuracy over ``bags``."""
    total, correct = 0.0, 0
    for start in range(0, len(bags), chunk):
        part = bags[start:start + chunk]
        labels = np.array([u for _, u in part])
        l_ucc, l_ae, s = _branch_losses(model, [b for b, _ in part], onehot(model, labels))
        total += float(np.sum(model.alpha * l_ucc + (1 - model.alpha) * l_ae))
        correct += int(np.sum(s["probs"].argmax(axis=1) + model.ucc_lo == labels))
    return total / len(bags), correct / len(bags)


BagSource = Union[Sequence[Bag], Callable[[np.random.Generator], Sequence[Bag]]]


def train(model: UccModel, train_bags: BagSource, val_bags: Sequence[Bag],
          cfg: TrainConfig) -> tuple[UccModel, TrainReport]:
    """Plain SGD with early stopping on validation loss.

    ``train_bags`` may be a callable returning a fresh bag list; it is then
    called once per epoch so bags are resampled.
    """
    rng = np.random.default_rng(cfg.seed)
    resample = callable(train_bags)
    bags = list(train_bags(rng)) if resample else list(train_bags)
    if not bags or not val_bags:
        raise ContractError("training and validation bag sets must be non-empty")
    for _, u in list(bags) + list(val_bags):
        if not model.ucc_lo <= u <= model.ucc_hi:
            raise ContractError(f"bag label {u} outside model range {model.ucc_lo}..{model.ucc_hi}")

    model = model.copy()
    report = TrainReport()
    if cfg.max_iterations == 0:
        return model, report

    best = model.copy()
    best_loss = np.inf
    order = rng.permutation(len(bags))
    pos = 0
    running = []
    for it in range(1, cfg.max_iterations + 1):
        if pos + cfg.batch_size > len(order):
            if resample:
                bags = list(train_bags(rng))
            order = rng.permutation(len(bags))
            pos = 0
        idx = order[pos:pos + cfg.batch_size]
        pos += cfg.batch_size
        batch = [bags[i] for i in idx]
        loss, grads = batch_loss_and_grads(
            model, [b for b, _ in batch], onehot(model, [u for _, u in batch]))
        if not np.isfinite(loss):
            raise TrainingDiverged(it, loss)
        apply_sgd(model, grads, cfg.learning_rate)
        running.append(loss)

        if it % cfg.validation_period == 0 or it == cfg.max_iterations:
            val_loss, val_acc = evaluate(model, val_bags)
            if not np.isfinite(val_loss):
                raise TrainingDiverged(it, val_loss)
            report.iterations.append(it)
            report.train_loss.append(float(np.mean(running)))
            report.val_loss.append(val_loss)
            report.val_accuracy.append(val_acc)
            running = []
            log.info("iter %d train %.4f val %.4f acc %.3f", it,
                     report.train_loss[-1], val_loss, val_acc)
            if val_loss < best_loss:
                best_loss = val_loss
                best = model.copy()
                report.best_iteration = it
            elif it - report.best_iteration >= cfg.patience:
                report.stopped_at = it
                return best, report
    report.stopped_at = cfg.max_iterations
    return best, report
