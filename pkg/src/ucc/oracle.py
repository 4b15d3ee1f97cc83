"""Executable checks of the clustering theory behind unique class counts.

A :class:`UccOracle` answers the exact unique class count of any subset from
hidden labels.  With such an oracle, :func:`cluster_by_ucc` recovers the
classes by merging pure blocks, and the ``check_*`` functions measure the
distribution-level statements numerically.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bags import InstancePool, ucc_of
from .errors import ContractError, EmptyBagError
from .kde_pool import KdeConfig, kde_forward, mix_distributions

FeatureMap = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class UccOracle:
    pool: InstancePool

    def __post_init__(self):
        if self.pool.labels is None:
            raise ContractError("an oracle needs a labelled pool")

    def __call__(self, indices) -> int:
        return ucc_of(self.pool, indices)


@dataclass
class Partition:
    blocks: list[np.ndarray]
    converged: bool = True
    passes: int = 0
    oracle_calls: int = 0

    def __post_init__(self):
        seen: set[int] = set()
        for b in self.blocks:
            if len(b) == 0:
                raise ContractError("partition blocks must be non-empty")
            items = set(int(i) for i in b)
            if items & seen:
                raise ContractError("partition blocks overlap")
            seen |= items

    def labels_for(self, universe) -> np.ndarray:
        """Block id of every element of ``universe``, in order."""
        where = {int(i): k for k, b in enumerate(self.blocks) for i in b}
        return np.array([where[int(i)] for i in universe])


def cluster_by_ucc(universe, oracle: Callable[[np.ndarray], int],
                   rng: np.random.Generator | int | None = 0,
                   max_passes: int | None = None) -> Partition:
    """Merge singletons into pure blocks using only ucc queries.

    Each round pairs the current blocks at random and merges a pair when the
    oracle reports their union as pure.  When a random round merges nothing,
    every pair of blocks is tried once; the loop ends after a full pass with
    no successful merge.
    """
    universe = np.asarray(universe, dtype=np.int64).reshape(-1)
    if universe.size == 0:
        raise EmptyBagError("cannot cluster an empty universe")
    rng = np.random.default_rng(rng)
    blocks = [np.array([i]) for i in universe]
    max_passes = universe.size ** 2 if max_passes is None else max_passes
    calls = passes = 0

    while passes < max_passes:
        passes += 1
        order = rng.permutation(len(blocks))
        merged_any = False
        nxt = []
        for a, b in zip(order[0::2], order[1::2]):
            union = np.concatenate([blocks[a], blocks[b]])
            calls += 1
            if oracle(union) == 1:
                nxt.append(union)
                merged_any = True
            else:
                nxt.extend([blocks[a], blocks[b]])
        if len(order) % 2:
            nxt.append(blocks[order[-1]])
        blocks = nxt
        if merged_any:
            continue

        # random pairing stalled: exhaustive pass over all block pairs
        merged_any = False
        i = 0
        while i < len(blocks):
            j = i + 1
            while j < len(blocks):
                union = np.concatenate([blocks[i], blocks[j]])
                calls += 1
                if oracle(union) == 1:
                    blocks[i] = union
                    del blocks[j]
                    merged_any = True
                else:
                    j += 1
            i += 1
        if not merged_any:
            return Partition([np.sort(b) for b in blocks], True, passes, calls)
    return Partition([np.sort(b) for b in blocks], False, passes, calls)


@dataclass
class PropReport:
    name: str
    trials: int = 0
    evaluated: int = 0
    excluded: int = 0
    violations: int = 0
    min_distance: float = float("inf")
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.evaluated > 0

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = (f"{self.name}: {status} trials={self.trials} evaluated={self.evaluated} "
                f"excluded={self.excluded} violations={self.violations}")
        if np.isfinite(self.min_distance):
            text += f" min_l1={self.min_distance:.6g}"
        return text


def l1_distance(p, q) -> float:
    return float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def _random_pure_set(pool, k, rng, size, exclude=()):
    idx = np.setdiff1d(pool.class_indices(k), np.asarray(exclude, dtype=np.int64))
    size = min(size, idx.size)
    return rng.choice(idx, size=size, replace=False)


def check_prop1(pool: InstancePool, kde: KdeConfig, feature_map: FeatureMap,
                trials: int = 1000, rng: np.random.Generator | int | None = 0,
                set_size: int = 16, threshold: float = 0.0) -> PropReport:
    """Disjoint pure sets whose union has two classes must have different distributions.

    Pairs whose classes coincide (union still pure) do not meet the
    hypothesis and are counted as excluded.
    """
    oracle = UccOracle(pool)
    rng = np.random.default_rng(rng)
    feats = feature_map(pool.instances)
    rep = PropReport("prop1", trials=trials)
    for _ in range(trials):
        ka, kb = rng.integers(1, pool.n_classes + 1, size=2)
        a = _random_pure_set(pool, ka, rng, set_size)
        b = _random_pure_set(pool, kb, rng, set_size, exclude=a)
        if b.size == 0 or oracle(np.concatenate([a, b])) != 2:
            rep.excluded += 1
            continue
        rep.evaluated += 1
        d = l1_distance(kde_forward(feats[a], kde)[0].values, kde_forward(feats[b], kde)[0].values)
        rep.min_distance = min(rep.min_distance, d)
        if not d > threshold:
            rep.violations += 1
    return rep


def check_prop3(pool: InstancePool, kde: KdeConfig, feature_map: FeatureMap,
                threshold: float = 1e-3) -> PropReport:
    """Whole-class distributions are pairwise separated by more than ``threshold`` in L1."""
    feats = feature_map(pool.instances)
    dists = {k: kde_forward(feats[pool.class_indices(k)], kde)[0].values
             for k in range(1, pool.n_classes + 1)}
    pairs = list(itertools.combinations(range(1, pool.n_classes + 1), 2))
    rep = PropReport("prop3", trials=len(pairs), evaluated=len(pairs))
    for a, b in pairs:
        d = l1_distance(dists[a], dists[b])
        rep.details[f"{a}-{b}"] = d
        rep.min_distance = min(rep.min_distance, d)
        if not d > threshold:
            rep.violations += 1
    return rep


def check_propB1(pool: InstancePool, trials: int = 200,
                 rng: np.random.Generator | int | None = 0, bag_size: int = 16) -> PropReport:
    """Changing class proportions at fixed class support never changes the ucc."""
    rng = np.random.default_rng(rng)
    rep = PropReport("propB1", trials=trials)
    for _ in range(trials):
        support = rng.choice(np.arange(1, pool.n_classes + 1),
                             size=rng.integers(1, pool.n_classes + 1), replace=False)
        counts = []
        for _ in range(2):
            props = rng.dirichlet(np.ones(support.size))
            sizes = 1 + rng.multinomial(max(bag_size - support.size, 0), props)
            idx = np.concatenate([_random_pure_set(pool, int(k), rng, int(s))
                                  for k, s in zip(support, sizes)])
            counts.append(ucc_of(pool, idx))
        rep.evaluated += 1
        if counts[0] != counts[1] or counts[0] != support.size:
            rep.violations += 1
    return rep


def check_propB3(pool: InstancePool, kde: KdeConfig, trials: int = 100,
                 rng: np.random.Generator | int | None = 0, set_size: int = 16,
                 feature_map: FeatureMap | None = None,
                 predictor: Callable[[Sequence[np.ndarray]], np.ndarray] | None = None,
                 tol: float = 1e-9) -> PropReport:
    """Disjoint sets with equal distributions pool to that same distribution.

    The second set is a fresh copy of the first set's instances, so the two
    index sets are disjoint while their features coincide.  If ``predictor``
    (a batch of instance matrices -> predicted ucc labels) is given, the two
    sets and their union must also get the same prediction.
    """
    rng = np.random.default_rng(rng)
    feature_map = feature_map or (lambda x: x)
    rep = PropReport("propB3", trials=trials)
    rep.details["max_mix_error"] = 0.0
    rep.details["prediction_mismatches"] = 0
    for _ in range(trials):
        n = int(rng.integers(1, set_size + 1))
        first = rng.choice(pool.size, size=n, replace=False)
        x = pool.instances[first]
        augmented = np.concatenate([pool.instances, x])
        second = pool.size + np.arange(n)
        assert not set(first.tolist()) & set(second.tolist())
        fa = feature_map(augmented[first])
        fb = feature_map(augmented[second])
        ha, hb = kde_forward(fa, kde)[0], kde_forward(fb, kde)[0]
        wa, wb = n / (2 * n), n / (2 * n)
        if wa + wb != 1.0:
            rep.violations += 1
        mixed = mix_distributions([(ha, wa), (hb, wb)])
        union = kde_forward(np.concatenate([fa, fb]), kde)[0]
        err = max(np.abs(mixed.values - ha.values).max(), np.abs(mixed.values - hb.values).max(),
                  np.abs(union.values - ha.values).max())
        rep.details["max_mix_error"] = max(rep.details["max_mix_error"], float(err))
        rep.evaluated += 1
        if err > tol:
            rep.violations += 1
        if predictor is not None:
            preds = predictor([augmented[first], augmented[second],
                               augmented[np.concatenate([first, second])]])
            if not (preds[0] == preds[1] == preds[2]):
                rep.details["prediction_mismatches"] += 1
                rep.violations += 1
    return rep
