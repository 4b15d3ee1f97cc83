"""Instance pools and bags labelled by their unique class count."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, EmptyBagError, ShapeError
from .ndcore import as_matrix


@dataclass(frozen=True)
class InstancePool:
    """Instances with hidden class labels in 1..K.

    ``labels`` may be ``None`` for an unlabelled pool, in which case
    ``n_classes`` is 0 and no bag can be sampled from it.
    """

    instances: np.ndarray
    labels: np.ndarray | None
    n_classes: int

    def __post_init__(self):
        x = as_matrix(self.instances, "instances")
        object.__setattr__(self, "instances", x)
        if self.labels is None:
            if self.n_classes != 0:
                raise ContractError("an unlabelled pool must have n_classes == 0")
            return
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "labels", labels)
        if labels.shape[0] != x.shape[0]:
            raise ShapeError(f"{labels.shape[0]} labels for {x.shape[0]} instances")
        if np.any(labels < 1) or np.any(labels > self.n_classes):
            raise ContractError(f"labels must lie in 1..{self.n_classes}")
        present = np.unique(labels)
        if present.size != self.n_classes:
            missing = sorted(set(range(1, self.n_classes + 1)) - set(present.tolist()))
            raise ContractError(f"classes without instances: {missing}")

    @property
    def size(self) -> int:
        return self.instances.shape[0]

    @property
    def dim(self) -> int:
        return self.instances.shape[1]

    @property
    def labelled(self) -> bool:
        return self.labels is not None

    def class_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)

    def subset(self, indices) -> "InstancePool":
        """Pool restricted to ``indices``, with classes renumbered densely from 1."""
        indices = np.asarray(indices, dtype=np.int64)
        x = self.instances[indices]
        if self.labels is None:
            return InstancePool(x, None, 0)
        old = self.labels[indices]
        classes = np.unique(old)
        remap = {int(c): i + 1 for i, c in enumerate(classes)}
        return InstancePool(x, np.array([remap[int(c)] for c in old]), len(classes))


def ucc_of(pool: InstancePool, indices) -> int:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise EmptyBagError("unique class count of an empty subset is undefined")
    if pool.labels is None:
        raise ContractError("pool has no labels")
    if np.any(idx < 0) or np.any(idx >= pool.size):
        raise ContractError("subset indices out of range")
    return int(np.unique(pool.labels[idx]).size)


@dataclass(frozen=True)
class Bag:
    indices: tuple[int, ...]
    ucc: int

    @classmethod
    def from_pool(cls, pool: InstancePool, indices, ucc: int | None = None) -> "Bag":
        true_ucc = ucc_of(pool, indices)
        if ucc is not None and ucc != true_ucc:
            raise ContractError(f"bag claims ucc={ucc} but contains {true_ucc} classes")
        return cls(tuple(int(i) for i in np.asarray(indices).reshape(-1)), true_ucc)

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class MilDataset:
    pool: InstancePool
    bags: tuple[Bag, ...]

    def __post_init__(self):
        for bag in self.bags:
            if bag.indices and (min(bag.indices) < 0 or max(bag.indices) >= self.pool.size):
                raise ContractError("bag indices out of range")

    def __len__(self) -> int:
        return len(self.bags)

    def materialize(self) -> list[tuple[np.ndarray, int]]:
        """(instances, ucc) pairs, the form the model trains on."""
        return [(self.pool.instances[list(b.indices)], b.ucc) for b in self.bags]

    def label_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for b in self.bags:
            counts[b.ucc] = counts.get(b.ucc, 0) + 1
        return counts


def _class_slots(rng, target_ucc: int, bag_size: int, capacity: np.ndarray,
                 tries: int = 100) -> np.ndarray:
    for _ in range(tries):
        slots = np.ones(target_ucc, dtype=np.int64)
        extra = rng.integers(0, target_ucc, size=bag_size - target_ucc)
        slots += np.bincount(extra, minlength=target_ucc)
        if np.all(slots <= capacity):
            return slots
    raise ContractError("chosen classes have too few instances for the requested bag size")


def sample_bag(pool: InstancePool, target_ucc: int, bag_size: int,
               rng: np.random.Generator) -> Bag:
    """Bag of ``bag_size`` distinct instances spanning exactly ``target_ucc`` classes.

    Classes are chosen uniformly; each chosen class gets one slot and the
    remaining slots are assigned to chosen classes uniformly at random.
    """
    if pool.labels is None:
        raise ContractError("cannot sample bags from an unlabelled pool")
    if target_ucc < 1 or target_ucc > pool.n_classes or target_ucc > bag_size:
        raise ContractError(
            f"infeasible target ucc {target_ucc} (K={pool.n_classes}, bag size {bag_size})")
    classes = rng.choice(np.arange(1, pool.n_classes + 1), size=target_ucc, replace=False)
    members = [pool.class_indices(int(k)) for k in classes]
    slots = _class_slots(rng, target_ucc, bag_size, np.array([m.size for m in members]))
    picked = np.concatenate([rng.choice(m, size=s, replace=False)
                             for m, s in zip(members, slots)])
    rng.shuffle(picked)
    return Bag(tuple(int(i) for i in picked), target_ucc)


def make_mil_dataset(pool: InstancePool, ucc_lo: int, ucc_hi: int, bags_per_label: int,
                     bag_size: int, rng: np.random.Generator) -> MilDataset:
    if ucc_lo < 1 or ucc_hi < ucc_lo:
        raise ContractError(f"bad ucc range {ucc_lo}..{ucc_hi}")
    if ucc_hi > pool.n_classes or ucc_hi > bag_size:
        raise ContractError(
            f"ucc {ucc_hi} infeasible with K={pool.n_classes} and bag size {bag_size}")
    bags = [sample_bag(pool, u, bag_size, rng)
            for u in range(ucc_lo, ucc_hi + 1) for _ in range(bags_per_label)]
    return MilDataset(pool, tuple(bags))


def split_pool(pool: InstancePool, fraction: float,
               rng: np.random.Generator) -> tuple[InstancePool, InstancePool]:
    """Stratified split; ``fraction`` of every class goes to the second pool."""
    if not 0.0 < fraction < 1.0:
        raise ContractError("split fraction must lie in (0, 1)")
    first, second = [], []
    for k in range(1, pool.n_classes + 1):
        idx = rng.permutation(pool.class_indices(k))
        cut = max(1, int(round(fraction * idx.size)))
        if cut >= idx.size:
            raise ContractError(f"class {k} is too small to split")
        second.append(idx[:cut])
        first.append(idx[cut:])
    a, b = np.sort(np.concatenate(first)), np.sort(np.concatenate(second))
    return (InstancePool(pool.instances[a], pool.labels[a], pool.n_classes),
            InstancePool(pool.instances[b], pool.labels[b], pool.n_classes))


def bags_from_pool(pool: InstancePool, ucc_range: Sequence[int], bags_per_label: int,
                   bag_size: int, rng: np.random.Generator) -> list[tuple[np.ndarray, int]]:
    lo, hi = ucc_range
    return make_mil_dataset(pool, lo, hi, bags_per_label, bag_size, rng).materialize()
