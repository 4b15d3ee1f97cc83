import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ucc.bags import Bag, InstancePool, MilDataset, make_mil_dataset, sample_bag, split_pool, ucc_of
from ucc.errors import ContractError, EmptyBagError, ShapeError


def test_pool_invariants():
    with pytest.raises(ContractError):
        InstancePool(np.zeros((3, 2)), [1, 1, 3], 3)  # class 2 is empty
    with pytest.raises(ShapeError):
        InstancePool(np.zeros((3, 2)), [1, 2], 2)
    with pytest.raises(ContractError):
        InstancePool(np.zeros((2, 2)), [0, 1], 1)
    assert not InstancePool(np.zeros((2, 2)), None, 0).labelled


def test_ucc_of_examples(small_pool):
    assert ucc_of(small_pool, [0]) == 1
    one_each = [small_pool.class_indices(k)[0] for k in range(1, 5)]
    assert ucc_of(small_pool, one_each) == 4
    with pytest.raises(EmptyBagError):
        ucc_of(small_pool, [])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 40))
def test_ucc_of_matches_label_set(small_pool, seed, n):
    idx = np.random.default_rng(seed).choice(small_pool.size, size=n, replace=False)
    labels = set()
    for i in idx:
        labels.add(int(small_pool.labels[i]))
    assert ucc_of(small_pool, idx) == len(labels)


def test_pure_bag(small_pool, rng):
    bag = sample_bag(small_pool, 1, 8, rng)
    assert len(bag) == 8 and len(set(small_pool.labels[list(bag.indices)])) == 1


def test_all_distinct_bag(small_pool, rng):
    bag = sample_bag(small_pool, 4, 4, rng)
    assert sorted(small_pool.labels[list(bag.indices)]) == [1, 2, 3, 4]


def test_many_two_class_bags(small_pool, rng):
    for _ in range(10_000):
        bag = sample_bag(small_pool, 2, 32, rng)
        assert ucc_of(small_pool, bag.indices) == 2
        assert len(set(bag.indices)) == 32


@pytest.mark.parametrize("target,size", [(5, 16), (3, 2), (0, 4)])
def test_infeasible_targets(small_pool, rng, target, size):
    with pytest.raises(ContractError):
        sample_bag(small_pool, target, size, rng)


def test_too_few_instances(rng):
    # neither class has four members, so no pure bag of size four exists
    pool = InstancePool(np.zeros((4, 1)), [1, 1, 1, 2], 2)
    with pytest.raises(ContractError):
        sample_bag(pool, 1, 4, rng)


def test_sampling_is_seeded(small_pool):
    a = [sample_bag(small_pool, 3, 10, np.random.default_rng(9)).indices for _ in range(3)]
    b = [sample_bag(small_pool, 3, 10, np.random.default_rng(9)).indices for _ in range(3)]
    assert a == b


def test_bag_validates_label():
    pool = InstancePool(np.zeros((3, 1)), [1, 2, 2], 2)
    assert Bag.from_pool(pool, [1, 2]).ucc == 1
    with pytest.raises(ContractError):
        Bag.from_pool(pool, [0, 1], ucc=1)


def test_dataset_out_of_range_indices():
    pool = InstancePool(np.zeros((3, 1)), [1, 2, 2], 2)
    with pytest.raises(ContractError):
        MilDataset(pool, (Bag((0, 3), 2),))


def test_empty_dataset(small_pool, rng):
    assert len(make_mil_dataset(small_pool, 1, 3, 0, 8, rng)) == 0


def test_balanced_dataset(small_pool, rng):
    ds = make_mil_dataset(small_pool, 2, 4, 100, 16, rng)
    assert len(ds) == 300
    assert ds.label_counts() == {2: 100, 3: 100, 4: 100}
    for bag in ds.bags:
        assert ucc_of(small_pool, bag.indices) == bag.ucc
    for x, u in ds.materialize()[:5]:
        assert x.shape == (16, small_pool.dim) and u == 2


def test_dataset_range_contract(small_pool, rng):
    with pytest.raises(ContractError):
        make_mil_dataset(small_pool, 3, 2, 5, 8, rng)
    with pytest.raises(ContractError):
        make_mil_dataset(small_pool, 1, 5, 5, 8, rng)


def test_proportions_do_not_change_ucc(small_pool, rng):
    # same class support, very different proportions
    for _ in range(200):
        support = rng.choice(np.arange(1, 5), size=rng.integers(1, 5), replace=False)
        counts = []
        for _ in range(2):
            sizes = 1 + rng.multinomial(12, rng.dirichlet(np.ones(support.size)))
            idx = np.concatenate([rng.choice(small_pool.class_indices(k), s, replace=False)
                                  for k, s in zip(support, sizes)])
            counts.append(ucc_of(small_pool, idx))
        assert counts[0] == counts[1] == support.size


def test_split_is_stratified(small_pool, rng):
    a, b = split_pool(small_pool, 0.25, rng)
    assert a.size + b.size == small_pool.size
    for k in range(1, 5):
        assert b.class_indices(k).size == 15 and a.class_indices(k).size == 45


def test_subset_renumbers(small_pool):
    idx = np.concatenate([small_pool.class_indices(2)[:3], small_pool.class_indices(4)[:2]])
    sub = small_pool.subset(idx)
    assert sub.n_classes == 2 and sorted(sub.labels.tolist()) == [1, 1, 1, 2, 2]
