import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ucc.errors import ContractError, EmptyBagError, ShapeError
from ucc.kde_pool import (FeatureDistribution, KdeConfig, kde_backward, kde_backward_batch,
                          kde_forward, kde_forward_batch, mean_pool, mean_pool_backward_batch,
                          mean_pool_batch, mix_distributions)
from ucc.ndcore import grad_check

CFG = KdeConfig()
unit_features = arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 4)),
                       elements=st.floats(0, 1))


def test_sample_points():
    v = CFG.sample_points
    assert v.shape == (11,)
    assert v[0] == 0.0 and v[-1] == 1.0
    assert np.all(np.diff(v) > 0)
    assert np.allclose(v, np.linspace(0, 1, 11), atol=1e-15)


@pytest.mark.parametrize("kwargs", [dict(num_bins=1), dict(bandwidth=0.0), dict(range_lo=1.0, range_hi=1.0)])
def test_config_contract(kwargs):
    with pytest.raises(ContractError):
        KdeConfig(**kwargs)


@pytest.mark.parametrize("b", range(11))
def test_single_instance_peaks_at_its_bin(b):
    dist, _ = kde_forward([[CFG.sample_points[b]]], CFG)
    assert int(np.argmax(dist.values[0])) == b


def test_two_point_bag_matches_scalar_loop():
    sigma, feats = 0.1, [0.2, 0.8]
    raw = []
    for b in range(11):
        v = b / 10
        total = 0.0
        for f in feats:
            total += math.exp(-(v - f) ** 2 / (2 * sigma ** 2)) / math.sqrt(2 * math.pi * sigma ** 2)
        raw.append(total / len(feats))
    expect = np.array(raw) / sum(raw)
    dist, _ = kde_forward(np.array(feats)[:, None], CFG)
    assert np.max(np.abs(dist.values[0] - expect)) < 1e-12
    assert abs(dist.mass[0] - sum(raw)) < 1e-12


def test_duplicating_every_instance(rng):
    f = rng.uniform(size=(7, 3))
    a, _ = kde_forward(f, CFG)
    b, _ = kde_forward(np.repeat(f, 2, axis=0), CFG)
    assert np.max(np.abs(a.values - b.values)) < 1e-12


def test_empty_bag():
    with pytest.raises(EmptyBagError):
        kde_forward(np.zeros((0, 3)), CFG)


@settings(max_examples=60, deadline=None)
@given(f=unit_features, seed=st.integers(0, 10**6))
def test_rows_normalized_and_permutation_invariant(f, seed):
    dist, _ = kde_forward(f, CFG)
    assert np.all(dist.values >= 0)
    assert np.max(np.abs(dist.values.sum(axis=1) - 1)) < 1e-9
    perm = np.random.default_rng(seed).permutation(f.shape[0])
    other, _ = kde_forward(f[perm], CFG)
    assert np.max(np.abs(other.values - dist.values)) < 1e-9


@settings(max_examples=40, deadline=None)
@given(f=unit_features, k=st.integers(2, 5))
def test_repeating_bag_k_times(f, k):
    a, _ = kde_forward(f, CFG)
    b, _ = kde_forward(np.tile(f, (k, 1)), CFG)
    assert np.max(np.abs(a.values - b.values)) < 1e-9


def test_zero_upstream_zero_gradient(rng):
    _, cache = kde_forward(rng.uniform(size=(5, 2)), CFG)
    assert not np.any(kde_backward(cache, CFG, np.zeros((2, 11))))


def test_midpoint_uniform_upstream_is_stationary():
    _, cache = kde_forward([[0.5]], CFG)
    assert abs(kde_backward(cache, CFG, np.ones((1, 11)))[0, 0]) < 1e-10


def test_backward_shape_mismatch(rng):
    _, cache = kde_forward(rng.uniform(size=(5, 2)), CFG)
    with pytest.raises(ShapeError):
        kde_backward(cache, CFG, np.ones((3, 11)))


def _kde_fd_error(f, upstream):
    _, cache = kde_forward(f, CFG)
    analytic = kde_backward(cache, CFG, upstream)

    def loss(vec):
        return float(np.sum(upstream * kde_forward(vec.reshape(f.shape), CFG)[0].values))

    return grad_check(loss, f.ravel(), analytic.ravel(), eps=1e-5)


def test_backward_matches_finite_differences(rng):
    for _ in range(10):
        f = rng.uniform(size=(8, 4))
        assert _kde_fd_error(f, rng.normal(size=(4, 11))) < 1e-6


def test_batch_equals_per_bag(rng):
    sizes = [3, 1, 6]
    f = rng.uniform(size=(10, 2))
    dist, cache = kde_forward_batch(f, sizes, CFG)
    g = rng.normal(size=dist.shape)
    grads = kde_backward_batch(cache, CFG, g)
    start = 0
    for k, n in enumerate(sizes):
        single, c1 = kde_forward(f[start:start + n], CFG)
        assert np.max(np.abs(single.values - dist[k])) < 1e-15
        assert np.max(np.abs(kde_backward(c1, CFG, g[k]) - grads[start:start + n])) < 1e-15
        start += n


def test_batch_size_mismatch(rng):
    with pytest.raises(ShapeError):
        kde_forward_batch(rng.uniform(size=(4, 2)), [2, 3], CFG)
    with pytest.raises(EmptyBagError):
        kde_forward_batch(rng.uniform(size=(4, 2)), [4, 0], CFG)


def test_mean_pool_examples(rng):
    x = rng.normal(size=(1, 3))
    assert np.array_equal(mean_pool(x), x[0])
    y = rng.normal(size=(4, 3))
    assert np.max(np.abs(mean_pool(np.vstack([y, -y])))) < 1e-15
    z = rng.normal(size=(5, 3))
    loop = [sum(z[i, j] for i in range(5)) / 5 for j in range(3)]
    assert np.max(np.abs(mean_pool(z) - loop)) < 1e-12
    with pytest.raises(EmptyBagError):
        mean_pool(np.zeros((0, 3)))


def test_mean_pool_backward_spreads_evenly(rng):
    sizes = [2, 3]
    g = rng.normal(size=(2, 4))
    back = mean_pool_backward_batch(sizes, g)
    assert np.allclose(back[:2], g[0] / 2) and np.allclose(back[2:], g[1] / 3)
    f = rng.normal(size=(5, 4))
    assert np.allclose(mean_pool_batch(f, sizes)[1], f[2:].mean(axis=0))


def test_mix_single_part_and_identical_halves(rng):
    d, _ = kde_forward(rng.uniform(size=(6, 3)), CFG)
    assert np.max(np.abs(mix_distributions([(d, 1.0)]).values - d.values)) < 1e-15
    assert np.max(np.abs(mix_distributions([(d, 0.5), (d, 0.5)]).values - d.values)) < 1e-15


def test_mix_equal_masses_is_plain_weighted_sum(rng):
    a = FeatureDistribution(rng.dirichlet(np.ones(5), size=2))
    b = FeatureDistribution(rng.dirichlet(np.ones(5), size=2))
    mixed = mix_distributions([(a, 0.3), (b, 0.7)])
    assert np.max(np.abs(mixed.values - (0.3 * a.values + 0.7 * b.values))) < 1e-15


def test_mix_weight_contract(rng):
    d, _ = kde_forward(rng.uniform(size=(3, 2)), CFG)
    with pytest.raises(ContractError):
        mix_distributions([(d, 0.5), (d, 0.4)])
    with pytest.raises(ContractError):
        mix_distributions([(d, 1.5), (d, -0.5)])
    with pytest.raises(ContractError):
        mix_distributions([])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 30), parts=st.integers(2, 5))
def test_decomposability(seed, n, parts):
    r = np.random.default_rng(seed)
    f = r.uniform(-0.2, 1.2, size=(n, 3))
    parts = min(parts, n)
    cuts = np.sort(r.choice(np.arange(1, n), size=parts - 1, replace=False))
    blocks = np.split(r.permutation(n), cuts)
    whole, _ = kde_forward(f, CFG)
    mixed = mix_distributions([(kde_forward(f[b], CFG)[0], len(b) / n) for b in blocks])
    assert np.max(np.abs(mixed.values - whole.values)) < 1e-9
