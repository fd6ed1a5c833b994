import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedpews.masking import (
    diversity_penalty,
    expand_to_param_mask,
    fixed_partition_masks,
    sample_neuron_mask,
    score_gradient,
    sigmoid_probs,
    ste_score_update,
)
from fedpews.nncore import ModelSpec, synthetic_spec
from fedpews.rng import stream
from oracles import bruteforce_param_mask

probs = arrays(np.float64, 6, elements=st.floats(0.0, 1.0))


def test_sigmoid_values():
    assert sigmoid_probs(np.array([0.0]))[0] == 0.5
    assert sigmoid_probs(np.array([20.0]))[0] == pytest.approx(1 - 2.061e-9, abs=1e-12)
    assert sigmoid_probs(np.array([-np.log(3)]))[0] == pytest.approx(0.25, abs=1e-15)


def test_sample_saturated_probabilities_all_ones():
    theta = np.full(256, 1 - 1e-12)
    assert np.all(sample_neuron_mask(theta, stream(0, "t")) == 1.0)


def test_sample_monte_carlo_mean():
    rng = stream(4, "mc")
    theta = np.full(256, 0.5)
    draws = np.stack([sample_neuron_mask(theta, rng) for _ in range(10_000)])
    means = draws.mean(axis=0)
    assert np.all((means >= 0.48) & (means <= 0.52))


def test_sample_unbiased_within_three_sigma():
    rng = stream(5, "mc")
    theta = np.linspace(0.05, 0.95, 19)
    n = 20_000
    means = np.mean([sample_neuron_mask(theta, rng) for _ in range(n)], axis=0)
    sigma = np.sqrt(theta * (1 - theta) / n)
    assert np.all(np.abs(means - theta) <= 3 * sigma)


def test_sample_deterministic_per_stream():
    theta = np.full(64, 0.3)
    a = sample_neuron_mask(theta, stream(9, "mask", 1, 2, 3))
    b = sample_neuron_mask(theta, stream(9, "mask", 1, 2, 3))
    c = sample_neuron_mask(theta, stream(9, "mask", 1, 2, 4))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert set(np.unique(a)) <= {0.0, 1.0}


def test_expand_all_ones():
    spec = synthetic_spec()
    assert np.all(expand_to_param_mask(np.ones(spec.h), spec) == 1.0)


def test_expand_tiny_hand_enumeration():
    spec = ModelSpec.from_dims([2, 2, 2])
    pm = expand_to_param_mask([1, 0], spec)
    # W1 row 2 (2), b1[1] (1), W2 column 2 (2)
    expected = np.array([1, 1, 0, 0, 1, 0, 1, 0, 1, 0, 1, 1], dtype=float)
    np.testing.assert_array_equal(pm, expected)
    assert (pm == 0).sum() == 5


def test_expand_single_fc2_neuron_off():
    spec = synthetic_spec()
    m = np.ones(spec.h)
    m[32 + 17] = 0  # a neuron in FC2's output
    assert (expand_to_param_mask(m, spec) == 0).sum() == 32 + 1 + 128 == 161


def test_expand_length_mismatch():
    with pytest.raises(ValueError):
        expand_to_param_mask(np.ones(3), ModelSpec.from_dims([2, 2, 2]))


def test_expand_matches_bruteforce_exhaustive():
    spec = ModelSpec.from_dims([2, 3, 3, 2])
    for bits in itertools.product([0.0, 1.0], repeat=spec.h):
        m = np.array(bits)
        np.testing.assert_array_equal(expand_to_param_mask(m, spec), bruteforce_param_mask(spec, m))


def test_diversity_penalty_examples():
    v, g = diversity_penalty(np.full(3, 0.4), np.full(3, 0.4))
    assert v == 0 and np.all(g == 0)
    v, _ = diversity_penalty(np.ones(256), np.zeros(256))
    assert v == 256
    v, g = diversity_penalty(np.array([0.8, 0.3]), np.array([0.5, 0.5]))
    assert v == pytest.approx(0.13, abs=1e-15)
    np.testing.assert_allclose(g, [0.6, -0.4], atol=1e-15)


@given(probs, probs)
def test_diversity_bounded_by_h(a, b):
    v, _ = diversity_penalty(a, b)
    assert 0 <= v <= len(a)


def test_ste_update_examples():
    s = np.array([0.3, -1.2])
    out = ste_score_update(s, np.zeros(2), sigmoid_probs(s), np.full(2, 0.5), 0.0, 0.1)
    np.testing.assert_array_equal(out, s)

    s0 = np.zeros(4)
    out = ste_score_update(s0, np.zeros(4), sigmoid_probs(s0), np.full(4, 0.5), 3.0, 0.1)
    assert np.all(out == 0.0)

    out = ste_score_update(np.zeros(1), np.array([1.0]), np.array([0.5]), np.array([0.9]), 2.0, 0.1)
    # (1 - 2 * 2 * (0.5 - 0.9)) * 0.25 = 0.65
    assert out[0] == pytest.approx(-0.065, abs=1e-15)


def test_score_gradient_matches_finite_difference_of_surrogate():
    # with the mask replaced by its expectation theta, the STE gradient is exact
    rng = np.random.default_rng(3)
    c = rng.normal(size=5)            # linear data loss c . theta
    excl = rng.uniform(size=5)
    s = rng.normal(size=5)
    lam = 1.7

    def surrogate(s):
        th = sigmoid_probs(s)
        return c @ th - lam * np.sum((th - excl) ** 2)

    eps = 1e-6
    fd = np.array([(surrogate(s + eps * e) - surrogate(s - eps * e)) / (2 * eps) for e in np.eye(5)])
    np.testing.assert_allclose(score_gradient(c, sigmoid_probs(s), excl, lam), fd, rtol=1e-7, atol=1e-10)


@settings(max_examples=200)
@given(arrays(np.float64, 8, elements=st.floats(-10, 10)),
       arrays(np.float64, 8, elements=st.floats(-5, 5)))
def test_ste_sign_property(s, grad_mask):
    theta = sigmoid_probs(s)
    excl = np.full(8, 0.5)
    direction = -0.1 * score_gradient(grad_mask, theta, excl, 0.0)
    np.testing.assert_array_equal(direction, -0.1 * (grad_mask * theta * (1 - theta)))
    np.testing.assert_array_equal(ste_score_update(s, grad_mask, theta, excl, 0.0, 0.1), s + direction)
    nz = direction != 0
    assert np.all(np.sign(direction[nz]) == -np.sign(grad_mask[nz]))


def test_fixed_partition_equal_halves_synthetic():
    spec = synthetic_spec()
    m1, m2 = fixed_partition_masks(spec, 2)
    blocks = [(0, 16), (32, 64), (96, 160), (224, 240)]  # [0,16) of each hidden layer
    expected = np.zeros(spec.h)
    for a, b in blocks:
        expected[a:b] = 1
    np.testing.assert_array_equal(m1, expected)
    np.testing.assert_array_equal(m1 + m2, np.ones(spec.h))


def test_fixed_partition_unequal():
    spec = ModelSpec.from_dims([5, 32, 4])
    m1, m2 = fixed_partition_masks(spec, 2, [0.25, 0.75])
    assert m1.sum() == 8 and m2.sum() == 24
    assert np.all(m1[:8] == 1)


def test_fixed_partition_rounding_ties_to_lower_index():
    spec = ModelSpec.from_dims([2, 5, 2])
    masks = fixed_partition_masks(spec, 2)
    assert [m.sum() for m in masks] == [3, 2]


def test_fixed_partition_infeasible():
    with pytest.raises(ValueError):
        fixed_partition_masks(ModelSpec.from_dims([2, 3, 2]), 4)
    with pytest.raises(ValueError):
        fixed_partition_masks(ModelSpec.from_dims([2, 10, 2]), 2, [0.02, 0.98])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.lists(st.floats(0.05, 1.0), min_size=1, max_size=6), st.integers(0, 1000))
def test_fixed_partition_is_a_partition(n, weights, seed):
    weights = (weights * n)[:n]
    fr = np.array(weights) / np.sum(weights)
    rng = np.random.default_rng(seed)
    spec = ModelSpec.from_dims([3, *rng.integers(24, 40, size=3), 2])
    try:
        masks = fixed_partition_masks(spec, n, fr)
    except ValueError:
        return  # some layer cannot host every participant
    total = np.sum(masks, axis=0)
    assert np.all(total == 1)
    for sl in spec.hidden_slices:
        for m in masks:
            assert m[sl].sum() >= 1
