import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedpews.metrics import (
    RoundRecord,
    RunLog,
    activation_profile,
    model_digest,
    penalized_mean_rounds,
    rounds_to_target,
    summarize_seeds,
)
from fedpews.nncore import ModelSpec

curves = st.lists(st.floats(0.0, 100.0), min_size=1, max_size=30)


def test_rounds_to_target_first_crossing():
    assert rounds_to_target([50, 98, 99.2, 99.5], 99) == 3
    assert rounds_to_target([50, 60, 70], 99) is None
    assert rounds_to_target([0.5, 10.0], 0.0001) == 1


def test_rounds_to_target_accepts_runlog():
    log = RunLog({}, [RoundRecord(t, a, 0.1, 0.0, False) for t, a in enumerate([10, 99, 100], 1)])
    assert rounds_to_target(log, 99) == 2


def test_rounds_to_target_rejects_bad_target():
    with pytest.raises(ValueError):
        rounds_to_target([1.0], 0)


@given(curves, st.floats(0.01, 100.0), st.floats(0.01, 100.0))
def test_rounds_to_target_monotone(curve, a, b):
    lo, hi = sorted((a, b))
    r_lo, r_hi = rounds_to_target(curve, lo), rounds_to_target(curve, hi)
    if r_hi is not None:
        assert r_lo is not None and r_lo <= r_hi


def _curve(reach_at, n=200):
    return [50.0] * (reach_at - 1) + [99.5] * (n - reach_at + 1)


def test_penalized_mean_rounds():
    assert penalized_mean_rounds([_curve(10, 50), _curve(20, 50)], 99) == 15
    assert penalized_mean_rounds([_curve(10, 50), [60.0] * 50], 99) == (10 + 51) / 2
    with pytest.raises(ValueError):
        penalized_mean_rounds([], 99)


def test_summarize_mean_sample_std():
    s = summarize_seeds([_curve(148), _curve(145), _curve(151)], 99)
    assert s.rounds_mean == 148 and s.rounds_std == pytest.approx(3.0)
    assert s.n_reached == 3
    assert s.rounds_text() == "148.00±3.00"


def test_summarize_single_reaching_seed_is_na():
    s = summarize_seeds([_curve(120), [60.0] * 200, [70.0] * 200], 99)
    assert s.rounds_mean == 120 and s.rounds_std is None
    assert "NA" in s.rounds_text()
    assert s.final_mean == pytest.approx((99.5 + 60 + 70) / 3)


def test_summarize_nobody_reaches():
    s = summarize_seeds([[60.0] * 5, [70.0] * 5], 99)
    assert s.rounds_mean is None and s.rounds_text() == "✗"


def test_summarize_identical_logs():
    s = summarize_seeds([_curve(10)] * 3, 99)
    assert s.rounds_std == 0 and s.final_std == 0


def test_summarize_empty():
    with pytest.raises(ValueError):
        summarize_seeds([], 99)


@given(st.lists(curves, min_size=1, max_size=5), st.randoms())
def test_summarize_permutation_invariant(logs, rnd):
    shuffled = list(logs)
    rnd.shuffle(shuffled)
    a, b = summarize_seeds(logs, 90), summarize_seeds(shuffled, 90)
    assert a == b or (math.isnan(a.final_mean) and math.isnan(b.final_mean))


def test_round_record_accuracy_range():
    with pytest.raises(ValueError):
        RoundRecord(1, 101.0, 0.0, 0.0, False)


def test_activation_profile_hand_computed():
    spec = ModelSpec.from_dims([2, 2, 2])
    params = np.array([1, 2, -1, 1, 0.5, -0.5, 1, -1, 2, 0.5, 0.1, -0.2], dtype=float)
    batch = np.array([[1.0, 1.0], [-1.0, 2.0]])
    # relu(W1 x + b1): [3.5, 0] and [3.5, 2.5]
    np.testing.assert_allclose(activation_profile(spec, params, None, batch), [7.0, 2.5])
    np.testing.assert_array_equal(activation_profile(spec, params, [1, 0], batch), [7.0, 0.0])


def test_activation_profile_zero_input_zero_bias():
    spec = ModelSpec.from_dims([5, 6, 4, 3])
    params = np.random.default_rng(0).normal(size=spec.d)
    for _, b in spec.unpack(params):
        b[...] = 0
    assert np.all(activation_profile(spec, params, None, np.zeros((7, 5))) == 0)


def test_activation_profile_nonnegative():
    rng = np.random.default_rng(1)
    spec = ModelSpec.from_dims([5, 6, 4, 3])
    prof = activation_profile(spec, rng.normal(size=spec.d), rng.integers(0, 2, spec.h), rng.normal(size=(9, 5)))
    assert prof.shape == (spec.h,) and np.all(prof >= 0)


def test_model_digest_stable():
    p = np.arange(5.0)
    assert model_digest(p) == model_digest(p.copy())
    assert model_digest(p) != model_digest(p + 1e-300)
