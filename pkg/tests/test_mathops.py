import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evodcn.mathops import (EwmaMoments, RunningStat, bce, bce_grad_pred,
                            l2_distance, mse, relu, sigmoid, softmax)


def test_relu_examples():
    np.testing.assert_array_equal(relu([-1, 0, 2]), [0, 0, 2])
    np.testing.assert_array_equal(relu([0, 0]), [0, 0])
    np.testing.assert_array_equal(relu([3.5]), [3.5])


def test_sigmoid_examples():
    assert sigmoid(np.array([0.0]))[0] == 0.5
    assert abs(sigmoid(np.array([50.0]))[0] - 1.0) < 1e-12
    out = sigmoid(np.array([-2.0, 2.0]))
    np.testing.assert_allclose(out, [0.119203, 0.880797], atol=1e-6)
    assert abs(out.sum() - 1.0) < 1e-12


def test_sigmoid_extreme_inputs_stay_finite():
    out = sigmoid(np.array([-1000.0, 1000.0]))
    assert np.all(np.isfinite(out))
    assert 0.0 <= out[0] <= out[1] <= 1.0


def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.array([3.3, 3.3, 3.3])),
                               [1 / 3, 1 / 3, 1 / 3], atol=1e-12)
    np.testing.assert_allclose(softmax(np.array([0.0, math.log(3.0)])),
                               [0.25, 0.75], atol=1e-12)
    out = softmax(np.array([1000.0, 1000.0]))
    np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-12)
    assert np.all(np.isfinite(out))


def test_softmax_empty_errors():
    with pytest.raises(ValueError):
        softmax(np.array([]))


@given(st.lists(st.floats(min_value=-1e6, max_value=1e6), min_size=1, max_size=20))
@settings(max_examples=200, deadline=None)
def test_softmax_partition_of_unity(values):
    out = softmax(np.array(values))
    assert abs(out.sum() - 1.0) <= 1e-12


def test_l2_distance_examples():
    assert l2_distance(np.array([0.0, 0.0]), np.array([3.0, 4.0])) == 5.0
    x = np.array([0.3, -1.2, 7.0])
    assert l2_distance(x, x) == 0.0
    assert l2_distance(np.array([1.0]), np.array([-1.0])) == 2.0
    with pytest.raises(ValueError):
        l2_distance(np.array([1.0]), np.array([1.0, 2.0]))


@given(st.integers(2, 8), st.integers(0, 2 ** 31 - 1))
@settings(max_examples=100, deadline=None)
def test_l2_triangle_inequality(dim, seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=(3, dim))
    assert l2_distance(a, c) <= l2_distance(a, b) + l2_distance(b, c) + 1e-9


def test_mse_examples():
    x = np.array([0.4, 0.6])
    assert mse(x, x) == 0.0
    assert mse(np.array([0.0, 0.0]), np.array([1.0, 1.0])) == 1.0
    assert mse(np.array([1.0, 2.0]), np.array([2.0, 4.0])) == 2.5
    with pytest.raises(ValueError):
        mse(np.array([1.0]), np.array([1.0, 2.0]))


def test_bce_examples():
    assert abs(bce(np.array([0.5]), np.array([0.5])) - math.log(2.0)) < 1e-9
    assert bce(np.array([1.0]), np.array([1.0 - 1e-7])) < 2e-7
    expect = -(0.3 * math.log(0.3) + 0.7 * math.log(0.7))
    assert abs(bce(np.array([0.3]), np.array([0.3])) - expect) < 1e-6
    assert abs(expect - 0.610864) < 1e-6


def test_bce_rejects_out_of_range():
    with pytest.raises(ValueError):
        bce(np.array([1.2]), np.array([0.5]))
    with pytest.raises(ValueError):
        bce(np.array([0.5]), np.array([-0.1]))


def test_bce_clamps_saturated_predictions():
    assert math.isfinite(bce(np.array([1.0]), np.array([0.0])))


def test_bce_minimized_at_target():
    rng = np.random.default_rng(7)
    t = rng.uniform(0.05, 0.95, size=6)
    base = bce(t, t)
    assert base >= 0.0
    for delta in (-0.04, -0.01, 0.01, 0.04):
        p = np.clip(t + delta, 0.0, 1.0)
        assert bce(t, p) >= base


def test_bce_grad_matches_finite_differences():
    rng = np.random.default_rng(3)
    t = rng.uniform(0.1, 0.9, size=5)
    p = rng.uniform(0.1, 0.9, size=5)
    g = bce_grad_pred(t, p)
    h = 1e-6
    for i in range(5):
        up, dn = p.copy(), p.copy()
        up[i] += h
        dn[i] -= h
        fd = (bce(t, up) - bce(t, dn)) / (2 * h)
        assert abs(fd - g[i]) < 1e-5


class TestRunningStat:
    def test_single_sample(self):
        s = RunningStat()
        s.update(5.0)
        assert s.mean == 5.0 and s.std == 0.0 and s.count == 1

    def test_batch_oracle(self):
        s = RunningStat()
        vals = [1.0, 2.0, 3.0]
        for v in vals:
            s.update(v)
        assert abs(s.mean - 2.0) < 1e-12
        assert abs(s.std - math.sqrt(2.0 / 3.0)) < 1e-12

    def test_constant_signal_min_std_zero(self):
        s = RunningStat()
        for _ in range(3):
            s.update(4.0)
        assert s.min_std == 0.0

    def test_min_std_ignores_first_sample(self):
        s = RunningStat()
        s.update(1.0)
        assert s.min_std == math.inf
        s.update(2.0)
        assert s.min_std == s.std

    def test_reset(self):
        s = RunningStat()
        s.update(3.0)
        s.reset()
        assert s.count == 0 and s.min_mean == math.inf and s.min_std == math.inf
        s.update(7.0)
        assert s.mean == 7.0
        s.reset()
        before = (s.count, s.mean, s.m2, s.min_mean, s.min_std)
        s.reset()
        assert before == (s.count, s.mean, s.m2, s.min_mean, s.min_std)

    def test_rejects_non_finite(self):
        s = RunningStat()
        with pytest.raises(ValueError):
            s.update(float("nan"))
        with pytest.raises(ValueError):
            s.update(float("inf"))

    @given(st.lists(st.floats(min_value=-1e4, max_value=1e4), min_size=1,
                    max_size=50),
           st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=100, deadline=None)
    def test_welford_matches_batch_under_permutation(self, values, seed):
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(values))
        arr = np.array(values)[perm]
        s = RunningStat()
        for v in arr:
            s.update(v)
        assert abs(s.mean - np.mean(values)) <= 1e-9 * max(1.0, abs(np.mean(values)))
        assert abs(s.std - np.std(values)) <= 1e-8 * max(1.0, np.std(values)) + 1e-9

    def test_min_trackers_follow_running_minimum(self):
        s = RunningStat()
        means, stds = [], []
        for v in [5.0, 1.0, 4.0, 2.0, 8.0]:
            s.update(v)
            means.append(s.mean)
            stds.append(s.std)
        assert s.min_mean == min(means)
        assert s.min_std == min(stds[1:])


class TestEwmaMoments:
    def test_first_update_adopts_value(self):
        e = EwmaMoments(0.999)
        e.update(np.array([2.0, -1.0]))
        np.testing.assert_array_equal(e.mean, [2.0, -1.0])
        np.testing.assert_array_equal(e.variance(), [0.0, 0.0])

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(5)
        decay = 0.9
        e = EwmaMoments(decay)
        m = s = None
        for _ in range(50):
            x = rng.normal(size=3)
            e.update(x)
            if m is None:
                m, s = x.copy(), x * x
            else:
                m = decay * m + (1 - decay) * x
                s = decay * s + (1 - decay) * x * x
        np.testing.assert_allclose(e.mean, m, atol=1e-10)
        np.testing.assert_allclose(e.variance(), np.maximum(s - m * m, 0.0),
                                   atol=1e-10)

    def test_lazy_coordinate_init(self):
        e = EwmaMoments(0.5)
        e.update(np.array([1.0]))
        e.grow_coord()
        e.update(np.array([1.0, 3.0]))
        assert e.mean[1] == 3.0
        e.drop_coord(0)
        assert e.mean.shape == (1,)

    def test_variance_nonnegative(self):
        e = EwmaMoments(0.8)
        rng = np.random.default_rng(1)
        for _ in range(100):
            e.update(rng.uniform(size=4))
        assert np.all(e.variance() >= 0.0)
