import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from wiretap_dp.dpmech import (
    ClipBounds,
    PrivacyMechanism,
    clip,
    fit_clip_bounds,
    laplace_noise,
    laplace_perturb,
    sensitivity,
)


def interp_quantile(sorted_vals, q):
    pos = q * (len(sorted_vals) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(sorted_vals) - 1)
    return sorted_vals[lo] + (pos - lo) * (sorted_vals[hi] - sorted_vals[lo])


def test_quantiles_of_1_to_1000():
    b = fit_clip_bounds(np.arange(1.0, 1001.0))
    assert b.a == pytest.approx(5.995, abs=1e-9)
    assert b.b == pytest.approx(995.005, abs=1e-9)


def test_quantiles_match_sort_oracle():
    vals = np.random.default_rng(0).normal(size=777)
    s = sorted(vals.tolist())
    b = fit_clip_bounds([vals[:300], vals[300:]])
    assert b.a == pytest.approx(interp_quantile(s, 0.005), abs=1e-12)
    assert b.b == pytest.approx(interp_quantile(s, 0.995), abs=1e-12)


def test_constant_dataset():
    b = fit_clip_bounds(np.full(300, 2.5))
    assert b.a == b.b == 2.5


def test_uniform_monte_carlo_quantiles():
    b = fit_clip_bounds(np.random.default_rng(1).random(100_000))
    assert 0.003 < b.a < 0.007 and 0.993 < b.b < 0.997


def test_empty_and_tiny_inputs_rejected():
    with pytest.raises(ValueError):
        fit_clip_bounds([])
    with pytest.raises(ValueError):
        fit_clip_bounds(np.ones(199))


def test_clip_examples():
    bounds = ClipBounds(-1.0, 1.0)
    assert clip(np.array([5.0]), bounds)[0] == 1.0
    inside = np.array([-0.5, 0.0, 0.9])
    np.testing.assert_array_equal(clip(inside, bounds), inside)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30), st.floats(-10, 0), st.floats(0, 10))
def test_clip_idempotent(vals, a, b):
    bounds = ClipBounds(a, b)
    once = clip(np.array(vals), bounds)
    np.testing.assert_array_equal(clip(once, bounds), once)


def test_clip_modifies_about_one_percent():
    rng = np.random.default_rng(2)
    bounds = fit_clip_bounds(rng.normal(size=100_000))
    fresh = rng.normal(size=100_000)
    frac = np.mean(clip(fresh, bounds) != fresh)
    assert 0.005 <= frac <= 0.015


def test_sensitivity_examples():
    assert sensitivity(ClipBounds(-1, 1), 4) == 4.0
    assert sensitivity(ClipBounds(3, 3), 10) == 0.0
    with pytest.raises(ValueError):
        sensitivity(ClipBounds(0, 1), 0)


def test_sensitivity_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        a, b = np.sort(rng.normal(scale=5, size=2))
        n = int(rng.integers(1, 500))
        brute = np.linalg.norm(np.full(n, b) - np.full(n, a))
        assert abs(sensitivity(ClipBounds(a, b), n) - brute) < 1e-12 * max(1.0, brute)


@given(st.floats(0, 5), st.floats(0, 5), st.integers(1, 100), st.integers(1, 100))
def test_sensitivity_monotone(w1, w2, n1, n2):
    lo, hi = sorted([w1, w2])
    assert sensitivity(ClipBounds(0, lo), n1) <= sensitivity(ClipBounds(0, hi), n1)
    assert sensitivity(ClipBounds(0, lo), min(n1, n2)) <= sensitivity(ClipBounds(0, lo), max(n1, n2))


def test_scale_reference_value():
    mech = PrivacyMechanism(351.88, 100.0, 128)
    assert mech.scale == pytest.approx(3.5188, rel=1e-12)


@given(st.floats(1e-3, 1e3))
def test_doubling_epsilon_halves_scale(eps):
    mech = PrivacyMechanism(58.4, eps, 128)
    assert mech.with_epsilon(2 * eps).scale == pytest.approx(mech.scale / 2, rel=1e-15)


def test_bad_mechanism():
    with pytest.raises(ValueError):
        PrivacyMechanism(1.0, 0.0, 1)
    with pytest.raises(ValueError):
        ClipBounds(1.0, 0.0)


def test_zero_scale_is_identity():
    Z = np.random.default_rng(4).normal(size=(3, 16))
    out = laplace_perturb(Z, PrivacyMechanism(0.0, 1.0, 48), np.random.default_rng(0))
    np.testing.assert_array_equal(out, Z)


def test_laplace_moments():
    x = laplace_noise(1_000_000, 1.0, np.random.default_rng(5))
    assert -0.02 < x.mean() < 0.02
    assert 1.9 <= x.var() <= 2.1


def test_laplace_ks():
    x = laplace_noise(100_000, 1.7, np.random.default_rng(6))
    assert stats.kstest(x, stats.laplace(scale=1.7).cdf).pvalue > 0.01


def test_laplace_deterministic_per_seed():
    a = laplace_noise(10, 1.0, np.random.default_rng(9))
    b = laplace_noise(10, 1.0, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)
