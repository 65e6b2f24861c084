import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wiretap_dp.channel import (
    NOISELESS,
    ChannelConfig,
    DegenerateSignalError,
    from_symbols,
    normalize_power,
    pair_complex,
    to_symbols,
    transmit,
    unpair_complex,
)
from wiretap_dp.diffcore import DimensionError

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_normalize_example():
    out = normalize_power(np.array([3.0, 4.0]), 1.0)
    np.testing.assert_allclose(out, np.array([3.0, 4.0]) * np.sqrt(2 / 25), rtol=1e-15)
    assert np.mean(out**2) == pytest.approx(1.0, abs=1e-12)


def test_normalize_already_at_power():
    z = np.array([1.0, -1.0, 1.0, 1.0])
    np.testing.assert_allclose(normalize_power(z, 1.0), z, rtol=1e-15)


def test_normalize_random_power_two():
    z = np.random.default_rng(0).normal(size=(10, 37))
    out = normalize_power(z, 2.0)
    np.testing.assert_allclose(np.mean(out**2, axis=1), 2.0, atol=1e-12)


def test_normalize_zero_signal():
    with pytest.raises(DegenerateSignalError):
        normalize_power(np.zeros(4))


@given(arrays(np.float64, 8, elements=st.floats(0.1, 10)), st.floats(0.01, 100))
def test_normalize_scale_invariant(z, alpha):
    np.testing.assert_allclose(normalize_power(alpha * z), normalize_power(z), rtol=1e-12)


def test_pair_example():
    np.testing.assert_array_equal(pair_complex(np.array([1.0, 2, 3, 4])), np.array([1 + 2j, 3 + 4j]))
    assert pair_complex(np.array([])).shape == (0,)


def test_pair_odd_rejected():
    with pytest.raises(DimensionError):
        pair_complex(np.ones(3))


@given(st.integers(0, 20).flatmap(lambda n: arrays(np.float64, 2 * n, elements=finite)))
def test_pair_round_trip(z):
    np.testing.assert_array_equal(unpair_complex(pair_complex(z)), z)


def test_odd_length_symbols_pad():
    z = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(from_symbols(to_symbols(z), 3), z)


def test_noise_variance_values():
    assert ChannelConfig(20.0).noise_var == pytest.approx(0.01)
    assert ChannelConfig(0.0, P=2.0).noise_var == 2.0
    assert ChannelConfig(5.0).noise_var == pytest.approx(10 * ChannelConfig(15.0).noise_var)


def test_noiseless_is_identity():
    s = np.array([1 + 1j, -2 + 0.5j])
    np.testing.assert_array_equal(transmit(s, NOISELESS, np.random.default_rng(0)), s)


def test_awgn_variance_10db():
    cfg = ChannelConfig(10.0)
    n = transmit(np.zeros(1_000_000, dtype=complex), cfg, np.random.default_rng(1))
    var = np.mean(np.abs(n) ** 2)
    assert 0.098 <= var <= 0.102
    # half the power in each component
    assert np.var(n.real) == pytest.approx(0.05, rel=0.02)


def test_independent_streams_same_variance():
    cfg = ChannelConfig(10.0)
    s = np.zeros(200_000, dtype=complex)
    a = transmit(s, cfg, np.random.default_rng(2))
    b = transmit(s, cfg, np.random.default_rng(3))
    assert np.mean(np.abs(a) ** 2) == pytest.approx(np.mean(np.abs(b) ** 2), rel=0.02)
    assert abs(np.corrcoef(a.real, b.real)[0, 1]) < 0.01


@given(st.integers(1, 15), st.floats(0.1, 10))
def test_symbol_factor_gives_symbol_power(n, P):
    from wiretap_dp.channel import symbol_factor

    z = np.random.default_rng(n).normal(size=(3, n))
    s = to_symbols(z * symbol_factor(z, P))
    np.testing.assert_allclose(np.mean(np.abs(s) ** 2, axis=1), P, rtol=1e-12)
