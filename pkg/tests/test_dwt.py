import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from bikedemand.divergence import kl_divergence, normalize
from bikedemand.dwt import (WAVELETS, InsufficientDataError, dwt_level1, get_wavelet, idwt_level1,
                            idwt_lowpass, lowpass_matrix, mine_pattern, smooth)
from bikedemand.grid import InvalidInputError
from bikedemand.synth import archetype_curve

NAMES = sorted(WAVELETS)


@pytest.mark.parametrize("name", NAMES)
def test_filter_invariants(name):
    f = WAVELETS[name]
    lo, hi = np.array(f.low_pass), np.array(f.high_pass)
    assert abs(lo.sum() - math.sqrt(2)) < 1e-9
    assert abs(lo @ lo - 1) < 1e-9 and abs(lo @ hi) < 1e-12
    L = len(lo)
    assert all(hi[n] == (-1) ** n * lo[L - 1 - n] for n in range(L))


def test_haar_constant():
    a, d = dwt_level1(np.full(8, 3.0), "haar")
    np.testing.assert_allclose(a, 3 * math.sqrt(2), rtol=1e-15)
    np.testing.assert_array_equal(d, 0.0)


@pytest.mark.parametrize("name", NAMES)
def test_constant_and_zero_lowpass(name):
    a, _ = dwt_level1(np.full(16, 0.25), name)
    np.testing.assert_allclose(idwt_lowpass(a, name), 0.25, atol=1e-14)
    np.testing.assert_array_equal(idwt_lowpass(np.zeros(8), name), 0.0)


@pytest.mark.parametrize("name", NAMES)
def test_matches_matrix_oracle(name):
    x = np.random.default_rng(0).normal(size=8)
    A = oracles.dwt_matrix(WAVELETS[name].low_pass, 8)
    a, d = dwt_level1(x, name)
    np.testing.assert_allclose(np.concatenate([a, d]), A @ x, atol=1e-14)
    np.testing.assert_allclose(A @ A.T, np.eye(8), atol=1e-12)


@pytest.mark.parametrize("name", NAMES)
def test_round_trip_batch(name):
    X = np.random.default_rng(1).normal(size=(1000, 48))
    a, d = dwt_level1(X, name)
    assert a.shape == (1000, 24)
    assert np.max(np.abs(idwt_level1(a, d, name) - X)) < 1e-9


@given(arrays(np.float64, st.sampled_from([8, 12, 48]), elements=st.floats(-1e3, 1e3)),
       st.sampled_from(NAMES))
def test_round_trip_and_parseval(x, name):
    a, d = dwt_level1(x, name)
    np.testing.assert_allclose(idwt_level1(a, d, name), x, atol=1e-9)
    np.testing.assert_allclose(a @ a + d @ d, x @ x, rtol=1e-9, atol=1e-9)
    s = idwt_lowpass(a, name)
    assert s @ s <= x @ x + 1e-9


def test_length_errors():
    with pytest.raises(InvalidInputError):
        dwt_level1(np.zeros(7))
    with pytest.raises(InvalidInputError):
        dwt_level1(np.zeros(6), "db4")
    with pytest.raises(InvalidInputError):
        get_wavelet("sym5")


def test_lowpass_matrix_consistent():
    a = np.random.default_rng(2).normal(size=24)
    np.testing.assert_allclose(a @ lowpass_matrix("db2", 48), idwt_lowpass(a, "db2"), atol=1e-14)


def test_identical_days():
    day = np.random.default_rng(3).poisson(10, 48)
    p2 = mine_pattern([day, day])
    p5 = mine_pattern([day] * 5)
    np.testing.assert_allclose(p2.pattern, p5.pattern, atol=1e-12)
    expect = normalize(np.maximum(smooth(normalize(day)), 0))
    np.testing.assert_allclose(p2.pattern, expect, atol=1e-12)
    assert p2.accepted == (p2.max_kl < 0.11)
    assert mine_pattern([day, day], beta=p2.max_kl + 1e-9).accepted


def test_disjoint_spikes_rejected():
    a, b = np.zeros(48), np.zeros(48)
    a[0], b[47] = 10, 10
    res = mine_pattern([a, b])
    assert not res.accepted and res.max_kl > 1.0


def test_needs_two_days():
    with pytest.raises(InsufficientDataError):
        mine_pattern([np.ones(48)])


def test_noisy_triple_peak_accepted():
    planted = archetype_curve("triple_peak", 48, 0.75, 0.05)
    rng = np.random.default_rng(4)
    days = 200 * planted * (1 + 0.05 * rng.standard_normal((28, 48)))
    res = mine_pattern(days)
    assert res.accepted
    assert kl_divergence(planted, res.pattern) < 0.05


@given(arrays(np.float64, (4, 16), elements=st.floats(0, 50)), st.sampled_from(NAMES))
def test_accepted_pattern_satisfies_threshold(days, name):
    res = mine_pattern(days, name, beta=0.3)
    assert abs(res.pattern.sum() - 1) < 1e-12 and np.all(res.pattern > 0)
    kls = [kl_divergence(res.pattern, normalize(d)) for d in days]
    assert res.accepted == all(v < 0.3 for v in kls)
    assert res.max_kl == pytest.approx(max(kls), rel=1e-12)
