import numpy as np
import pytest

from bikedemand.divergence import kl_divergence, normalize
from bikedemand.grid import GeoPoint, aggregate_demands
from bikedemand.synth import (ARCHETYPES, SyntheticCitySpec, archetype_curve, archetype_peak_slots, city_pair,
                              counts_to_demand, generate_city, sample_counts, sample_records)

SMALL = SyntheticCitySpec(n=8, m=8, n_transit=4, n_business=2, n_residential=4, n_park=2, days=5,
                          intensity=30)


def test_same_seed_identical():
    a, b = generate_city(SMALL, 7), generate_city(SMALL, 7)
    for key in ("poi", "roads", "light", "light_centers", "transport", "business"):
        assert np.array_equal(getattr(a.data, key), getattr(b.data, key))
    assert np.array_equal(a.planted, b.planted)
    c = generate_city(SMALL, 8)
    assert not np.array_equal(a.planted, c.planted)


@pytest.mark.parametrize("name", ARCHETYPES)
def test_archetypes_are_distributions(name):
    p = archetype_curve(name, 48)
    assert np.all(p > 0) and abs(p.sum() - 1) < 1e-12
    for s in archetype_peak_slots(name, 48):
        assert p[s] == max(p[max(s - 2, 0):s + 3])


def test_weights_sum_to_one_and_planted_valid():
    city = generate_city(SyntheticCitySpec(), 0)
    np.testing.assert_allclose(city.weights.sum(axis=1), 1, atol=1e-12)
    assert np.all(city.weights >= 0)
    assert np.all(city.planted > 0)
    np.testing.assert_allclose(city.planted.sum(axis=1), 1, atol=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_transit_cells_show_triple_peak(seed):
    city = generate_city(SyntheticCitySpec(), seed)
    peaks = set(archetype_peak_slots("triple_peak", 48))
    for lon, lat in city.data.transport:
        i, j = city.grid.locate(GeoPoint(lon, lat))
        p = city.planted[(i - 1) * city.grid.m + (j - 1)]
        assert set(np.argsort(-p, kind="stable")[:3]) == peaks


def test_city_pair_layouts_differ_but_share_rules():
    a, b = city_pair(SMALL, 3)
    assert a.seed == 6 and b.seed == 7
    assert not np.array_equal(a.entities["transit"], b.entities["transit"])
    # a cell whose mixture weights agree has the same planted pattern in both cities
    arche = np.array([archetype_curve(x, 48, SMALL.peak_width_h, SMALL.floor) for x in ARCHETYPES])
    for city in (a, b):
        p = city.weights @ arche
        np.testing.assert_allclose(city.planted, p / p.sum(axis=1, keepdims=True), rtol=1e-12)


def test_zero_intensity_no_records():
    city = generate_city(SMALL, 0)
    t = sample_records(city, intensity=0.0, days=3)
    assert len(t.start_lon) == 0


def test_records_aggregate_to_counts():
    city = generate_city(SMALL, 1)
    t = sample_records(city, seed=4)
    counts = sample_counts(city.planted, SMALL.intensity, SMALL.days, seed=4)
    ds = aggregate_demands(t, city.grid, 48)
    ref = counts_to_demand(city, counts)
    assert ds.outside == 0
    np.testing.assert_array_equal(ds.days, ref.days)
    np.testing.assert_array_equal(ds.counts, ref.counts)


def test_slot_totals_within_three_sigma():
    city = generate_city(SyntheticCitySpec(), 2)
    days, lam = 28, 200.0
    counts = sample_counts(city.planted, lam, days, seed=0)
    mean = days * lam * city.planted
    z = (counts.sum(axis=1) - mean) / np.sqrt(mean)
    assert np.mean(np.abs(z) > 3) < 0.01
    slot_mean = mean.sum(axis=0)
    assert np.all(np.abs(counts.sum(axis=(0, 1)) - slot_mean) < 3 * np.sqrt(slot_mean))


def test_law_of_large_numbers():
    city = generate_city(SyntheticCitySpec(), 3)

    def kls(intensity):
        c = sample_counts(city.planted, intensity, 30, seed=1).sum(axis=1)
        return np.array([kl_divergence(city.planted[r], normalize(c[r])) for r in range(len(c))])

    hi, lo = kls(10_000), kls(1_000)
    assert hi.max() < 0.01
    assert np.median(hi) < np.median(lo)


def test_negative_intensity_rejected():
    with pytest.raises(ValueError):
        sample_counts(np.full((2, 4), 0.25), -1.0, 2)
