import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cohortsynth.distfit import CohortModel, fit_family
from cohortsynth.distributions import FittedDistribution
from cohortsynth.synth import allocate_counts, generate_cohort, sample_distribution, uniform_stream
from cohortsynth.table import read_table_csv
from cohortsynth.validate import ks_critical_one_sample, ks_one_sample

import oracles

REPORTED = (61, 115096, 14158, 1774)


def model_for(dists_per_cluster, weights):
    attrs = tuple(dists_per_cluster[0])
    return CohortModel(np.asarray(weights, float), attrs, dists_per_cluster)


def test_allocation_reported_sizes():
    weights = [s / 131089 for s in REPORTED]
    assert allocate_counts(weights, 131089) == list(REPORTED)
    assert oracles.hamilton(REPORTED, 131089) == list(REPORTED)


def test_allocation_ties_and_thirds():
    assert allocate_counts([0.5, 0.5], 3) == [2, 1]
    assert allocate_counts([1 / 3] * 3, 10) == [4, 3, 3]


def test_allocation_errors():
    with pytest.raises(ValueError):
        allocate_counts([1.5, -0.5], 10)
    with pytest.raises(ValueError):
        allocate_counts([0.5, 0.4], 10)
    with pytest.raises(ValueError):
        allocate_counts([1.0], 0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 1000), min_size=1, max_size=8).filter(lambda w: sum(w) > 0),
       st.integers(1, 5000))
def test_allocation_matches_exact_oracle(raw, n):
    total = sum(raw)
    weights = [w / total for w in raw]
    got = allocate_counts(weights, n)
    assert sum(got) == n
    assert got == oracles.hamilton(raw, n)


def test_sample_closed_forms():
    e = FittedDistribution("exponential", {"rate": 2.0})
    assert sample_distribution(e, 1 - np.exp(-1)) == pytest.approx(0.5, abs=1e-12)
    u = FittedDistribution("uniform", {"low": 3.0, "high": 7.0})
    assert sample_distribution(u, 0.25) == 4.0
    with pytest.raises(ValueError):
        sample_distribution(u, 1.0)
    with pytest.raises(ValueError):
        sample_distribution(u, 0.0)


def test_normal_inverse_against_high_precision():
    d = FittedDistribution("normal", {"mu": 0.0, "sigma": 1.0})
    assert abs(sample_distribution(d, 0.975) - 1.959964) < 1e-5
    for u in (1e-12, 1e-6, 0.01, 0.3, 0.5, 0.8, 0.999, 1 - 1e-9):
        assert sample_distribution(d, u) == pytest.approx(oracles.normal_ppf_mp(u), abs=1e-8)


def test_shift_inverted_on_sampling():
    d = fit_family([0.0, 1.0, 2.0, 5.0, 9.0], "lognormal")
    assert d.shift == 1.0
    # ppf is of X = Y - shift, so its lower limit is -1
    assert sample_distribution(d, 1e-12) > -1.0
    assert np.isclose(d.cdf(sample_distribution(d, 0.3)), 0.3)


def test_generate_sizes_and_determinism(tmp_path):
    dists = [{"followers_count": FittedDistribution("exponential", {"rate": r}, integer=True),
              "verified": FittedDistribution("bernoulli", {"p": p})}
             for r, p in ((0.001, 0.9), (0.1, 0.01), (0.01, 0.1), (0.05, 0.02))]
    model = model_for(dists, np.array(REPORTED) / 131089)
    a = generate_cohort(model, 131089, seed=5)
    b = generate_cohort(model, 131089, seed=5)
    assert np.bincount(a.cluster_labels).tolist() == list(REPORTED)
    np.testing.assert_array_equal(a.table.values, b.table.values)
    col = a.table.column("followers_count")
    assert np.all(col >= 0) and np.all(col == np.floor(col))
    assert set(np.unique(a.table.column("verified"))) <= {0.0, 1.0}
    a.write_csv(tmp_path / "g.csv")
    t, extra = read_table_csv(tmp_path / "g.csv", drop=("cluster_label",))
    assert t.columns == ("verified", "followers_count")
    assert extra["cluster_label"][:2] == ["0", "0"]
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == "user_id,verified,followers_count,cluster_label"


def test_key_independence():
    dists = [{"a": FittedDistribution("normal", {"mu": c, "sigma": 1.0}),
              "b": FittedDistribution("gamma", {"shape": 2.0, "scale": 1.0 + c})} for c in range(2)]
    model = model_for(dists, [0.5, 0.5])
    small = generate_cohort(model, 10, seed=1)
    big = generate_cohort(model, 20, seed=1)
    for c in range(2):
        s = small.table.values[small.cluster_labels == c]
        b = big.table.values[big.cluster_labels == c]
        np.testing.assert_array_equal(b[: len(s)], s)


def test_seed_changes_output():
    model = model_for([{"a": FittedDistribution("normal", {"mu": 0.0, "sigma": 1.0})}], [1.0])
    assert not np.array_equal(generate_cohort(model, 50, 1).table.values,
                              generate_cohort(model, 50, 2).table.values)


def test_uniform_stream_open_interval():
    u = uniform_stream(0, 0, 0, 100_000)
    assert u.min() > 0 and u.max() < 1
    np.testing.assert_array_equal(uniform_stream(3, 1, 2, 10), uniform_stream(3, 1, 2, 50)[:10])


def test_round_trip_refit():
    model = model_for([{"followers_count": FittedDistribution("exponential", {"rate": 0.5})},
                       {"followers_count": FittedDistribution("exponential", {"rate": 0.02})}],
                      [0.5, 0.5])
    cohort = generate_cohort(model, 200_000, seed=4, continuous=True)
    x = cohort.table.values[cohort.cluster_labels == 1, 0]
    assert fit_family(x, "exponential").params["rate"] == pytest.approx(0.02, rel=0.03)


def test_marginal_fidelity_pre_rounding():
    dists = {"n": FittedDistribution("normal", {"mu": 2.0, "sigma": 3.0}),
             "g": FittedDistribution("gamma", {"shape": 0.7, "scale": 5.0}),
             "p": FittedDistribution("pareto", {"alpha": 2.5, "xm": 1.0}, shift=1.0)}
    model = model_for([dists], [1.0])
    crit = ks_critical_one_sample(0.01, 10_000)
    passes = dict.fromkeys(dists, 0)
    seeds = range(20)
    for seed in seeds:
        cohort = generate_cohort(model, 10_000, seed, continuous=True)
        for a, d in dists.items():
            passes[a] += ks_one_sample(cohort.table.column(a), d.cdf) <= crit
    for a, count in passes.items():
        assert count / len(seeds) >= 0.95, (a, count)


def test_negative_seed_rejected():
    model = model_for([{"a": FittedDistribution("normal", {"mu": 0.0, "sigma": 1.0})}], [1.0])
    with pytest.raises(ValueError):
        generate_cohort(model, 5, -1)
