import math

import numpy as np
import pytest
from scipy import stats

from cohortsynth.distfit import (
    CohortModel,
    Histogram,
    auto_bin_count,
    best_fit,
    fit_cluster_model,
    histogram,
    qq_csv,
    qq_points,
    rss,
    write_qq_exports,
)
from cohortsynth.distributions import FAMILIES, FitError, FittedDistribution, fit_family
from cohortsynth.table import FeatureMatrix

TRUE = {
    "normal": ({"mu": 3.0, "sigma": 2.0}, lambda r, n: r.normal(3.0, 2.0, n)),
    "lognormal": ({"mu": 1.0, "sigma": 0.5}, lambda r, n: r.lognormal(1.0, 0.5, n)),
    "exponential": ({"rate": 2.0}, lambda r, n: r.exponential(0.5, n)),
    "gamma": ({"shape": 3.0, "scale": 2.0}, lambda r, n: r.gamma(3.0, 2.0, n)),
    "pareto": ({"alpha": 3.0, "xm": 2.0}, lambda r, n: 2.0 * (1 + r.pareto(3.0, n))),
    "uniform": ({"low": 3.0, "high": 7.0}, lambda r, n: r.uniform(3.0, 7.0, n)),
}


def scipy_frozen(d: FittedDistribution):
    p = d.params
    return {
        "normal": lambda: stats.norm(p["mu"], p["sigma"]),
        "lognormal": lambda: stats.lognorm(p["sigma"], scale=math.exp(p["mu"])),
        "exponential": lambda: stats.expon(scale=1 / p["rate"]),
        "gamma": lambda: stats.gamma(p["shape"], scale=p["scale"]),
        "pareto": lambda: stats.pareto(p["alpha"], scale=p["xm"]),
        "uniform": lambda: stats.uniform(p["low"], p["high"] - p["low"]),
    }[d.family]()


def test_histogram_degenerate():
    h = histogram([1, 1, 1], bins=5)
    assert h.counts.sum() == 3 and np.count_nonzero(h.counts) == 1
    assert histogram([1, 1, 1]).counts.tolist() == [3]


def test_histogram_uniform_spacing():
    h = histogram(np.arange(1, 101), bins=10)
    assert h.counts.tolist() == [10] * 10
    assert h.bin_edges[0] == 1 and h.bin_edges[-1] == 100


def test_histogram_fd_rule_against_numpy():
    x = np.random.default_rng(0).normal(size=1000)
    expected = len(np.histogram_bin_edges(x, bins="fd")) - 1
    assert auto_bin_count(x) == expected
    assert len(histogram(x).counts) == expected


def test_histogram_sturges_fallback_and_cap():
    x = np.array([0.0] * 90 + list(range(1, 11)))
    assert auto_bin_count(x) == math.ceil(math.log2(100)) + 1
    heavy = np.random.default_rng(1).pareto(0.5, 10_000)
    assert auto_bin_count(heavy) == 200


def test_histogram_errors():
    with pytest.raises(ValueError):
        histogram([])
    with pytest.raises(ValueError):
        histogram([1, 2], bins=0)


def test_fit_family_closed_forms():
    assert fit_family([1, 2, 3], "exponential").params["rate"] == pytest.approx(0.5)
    assert fit_family([1, 1, 0, 1], "bernoulli").params["p"] == 0.75
    g = fit_family([1.0, 2.0, 3.0, 6.0], "gamma").params
    assert g["shape"] == pytest.approx(3.0 ** 2 / 3.5) and g["scale"] == pytest.approx(3.5 / 3.0)
    u = fit_family([3, 5, 7], "uniform").params
    assert (u["low"], u["high"]) == (3, 7)
    p = fit_family([1.0, 2.0, 4.0], "pareto").params
    assert p["xm"] == 1.0 and p["alpha"] == pytest.approx(3 / (math.log(2) + math.log(4)))


def test_fit_family_matches_scipy_mle():
    rng = np.random.default_rng(2)
    x = rng.lognormal(1, 0.5, 5000)
    ours = fit_family(x, "lognormal").params
    s, _, scale = stats.lognorm.fit(x, floc=0)
    assert ours["sigma"] == pytest.approx(s, rel=1e-6)
    assert ours["mu"] == pytest.approx(math.log(scale), rel=1e-6)
    y = x + 1
    b, _, xm = stats.pareto.fit(y, floc=0, fscale=y.min())
    assert fit_family(y, "pareto").params["alpha"] == pytest.approx(b, rel=1e-6)


def test_fit_family_support_errors():
    with pytest.raises(FitError, match="exponential"):
        fit_family([-1.0, 2.0], "exponential")
    with pytest.raises(FitError, match="lognormal"):
        fit_family([-1.0, 2.0], "lognormal")
    with pytest.raises(FitError, match="bernoulli"):
        fit_family([0, 2], "bernoulli")


def test_zero_shift_for_positive_families():
    d = fit_family([0.0, 1.0, 3.0, 8.0], "lognormal")
    assert d.shift == 1.0 and d.support["lower"] == -1.0
    assert fit_family([0.5, 1.0], "pareto").shift == 0.0


@pytest.mark.parametrize("family", list(TRUE))
def test_parameter_recovery_1e5(family):
    params, draw = TRUE[family]
    x = draw(np.random.default_rng(100), 100_000)
    fitted = fit_family(x, family)
    for name, value in params.items():
        assert fitted.params[name] == pytest.approx(value, rel=0.05), name


def test_lognormal_recovery_50k_within_2pct():
    x = np.random.default_rng(7).lognormal(1.0, 0.5, 50_000)
    p = fit_family(x, "lognormal").params
    assert abs(p["mu"] - 1) < 0.02 and abs(p["sigma"] - 0.5) < 0.01


@pytest.mark.parametrize("family", list(TRUE))
def test_cdf_pdf_ppf_against_scipy(family):
    d = FittedDistribution(family, TRUE[family][0])
    ref = scipy_frozen(d)
    u = np.linspace(0.001, 0.999, 51)
    xs = ref.ppf(u)
    np.testing.assert_allclose(d.cdf(xs), ref.cdf(xs), atol=1e-12)
    np.testing.assert_allclose(d.pdf(xs), ref.pdf(xs), rtol=1e-9)
    np.testing.assert_allclose(d.ppf(u), xs, rtol=1e-9, atol=1e-9)


def test_rss_zero_for_exact_density():
    d = FittedDistribution("normal", {"mu": 0.0, "sigma": 1.0})
    edges = np.linspace(-3, 3, 31)
    mids = 0.5 * (edges[1:] + edges[:-1])
    n = 1000
    counts = d.pdf(mids) * n * np.diff(edges)
    h = Histogram(edges, counts, n)
    assert rss(h, d) == pytest.approx(0.0, abs=1e-12)


def test_rss_prefers_true_family():
    x = np.random.default_rng(3).uniform(0, 1, 10_000)
    h = histogram(x)
    u = FittedDistribution("uniform", {"low": 0.0, "high": 1.0})
    e = FittedDistribution("exponential", {"rate": 1.0})
    assert rss(h, e) > rss(h, u) >= 0


def test_rss_vanishes_with_n():
    rng = np.random.default_rng(4)
    for family, (params, draw) in TRUE.items():
        x = draw(rng, 100_000)
        assert rss(histogram(x), FittedDistribution(family, params)) < 1e-3, family


def test_best_fit_binary():
    d = best_fit([0, 1, 1, 0, 1])
    assert d.family == "bernoulli" and d.params["p"] == 0.6
    assert "normal" in d.skipped


def test_best_fit_exponential():
    x = np.random.default_rng(5).exponential(0.5, 50_000)
    d = best_fit(x)
    assert d.family == "exponential"
    assert d.params["rate"] == pytest.approx(2.0, rel=0.02)
    assert "bernoulli" in d.skipped


def test_best_fit_tie_goes_to_canonical_order(monkeypatch):
    import cohortsynth.distfit as distfit

    monkeypatch.setattr(distfit, "rss", lambda hist, dist: 0.25)
    x = np.random.default_rng(0).gamma(2.0, 1.0, 500)
    # equal scores, equal parameter counts: the earlier family wins
    assert best_fit(x, families=("uniform", "lognormal", "normal")).family == "normal"
    assert best_fit(x, families=("uniform", "gamma")).family == "gamma"


def test_best_fit_prefers_simpler_family_within_noise():
    # exponential draws are also fitted well by gamma (shape near 1)
    x = np.random.default_rng(11).exponential(3.0, 20_000)
    assert best_fit(x, families=("gamma", "exponential")).family == "exponential"


def test_best_fit_order_invariant():
    x = np.random.default_rng(6).gamma(2.0, 3.0, 3000)
    a = best_fit(x)
    b = best_fit(x[::-1].copy())
    assert a == b


def test_best_fit_errors_and_constant():
    with pytest.raises(FitError):
        best_fit([1.0, 2.0], families=())
    with pytest.raises(FitError):
        best_fit([-1.0, -2.0, -5.0], families=("exponential", "gamma"))
    const = best_fit([4.0, 4.0, 4.0])
    assert const.atomic and const.low_confidence and const.ppf(0.3) == 4.0


def test_qq_perfect_alignment():
    d = FittedDistribution("gamma", {"shape": 2.0, "scale": 1.5})
    n = 200
    x = d.ppf((np.arange(1, n + 1) - 0.5) / n)
    points, r2 = qq_points(x, d)
    assert r2 == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(points[:, 0]) > 0)


def test_qq_single_point_and_normal_draws():
    d = FittedDistribution("normal", {"mu": 0.0, "sigma": 1.0})
    assert qq_points([0.3], d)[1] == 1.0
    x = np.random.default_rng(7).normal(size=10_000)
    _, r2 = qq_points(x, fit_family(x, "normal"))
    assert 0.999 < r2 <= 1.0


def two_cluster_table(n=10_000, seed=8):
    rng = np.random.default_rng(seed)
    rates = (0.01, 0.2)
    a = rng.exponential(1 / rates[0], n)
    b = rng.exponential(1 / rates[1], n)
    flags = rng.random(2 * n) < np.r_[np.full(n, 0.2), np.full(n, 0.7)]
    values = np.column_stack([np.r_[a, b], flags.astype(float)])
    labels = np.r_[np.zeros(n, int), np.ones(n, int)]
    return FeatureMatrix(values, ("x", "verified")), labels, rates


def test_fit_cluster_model_recovers_rates():
    table, labels, rates = two_cluster_table()
    model = fit_cluster_model(table, labels)
    assert model.k == 2 and model.weights.tolist() == [0.5, 0.5]
    for c, rate in enumerate(rates):
        d = model.clusters[c]["x"]
        assert d.family == "exponential"
        assert d.params["rate"] == pytest.approx(rate, rel=0.05)
        assert model.clusters[c]["verified"].family == "bernoulli"
    assert model.clusters[0]["verified"].params["p"] == pytest.approx(0.2, abs=0.02)


def test_fit_cluster_model_reported_sizes():
    sizes = (61, 115096, 14158, 1774)
    n = sum(sizes)
    labels = np.repeat(np.arange(4), sizes)
    x = np.random.default_rng(0).exponential(1.0, size=(n, 1))
    model = fit_cluster_model(FeatureMatrix(x, ("a",)), labels, families=("exponential",))
    assert model.sizes == sizes
    np.testing.assert_allclose(model.weights, np.array(sizes) / 131089, rtol=0, atol=1e-15)
    assert [round(w, 3) for w in model.weights] == [0.0, 0.878, 0.108, 0.014]
    assert abs(model.weights.sum() - 1) <= 1e-12


def test_fit_cluster_model_single_cluster_and_low_confidence():
    x = FeatureMatrix(np.arange(20.0)[:, None] ** 2, ("counts",))
    model = fit_cluster_model(x, np.zeros(20, int))
    assert model.weights.tolist() == [1.0]
    d = model.clusters[0]["counts"]
    assert d.low_confidence and d.integer
    assert any("20 samples" in note for note in d.notes)


def test_fit_cluster_model_errors():
    t = FeatureMatrix(np.arange(6.0)[:, None], ("a",))
    with pytest.raises(ValueError):
        fit_cluster_model(t, [0, 0, 2, 2, 0, 0])  # cluster 1 empty
    with pytest.raises(ValueError):
        fit_cluster_model(t, [0, 0])
    with pytest.raises(KeyError):
        fit_cluster_model(t, np.zeros(6, int), attributes=("b",))


def test_cohort_model_json_round_trip(tmp_path):
    table, labels, _ = two_cluster_table(n=500)
    model = fit_cluster_model(table, labels, labels={0: "slow", 1: "fast"}, metadata={"seed": 3})
    path = tmp_path / "cohort.json"
    model.save(path)
    back = CohortModel.load(path)
    assert back.to_dict() == model.to_dict()
    assert back.clusters[1]["x"] == model.clusters[1]["x"]
    d = model.to_dict()["clusters"][0]["attributes"]["x"]
    assert set(d) >= {"family", "params", "support", "rss", "qq_r2", "low_confidence"}


def test_cohort_model_validation():
    d = FittedDistribution("normal", {"mu": 0, "sigma": 1})
    with pytest.raises(ValueError):
        CohortModel(np.array([0.6, 0.5]), ("a",), [{"a": d}, {"a": d}])
    with pytest.raises(ValueError):
        CohortModel(np.array([0.5, 0.5]), ("a",), [{"a": d}, {}])


def test_qq_exports(tmp_path):
    table, labels, _ = two_cluster_table(n=200)
    model = fit_cluster_model(table, labels)
    paths = write_qq_exports(tmp_path / "qq", model, table, labels)
    assert sorted(p.name for p in paths) == ["cluster0_verified.csv", "cluster0_x.csv",
                                            "cluster1_verified.csv", "cluster1_x.csv"]
    lines = paths[0].read_text().splitlines()
    assert lines[0].startswith("# r2=") and lines[1] == "theoretical,empirical"
    assert len(lines) == 202
    assert qq_csv([1.0], model.clusters[0]["x"]).startswith("# r2=1.0")


def test_families_constant():
    assert FAMILIES == ("bernoulli", "normal", "lognormal", "exponential", "gamma", "pareto", "uniform")
