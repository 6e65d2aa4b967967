import json

import numpy as np
import pytest
from scipy.signal import lfilter
from hypothesis import given, settings, strategies as st

from qrsim import engine, synthetic
from qrsim.facts import (COMPARATIVE, FactConfig, MetricError, PriceSeries, acf, book_shape, build_report,
                         compare_vol, fit_gamma, fit_power_law, fit_weibull, InsufficientTail, ks_statistic,
                         long_range_dependence, realized_volatility, returns_sample, signature_plot,
                         traded_volumes, transition_matrix)


def brute_ks(a, b):
    best = 0.0
    for x in np.concatenate([a, b]):
        best = max(best, abs(np.mean(a <= x) - np.mean(b <= x)))
    return best


def test_ks_examples():
    a = np.arange(10.0)
    assert ks_statistic(a, a) == 0
    assert ks_statistic(np.zeros(5), np.ones(7)) == 1
    with pytest.raises(MetricError):
        ks_statistic([], [1])


def test_ks_brute_force_grids():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = rng.integers(0, 8, rng.integers(1, 30)).astype(float)
        b = rng.integers(0, 8, rng.integers(1, 30)).astype(float)
        assert ks_statistic(a, b) == brute_ks(a, b)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=1, max_size=40), st.lists(st.integers(-50, 50), min_size=1, max_size=40))
def test_ks_symmetric_and_monotone_invariant(a, b):
    a, b = np.array(a, float), np.array(b, float)
    d = ks_statistic(a, b)
    assert d == ks_statistic(b, a)
    assert d == ks_statistic(np.exp(a / 10), np.exp(b / 10))
    assert 0 <= d <= 1


def test_volatility():
    assert np.all(realized_volatility(PriceSeries(np.full(1201, 100.0)), 600) == 0)
    rng = np.random.default_rng(0)
    sigma = 1e-4
    p = 100 * np.exp(np.concatenate([[0], np.cumsum(rng.normal(0, sigma, 600 * 200))]))
    v = realized_volatility(PriceSeries(p), 600, seconds_per_year=252 * 9 * 3600)
    assert v.mean() == pytest.approx(sigma * np.sqrt(252 * 9 * 3600), rel=0.05)
    with pytest.raises(MetricError):
        realized_volatility(PriceSeries(p, 7.0), 600)
    with pytest.raises(MetricError):
        realized_volatility(PriceSeries(p[:100]), 600)


def test_compare_vol():
    r = np.array([1.0, 2.0, 3.0])
    c = compare_vol(r, r)
    assert c["relative_difference"] == 0 and c["quadratic_error"] == 0
    c = compare_vol(2 * np.ones(4), np.ones(4))
    assert c["relative_difference"] == pytest.approx(100) and c["quadratic_error"] == pytest.approx(1.0)
    c = compare_vol([1.0, 2.0], [0.0, 1.0])
    assert c["excluded"] == 1 and c["relative_difference"] == pytest.approx(100)


def test_returns_and_signature():
    assert np.all(returns_sample(PriceSeries(np.full(50, 3.0)), 1) == 0)
    assert np.allclose(returns_sample(PriceSeries(2.0 ** np.arange(10)), 1), np.log(2))
    with pytest.raises(MetricError):
        returns_sample(PriceSeries(np.ones(5)), 10)
    sig = signature_plot(PriceSeries(np.full(100, 1.0)), [1, 2, 5])
    assert all(v == 0 for v in sig.values())
    with pytest.raises(MetricError):
        signature_plot(PriceSeries(np.ones(10)), [20])


def test_signature_mean_reverting_decreases():
    rng = np.random.default_rng(1)
    x = np.zeros(50000)
    e = rng.normal(size=x.size)
    for i in range(1, x.size):
        x[i] = 0.3 * x[i - 1] + e[i]
    sig = signature_plot(PriceSeries(x), [1, 2, 5, 10, 50])
    v = list(sig.values())
    assert all(a > b for a, b in zip(v, v[1:]))


def test_acf_examples():
    rng = np.random.default_rng(2)
    x = rng.normal(size=5000)
    a = acf(x, np.arange(1, 41))
    assert np.mean(np.abs(a) < 2 / np.sqrt(x.size)) >= 0.9
    assert acf(x, [0])[0] == 1
    alt = np.tile([1.0, -1.0], 100)
    assert acf(alt, [1])[0] == pytest.approx(-1)


def test_long_range_dependence():
    rng = np.random.default_rng(3)
    noise = long_range_dependence(rng.normal(size=20000))
    assert not noise.reliable
    # log-volatility as a sum of AR(1) factors with geometrically spread memories
    n = 200000
    h = np.zeros(n)
    for k in range(6):
        phi = 1 - 10.0 ** (-k / 1.5 - 0.3)
        h += lfilter([1], [1, -phi], rng.normal(size=n) * 0.36 * np.sqrt(1 - phi ** 2))
    r = np.exp(h) * rng.normal(size=n)
    fit = long_range_dependence(r)
    assert fit.exponent < 0 and fit.r2 > 0.8


def test_gamma_fit():
    rng = np.random.default_rng(4)
    assert fit_gamma(rng.exponential(size=10000)).shape == pytest.approx(1, abs=0.1)
    g = fit_gamma(rng.gamma(3, 2, size=20000))
    assert g.shape == pytest.approx(3, rel=0.1) and g.scale == pytest.approx(2, rel=0.1)
    with pytest.raises(MetricError):
        fit_gamma(np.full(50, 2.0))


def test_weibull_fit():
    rng = np.random.default_rng(5)
    e = fit_weibull(rng.exponential(2.0, size=10000))
    assert e.shape == pytest.approx(1, abs=0.05)
    w = fit_weibull(rng.weibull(0.5, size=10000))
    assert w.shape == pytest.approx(0.5, rel=0.1)
    assert w.ks < w.ks_exponential
    with pytest.raises(MetricError):
        fit_weibull([])


def test_power_law_fit():
    rng = np.random.default_rng(6)
    x = (rng.pareto(2.0, size=20000) + 1)
    fit = fit_power_law(x, cutoff=1.0)
    assert fit.exponent == pytest.approx(2, rel=0.1)
    with pytest.raises(InsufficientTail):
        fit_power_law(np.full(500, 6.0))
    with pytest.raises(InsufficientTail):
        fit_power_law(x, cutoff=x.max() + 1)


def test_transition_matrix():
    alt = np.tile([0, 1], 100)
    tm = transition_matrix(alt)
    assert tm.matrix[0, 1] == 1 and tm.matrix[1, 0] == 1
    assert set(tm.flagged_rows) == {2, 3, 4, 5}
    rng = np.random.default_rng(7)
    iid = rng.integers(0, 6, 100000)
    tm = transition_matrix(iid)
    assert np.allclose(tm.matrix.sum(axis=1), 1, atol=1e-12)
    assert tm.max_row_deviation < 0.02 and abs(tm.diagonal_enrichment) < 0.01
    with pytest.raises(MetricError):
        transition_matrix(np.array([1]))


def test_book_shape(small_log):
    s = book_shape(small_log)
    assert s.mean() == pytest.approx(1.0, abs=1e-12)
    log = small_log.slice_time(0, 10)
    log.book[:] = 4
    log.init_state = log.init_state.with_queues([4] * 3, [4] * 3)
    assert np.allclose(book_shape(log), 1)
    log.book[:, :, :] = np.array([1, 2, 3])
    log.init_state = log.init_state.with_queues([1, 2, 3], [1, 2, 3])
    assert np.all(np.diff(book_shape(log)) > 0)


def test_traded_volumes(small_log):
    log = small_log.slice_time(0, 1200)
    v = traded_volumes(log, 600)
    assert v.size == 2 and v.sum() > 0
    quiet = small_log.slice_time(0, 600)
    quiet.flow.eta[:] = 0
    assert np.all(traded_volumes(quiet, 600) == 0)


@pytest.fixture(scope="module")
def report_pair():
    truth = synthetic.bund_like_model(K=3)
    real = engine.run(truth, engine.SimConfig(horizon=3600, seed=1))
    qru = engine.run(truth, engine.SimConfig(horizon=3600, seed=2, variant="QRU"))
    return real, qru


def test_self_report_passes_comparative(report_pair):
    real, _ = report_pair
    rep = build_report(real, real)
    for i in COMPARATIVE:
        assert rep.facts[i].verdict == "pass", (i, rep.facts[i])


def test_qru_fails_order_sizes(report_pair):
    real, qru = report_pair
    rep = build_report(qru, real)
    assert rep.facts[1].verdict == "fail"
    assert rep.facts[1].metrics["ks"] > 0.4


def test_report_deterministic_and_written(tmp_path, report_pair):
    real, qru = report_pair
    a = build_report(qru, real, {"ks_pass": 0.2})
    b = build_report(qru, real, FactConfig(ks_pass=0.2))
    assert a.dumps() == b.dumps()
    files = a.write(tmp_path / "r1")
    b.write(tmp_path / "r2")
    for f in files:
        assert f.read_bytes() == (tmp_path / "r2" / f.name).read_bytes()
    data = json.loads((tmp_path / "r1" / "report.json").read_text())
    assert len(data["facts"]) == 12 and len(data["periods"]) == 3
    assert "Stylized facts" in (tmp_path / "r1" / "report.txt").read_text()


def test_degraded_fact_does_not_abort(report_pair):
    real, _ = report_pair
    short = real.slice_time(0, 30)
    rep = build_report(short, real)
    assert rep.facts[5].verdict == "not_evaluated" and rep.facts[5].note
    assert len(rep.facts) == 12


def test_config_unknown_key():
    with pytest.raises(ValueError):
        FactConfig.from_dict({"nope": 1})
