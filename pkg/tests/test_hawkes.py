import numpy as np
import pytest
from scipy import stats

from qrsim.engine import make_rng
from qrsim.hawkes import (HawkesModel, NonStationaryError, best_quote_events, branching_matrix, fit, intensity_at,
                          intensity_naive, log_likelihood, residuals, simulate)


def model1(mu=1.0, a=1.0, b=2.0):
    return HawkesModel([mu], [[a]], [[b]])


def random_model(rng, d=2):
    beta = rng.uniform(1, 4, (d, d))
    alpha = rng.uniform(0.05, 0.3, (d, d)) * beta / d
    return HawkesModel(rng.uniform(0.2, 1.0, d), alpha, beta)


def test_intensity_examples():
    m = HawkesModel([1.0], [[2.0]], [[4.0]])
    assert intensity_at(m, [], [], 3.0).tolist() == [1.0]
    assert intensity_at(m, [0.0], [0], 0.25)[0] == pytest.approx(1 + 2 * np.exp(-1))
    pois = HawkesModel([1.0, 2.0], np.zeros((2, 2)), np.ones((2, 2)))
    assert intensity_at(pois, [0.1, 0.2, 0.3], [0, 1, 0], 0.5).tolist() == [1.0, 2.0]


def test_recursion_matches_naive_sum():
    rng = np.random.default_rng(0)
    m = random_model(rng, 3)
    t, c = simulate(m, 50.0, make_rng(1))
    for q in rng.uniform(0, 50, 20):
        assert np.allclose(intensity_at(m, t, c, q), intensity_naive(m, t, c, q), rtol=1e-10)


def test_branching_radius():
    assert branching_matrix(HawkesModel([1.0], [[0.0]], [[1.0]]))[1] == 0
    assert model1().spectral_radius == pytest.approx(0.5)
    sym = HawkesModel([1, 1], [[0.2, 0.3], [0.3, 0.2]], np.ones((2, 2)))
    assert sym.spectral_radius == pytest.approx(0.5)


def test_poisson_counts():
    m = HawkesModel([2.0, 2.0], np.zeros((2, 2)), np.ones((2, 2)))
    t, c = simulate(m, 1e4, make_rng(0))
    for k in np.bincount(c):
        assert abs(k - 2e4) < 3 * np.sqrt(2e4)


def test_mean_rate_from_branching():
    t, _ = simulate(model1(), 2e4, make_rng(2))
    assert t.size / 2e4 == pytest.approx(2.0, rel=0.05)
    assert np.all(np.diff(t) >= 0) and t[-1] <= 2e4


def test_non_stationary_rejected():
    with pytest.raises(NonStationaryError):
        simulate(HawkesModel([1.0], [[2.0]], [[2.0]]), 10, make_rng(0))


def test_poisson_log_likelihood_by_hand():
    ll, _ = log_likelihood(HawkesModel([1.0], [[0.0]], [[1.0]]), [0.5], [0], 1.0)
    assert ll == pytest.approx(-1.0)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng)
    t, c = simulate(m, 20.0, make_rng(seed))
    _, (gm, ga, gb) = log_likelihood(m, t, c, 20.0)
    h = 1e-6
    for name, g in (("mu", gm), ("alpha", ga), ("beta", gb)):
        base = getattr(m, name)
        for idx in np.ndindex(base.shape):
            up, dn = base.copy(), base.copy()
            up[idx] += h
            dn[idx] -= h
            kw = {k: getattr(m, k) for k in ("mu", "alpha", "beta")}
            lu, _ = log_likelihood(HawkesModel(**{**kw, name: up}), t, c, 20.0)
            ld, _ = log_likelihood(HawkesModel(**{**kw, name: dn}), t, c, 20.0)
            assert abs((lu - ld) / (2 * h) - g[idx]) < 1e-5 * max(1.0, abs(g[idx]))


def test_time_rescaling_invariance():
    m = HawkesModel([0.5, 0.3], [[0.8, 0.2], [0.3, 0.6]], [[2.0, 2.0], [2.0, 2.0]])
    t, c = simulate(m, 3000, make_rng(5))
    a = fit((t, c), 3000, shared_beta=True)
    b = fit((t * 10, c), 30000, shared_beta=True)
    assert np.allclose(b.model.mu * 10, a.model.mu, rtol=1e-3)
    assert np.allclose(b.model.alpha * 10, a.model.alpha, rtol=1e-3)
    assert np.allclose(b.model.beta * 10, a.model.beta, rtol=1e-3)


def test_poisson_fit():
    m = HawkesModel([1.0, 0.5], np.zeros((2, 2)), np.ones((2, 2)))
    t, c = simulate(m, 2e4, make_rng(3))
    r = fit((t, c), 2e4)
    A = r.model.alpha / r.model.beta
    assert np.all(A < 0.05)
    assert np.allclose(r.model.mu, m.mu, rtol=0.05)


def test_fit_from_truth_is_fixed_point():
    m = HawkesModel([0.6, 0.4], [[1.2, 0.6], [0.5, 1.0]], [[3.0, 4.0], [2.5, 3.0]])
    t, c = simulate(m, 5000, make_rng(0))
    a = fit((t, c), 5000)
    b = fit((t, c), 5000, init=a.model)
    assert b.n_iter <= 5
    assert b.log_likelihood >= a.log_likelihood - 1e-6
    assert np.allclose(b.model.mu, a.model.mu, rtol=1e-3)


def test_residuals_of_true_model_are_exponential():
    m = HawkesModel([0.6, 0.4], [[1.2, 0.6], [0.5, 1.0]], [[3.0, 4.0], [2.5, 3.0]])
    t, c = simulate(m, 3000, make_rng(0))
    for r in residuals(m, t, c):
        assert stats.kstest(r, "expon").pvalue > 0.01


def test_model_json_roundtrip():
    m = random_model(np.random.default_rng(1))
    n = HawkesModel.from_json(m.to_json())
    assert np.array_equal(n.alpha, m.alpha) and np.array_equal(n.mu, m.mu)


def test_best_quote_events_components(small_log):
    (real,) = best_quote_events(small_log.flow)
    t, c, h = real
    assert t[0] == 0 and np.all(np.diff(t) >= 0) and h == t[-1]
    assert set(np.unique(c)) <= set(range(6))
