"""Multivariate Hawkes processes with exponential kernels ``alpha_ij * exp(-beta_ij t)``.

Events are given as parallel arrays ``times`` (seconds, sorted) and ``comps``
(component index).  All evaluations use the exponential recursion

    R_ij(t) = sum_{t_l < t, c_l = j} exp(-beta_ij (t - t_l))

which is O(n d^2) instead of O(n^2).  The best-quote flow uses six
components: bid L, bid C, bid M, ask L, ask C, ask M.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.optimize import minimize

from .flow import NS, Flow, _as_flow
from .lob import Eta, InvalidParameterError

COMPONENTS = ("bid_L", "bid_C", "bid_M", "ask_L", "ask_C", "ask_M")


class NonStationaryError(InvalidParameterError):
    pass


@dataclass
class HawkesModel:
    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        d = self.mu.size
        self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(d, d)
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(d, d)
        if (self.mu <= 0).any():
            raise InvalidParameterError("mu must be positive")
        if (self.alpha < 0).any():
            raise InvalidParameterError("alpha must be non-negative")
        if (self.beta <= 0).any():
            raise InvalidParameterError("beta must be positive")

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def spectral_radius(self) -> float:
        return branching_matrix(self)[1]

    def stationary_rates(self) -> np.ndarray:
        A, rho = branching_matrix(self)
        if rho >= 1:
            raise NonStationaryError(f"spectral radius {rho:.4f} >= 1")
        return np.linalg.solve(np.eye(self.dim) - A, self.mu)

    def to_json(self) -> dict:
        return {"dim": self.dim, "mu": self.mu.tolist(), "alpha": self.alpha.tolist(), "beta": self.beta.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "HawkesModel":
        m = cls(d["mu"], d["alpha"], d["beta"])
        if m.dim != d.get("dim", m.dim):
            raise InvalidParameterError("Hawkes dim does not match mu")
        return m


def branching_matrix(model: HawkesModel) -> tuple[np.ndarray, float]:
    A = model.alpha / model.beta
    rho = float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0
    return A, rho


def _arrays(times, comps):
    return np.ascontiguousarray(times, dtype=np.float64), np.ascontiguousarray(comps, dtype=np.int64)


# ---------------------------------------------------------------------------
# intensity
# ---------------------------------------------------------------------------


@njit(cache=True)
def _intensity(mu, alpha, beta, times, comps, t):
    d = mu.size
    R = np.zeros((d, d))
    last = 0.0
    for k in range(times.size):
        tk = times[k]
        if tk >= t:
            break
        dt = tk - last
        for i in range(d):
            for j in range(d):
                R[i, j] *= np.exp(-beta[i, j] * dt)
        R[:, comps[k]] += 1.0
        last = tk
    lam = mu.copy()
    dt = t - last
    for i in range(d):
        for j in range(d):
            lam[i] += alpha[i, j] * R[i, j] * np.exp(-beta[i, j] * dt)
    return lam


def intensity_at(model: HawkesModel, times, comps, t: float) -> np.ndarray:
    """Intensity vector just after ``t`` given the events strictly before ``t``."""
    times, comps = _arrays(times, comps)
    return _intensity(model.mu, model.alpha, model.beta, times, comps, float(t))


def intensity_naive(model: HawkesModel, times, comps, t: float) -> np.ndarray:
    """Direct double sum; reference for the recursion."""
    times, comps = _arrays(times, comps)
    m = times < t
    tau = t - times[m]
    c = comps[m]
    lam = model.mu.copy()
    for i in range(model.dim):
        lam[i] += np.sum(model.alpha[i, c] * np.exp(-model.beta[i, c] * tau))
    return lam


# ---------------------------------------------------------------------------
# simulation (Ogata thinning)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _thin(mu, alpha, beta, horizon, rng, R, t, out_t, out_c):
    """Fill ``out_*`` with events after ``t``; R is the excitation state at ``t`` (updated in place).

    Between events every intensity decays, so the total intensity at the
    current time bounds it until the next accepted point.
    """
    d = mu.size
    n = 0
    lam = np.empty(d)
    while n < out_t.size:
        bound = 0.0
        for i in range(d):
            lam_i = mu[i]
            for j in range(d):
                lam_i += alpha[i, j] * R[i, j]
            bound += lam_i
        w = rng.exponential(1.0 / bound)
        t += w
        if t > horizon:
            return n, horizon, True
        total = 0.0
        for i in range(d):
            lam_i = mu[i]
            for j in range(d):
                R[i, j] *= np.exp(-beta[i, j] * w)
                lam_i += alpha[i, j] * R[i, j]
            lam[i] = lam_i
            total += lam_i
        u = rng.random() * bound
        if u < total:
            c = d - 1
            for i in range(d):
                if u < lam[i]:
                    c = i
                    break
                u -= lam[i]
            out_t[n] = t
            out_c[n] = c
            n += 1
            for i in range(d):
                R[i, c] += 1.0
    return n, t, False


def simulate(model: HawkesModel, horizon: float, rng: np.random.Generator, chunk: int = 1 << 18):
    """One realization on ``[0, horizon]``; returns ``(times, comps)``."""
    _, rho = branching_matrix(model)
    if rho >= 1:
        raise NonStationaryError(f"cannot simulate a non-stationary Hawkes model (spectral radius {rho:.4f})")
    R = np.zeros((model.dim, model.dim))
    t = 0.0
    ts, cs = [], []
    out_t = np.empty(chunk)
    out_c = np.empty(chunk, dtype=np.int64)
    while True:
        n, t, done = _thin(model.mu, model.alpha, model.beta, float(horizon), rng, R, t, out_t, out_c)
        ts.append(out_t[:n].copy())
        cs.append(out_c[:n].copy())
        if done:
            break
    return np.concatenate(ts), np.concatenate(cs)


# ---------------------------------------------------------------------------
# likelihood
# ---------------------------------------------------------------------------


@njit(cache=True)
def _loglik(mu, alpha, beta, times, comps, horizon):
    d = mu.size
    R = np.zeros((d, d))
    S = np.zeros((d, d))
    g_mu = np.zeros(d)
    g_a = np.zeros((d, d))
    g_b = np.zeros((d, d))
    ll = 0.0
    last = 0.0
    for k in range(times.size):
        tk = times[k]
        dt = tk - last
        if dt > 0.0:
            for i in range(d):
                for j in range(d):
                    e = np.exp(-beta[i, j] * dt)
                    S[i, j] = e * (S[i, j] + dt * R[i, j])
                    R[i, j] *= e
        i = comps[k]
        lam = mu[i]
        for j in range(d):
            lam += alpha[i, j] * R[i, j]
        ll += np.log(lam)
        inv = 1.0 / lam
        g_mu[i] += inv
        for j in range(d):
            g_a[i, j] += R[i, j] * inv
            g_b[i, j] -= alpha[i, j] * S[i, j] * inv
        for r in range(d):
            R[r, i] += 1.0
        last = tk
    # compensator
    for i in range(d):
        ll -= mu[i] * horizon
        g_mu[i] -= horizon
    for k in range(times.size):
        j = comps[k]
        tau = horizon - times[k]
        for i in range(d):
            e = np.exp(-beta[i, j] * tau)
            b = beta[i, j]
            ll -= alpha[i, j] / b * (1.0 - e)
            g_a[i, j] -= (1.0 - e) / b
            g_b[i, j] += alpha[i, j] / (b * b) * (1.0 - e) - alpha[i, j] / b * tau * e
    return ll, g_mu, g_a, g_b


def log_likelihood(model: HawkesModel, times, comps, horizon: float):
    """Exact log-likelihood on ``[0, horizon]`` and its gradient ``(d_mu, d_alpha, d_beta)``."""
    times, comps = _arrays(times, comps)
    if times.size and horizon < times[-1]:
        raise InvalidParameterError("horizon precedes the last event")
    ll, g_mu, g_a, g_b = _loglik(model.mu, model.alpha, model.beta, times, comps, float(horizon))
    return float(ll), (g_mu, g_a, g_b)


@njit(cache=True)
def _compensators(mu, alpha, beta, times, comps):
    """Lambda_{c_k}(t_k) for every event (the compensator of its own component)."""
    d = mu.size
    R = np.zeros((d, d))
    N = np.zeros(d)
    out = np.empty(times.size)
    last = 0.0
    for k in range(times.size):
        tk = times[k]
        dt = tk - last
        for i in range(d):
            for j in range(d):
                R[i, j] *= np.exp(-beta[i, j] * dt)
        i = comps[k]
        v = mu[i] * tk
        for j in range(d):
            v += alpha[i, j] / beta[i, j] * (N[j] - R[i, j])
        out[k] = v
        N[i] += 1.0
        for r in range(d):
            R[r, i] += 1.0
        last = tk
    return out


def residuals(model: HawkesModel, times, comps) -> list[np.ndarray]:
    """Time-rescaled inter-event gaps per component; Exp(1) under the true model."""
    times, comps = _arrays(times, comps)
    lam = _compensators(model.mu, model.alpha, model.beta, times, comps)
    out = []
    for i in range(model.dim):
        v = lam[comps == i]
        out.append(np.diff(np.concatenate([[0.0], v])))
    return out


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    model: HawkesModel
    log_likelihood: float
    converged: bool
    grad_norm: float
    n_iter: int
    message: str


LOG_ALPHA_MIN = -30.0


def _as_realizations(events, horizon):
    if isinstance(events, tuple) and len(events) == 2:
        return [(*_arrays(*events), float(horizon))]
    out = []
    for item in events:
        t, c, h = item
        out.append((*_arrays(t, c), float(h)))
    return out


def fit(events, horizon: float | None = None, init: HawkesModel | None = None, *, dim: int | None = None,
        shared_beta: bool = False, max_iter: int = 500, tol: float = 1e-9) -> FitResult:
    """Maximum-likelihood fit by L-BFGS-B in log-parameters.

    ``events`` is ``(times, comps)`` on ``[0, horizon]`` or a list of
    ``(times, comps, horizon)`` realizations sharing one parameter set.
    ``shared_beta`` ties every decay rate to a single value.
    """
    reals = _as_realizations(events, horizon)
    d = dim or int(max(int(c.max()) + 1 if c.size else 0 for _, c, _ in reals))
    seen = np.zeros(d, dtype=bool)
    n_tot, T_tot = 0, 0.0
    counts = np.zeros(d)
    for t, c, h in reals:
        seen[np.unique(c)] = True
        n_tot += t.size
        T_tot += h
        counts += np.bincount(c, minlength=d)[:d]
    if not seen.all():
        raise InvalidParameterError(f"components {np.flatnonzero(~seen).tolist()} never occur")
    if init is None:
        rate = n_tot / T_tot
        beta0 = np.full((d, d), rate)
        init = HawkesModel(0.5 * counts / T_tot, np.full((d, d), 0.25 * rate / d), beta0)
    nb = 1 if shared_beta else d * d

    def unpack(x):
        mu = np.exp(x[:d])
        alpha = np.exp(x[d:d + d * d]).reshape(d, d)
        b = np.exp(x[d + d * d:])
        beta = np.full((d, d), b[0]) if shared_beta else b.reshape(d, d)
        return mu, alpha, beta

    def f(x):
        mu, alpha, beta = unpack(x)
        ll, gm, ga, gb = 0.0, np.zeros(d), np.zeros((d, d)), np.zeros((d, d))
        for t, c, h in reals:
            v, a, b, e = _loglik(mu, alpha, beta, t, c, h)
            ll += v
            gm += a
            ga += b
            gb += e
        gbeta = np.array([np.sum(gb * beta)]) if shared_beta else (gb * beta).ravel()
        grad = np.concatenate([gm * mu, (ga * alpha).ravel(), gbeta])
        return -ll / n_tot, -grad / n_tot

    b0 = np.log([init.beta.mean()]) if shared_beta else np.log(init.beta.ravel())
    x0 = np.concatenate([np.log(init.mu), np.log(np.maximum(init.alpha.ravel(), np.exp(LOG_ALPHA_MIN))), b0])
    bounds = [(-30.0, 30.0)] * d + [(LOG_ALPHA_MIN, 30.0)] * (d * d) + [(-20.0, 30.0)] * nb
    res = minimize(f, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": max_iter, "ftol": tol, "gtol": 1e-8})
    mu, alpha, beta = unpack(res.x)
    # free gradient norm: components pinned at a bound do not count
    g = res.jac.copy()
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    g[(res.x <= lo + 1e-12) & (g > 0)] = 0.0
    g[(res.x >= hi - 1e-12) & (g < 0)] = 0.0
    alpha = np.where(res.x[d:d + d * d].reshape(d, d) <= LOG_ALPHA_MIN + 1e-9, 0.0, alpha)
    model = HawkesModel(mu, alpha, beta)
    return FitResult(model, float(-res.fun * n_tot), bool(res.success), float(np.linalg.norm(g)), int(res.nit),
                     str(res.message))


# ---------------------------------------------------------------------------
# flow -> best-quote point process
# ---------------------------------------------------------------------------


def best_quote_events(data, open_ns: int | None = None) -> list[tuple[np.ndarray, np.ndarray, float]]:
    """Level-1 events as six-component point processes, one realization per day.

    Times are seconds since the day's first event; simultaneous events keep
    their order of appearance.
    """
    flow: Flow = _as_flow(data)
    at = flow[flow.level == 1]
    if len(at) == 0:
        return []
    base = np.where(at.eta == Eta.C_ALL, Eta.C, np.where(at.eta == Eta.M_ALL, Eta.M, at.eta)).astype(np.int64)
    comp = at.side.astype(np.int64) * 3 + base
    day = at.ts_ns // (86_400 * NS)
    out = []
    for dd in np.unique(day):
        m = day == dd
        ts = at.ts_ns[m]
        start = ts[0] if open_ns is None else dd * 86_400 * NS + open_ns
        t = (ts - start) / NS
        out.append((t, comp[m], float(t[-1]) if t.size else 0.0))
    return out
