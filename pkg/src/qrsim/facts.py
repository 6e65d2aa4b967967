"""Stylized-fact metrics on event logs and a model-vs-reference scorecard.

All metrics are pure functions of their inputs.  ``build_report`` evaluates
the twelve facts, grades each as pass / partial / fail (or not_evaluated when
a metric cannot be computed) and renders JSON, a text table and CSV files.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, stats

from .eventlog import EventLog
from .flow import DAY_NS, NS
from .lob import Eta

SECONDS_PER_YEAR = 252 * 9 * 3600

FACT_NAMES = {
    1: "Distribution of order sizes",
    2: "Power-law of order sizes distribution",
    3: "Signature plot",
    4: "Distribution of available volumes in the queue",
    5: "Price dynamics and volatility",
    6: "Long range dependency",
    7: "Distribution of returns",
    8: "Order book shape",
    9: "Absence of autocorrelation",
    10: "Traded volumes in a fixed window",
    11: "Weibull fit of interarrival time of trades",
    12: "Excitation between events",
}
COMPARATIVE = (1, 3, 4, 5, 7, 8, 10, 12)

PASS, PARTIAL, FAIL, NOT_EVALUATED = "pass", "partial", "fail", "not_evaluated"


class MetricError(ValueError):
    pass


@dataclass
class PriceSeries:
    values: np.ndarray
    period: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.period <= 0:
            raise MetricError("sampling period must be positive")

    def __len__(self):
        return self.values.size

    @property
    def span(self) -> float:
        return (self.values.size - 1) * self.period


def _steps(h: float, period: float, what: str) -> int:
    k = h / period
    if k < 1 or abs(k - round(k)) > 1e-9:
        raise MetricError(f"{what} {h} is not a positive multiple of the sampling period {period}")
    return int(round(k))


def price_series(log: EventLog, period: float = 1.0, t0: float = 0.0, t1: float | None = None) -> PriceSeries:
    """Mid-price (currency units) sampled every ``period`` seconds."""
    return PriceSeries(log.mid_path(period, t0, t1) * log.tick_size, period)


# ---------------------------------------------------------------------------
# volatility, volumes, returns
# ---------------------------------------------------------------------------


def realized_volatility(series: PriceSeries, window: float = 600.0,
                        seconds_per_year: float = SECONDS_PER_YEAR) -> np.ndarray:
    """Annualized standard deviation of one-period log-returns on consecutive windows."""
    k = _steps(window, series.period, "window")
    r = np.diff(np.log(series.values))
    if r.size < k:
        raise MetricError(f"series of {series.values.size} points is shorter than one window ({k} returns)")
    n = r.size // k
    blocks = r[: n * k].reshape(n, k)
    sd = blocks.std(axis=1, ddof=1) if k > 1 else np.abs(blocks[:, 0])
    return sd * math.sqrt(seconds_per_year / series.period)


def compare_vol(sim, real) -> dict:
    """Mean relative difference (%) and mean squared error of aligned volatility series.

    Windows where the reference volatility is zero are left out of the
    relative difference and counted in ``excluded``.
    """
    sim = np.asarray(sim, dtype=float)
    real = np.asarray(real, dtype=float)
    n = min(sim.size, real.size)
    if n == 0:
        raise MetricError("empty volatility series")
    sim, real = sim[:n], real[:n]
    ok = real != 0
    rel = float(np.mean(100.0 * (sim[ok] - real[ok]) / real[ok])) if ok.any() else float("nan")
    return {"relative_difference": rel, "quadratic_error": float(np.mean((sim - real) ** 2)),
            "excluded": int(np.count_nonzero(~ok)), "n": n}


def traded_volumes(log: EventLog, window: float = 600.0) -> np.ndarray:
    """Market-order volume (M and M_ALL) in consecutive windows covering the run."""
    if window <= 0:
        raise MetricError("window must be positive")
    n = max(int(math.floor(log.horizon / window + 1e-9)), 1)
    trade = (log.flow.eta == Eta.M) | (log.flow.eta == Eta.M_ALL)
    idx = np.floor(log.t[trade] / window).astype(np.int64)
    keep = idx < n
    return np.bincount(idx[keep], weights=log.flow.size[trade][keep], minlength=n)[:n].astype(float)


def returns_sample(series: PriceSeries, tau: float) -> np.ndarray:
    """Overlapping log-returns over ``tau`` seconds."""
    k = _steps(tau, series.period, "tau")
    if k >= series.values.size:
        raise MetricError("tau exceeds the series span")
    lp = np.log(series.values)
    return lp[k:] - lp[:-k]


def signature_plot(series: PriceSeries, lags) -> dict[float, float]:
    """``Var(P(t+h) - P(t)) / h`` for each lag ``h`` (seconds), overlapping increments."""
    out = {}
    for h in lags:
        k = _steps(h, series.period, "lag")
        if k >= series.values.size:
            raise MetricError(f"lag {h} exceeds the series span")
        inc = series.values[k:] - series.values[:-k]
        out[float(h)] = float(inc.var() / h)
    return out


# ---------------------------------------------------------------------------
# distribution distances and fits
# ---------------------------------------------------------------------------


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance ``sup_x |F_a(x) - F_b(x)|``."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise MetricError("KS statistic needs two non-empty samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_one_sample(sample, cdf) -> float:
    """Distance between the empirical law of ``sample`` and a continuous ``cdf``."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n == 0:
        raise MetricError("empty sample")
    f = cdf(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


@dataclass
class GammaFit:
    shape: float
    scale: float
    ks: float


def fit_gamma(sample) -> GammaFit:
    """Method-of-moments Gamma fit: ``shape = m^2 / v``, ``scale = v / m``."""
    x = np.asarray(sample, dtype=float)
    if x.size < 30:
        raise MetricError("gamma fit needs at least 30 observations")
    if (x <= 0).any():
        raise MetricError("gamma fit needs a positive sample")
    m, v = x.mean(), x.var(ddof=1)
    if v <= 0:
        raise MetricError("zero-variance sample")
    shape, scale = m * m / v, v / m
    return GammaFit(float(shape), float(scale), ks_one_sample(x, lambda z: stats.gamma.cdf(z, shape, scale=scale)))


@dataclass
class WeibullFit:
    shape: float
    scale: float
    ks: float
    ks_exponential: float


def fit_weibull(sample) -> WeibullFit:
    """Maximum-likelihood Weibull fit; the shape solves the profile score equation."""
    x = np.asarray(sample, dtype=float)
    if x.size < 2:
        raise MetricError("Weibull fit needs at least two observations")
    if (x <= 0).any():
        raise MetricError("Weibull fit needs a positive sample")
    if np.all(x == x[0]):
        raise MetricError("degenerate sample: all values equal")
    c = np.exp(np.mean(np.log(x)))
    y = x / c  # scale-free; shape is unchanged
    ly = np.log(y)

    def score(k):
        w = y ** k
        return np.sum(w * ly) / np.sum(w) - 1.0 / k - ly.mean()

    lo, hi = 1e-3, 1.0
    while score(hi) < 0:
        hi *= 2
        if hi > 1e4:
            raise MetricError("Weibull shape solve failed")
    k = optimize.brentq(score, lo, hi, xtol=1e-12)
    scale = c * np.mean(y ** k) ** (1.0 / k)
    ks_w = ks_one_sample(x, lambda z: -np.expm1(-(z / scale) ** k))
    mean = x.mean()
    ks_e = ks_one_sample(x, lambda z: -np.expm1(-z / mean))
    return WeibullFit(float(k), float(scale), ks_w, ks_e)


class InsufficientTail(MetricError):
    pass


@dataclass
class PowerLawFit:
    exponent: float
    r2: float
    n_tail: int
    cutoff: float


def _linfit(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss if ss > 0 else 0.0
    return float(slope), float(r2)


def fit_power_law(sizes, cutoff: float | None = None, min_tail: int = 100) -> PowerLawFit:
    """Tail exponent from a log-log regression of the survival function above ``cutoff``."""
    x = np.sort(np.asarray(sizes, dtype=float))
    if cutoff is None:
        cutoff = float(x[0]) if x.size else 0.0
    tail = x[x >= cutoff]
    if tail.size < min_tail:
        raise InsufficientTail(f"only {tail.size} values at or above cutoff {cutoff} (need {min_tail})")
    vals, first = np.unique(tail, return_index=True)
    if vals.size < 3:
        raise InsufficientTail(f"tail has {vals.size} distinct values; a slope needs at least 3")
    surv = 1.0 - first / tail.size  # P(X >= v) within the tail
    slope, r2 = _linfit(np.log(vals), np.log(surv))
    return PowerLawFit(-slope, r2, int(tail.size), float(cutoff))


# ---------------------------------------------------------------------------
# dependence
# ---------------------------------------------------------------------------


def acf(x, lags) -> np.ndarray:
    """Sample autocorrelation; each lag averages its own ``n - k`` products."""
    x = np.asarray(x, dtype=float)
    lags = np.atleast_1d(np.asarray(lags, dtype=int))
    if lags.size and x.size <= lags.max():
        raise MetricError("series shorter than the largest lag")
    d = x - x.mean()
    var = np.mean(d * d)
    if var == 0:
        return np.where(lags == 0, 1.0, 0.0)
    out = np.empty(lags.size)
    for i, k in enumerate(lags):
        out[i] = 1.0 if k == 0 else np.mean(d[:-k] * d[k:]) / var
    return out


@dataclass
class PowerLawDecay:
    exponent: float
    r2: float
    used_lags: list
    excluded_lags: list
    reliable: bool


def power_law_exponent(lags, values, r2_min: float = 0.8) -> PowerLawDecay:
    """Slope of ``log(values)`` against ``log(lags)``; non-positive values are dropped and listed."""
    lags = np.asarray(lags, dtype=float)
    values = np.asarray(values, dtype=float)
    ok = values > 0
    if ok.sum() < 3:
        return PowerLawDecay(float("nan"), 0.0, lags[ok].tolist(), lags[~ok].tolist(), False)
    slope, r2 = _linfit(np.log(lags[ok]), np.log(values[ok]))
    return PowerLawDecay(slope, r2, lags[ok].astype(int).tolist(), lags[~ok].astype(int).tolist(), r2 >= r2_min)


def long_range_dependence(returns, lags=None, r2_min: float = 0.8) -> PowerLawDecay:
    """Power-law decay of the autocorrelation of absolute returns.

    The fit is flagged unreliable when it is poor, when too many lags have
    non-positive correlation, or when the correlations sit inside the
    ``2/sqrt(n)`` noise band.
    """
    r = np.asarray(returns, dtype=float)
    if r.size < 1000:
        raise MetricError("long-range dependence needs at least 1000 returns")
    if lags is None:
        lags = np.unique(np.round(np.logspace(0, np.log10(min(200, r.size // 10)), 25)).astype(int))
    lags = np.asarray(lags, dtype=int)
    a = acf(np.abs(r), lags)
    fit = power_law_exponent(lags, a, r2_min)
    noise = 2.0 / math.sqrt(r.size)
    significant = np.mean(a > noise) >= 0.5
    enough = len(fit.excluded_lags) <= 0.5 * lags.size
    fit.reliable = bool(fit.reliable and significant and enough)
    return fit


def best_quote_components(log_or_flow) -> np.ndarray:
    """Level-1 events as component indices 0..5 (bid L, C, M, ask L, C, M)."""
    f = log_or_flow.flow if isinstance(log_or_flow, EventLog) else log_or_flow
    at = f.level == 1
    eta = f.eta[at].astype(np.int64)
    base = np.where(eta == Eta.C_ALL, Eta.C, np.where(eta == Eta.M_ALL, Eta.M, eta))
    return f.side[at].astype(np.int64) * 3 + base


@dataclass
class TransitionResult:
    matrix: np.ndarray
    counts: np.ndarray
    frequencies: np.ndarray
    flagged_rows: list
    diagonal_enrichment: float
    max_row_deviation: float


def transition_matrix(data) -> TransitionResult:
    """``P(next best-quote event type | previous type)`` over six components.

    ``diagonal_enrichment`` is the mean of ``P_ii - pi_i`` and
    ``max_row_deviation`` the largest ``|P_ij - pi_j|``, with ``pi`` the
    unconditional type frequencies.  Unseen rows are flagged and left at zero.
    """
    comps = data if isinstance(data, np.ndarray) else best_quote_components(data)
    if comps.size < 2:
        raise MetricError("transition matrix needs at least two best-quote events")
    counts = np.zeros((6, 6))
    np.add.at(counts, (comps[:-1], comps[1:]), 1)
    rows = counts.sum(axis=1)
    flagged = np.flatnonzero(rows == 0).tolist()
    P = np.divide(counts, rows[:, None], out=np.zeros_like(counts), where=rows[:, None] > 0)
    pi = np.bincount(comps, minlength=6) / comps.size
    seen = rows > 0
    enrich = float(np.mean((np.diag(P) - pi)[seen]))
    dev = float(np.max(np.abs(P - pi[None, :])[seen]))
    return TransitionResult(P, counts, pi, flagged, enrich, dev)


def book_shape(log: EventLog) -> np.ndarray:
    """Time-averaged volume per level (sides pooled) divided by the average over levels."""
    K = log.K
    t = log.t
    if len(log) == 0:
        prof = log.init_state.as_array().mean(axis=0).astype(float)
    else:
        hold = np.diff(np.concatenate([t, [max(log.horizon, t[-1])]]))
        books = log.book.astype(float).mean(axis=1)  # (n, K)
        w0 = t[0]
        prof = (books * hold[:, None]).sum(axis=0) + log.init_state.as_array().mean(axis=0) * w0
        total = hold.sum() + w0
        prof = prof / total if total > 0 else books.mean(axis=0)
    m = prof.mean()
    return prof / m if m > 0 else np.ones(K)


def queue_sizes(log: EventLog, level: int = 1) -> np.ndarray:
    """Queue sizes seen by events at ``level`` (both sides)."""
    f = log.flow
    return f.q_before[f.level == level].astype(float)


def order_sizes(log: EventLog, level: int | None = None) -> np.ndarray:
    f = log.flow
    return f.size[f.level == level].astype(float) if level else f.size.astype(float)


def trade_sizes(log: EventLog) -> np.ndarray:
    f = log.flow
    return f.size[(f.eta == Eta.M) | (f.eta == Eta.M_ALL)].astype(float)


def trade_interarrivals(log: EventLog) -> np.ndarray:
    f = log.flow
    t = log.t[(f.eta == Eta.M) | (f.eta == Eta.M_ALL)]
    d = np.diff(t)
    return d[d > 0]


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass
class FactConfig:
    """Scoring thresholds and sampling choices; defaults are documented in the README."""

    period: float = 1.0
    vol_window: float = 600.0
    volume_window: float = 600.0
    seconds_per_year: float = SECONDS_PER_YEAR
    returns_tau: float = 60.0
    signature_lags: tuple = (1, 2, 5, 10, 20, 30, 60, 120, 300)
    acf_tau: float = 10.0
    acf_lags: int = 20
    ks_pass: float = 0.25
    ks_partial: float = 0.40
    rel_pass: float = 20.0
    rel_partial: float = 50.0
    matrix_pass: float = 0.10
    matrix_partial: float = 0.20
    acf_pass: float = 0.10
    acf_partial: float = 0.20
    r2_pass: float = 0.90
    r2_partial: float = 0.75
    weibull_ks_pass: float = 0.10
    weibull_ks_partial: float = 0.20
    power_law_min_tail: int = 100
    periods: tuple = (("09:00", "18:00"), ("10:00", "14:00"), ("15:00", "18:00"))

    @classmethod
    def from_dict(cls, d: dict | None) -> "FactConfig":
        d = dict(d or {})
        names = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown fact settings: {sorted(unknown)}")
        for key in ("signature_lags", "periods"):
            if key in d:
                d[key] = tuple(tuple(x) if isinstance(x, list) else x for x in d[key])
        return cls(**d)


@dataclass
class FactResult:
    index: int
    name: str
    kind: str
    verdict: str
    metrics: dict = field(default_factory=dict)
    note: str = ""


@dataclass
class FactReport:
    facts: dict
    periods: list
    curves: dict
    config: dict

    def verdicts(self) -> dict[int, str]:
        return {i: f.verdict for i, f in self.facts.items()}

    def to_json(self) -> dict:
        return _clean({
            "facts": [asdict(self.facts[i]) for i in sorted(self.facts)],
            "periods": self.periods,
            "config": self.config,
        })

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2, allow_nan=False)

    def render_text(self) -> str:
        lines = ["Stylized facts", ""]
        lines.append(f"{'#':>3}  {'fact':<48} {'kind':<12} {'verdict':<14} key metric")
        for i in sorted(self.facts):
            f = self.facts[i]
            key = _key_metric(f)
            lines.append(f"{i:>3}  {f.name:<48} {f.kind:<12} {f.verdict:<14} {key}")
        if self.periods:
            lines += ["", "Volatility and signature plot by period", ""]
            lines.append(f"{'period':<13} {'rel. diff vol %':>16} {'quad. err vol':>14} "
                         f"{'sig. signed sum':>16} {'sig. L2':>12}")
            for row in self.periods:
                lines.append(f"{row['period']:<13} {_fmt(row.get('vol_relative_difference')):>16} "
                             f"{_fmt(row.get('vol_quadratic_error')):>14} {_fmt(row.get('signature_signed_sum')):>16} "
                             f"{_fmt(row.get('signature_l2')):>12}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = [out / "report.json", out / "report.txt"]
        written[0].write_text(self.dumps() + "\n", encoding="utf-8")
        written[1].write_text(self.render_text(), encoding="utf-8")
        for name, (header, rows) in sorted(self.curves.items()):
            p = out / f"{name}.csv"
            with open(p, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for r in rows:
                    w.writerow([_csv_val(v) for v in r])
            written.append(p)
        return written


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "-"
    return f"{v:.4g}"


def _csv_val(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _key_metric(f: FactResult) -> str:
    for k in ("ks", "relative_difference", "max_abs_diff", "r2", "max_abs_acf", "exponent", "ks_weibull"):
        if k in f.metrics:
            return f"{k}={_fmt(f.metrics[k])}"
    return f.note


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _grade_low(value: float, good: float, ok: float) -> str:
    if not math.isfinite(value):
        return NOT_EVALUATED
    return PASS if value < good else PARTIAL if value < ok else FAIL


def _tod_window(log: EventLog, start: str, end: str) -> tuple[float, float]:
    def sec(hhmm):
        h, m = hhmm.split(":")
        return int(h) * 3600 + int(m) * 60

    tod0 = (log.t0_ns % DAY_NS) / NS
    t0 = max(sec(start) - tod0, 0.0)
    t1 = min(sec(end) - tod0, log.horizon)
    return t0, t1


def _signature_distance(sim: dict, real: dict) -> dict:
    lags = sorted(set(sim) & set(real))
    d = np.array([sim[h] - real[h] for h in lags])
    r = np.array([real[h] for h in lags])
    ok = r != 0
    rel = float(np.mean(100 * np.abs(d[ok]) / r[ok])) if ok.any() else float("nan")
    return {"signed_sum": float(d.sum()), "l2": float(np.sqrt(np.sum(d * d))), "relative_difference": rel}


def _series(log, cfg, t0=0.0, t1=None):
    t1 = log.horizon if t1 is None else t1
    n = int(math.floor((t1 - t0) / cfg.period + 1e-9))
    return price_series(log, cfg.period, t0, t0 + n * cfg.period)


def build_report(sim: EventLog, real: EventLog, config: FactConfig | dict | None = None) -> FactReport:
    """Score ``sim`` against ``real`` on the twelve facts.

    Comparative facts grade a distance between the two logs; intrinsic facts
    grade ``sim`` alone.  A metric that cannot be computed marks its fact
    ``not_evaluated`` with the reason, and the report carries on.
    """
    cfg = config if isinstance(config, FactConfig) else FactConfig.from_dict(config)
    facts: dict[int, FactResult] = {}
    curves: dict = {}
    cache: dict = {}

    def series(which):
        if which not in cache:
            cache[which] = _series(sim if which == "sim" else real, cfg)
        return cache[which]

    def run(idx, fn):
        kind = "comparative" if idx in COMPARATIVE else "intrinsic"
        try:
            verdict, metrics, note = fn()
        except Exception as exc:  # any metric failure degrades only this fact
            verdict, metrics, note = NOT_EVALUATED, {}, f"{type(exc).__name__}: {exc}"
        facts[idx] = FactResult(idx, FACT_NAMES[idx], kind, verdict, _clean(metrics), note)

    def f1():
        ks = ks_statistic(order_sizes(sim), order_sizes(real))
        return _grade_low(ks, cfg.ks_pass, cfg.ks_partial), {"ks": ks}, ""

    def f2():
        try:
            fit = fit_power_law(trade_sizes(sim), min_tail=cfg.power_law_min_tail)
        except InsufficientTail as exc:
            return FAIL, {}, str(exc)
        v = PASS if fit.r2 >= cfg.r2_pass else PARTIAL if fit.r2 >= cfg.r2_partial else FAIL
        return v, asdict(fit), ""

    def f3():
        lags = [h for h in cfg.signature_lags if h / cfg.period < min(len(series("sim")), len(series("real")))]
        s, r = signature_plot(series("sim"), lags), signature_plot(series("real"), lags)
        curves["signature_plot"] = (["lag_s", "sim", "real"], [(h, s[h], r[h]) for h in sorted(s)])
        d = _signature_distance(s, r)
        return _grade_low(d["relative_difference"], cfg.rel_pass, cfg.rel_partial), d, ""

    def f4():
        a, b = queue_sizes(sim), queue_sizes(real)
        ks = ks_statistic(a, b)
        m = {"ks": ks}
        for name, x in (("gamma_sim", a), ("gamma_real", b)):
            try:
                m[name] = asdict(fit_gamma(x[x > 0]))
            except MetricError as exc:
                m[name] = str(exc)
        return _grade_low(ks, cfg.ks_pass, cfg.ks_partial), m, ""

    def f5():
        vs = realized_volatility(series("sim"), cfg.vol_window, cfg.seconds_per_year)
        vr = realized_volatility(series("real"), cfg.vol_window, cfg.seconds_per_year)
        c = compare_vol(vs, vr)
        n = min(vs.size, vr.size)
        curves["volatility"] = (["window", "sim", "real"], [(i, vs[i], vr[i]) for i in range(n)])
        return _grade_low(abs(c["relative_difference"]), cfg.rel_pass, cfg.rel_partial), c, \
            f"{c['excluded']} zero-volatility reference windows excluded" if c["excluded"] else ""

    def f6():
        r = returns_sample(series("sim"), cfg.period)
        fit = long_range_dependence(r)
        if fit.reliable and fit.exponent < 0:
            v = PASS
        elif math.isfinite(fit.exponent) and fit.exponent < 0 and fit.r2 >= cfg.r2_partial:
            v = PARTIAL
        else:
            v = FAIL
        return v, asdict(fit), "" if fit.reliable else "fit flagged unreliable"

    def f7():
        ks = ks_statistic(returns_sample(series("sim"), cfg.returns_tau),
                          returns_sample(series("real"), cfg.returns_tau))
        return _grade_low(ks, cfg.ks_pass, cfg.ks_partial), {"ks": ks, "tau": cfg.returns_tau,
                                                              "overlapping": True}, ""

    def f8():
        s, r = book_shape(sim), book_shape(real)
        k = min(s.size, r.size)
        curves["book_shape"] = (["level", "sim", "real"], [(i + 1, s[i], r[i]) for i in range(k)])
        rel = float(np.mean(100 * np.abs(s[:k] - r[:k]) / r[:k]))
        return _grade_low(rel, cfg.rel_pass, cfg.rel_partial), {"relative_difference": rel,
                                                                "sim": s, "real": r}, ""

    def f9():
        ps = series("sim")
        k = _steps(cfg.acf_tau, cfg.period, "acf_tau")
        r = np.diff(np.log(ps.values[::k]))
        a = acf(r, np.arange(1, cfg.acf_lags + 1))
        m = float(np.max(np.abs(a)))
        curves["acf"] = (["lag", "acf"], [(i + 1, a[i]) for i in range(a.size)])
        return _grade_low(m, cfg.acf_pass, cfg.acf_partial), {"max_abs_acf": m, "tau": cfg.acf_tau}, ""

    def f10():
        vs, vr = traded_volumes(sim, cfg.volume_window), traded_volumes(real, cfg.volume_window)
        ms, mr = float(vs.mean()), float(vr.mean())
        rel = 100 * (ms - mr) / mr if mr > 0 else float("nan")
        return _grade_low(abs(rel), cfg.rel_pass, cfg.rel_partial), {"relative_difference": rel,
                                                                     "mean_sim": ms, "mean_real": mr}, ""

    def f11():
        fit = fit_weibull(trade_interarrivals(sim))
        better = fit.ks <= fit.ks_exponential
        if better and fit.ks < cfg.weibull_ks_pass:
            v = PASS
        elif fit.ks < cfg.weibull_ks_partial:
            v = PARTIAL
        else:
            v = FAIL
        m = asdict(fit)
        m["ks_weibull"] = m.pop("ks")
        return v, m, ""

    def f12():
        ts, tr = transition_matrix(sim), transition_matrix(real)
        diff = float(np.max(np.abs(ts.matrix - tr.matrix)))
        curves["transition_matrix"] = (["from", "to", "sim", "real"],
                                       [(i, j, ts.matrix[i, j], tr.matrix[i, j]) for i in range(6) for j in range(6)])
        return _grade_low(diff, cfg.matrix_pass, cfg.matrix_partial), {
            "max_abs_diff": diff, "diagonal_enrichment_sim": ts.diagonal_enrichment,
            "diagonal_enrichment_real": tr.diagonal_enrichment, "max_row_deviation_sim": ts.max_row_deviation,
        }, ""

    for idx, fn in enumerate((f1, f2, f3, f4, f5, f6, f7, f8, f9, f10, f11, f12), start=1):
        run(idx, fn)

    periods = []
    for start, end in cfg.periods:
        row = {"period": f"{start}-{end}"}
        try:
            a0, a1 = _tod_window(sim, start, end)
            b0, b1 = _tod_window(real, start, end)
            ss, sr = _series(sim, cfg, a0, a1), _series(real, cfg, b0, b1)
            c = compare_vol(realized_volatility(ss, cfg.vol_window, cfg.seconds_per_year),
                            realized_volatility(sr, cfg.vol_window, cfg.seconds_per_year))
            row["vol_relative_difference"] = c["relative_difference"]
            row["vol_quadratic_error"] = c["quadratic_error"]
            lags = [h for h in cfg.signature_lags if h / cfg.period < min(len(ss), len(sr))]
            d = _signature_distance(signature_plot(ss, lags), signature_plot(sr, lags))
            row["signature_signed_sum"] = d["signed_sum"]
            row["signature_l2"] = d["l2"]
        except Exception as exc:
            row["note"] = f"{type(exc).__name__}: {exc}"
        periods.append(_clean(row))
    return FactReport(facts, periods, curves, _clean(asdict(cfg)))
