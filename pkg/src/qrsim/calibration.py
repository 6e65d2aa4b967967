"""Closed-form maximum-likelihood calibration of queue-reactive intensities.

For a queue observed in bucket ``n`` the global rate is the inverse of the
mean inter-event time there, and each channel's rate is the global rate times
the channel's share of events in that bucket.  Counts and time sums are kept
so identities between variants hold exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .flow import NS, Flow, FlowSegment, _as_flow
from .lob import Eta, InvalidParameterError, Side
from .model import (FTQR_CHANNELS, QR_CHANNELS, BucketSizes, IntensityTable, LevelModel, QRModel,
                    SizeDistribution, saqr_channels)

N_MAX = 60
MIN_OBS = 50


class CalibrationError(RuntimeError):
    pass


def _level_events(data, level: int, side: Side | None = None) -> Flow:
    flow = _as_flow(data)
    mask = flow.level == level
    if side is not None:
        mask &= flow.side == int(side)
    return flow[mask]


def average_event_size(data, level: int) -> float:
    """Mean size of all events at ``level`` regardless of type."""
    ev = _level_events(data, level)
    if len(ev) == 0:
        raise CalibrationError(f"no events at level {level}")
    return float(ev.size.mean())


def quantize(q: np.ndarray, aes: float, n_max: int | None = None) -> np.ndarray:
    b = np.ceil(np.asarray(q) / aes).astype(np.int64)
    return b if n_max is None else np.minimum(b, n_max)


def _nearest_populated(n_obs: np.ndarray, min_obs: int) -> np.ndarray:
    idx = np.arange(n_obs.size)
    good = np.flatnonzero(n_obs >= min_obs)
    if good.size == 0:
        return idx
    # ties go to the lower bucket: argmin returns the first minimum
    dist = np.abs(idx[:, None] - good[None, :])
    return np.where(n_obs >= min_obs, idx, good[np.argmin(dist, axis=1)])


def _table(level, variant, channels, chan, bucket, dt, n_max, min_obs, aes, side, size_unit=None) -> IntensityTable:
    nb = n_max + 1
    nc = len(channels)
    counts = np.zeros((nc, nb), dtype=np.int64)
    np.add.at(counts, (chan, bucket), 1)
    n_obs = counts.sum(axis=0)
    dt_sum = np.bincount(bucket, weights=dt, minlength=nb).astype(np.float64)
    source = _nearest_populated(n_obs, min_obs)
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = dt_sum[source]
        rates = np.where(denom > 0, counts[:, source] / denom, 0.0)
        total = np.where(denom > 0, n_obs[source] / denom, 0.0)
    return IntensityTable(level=level, variant=variant, channels=channels, rates=rates, total=total, aes=aes,
                          side=side, counts=counts, n_obs=n_obs, dt_sum=dt_sum, source=source, min_obs=min_obs,
                          size_unit=size_unit)


def _prepare(segments, level, aes, n_max, side):
    ev = _level_events(segments, level, side)
    if aes is None:
        aes = average_event_size(segments, level)
    valid = ev.dt_ns >= 0
    ev = ev[valid]
    bucket = quantize(ev.q_before, aes, n_max)
    dt = ev.dt_ns / NS
    return ev, float(aes), bucket, dt


def _side_label(side):
    return "both" if side is None else Side(side).label


def estimate_qr(segments, level: int, *, aes: float | None = None, n_max: int = N_MAX, min_obs: int = MIN_OBS,
                side: Side | None = None, variant: str = "QR") -> IntensityTable:
    """Three-type (L, C, M) table; full-queue consumptions count as C or M.

    Events whose per-queue ``dt`` is undefined (first on their queue in a
    segment) are excluded.  Buckets above ``n_max`` are pooled into it.
    """
    ev, aes, bucket, dt = _prepare(segments, level, aes, n_max, side)
    chan = np.where(ev.eta == Eta.C_ALL, Eta.C, np.where(ev.eta == Eta.M_ALL, Eta.M, ev.eta)).astype(np.int64)
    return _table(level, variant, QR_CHANNELS, chan, bucket, dt, n_max, min_obs, aes, _side_label(side))


def full_consumption_labels(flow: Flow) -> np.ndarray:
    """Event types with queue-emptying C/M relabelled C_ALL/M_ALL."""
    eta = flow.eta.astype(np.int64)
    full = (eta != Eta.L) & (flow.size == flow.q_before)
    base = np.where(eta == Eta.C_ALL, Eta.C, np.where(eta == Eta.M_ALL, Eta.M, eta))
    return np.where(full, np.where(base == Eta.C, int(Eta.C_ALL), int(Eta.M_ALL)), base)


def estimate_ftqr(segments, level: int, *, aes: float | None = None, n_max: int = N_MAX, min_obs: int = MIN_OBS,
                  side: Side | None = None) -> IntensityTable:
    """Five-type table: consumptions with ``size == q_before`` become C_ALL / M_ALL."""
    ev, aes, bucket, dt = _prepare(segments, level, aes, n_max, side)
    chan = full_consumption_labels(ev)
    return _table(level, "FTQR", FTQR_CHANNELS, chan, bucket, dt, n_max, min_obs, aes, _side_label(side))


def size_bucket(size: np.ndarray, aes: float, n_size_buckets: int, size_unit: str = "aes") -> np.ndarray:
    if size_unit == "aes":
        s = np.ceil(np.asarray(size) / aes).astype(np.int64)
    elif size_unit == "lot":
        s = np.asarray(size, dtype=np.int64)
    else:
        raise InvalidParameterError(f"size_unit must be 'aes' or 'lot', got {size_unit!r}")
    return np.clip(s, 1, n_size_buckets)


def estimate_saqr(segments, level: int, size_buckets: int | None = None, *, aes: float | None = None,
                  n_max: int = N_MAX, min_obs: int = MIN_OBS, side: Side | None = None,
                  size_unit: str = "aes") -> IntensityTable:
    """Joint (type, size bucket) table; channel ``"M:3"`` is a market order of 3 AES (or 3 lots)."""
    S = size_buckets or n_max
    ev, aes, bucket, dt = _prepare(segments, level, aes, n_max, side)
    base = np.where(ev.eta == Eta.C_ALL, Eta.C, np.where(ev.eta == Eta.M_ALL, Eta.M, ev.eta)).astype(np.int64)
    s = size_bucket(ev.size, aes, S, size_unit)
    chan = base * S + (s - 1)
    return _table(level, "SAQR", saqr_channels(S), chan, bucket, dt, n_max, min_obs, aes, _side_label(side),
                  size_unit=size_unit)


def size_distribution(data, level: int, eta=None, conditioning="stationary", *, aes: float | None = None,
                      full: bool | None = None) -> SizeDistribution:
    """Empirical size law of ``eta`` events at ``level``.

    ``eta`` matches its base type (``"M"`` includes full-queue market orders)
    unless ``full`` restricts to partial (``False``) or queue-emptying
    (``True``) consumptions.  An integer ``conditioning`` keeps only events
    whose queue sat in that AES bucket.
    """
    ev = _level_events(data, level)
    mask = np.ones(len(ev), dtype=bool)
    if eta is not None:
        e = Eta.parse(eta)
        base = np.where(ev.eta == Eta.C_ALL, Eta.C, np.where(ev.eta == Eta.M_ALL, Eta.M, ev.eta))
        mask &= (ev.eta == e) if e in (Eta.C_ALL, Eta.M_ALL) else (base == e.base)
    if full is not None:
        is_full = (ev.eta != Eta.L) & (ev.size == ev.q_before)
        mask &= is_full if full else ~is_full
    label = "stationary"
    if conditioning != "stationary":
        n = int(conditioning)
        if aes is None:
            aes = average_event_size(data, level)
        mask &= quantize(ev.q_before, aes) == n
        label = f"queue={n}"
    sizes = ev.size[mask]
    if sizes.size == 0:
        raise CalibrationError(f"no {eta or 'any'} events at level {level} match the filter")
    return SizeDistribution.from_sample(sizes, label)


def queue_size_distribution(data, level: int) -> SizeDistribution:
    """Law of the (positive) queue sizes seen by events at ``level``; the refill source."""
    ev = _level_events(data, level)
    q = ev.q_before[ev.q_before > 0]
    if q.size == 0:
        raise CalibrationError(f"no non-empty queue observations at level {level}")
    return SizeDistribution.from_sample(q, "queue")


def saqr_bucket_sizes(data, level: int, size_buckets: int, *, aes: float, size_unit: str = "aes"
                      ) -> dict[str, BucketSizes]:
    """Lot sizes behind each SAQR channel, split into queue-emptying and partial orders."""
    ev = _level_events(data, level)
    base = np.where(ev.eta == Eta.C_ALL, Eta.C, np.where(ev.eta == Eta.M_ALL, Eta.M, ev.eta))
    s = size_bucket(ev.size, aes, size_buckets, size_unit)
    full = (base != Eta.L) & (ev.size == ev.q_before)
    out = {}
    for e in (Eta.L, Eta.C, Eta.M):
        for b in range(1, size_buckets + 1):
            m = (base == e) & (s == b)
            n = int(m.sum())
            if n == 0:
                continue
            n_full = int((m & full).sum())
            partial = ev.size[m & ~full]
            dist = SizeDistribution.from_sample(partial) if partial.size else None
            out[f"{e.name}:{b}"] = BucketSizes(n_full / n, dist)
    return out


def log_likelihood(table: IntensityTable, segments, level: int | None = None, side: Side | None = None) -> float:
    """Log-likelihood of the queue-reactive model for the events at ``level``."""
    level = table.level if level is None else level
    ev, _, bucket, dt = _prepare(segments, level, table.aes, table.n_max, side)
    if table.variant == "FTQR":
        chan = full_consumption_labels(ev)
    elif table.variant == "SAQR":
        S = len(table.channels) // 3
        base = np.where(ev.eta == Eta.C_ALL, Eta.C, np.where(ev.eta == Eta.M_ALL, Eta.M, ev.eta))
        chan = base * S + size_bucket(ev.size, table.aes, S, table.size_unit or "aes") - 1
    else:
        chan = np.where(ev.eta == Eta.C_ALL, Eta.C, np.where(ev.eta == Eta.M_ALL, Eta.M, ev.eta))
    total = table.rates.sum(axis=0)
    lam = table.rates[chan, bucket]
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(lam)) - np.sum(total[bucket] * dt))


# ---------------------------------------------------------------------------
# theta
# ---------------------------------------------------------------------------


def continuation_fraction(moves) -> float:
    """Share of consecutive price moves that go the same way."""
    s = np.sign(np.asarray(moves, dtype=float))
    s = s[s != 0]
    if s.size < 2:
        raise CalibrationError("need at least two price moves")
    return float(np.mean(s[1:] == s[:-1]))


def depletion_mechanism(theta: float, rng: np.random.Generator, n_depletions: int) -> np.ndarray:
    """Signed half-tick mid-price moves produced by best-queue depletions.

    A depletion moves the mid half a tick towards the emptied side; with
    probability ``theta`` the reference follows (the mid completes a one-tick
    move in the same direction), otherwise the emptied price refills and the
    mid comes back.  Depleted sides are equally likely.
    """
    side = np.where(rng.random(n_depletions) < 0.5, -1, 1)
    follow = rng.random(n_depletions) < theta
    second = np.where(follow, side, -side)
    return np.column_stack([side, second]).ravel()


@dataclass(frozen=True)
class ThetaCalibration:
    theta: float
    target: float
    achieved: float
    iterations: int
    bracket: tuple[float, float]

    @property
    def continuation_ratio(self) -> float:
        """Continuations per alternation at the calibrated theta."""
        return self.achieved / (1.0 - self.achieved) if self.achieved < 1 else float("inf")


def calibrate_theta(moves, *, mechanism: Callable | None = None, n_depletions: int = 200_000, seed: int = 0,
                    tol: float = 1e-4, max_iter: int = 100) -> ThetaCalibration:
    """Bisection on theta so the simulated continuation fraction matches ``moves``.

    ``moves`` are signed mid-price changes.  ``mechanism(theta, rng, n)`` must
    return a simulated move sequence; the same seed is reused at every probe
    so the simulated fraction is monotone in theta.  Targets outside the
    reachable range resolve to the nearest end point.
    """
    target = continuation_fraction(moves)
    mech = mechanism or depletion_mechanism

    def achieved(theta):
        return continuation_fraction(mech(theta, np.random.default_rng(seed), n_depletions))

    lo, hi = 0.0, 1.0
    f_lo, f_hi = achieved(lo), achieved(hi)
    increasing = f_hi >= f_lo
    if (target <= f_lo) == increasing and target != f_lo:
        return ThetaCalibration(lo, target, f_lo, 0, (lo, lo))
    if (target >= f_hi) == increasing and target != f_hi:
        return ThetaCalibration(hi, target, f_hi, 0, (hi, hi))
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        f_mid = achieved(mid)
        if (f_mid < target) == increasing:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            theta = 0.5 * (lo + hi)
            return ThetaCalibration(theta, target, achieved(theta), it, (lo, hi))
    raise CalibrationError(f"theta bisection did not converge in {max_iter} iterations; bracket=({lo}, {hi})")


# ---------------------------------------------------------------------------
# stability
# ---------------------------------------------------------------------------


def max_relative_divergence(a: IntensityTable, b: IntensityTable, min_obs: int | None = None) -> float:
    """Largest ``|b - a| / a`` over buckets populated in both halves."""
    thr = a.min_obs if min_obs is None else min_obs
    ok = np.ones(a.n_buckets, dtype=bool)
    if a.n_obs is not None and b.n_obs is not None:
        ok = (a.n_obs >= max(thr, 1)) & (b.n_obs >= max(thr, 1))
    ra, rb = a.rates[:, ok], b.rates[:, ok]
    pos = ra > 0
    if not pos.any():
        return 0.0
    return float(np.max(np.abs(rb[pos] - ra[pos]) / ra[pos]))


def stability_split(segments: Sequence[FlowSegment], level: int = 1, **kwargs):
    """Calibrate each chronological half of the days separately and compare."""
    days = sorted({s.day for s in segments})
    if len(days) < 2:
        raise CalibrationError("stability split needs at least two days")
    cut = days[len(days) // 2]
    first = [s for s in segments if s.day < cut]
    second = [s for s in segments if s.day >= cut]
    aes = kwargs.pop("aes", None) or average_event_size(segments, level)
    t1 = estimate_qr(first, level, aes=aes, **kwargs)
    t2 = estimate_qr(second, level, aes=aes, **kwargs)
    return t1, t2, max_relative_divergence(t1, t2)


# ---------------------------------------------------------------------------
# whole model
# ---------------------------------------------------------------------------


def calibrate_model(segments, variant: str = "QR", *, K: int = 5, tick_size: float = 1.0, theta: float = 0.7,
                    n_max: int = N_MAX, min_obs: int = MIN_OBS, pool_sides: bool = True,
                    size_buckets: int | None = None, size_unit: str = "aes", aes: Sequence[float] | None = None,
                    hawkes_options: dict | None = None) -> QRModel:
    """Calibrate every level of a simulator model of the given variant."""
    variant = variant.upper()
    levels = []
    flow = _as_flow(segments)
    for level in range(1, K + 1):
        a = float(aes[level - 1]) if aes is not None else average_event_size(flow, level)
        sides = [None] if pool_sides else [Side.BID, Side.ASK]
        tables = {}
        for side in sides:
            if variant == "FTQR":
                t = estimate_ftqr(segments, level, aes=a, n_max=n_max, min_obs=min_obs, side=side)
            elif variant == "SAQR":
                t = estimate_saqr(segments, level, size_buckets, aes=a, n_max=n_max, min_obs=min_obs, side=side,
                                  size_unit=size_unit)
            else:
                t = estimate_qr(segments, level, aes=a, n_max=n_max, min_obs=min_obs, side=side,
                                variant="QRU" if variant == "QRU" else "QR")
            tables[_side_label(side)] = t
        dists = {}
        for e in ("L", "C", "M"):
            full = False if (variant == "FTQR" and e != "L") else None
            try:
                dists[e] = size_distribution(flow, level, e, full=full)
            except CalibrationError:
                pass
        bucket_sizes = {}
        if variant == "SAQR":
            bucket_sizes = saqr_bucket_sizes(flow, level, size_buckets or n_max, aes=a, size_unit=size_unit)
        levels.append(LevelModel(level, a, tables, dists, queue_size_distribution(flow, level), bucket_sizes))
    hawkes = None
    if variant.startswith("HAWKES"):
        from .hawkes import best_quote_events, fit

        res = fit(best_quote_events(segments), dim=6, **(hawkes_options or {}))
        hawkes = res.model
    return QRModel(variant=variant, tick_size=tick_size, theta=theta, levels=levels, hawkes=hawkes)
