"""Discrete-event simulation of the queue-reactive book.

Each of the ``2K`` queues carries one exponential clock per event channel
with the rate of its current bucket.  The next event is drawn from the
superposition (total rate), then attributed proportionally to the channel
rates.  After an event only the touched queue's rates change, except after a
reference move, which re-buckets every queue.

Randomness comes from a Philox counter-based generator seeded by
``SimConfig.seed``, so a log is reproducible on any platform.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .eventlog import EventLog, log_from_arrays
from .flow import NS
from .lob import Eta, InvalidParameterError, LobState, Side
from .model import HAWKES_VARIANTS, QRModel, SizeDistribution, parse_channel

UNIT, DIST, ALL, SAQR = 0, 1, 2, 3
DEFAULT_T0 = 9 * 3600 * NS
DEFAULT_REF = 10000.5


class SimulationError(RuntimeError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


@dataclass
class SimConfig:
    """Run settings.  ``init_state=None`` draws every queue from its level's queue-size law."""

    horizon: float
    seed: int = 0
    variant: str | None = None
    K: int | None = None
    theta: float | None = None
    init_state: LobState | None = None
    ref_price: float = DEFAULT_REF
    t0_ns: int = DEFAULT_T0
    chunk_events: int = 1 << 22
    side_specific: bool = True

    def __post_init__(self):
        if not self.horizon >= 0:
            raise InvalidParameterError("horizon must be non-negative")
        if self.theta is not None and not 0 <= self.theta <= 1:
            raise InvalidParameterError("theta must lie in [0, 1]")


# ---------------------------------------------------------------------------
# compiled model
# ---------------------------------------------------------------------------


@dataclass
class Compiled:
    """Flat arrays consumed by the kernels."""

    rates: np.ndarray  # (2, K, C, NB)
    chan_eta: np.ndarray  # (C,) logged event type of each channel
    chan_sb: np.ndarray  # (C,) SAQR size bucket, 0 otherwise
    policy: np.ndarray  # (K, C)
    dist_row: np.ndarray  # (K, C) row of ``cdfs`` or -1
    cdfs: np.ndarray  # (R, S + 1)
    p_all: np.ndarray  # (K, C)
    unit: np.ndarray  # (K,)
    aes: np.ndarray  # (K,)
    sunit: np.ndarray  # (K,) lots per SAQR size bucket
    refill: np.ndarray  # (K, Q + 1)
    channels: tuple = field(default_factory=tuple)


def _cdf_rows(dists: list[SizeDistribution | None]) -> tuple[np.ndarray, list[int]]:
    real = [d for d in dists if d is not None]
    S = max([int(d.support.max()) for d in real], default=1)
    rows, idx = [], []
    for d in dists:
        if d is None:
            idx.append(-1)
        else:
            idx.append(len(rows))
            rows.append(d.cdf_row(S))
    if not rows:
        rows.append(np.ones(S + 1))
    return np.array(rows), idx


def compile_model(model: QRModel, variant: str | None = None, K: int | None = None,
                  side_specific: bool = True) -> Compiled:
    variant = (variant or model.variant).upper()
    K = K or model.K
    if K > model.K:
        raise InvalidParameterError(f"model has {model.K} levels, {K} requested")
    base_variant = model.variant
    if variant in ("QRU", "QR") and base_variant not in ("QRU", "QR") + HAWKES_VARIANTS:
        raise InvalidParameterError(f"{variant} run needs three-type tables, model is {base_variant}")
    if variant in ("FTQR", "SAQR") and base_variant != variant:
        raise InvalidParameterError(f"{variant} run needs a {variant} model, got {base_variant}")
    if variant in HAWKES_VARIANTS and model.hawkes is None:
        raise InvalidParameterError(f"{variant} run needs a model with a Hawkes block")
    levels = model.levels[:K]
    channels = levels[0].table("both").channels if "both" in levels[0].tables else \
        next(iter(levels[0].tables.values())).channels
    C = len(channels)
    NB = max(t.n_buckets for lv in levels for t in lv.tables.values())
    rates = np.zeros((2, K, C, NB))
    for k, lv in enumerate(levels):
        for s in Side:
            t = lv.table(s) if side_specific else lv.table("both")
            if t is None:
                t = next(iter(lv.tables.values()))
            if t.channels != channels:
                raise InvalidParameterError(f"level {lv.level} channels differ from level 1")
            rates[s, k, :, : t.n_buckets] = t.rates
            rates[s, k, :, t.n_buckets:] = t.rates[:, -1:]
    parsed = [parse_channel(c) for c in channels]
    chan_eta = np.array([int(e) for e, _ in parsed], dtype=np.int64)
    chan_sb = np.array([sb for _, sb in parsed], dtype=np.int64)
    policy = np.zeros((K, C), dtype=np.int64)
    p_all = np.zeros((K, C))
    dists: list[SizeDistribution | None] = []
    dist_row = np.full((K, C), -1, dtype=np.int64)
    sunit = np.array([lv.aes for lv in levels])
    for k, lv in enumerate(levels):
        if variant == "SAQR":
            any_t = next(iter(lv.tables.values()))
            if any_t.size_unit == "lot":
                sunit[k] = 1.0
        for c, (eta, sb) in enumerate(parsed):
            if variant in ("QRU", "HAWKES_U"):
                policy[k, c] = UNIT
            elif variant == "SAQR":
                policy[k, c] = SAQR
                bs = lv.bucket_sizes.get(channels[c])
                if bs is not None:
                    p_all[k, c] = bs.p_all
                    if bs.dist is not None:
                        dist_row[k, c] = len(dists)
                        dists.append(bs.dist)
            elif eta in (Eta.C_ALL, Eta.M_ALL):
                policy[k, c] = ALL
            else:
                d = lv.size_dists.get(eta.name)
                if d is None:
                    policy[k, c] = ALL if eta.consumes else UNIT
                else:
                    policy[k, c] = DIST
                    dist_row[k, c] = len(dists)
                    dists.append(d)
    cdfs, _ = _cdf_rows(dists)
    refill, _ = _cdf_rows([lv.queue_dist for lv in levels])
    unit = np.array([lv.unit_size for lv in levels], dtype=np.int64)
    aes = np.array([lv.aes for lv in levels])
    return Compiled(rates, chan_eta, chan_sb, policy, dist_row, cdfs, p_all, unit, aes, sunit, refill, channels)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _bucket(q, aes, nb):
    b = int(np.ceil(q / aes))
    return min(b, nb - 1)


@njit(cache=True)
def _allowed(eta, sb, q, k, sunit):
    if eta != 0:
        if q <= 0:
            return False
        if (eta == 2 or eta == 4) and k > 0:
            return False
        if sb > 0 and sb > np.ceil(q / sunit):
            return False
    return True


@njit(cache=True)
def _queue_rate(rates, chan_eta, chan_sb, aes, sunit, s, k, q):
    b = _bucket(q, aes[k], rates.shape[3])
    tot = 0.0
    for c in range(rates.shape[2]):
        if _allowed(chan_eta[c], chan_sb[c], q, k, sunit[k]):
            tot += rates[s, k, c, b]
    return tot


@njit(cache=True)
def _search(cdf, u, hi):
    # smallest s in 1..hi with cdf[s] >= u
    lo = 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cdf[mid] >= u:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(cache=True)
def _draw_from(cdf, rng, cap):
    """Size from a cdf row, truncated to ``<= cap`` when ``cap > 0``; 0 when the truncated mass is 0."""
    S = cdf.shape[0] - 1
    if cap <= 0 or cap >= S:
        return _search(cdf, rng.random() * cdf[S], S) if cdf[S] > 0 else 0
    f = cdf[cap]
    if f <= 0.0:
        return 0
    return _search(cdf, rng.random() * f, cap)


@njit(cache=True)
def _draw_size(policy, dist_row, cdfs, p_all, unit, sunit, chan_eta, chan_sb, k, c, q, rng):
    eta = chan_eta[c]
    consumes = eta != 0
    pol = policy[k, c]
    if pol == 2:
        return q
    if pol == 0:
        u = unit[k]
        return min(u, q) if consumes else u
    row = dist_row[k, c]
    if pol == 1:
        if row < 0:
            return q if consumes else unit[k]
        s = _draw_from(cdfs[row], rng, q if consumes else 0)
        return s if s > 0 else q
    # size-aware channel: a queue in the channel's own size bucket may be emptied
    if consumes:
        sb = chan_sb[c]
        if np.ceil(q / sunit[k]) == sb and rng.random() < p_all[k, c]:
            return q
        if row < 0:
            return q
        s = _draw_from(cdfs[row], rng, q)
        return s if s > 0 else q
    if row < 0:
        return max(1, int(np.ceil(chan_sb[c] * sunit[k])))
    return _draw_from(cdfs[row], rng, 0)


@njit(cache=True)
def _pick_channel(rates, chan_eta, chan_sb, aes, sunit, s, k, q, u):
    b = _bucket(q, aes[k], rates.shape[3])
    last = -1
    for c in range(rates.shape[2]):
        if _allowed(chan_eta[c], chan_sb[c], q, k, sunit[k]):
            r = rates[s, k, c, b]
            if r > 0.0:
                last = c
                if u < r:
                    return c
                u -= r
    return last


@njit(cache=True)
def _refill_draw(refill, k, rng):
    return _draw_from(refill[k], rng, 0)


@njit(cache=True)
def _recompute_all(book, qrate, rates, chan_eta, chan_sb, aes, sunit, skip_level0):
    K = book.shape[1]
    for s in range(2):
        for k in range(K):
            if skip_level0 and k == 0:
                qrate[s, k] = 0.0
            else:
                qrate[s, k] = _queue_rate(rates, chan_eta, chan_sb, aes, sunit, s, k, book[s, k])


@njit(cache=True)
def _run_chunk(book, ref, t, horizon, theta, rates, chan_eta, chan_sb, policy, dist_row, cdfs, p_all, unit, aes,
               sunit, refill, rng, ext_t, ext_side, ext_eta, ext_size, ext_pos, max_events,
               o_t, o_eta, o_side, o_level, o_size, o_q, o_ref, o_move, o_book, counters):
    """Advance the book until ``horizon`` or ``max_events`` logged events.

    ``ext_*`` is an externally generated level-1 flow (Hawkes); when present the
    level-1 queues get no queue-reactive clocks and external events are merged
    in by time, with consumption clipped to the queue.  ``counters`` holds
    (clipped, dropped, depletions).
    Returns (n_logged, t, ref, ext_pos, done).
    """
    K = book.shape[1]
    external = ext_t.shape[0] > 0
    qrate = np.zeros((2, K))
    _recompute_all(book, qrate, rates, chan_eta, chan_sb, aes, sunit, external)
    n = 0
    while n < max_events:
        total = 0.0
        for s in range(2):
            for k in range(K):
                total += qrate[s, k]
        t_next = t + rng.exponential(1.0 / total) if total > 0.0 else np.inf
        t_ext = ext_t[ext_pos] if ext_pos < ext_t.shape[0] else np.inf
        if t_ext <= t_next:
            # memorylessness: the pending queue-reactive draw is simply discarded
            if t_ext > horizon:
                return n, horizon, ref, ext_pos, True
            t = t_ext
            s = ext_side[ext_pos]
            k = 0
            eta = ext_eta[ext_pos]
            size = ext_size[ext_pos]
            ext_pos += 1
            q = book[s, k]
            if eta != 0:
                if q == 0:
                    counters[1] += 1
                    continue
                if size > q:
                    counters[0] += 1
                    size = q
        else:
            if t_next == np.inf:
                if not external:
                    return n, t, ref, ext_pos, False
                return n, horizon, ref, ext_pos, True
            if t_next > horizon:
                return n, horizon, ref, ext_pos, True
            t = t_next
            u = rng.random() * total
            s = 0
            k = 0
            found = False
            for ss in range(2):
                for kk in range(K):
                    r = qrate[ss, kk]
                    if r > 0.0:
                        s = ss
                        k = kk
                        if u < r:
                            found = True
                            break
                        u -= r
                if found:
                    break
            q = book[s, k]
            c = _pick_channel(rates, chan_eta, chan_sb, aes, sunit, s, k, q, u)
            eta = chan_eta[c]
            size = _draw_size(policy, dist_row, cdfs, p_all, unit, sunit, chan_eta, chan_sb, k, c, q, rng)
        if eta == 0:
            book[s, k] = q + size
        else:
            book[s, k] = q - size
        move = 0
        if eta != 0 and k == 0 and book[s, k] == 0:
            counters[2] += 1
            if rng.random() < theta:
                move = 1 if s == 1 else -1
                far = _refill_draw(refill, K - 1, rng)
                near = _refill_draw(refill, 0, rng)
                o = 1 - s
                for j in range(K - 1):
                    book[s, j] = book[s, j + 1]
                book[s, K - 1] = far
                for j in range(K - 1, 0, -1):
                    book[o, j] = book[o, j - 1]
                book[o, 0] = near
        o_t[n] = t
        o_eta[n] = eta
        o_side[n] = s
        o_level[n] = k + 1
        o_size[n] = size
        o_q[n] = q
        o_ref[n] = ref
        o_move[n] = move
        for ss in range(2):
            for kk in range(K):
                o_book[n, ss, kk] = book[ss, kk]
        ref += move
        n += 1
        if move != 0:
            _recompute_all(book, qrate, rates, chan_eta, chan_sb, aes, sunit, external)
        elif not (external and k == 0):
            qrate[s, k] = _queue_rate(rates, chan_eta, chan_sb, aes, sunit, s, k, book[s, k])
    return n, t, ref, ext_pos, False


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def initial_state(model: QRModel, K: int, rng: np.random.Generator, ref_price: float = DEFAULT_REF) -> LobState:
    """Every queue drawn independently from its level's queue-size law."""
    bids = [int(model.level(i).queue_dist.sample(rng)) for i in range(1, K + 1)]
    asks = [int(model.level(i).queue_dist.sample(rng)) for i in range(1, K + 1)]
    return LobState(model.tick_size, ref_price, bids, asks)


def next_event(model: QRModel | Compiled, state: LobState, rng: np.random.Generator, variant: str | None = None):
    """One draw of (dt, side, level, eta, size) from the current state."""
    cm = model if isinstance(model, Compiled) else compile_model(model, variant, state.K)
    book = state.as_array().astype(np.int64)
    K = book.shape[1]
    qrate = np.zeros((2, K))
    _recompute_all(book, qrate, cm.rates, cm.chan_eta, cm.chan_sb, cm.aes, cm.sunit, False)
    total = qrate.sum()
    if not total > 0:
        raise SimulationError("all event rates are zero; the book needs a refill")
    dt = rng.exponential(1.0 / total)
    flat = np.cumsum(qrate.ravel())
    u = rng.random() * total
    j = min(int(np.searchsorted(flat, u, side="right")), flat.size - 1)
    s, k = divmod(j, K)
    u -= flat[j - 1] if j > 0 else 0.0
    q = int(book[s, k])
    c = _pick_channel(cm.rates, cm.chan_eta, cm.chan_sb, cm.aes, cm.sunit, s, k, q, u)
    size = _draw_size(cm.policy, cm.dist_row, cm.cdfs, cm.p_all, cm.unit, cm.sunit, cm.chan_eta, cm.chan_sb,
                      k, c, q, rng)
    return float(dt), Side(s), k + 1, Eta(int(cm.chan_eta[c])), int(size)


class _Buffers:
    def __init__(self, n, K):
        # final column dtypes, so the log takes these arrays without a cast; pages
        # past the last written row are never touched
        self.t = np.empty(n)
        self.eta = np.empty(n, dtype=np.int8)
        self.side = np.empty(n, dtype=np.int8)
        self.level = np.empty(n, dtype=np.int16)
        self.size = np.empty(n, dtype=np.int64)
        self.q = np.empty(n, dtype=np.int64)
        self.ref = np.empty(n)
        self.move = np.empty(n, dtype=np.int8)
        self.book = np.empty((n, 2, K), dtype=np.int32)

    def args(self):
        return self.t, self.eta, self.side, self.level, self.size, self.q, self.ref, self.move, self.book

    def view(self, n):
        return tuple(a[:n] for a in self.args())


@njit(cache=True)
def _timestamps(t, t0_ns):
    # nanosecond rounding may tie two events; keep stamps strictly increasing
    out = np.empty(t.size, dtype=np.int64)
    prev = np.int64(-(1 << 62))
    for i in range(t.size):
        v = t0_ns + np.int64(np.round(t[i] * 1e9))
        if v <= prev:
            v = prev + 1
        out[i] = v
        prev = v
    return out


def _simulate(cm: Compiled, state: LobState, theta: float, cfg: SimConfig, rng, ext=None, meta=None) -> EventLog:
    K = state.K
    book = state.as_array().astype(np.int64)
    if ext is None:
        ext = (np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64))
    ext_t, ext_side, ext_eta, ext_size = ext
    counters = np.zeros(3, dtype=np.int64)
    parts = []
    t, ref, pos = 0.0, state.ref_price, 0
    if cfg.horizon > 0:
        while True:
            buf = _Buffers(cfg.chunk_events, K)
            n, t, ref, pos, done = _run_chunk(
                book, ref, t, float(cfg.horizon), theta, cm.rates, cm.chan_eta, cm.chan_sb, cm.policy, cm.dist_row,
                cm.cdfs, cm.p_all, cm.unit, cm.aes, cm.sunit, cm.refill, rng, ext_t, ext_side, ext_eta, ext_size,
                pos, cfg.chunk_events, *buf.args(), counters)
            parts.append(buf.view(n))
            if done:
                break
            if n < cfg.chunk_events:
                raise SimulationError(f"all event rates vanished at t={t:.6f}s; the book needs a refill")
    if not parts:
        parts = [_Buffers(0, K).view(0)]
    cols = parts[0] if len(parts) == 1 else [np.concatenate(c) for c in zip(*parts)]
    tt, eta, side, level, size, q, refs, move, snaps = cols
    meta = dict(meta or {})
    meta.update(t0_ns=cfg.t0_ns, horizon=float(cfg.horizon), seed=cfg.seed, theta=theta, rng="philox",
                n_clipped=int(counters[0]), n_dropped=int(counters[1]), n_depletions=int(counters[2]))
    return log_from_arrays(_timestamps(tt, cfg.t0_ns), eta, side, level, size, q, refs, move,
                           snaps.reshape(-1, 2, K), state, meta)


def run(model: QRModel, config: SimConfig) -> EventLog:
    """Simulate ``config.horizon`` seconds of a queue-reactive variant."""
    variant = (config.variant or model.variant).upper()
    if variant in HAWKES_VARIANTS:
        return run_hawkes(model, variant, config)
    K = config.K or model.K
    cm = compile_model(model, variant, K, config.side_specific)
    rng = make_rng(config.seed)
    state = config.init_state or initial_state(model, K, rng, config.ref_price)
    if state.K != K:
        raise InvalidParameterError(f"initial state has {state.K} levels, run needs {K}")
    theta = model.theta if config.theta is None else config.theta
    return _simulate(cm, state, theta, config, rng, meta={"variant": variant})


def hawkes_marks(comps: np.ndarray, model: QRModel, policy: str, rng: np.random.Generator):
    """Map best-quote Hawkes components to (side, eta, size).

    Components are ordered bid L, bid C, bid M, ask L, ask C, ask M.  ``U``
    marks every event with ``ceil(AES)``; ``S`` draws from the level-1
    stationary size law of the event type.
    """
    comps = np.asarray(comps, dtype=np.int64)
    side = comps // 3
    eta = comps % 3
    lv = model.level(1)
    if policy.upper().endswith("U"):
        size = np.full(comps.size, lv.unit_size, dtype=np.int64)
    else:
        size = np.empty(comps.size, dtype=np.int64)
        for e in (Eta.L, Eta.C, Eta.M):
            m = eta == e
            d = lv.size_dists.get(e.name) or SizeDistribution.point(lv.unit_size)
            size[m] = d.sample(rng, int(m.sum()))
    return side, eta, size


def run_hawkes(model: QRModel, sizing_policy: str, config: SimConfig) -> EventLog:
    """Hawkes best-quote flow, marked with sizes, played through the matching engine.

    Deeper levels (if any) keep their queue-reactive clocks.  Consumption larger
    than the queue is clipped and consumption of an empty queue dropped; both
    are counted in the log metadata.
    """
    from .hawkes import simulate as hawkes_simulate

    if model.hawkes is None:
        raise InvalidParameterError("model has no Hawkes block")
    variant = sizing_policy.upper()
    if variant in ("U", "S"):
        variant = "HAWKES_" + variant
    K = config.K or model.K
    cm = compile_model(model, "QR" if model.variant in ("QR", "QRU") + HAWKES_VARIANTS else model.variant, K,
                       config.side_specific)
    rng = make_rng(config.seed)
    state = config.init_state or initial_state(model, K, rng, config.ref_price)
    times, comps = hawkes_simulate(model.hawkes, config.horizon, rng)
    side, eta, size = hawkes_marks(comps, model, variant, rng)
    theta = model.theta if config.theta is None else config.theta
    ext = (np.ascontiguousarray(times, dtype=np.float64), side, eta, size)
    return _simulate(cm, state, theta, config, rng, ext=ext, meta={"variant": variant})
