"""Hand-built models used as ground truth in tests, benchmarks and demos."""
from __future__ import annotations

import numpy as np

from .hawkes import HawkesModel
from .model import BucketSizes, IntensityTable, LevelModel, QRModel, SizeDistribution, saqr_channels

# large-tick bond future: per-level average event size (lots) and mean inter-event time (s)
BUND_AES = (5.92, 5.15, 4.87, 5.98, 4.11)
BUND_AIT = (0.056, 0.272, 0.370, 0.468, 0.523)


def geometric_sizes(mean: float, max_size: int = 200) -> SizeDistribution:
    """Geometric law on ``1..max_size`` with (untruncated) mean ``mean``."""
    p = 1.0 / mean
    s = np.arange(1, max_size + 1)
    w = p * (1 - p) ** (s - 1)
    return SizeDistribution(s, w / w.sum())


def pareto_sizes(alpha: float, max_size: int = 500) -> SizeDistribution:
    """Discrete power law with survival ``P(X >= s) ~ s^-alpha``."""
    s = np.arange(1, max_size + 2, dtype=float)
    surv = s ** -alpha
    w = surv[:-1] - surv[1:]
    return SizeDistribution(np.arange(1, max_size + 1), w / w.sum())


def gamma_queue_sizes(aes: float, shape: float = 4.0, scale_aes: float = 2.5, max_aes: int = 60) -> SizeDistribution:
    q = np.arange(1, int(max_aes * aes) + 1, dtype=float)
    w = q ** (shape - 1) * np.exp(-q / (scale_aes * aes))
    return SizeDistribution(q.astype(int), w / w.sum(), "queue")


def model_from_tables(tables, *, variant: str | None = None, theta: float = 0.0, tick_size: float = 1.0,
                      size_dists=None, queue_dists=None, bucket_sizes=None) -> QRModel:
    """Wrap per-level tables (level 1 first) into a simulator model.

    Missing size laws default to point masses at ``ceil(AES)`` and missing
    queue laws to a point mass at one lot.
    """
    levels = []
    for k, t in enumerate(tables):
        sd = (size_dists or [None] * len(tables))[k]
        if sd is None:
            unit = SizeDistribution.point(int(np.ceil(t.aes)))
            sd = {"L": unit, "C": unit, "M": unit}
        qd = (queue_dists or [None] * len(tables))[k] or SizeDistribution.point(1, "queue")
        bs = (bucket_sizes or [None] * len(tables))[k] or {}
        levels.append(LevelModel(k + 1, t.aes, {"both": t}, sd, qd, bs))
    return QRModel(variant=variant or tables[0].variant, tick_size=tick_size, theta=theta, levels=levels)


def birth_death_model(lam_L, lam_C, lam_M, theta: float = 0.0, variant: str = "QRU") -> QRModel:
    """One level per side, unit sizes, AES 1: every queue is a birth-death chain."""
    t = IntensityTable.from_rates(1, {"L": lam_L, "C": lam_C, "M": lam_M}, aes=1.0, variant=variant)
    return model_from_tables([t], variant=variant, theta=theta)


def birth_death_stationary(lam_L, lam_C, lam_M, n_states: int = 2000) -> np.ndarray:
    """``pi(n) ~ prod_{k=1..n} lam_L(k-1) / (lam_C(k) + lam_M(k))``; rates beyond the table repeat its last bucket."""
    L, C, M = (np.asarray(x, dtype=float) for x in (lam_L, lam_C, lam_M))
    nb = L.size
    idx = np.minimum(np.arange(n_states), nb - 1)
    up = L[idx]
    down = (C + M)[idx]
    logw = np.concatenate([[0.0], np.cumsum(np.log(up[:-1]) - np.log(down[1:]))])
    w = np.exp(logw - logw.max())
    return w / w.sum()


def _bund_rates(level: int, n_max: int, ait: float):
    n = np.arange(n_max + 1, dtype=float)
    lam = np.full(n_max + 1, 1.0 / ait)
    p_l = 0.5 + 0.15 * (10.0 - n) / (10.0 + n)
    m = 0.06 * np.exp(-n / 15.0) + 0.01 if level == 1 else np.zeros_like(n)
    p_l[0], m[0] = 1.0, 0.0
    return lam * p_l, lam * (1.0 - p_l - m), lam * m


def bund_like_model(K: int = 5, variant: str = "QR", theta: float = 0.7, n_max: int = 60,
                    tick_size: float = 0.01) -> QRModel:
    """Queue-reactive book with level statistics of a liquid bond future.

    Each queue mean-reverts around 10 AES; per-queue activity follows the
    level's mean inter-event time.  Limit and cancel sizes are geometric with
    mean AES, market order sizes follow a power law.
    """
    tables, dists, queues = [], [], []
    for k in range(K):
        aes, ait = BUND_AES[k], BUND_AIT[k]
        L, C, M = _bund_rates(k + 1, n_max, ait)
        tables.append(IntensityTable.from_rates(k + 1, {"L": L, "C": C, "M": M}, aes=aes, variant="QR"))
        g = geometric_sizes(aes)
        dists.append({"L": g, "C": g, "M": pareto_sizes(1.5)})
        queues.append(gamma_queue_sizes(aes))
    return model_from_tables(tables, variant=variant, theta=theta, tick_size=tick_size, size_dists=dists,
                             queue_dists=queues)


def _bucket_law(aes: float, S: int) -> np.ndarray:
    """Geometric(mean AES) lot sizes collapsed to AES buckets ``1..S`` (last bucket pooled)."""
    g = geometric_sizes(aes, max_size=int(np.ceil(S * aes)) + 400)
    b = np.minimum(np.ceil(g.support / aes).astype(int), S)
    return np.bincount(b, weights=g.probs, minlength=S + 1)[1:]


def _uniform_bucket(aes: float, s: int, S: int) -> SizeDistribution:
    lo = int(np.floor((s - 1) * aes)) + 1
    hi = int(np.ceil(s * aes)) if s < S else lo + int(np.ceil(3 * aes))
    lo = min(lo, hi)
    sizes = np.arange(lo, hi + 1)
    return SizeDistribution(sizes, np.full(sizes.size, 1.0 / sizes.size))


def saqr_ground_truth(K: int = 3, n_max: int = 30, size_buckets: int = 10, theta: float = 0.7,
                      full_share: float = 0.4, tick_size: float = 0.01) -> QRModel:
    """Size-aware model whose small-queue market orders often take the whole queue.

    At level 1 and queue bucket ``n <= size_buckets`` a fraction
    ``full_share`` of market orders falls in size bucket ``n`` and empties the
    queue; the rest follow the geometric bucket law restricted to ``s <= n``.
    """
    S = size_buckets
    channels = saqr_channels(S)
    levels = []
    for k in range(K):
        aes, ait = BUND_AES[k], BUND_AIT[k]
        L, C, M = _bund_rates(k + 1, n_max, ait)
        g = _bucket_law(aes, S)
        rates = np.zeros((3 * S, n_max + 1))
        rates[:S] = np.outer(g, L)
        m_diag = np.zeros(S)
        for n in range(1, n_max + 1):
            ok = np.arange(1, S + 1) <= n
            gc = np.where(ok, g, 0.0)
            gc /= gc.sum()
            rates[S:2 * S, n] = C[n] * gc
            if k == 0:
                mix = gc.copy()
                if n <= S:
                    mix = (1 - full_share) * gc
                    mix[n - 1] += full_share
                    m_diag[n - 1] = full_share / mix[n - 1]
                rates[2 * S:, n] = M[n] * mix
        t = IntensityTable(k + 1, "SAQR", channels, rates, rates.sum(axis=0), aes, size_unit="aes")
        bs = {}
        for e_i, e in enumerate(("L", "C", "M")):
            for s in range(1, S + 1):
                p_all = m_diag[s - 1] if e == "M" else 0.0
                bs[f"{e}:{s}"] = BucketSizes(float(p_all), _uniform_bucket(aes, s, S))
        geo = geometric_sizes(aes)
        levels.append(LevelModel(k + 1, aes, {"both": t}, {"L": geo, "C": geo, "M": geo}, gamma_queue_sizes(aes), bs))
    return QRModel(variant="SAQR", tick_size=tick_size, theta=theta, levels=levels)


def self_exciting_hawkes(rates, self_share: float = 0.6, decay: float = 20.0) -> HawkesModel:
    """Six-component model with purely diagonal excitation and the given stationary rates."""
    rates = np.asarray(rates, dtype=float)
    d = rates.size
    alpha = np.diag(np.full(d, self_share * decay))
    beta = np.full((d, d), decay)
    mu = rates * (1 - self_share)
    return HawkesModel(mu, alpha, beta)
