"""Calibrated model containers and their JSON model-file schema."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .lob import Eta, InvalidParameterError, Side

SCHEMA = "qrsim.model/1"

QR_VARIANTS = ("QRU", "QR", "FTQR", "SAQR")
HAWKES_VARIANTS = ("HAWKES_U", "HAWKES_S")
VARIANTS = QR_VARIANTS + HAWKES_VARIANTS

# channel labels of each table kind; SAQR channels are "<eta>:<size bucket>"
QR_CHANNELS = ("L", "C", "M")
FTQR_CHANNELS = ("L", "C", "M", "C_ALL", "M_ALL")


def saqr_channels(n_size_buckets: int) -> tuple[str, ...]:
    return tuple(f"{eta}:{s}" for eta in QR_CHANNELS for s in range(1, n_size_buckets + 1))


def parse_channel(label: str) -> tuple[Eta, int]:
    """``"M:3"`` -> ``(Eta.M, 3)``; plain types get size bucket 0."""
    if ":" in label:
        eta, s = label.split(":")
        return Eta[eta], int(s)
    return Eta[label], 0


class SizeDistribution:
    """Discrete distribution over positive sizes (lots, or size buckets)."""

    def __init__(self, support, probs, conditioning: str = "stationary"):
        support = np.asarray(support, dtype=np.int64)
        probs = np.asarray(probs, dtype=np.float64)
        if support.ndim != 1 or support.shape != probs.shape or support.size == 0:
            raise InvalidParameterError("support and probs must be non-empty 1-d arrays of equal length")
        if (support <= 0).any():
            raise InvalidParameterError("support must be strictly positive")
        if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-12:
            raise InvalidParameterError(f"probabilities must be non-negative and sum to 1 (sum={probs.sum()!r})")
        if np.any(np.diff(support) <= 0):
            raise InvalidParameterError("support must be strictly increasing")
        self.support = support
        self.probs = probs
        self.conditioning = conditioning

    @classmethod
    def from_sample(cls, values, conditioning: str = "stationary") -> "SizeDistribution":
        values = np.asarray(values, dtype=np.int64)
        if values.size == 0:
            raise InvalidParameterError("cannot build a distribution from an empty sample")
        support, counts = np.unique(values, return_counts=True)
        return cls(support, counts / counts.sum(), conditioning)

    @classmethod
    def point(cls, value: int, conditioning: str = "stationary") -> "SizeDistribution":
        return cls([value], [1.0], conditioning)

    def __eq__(self, other):
        if not isinstance(other, SizeDistribution):
            return NotImplemented
        return (np.array_equal(self.support, other.support) and np.array_equal(self.probs, other.probs)
                and self.conditioning == other.conditioning)

    def __repr__(self):
        return f"SizeDistribution(n={self.support.size}, mean={self.mean():.3f}, {self.conditioning})"

    def as_dict(self) -> dict[int, float]:
        return {int(s): float(p) for s, p in zip(self.support, self.probs)}

    def mean(self) -> float:
        return float(np.dot(self.support, self.probs))

    def sample(self, rng: np.random.Generator, size=None):
        return rng.choice(self.support, size=size, p=self.probs)

    def cdf_row(self, max_size: int) -> np.ndarray:
        """``row[s] = P(X <= s)`` for ``s = 0..max_size``; mass above ``max_size`` is folded onto it."""
        row = np.zeros(max_size + 1)
        idx = np.minimum(self.support, max_size)
        np.add.at(row, idx, self.probs)
        row = np.cumsum(row)
        row[-1] = 1.0
        return row

    def to_json(self) -> dict:
        return {"support": self.support.tolist(), "probs": self.probs.tolist(), "conditioning": self.conditioning}

    @classmethod
    def from_json(cls, d: dict) -> "SizeDistribution":
        return cls(d["support"], d["probs"], d.get("conditioning", "stationary"))


@dataclass
class IntensityTable:
    """Per-level intensities indexed by channel and queue bucket (events/second).

    ``rates[c, n]`` is the rate of channel ``c`` when the queue sits in bucket
    ``n`` (AES units, pooled at ``n_max``).  ``total[n]`` is the global rate.
    When built by an estimator, ``counts``/``n_obs``/``dt_sum`` keep the raw
    sufficient statistics and ``source[n]`` the bucket whose statistics fill
    bucket ``n`` (itself unless it was too sparse).
    """

    level: int
    variant: str
    channels: tuple[str, ...]
    rates: np.ndarray
    total: np.ndarray
    aes: float
    side: str = "both"
    counts: np.ndarray | None = None
    n_obs: np.ndarray | None = None
    dt_sum: np.ndarray | None = None
    source: np.ndarray | None = None
    min_obs: int = 0
    size_unit: str | None = None

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.rates = np.asarray(self.rates, dtype=np.float64)
        self.total = np.asarray(self.total, dtype=np.float64)
        if self.rates.shape != (len(self.channels), self.total.size):
            raise InvalidParameterError(f"rates shape {self.rates.shape} does not match channels/buckets")
        if (self.rates < 0).any():
            raise InvalidParameterError("rates must be non-negative")
        s = self.rates.sum(axis=0)
        if not np.allclose(s, self.total, rtol=1e-9, atol=0.0):
            raise InvalidParameterError("channel rates do not sum to the stored total")

    @classmethod
    def from_rates(cls, level: int, rates: dict[str, Any], aes: float = 1.0, variant: str | None = None,
                   side: str = "both") -> "IntensityTable":
        """Hand-built table from ``{channel: [rate per bucket]}``."""
        channels = tuple(rates)
        arr = np.array([np.asarray(rates[c], dtype=float) for c in channels])
        if variant is None:
            if any(":" in c for c in channels):
                variant = "SAQR"
            elif "C_ALL" in channels or "M_ALL" in channels:
                variant = "FTQR"
            else:
                variant = "QR"
        return cls(level=level, variant=variant, channels=channels, rates=arr, total=arr.sum(axis=0),
                   aes=float(aes), side=side)

    @property
    def n_max(self) -> int:
        return self.total.size - 1

    @property
    def n_buckets(self) -> int:
        return self.total.size

    @property
    def low_confidence(self) -> np.ndarray:
        if self.n_obs is None:
            return np.zeros(self.n_buckets, dtype=bool)
        return self.n_obs < self.min_obs

    @property
    def filled(self) -> np.ndarray:
        if self.source is None:
            return np.zeros(self.n_buckets, dtype=bool)
        return self.source != np.arange(self.n_buckets)

    def channel_index(self, label: str) -> int:
        return self.channels.index(label)

    def rate(self, channel: str, n: int) -> float:
        return float(self.rates[self.channel_index(channel), min(n, self.n_max)])

    def _rates_from_counts(self, counts: np.ndarray) -> np.ndarray:
        src = self.source
        with np.errstate(divide="ignore", invalid="ignore"):
            r = counts[..., src] / self.dt_sum[src]
        return np.where(self.dt_sum[src] > 0, r, 0.0)

    def marginal(self, eta: str) -> np.ndarray:
        """Rate of all channels of base type ``eta`` ("L", "C" or "M").

        With estimator statistics available the channel counts are summed first,
        so the result is bit-identical to an estimate made on the collapsed types.
        """
        mask = np.array([parse_channel(c)[0].base.name == eta for c in self.channels])
        if self.counts is not None and self.dt_sum is not None and self.source is not None:
            return self._rates_from_counts(self.counts[mask].sum(axis=0))
        return self.rates[mask].sum(axis=0)

    def to_json(self) -> dict:
        d = {
            "level": self.level, "variant": self.variant, "side": self.side, "aes": self.aes,
            "channels": list(self.channels), "rates": self.rates.tolist(), "total": self.total.tolist(),
            "min_obs": self.min_obs, "size_unit": self.size_unit,
        }
        for key in ("counts", "n_obs", "dt_sum", "source"):
            val = getattr(self, key)
            d[key] = None if val is None else val.tolist()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "IntensityTable":
        def arr(key, dtype):
            return None if d.get(key) is None else np.asarray(d[key], dtype=dtype)

        return cls(
            level=d["level"], variant=d["variant"], channels=tuple(d["channels"]),
            rates=np.asarray(d["rates"], dtype=float), total=np.asarray(d["total"], dtype=float),
            aes=d["aes"], side=d.get("side", "both"), counts=arr("counts", np.int64), n_obs=arr("n_obs", np.int64),
            dt_sum=arr("dt_sum", np.float64), source=arr("source", np.int64), min_obs=d.get("min_obs", 0),
            size_unit=d.get("size_unit"),
        )


@dataclass
class BucketSizes:
    """Lot sizes behind one SAQR size bucket of a consuming or limit channel.

    ``p_all`` is the fraction of events in the bucket that emptied the queue;
    ``dist`` describes the remaining (partial) sizes, ``None`` if there were none.
    """

    p_all: float
    dist: SizeDistribution | None

    def to_json(self):
        return {"p_all": self.p_all, "dist": None if self.dist is None else self.dist.to_json()}

    @classmethod
    def from_json(cls, d):
        return cls(d["p_all"], None if d["dist"] is None else SizeDistribution.from_json(d["dist"]))


@dataclass
class LevelModel:
    """Everything the simulator needs for one depth level."""

    level: int
    aes: float
    tables: dict[str, IntensityTable]
    size_dists: dict[str, SizeDistribution]
    queue_dist: SizeDistribution
    bucket_sizes: dict[str, BucketSizes] = field(default_factory=dict)

    def table(self, side: Side | str = "both") -> IntensityTable:
        key = side.label if isinstance(side, Side) else side
        return self.tables.get(key, self.tables.get("both"))

    @property
    def unit_size(self) -> int:
        return int(np.ceil(self.aes))

    def to_json(self) -> dict:
        return {
            "level": self.level, "aes": self.aes,
            "tables": {k: t.to_json() for k, t in self.tables.items()},
            "size_dists": {k: d.to_json() for k, d in self.size_dists.items()},
            "queue_dist": self.queue_dist.to_json(),
            "bucket_sizes": {k: b.to_json() for k, b in self.bucket_sizes.items()},
        }

    @classmethod
    def from_json(cls, d: dict) -> "LevelModel":
        return cls(
            level=d["level"], aes=d["aes"],
            tables={k: IntensityTable.from_json(t) for k, t in d["tables"].items()},
            size_dists={k: SizeDistribution.from_json(v) for k, v in d["size_dists"].items()},
            queue_dist=SizeDistribution.from_json(d["queue_dist"]),
            bucket_sizes={k: BucketSizes.from_json(v) for k, v in d.get("bucket_sizes", {}).items()},
        )


@dataclass
class QRModel:
    """A calibrated simulator model: per-level tables, sizes and queue laws, theta, optional Hawkes block."""

    variant: str
    tick_size: float
    theta: float
    levels: list[LevelModel]
    hawkes: Any = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidParameterError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not 0 <= self.theta <= 1:
            raise InvalidParameterError("theta must lie in [0, 1]")

    @property
    def K(self) -> int:
        return len(self.levels)

    @property
    def aes(self) -> np.ndarray:
        return np.array([lv.aes for lv in self.levels])

    def level(self, level: int) -> LevelModel:
        return self.levels[level - 1]

    def to_json(self) -> dict:
        d = {
            "schema": SCHEMA, "variant": self.variant, "tick_size": self.tick_size, "theta": self.theta,
            "levels": [lv.to_json() for lv in self.levels], "meta": self.meta,
            "hawkes": None if self.hawkes is None else self.hawkes.to_json(),
        }
        return d

    @classmethod
    def from_json(cls, d: dict) -> "QRModel":
        if d.get("schema") != SCHEMA:
            raise InvalidParameterError(f"unsupported model schema {d.get('schema')!r}")
        hawkes = None
        if d.get("hawkes") is not None:
            from .hawkes import HawkesModel

            hawkes = HawkesModel.from_json(d["hawkes"])
        return cls(variant=d["variant"], tick_size=d["tick_size"], theta=d["theta"],
                   levels=[LevelModel.from_json(x) for x in d["levels"]], hawkes=hawkes, meta=d.get("meta", {}))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, allow_nan=False)

    @classmethod
    def loads(cls, text: str) -> "QRModel":
        return cls.from_json(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "QRModel":
        return cls.loads(Path(path).read_text(encoding="utf-8"))
