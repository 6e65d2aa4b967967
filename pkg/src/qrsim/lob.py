"""Book state and matching rules for the queue-reactive family of models.

The book is tracked as ``K`` aggregated queues on each side, indexed by their
distance to a reference price.  Prices are expressed in ticks; the price of
level ``i`` (1-based) is ``ref + i - 0.5`` on the ask side and ``ref - i + 0.5``
on the bid side, so with a one-tick spread the reference sits on the mid-price.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np


class Eta(IntEnum):
    """Event types.  ``C_ALL``/``M_ALL`` consume the whole queue."""

    L = 0
    C = 1
    M = 2
    C_ALL = 3
    M_ALL = 4

    @property
    def consumes(self) -> bool:
        return self is not Eta.L

    @property
    def is_trade(self) -> bool:
        return self in (Eta.M, Eta.M_ALL)

    @property
    def base(self) -> "Eta":
        if self is Eta.C_ALL:
            return Eta.C
        if self is Eta.M_ALL:
            return Eta.M
        return self

    @classmethod
    def parse(cls, value: "str | int | Eta") -> "Eta":
        if isinstance(value, str):
            return cls[value.strip().upper()]
        return cls(int(value))


class Side(IntEnum):
    BID = 0
    ASK = 1

    @classmethod
    def parse(cls, value: "str | int | Side") -> "Side":
        if isinstance(value, str):
            return cls[value.strip().upper()]
        return cls(int(value))

    @property
    def label(self) -> str:
        return self.name.lower()

    @property
    def sign(self) -> int:
        """+1 for ask, -1 for bid: the direction the price moves when this side empties."""
        return 1 if self is Side.ASK else -1


class InvalidEventError(ValueError):
    """An event that cannot be applied to the current book."""


class InvalidParameterError(ValueError):
    pass


class LobState:
    """Immutable ``2K`` queue vector plus reference price.

    ``bids[i]`` / ``asks[i]`` hold the size (lots) of level ``i + 1``.
    """

    __slots__ = ("tick_size", "ref_price", "bids", "asks")

    def __init__(self, tick_size: float, ref_price: float, bids: Sequence[int], asks: Sequence[int]):
        bids_arr = np.array(bids, dtype=np.int64)
        asks_arr = np.array(asks, dtype=np.int64)
        if bids_arr.ndim != 1 or bids_arr.shape != asks_arr.shape or bids_arr.size < 1:
            raise InvalidParameterError("bids and asks must be 1-d arrays with the same K >= 1 entries")
        if (bids_arr < 0).any() or (asks_arr < 0).any():
            raise InvalidParameterError("queue sizes must be non-negative")
        if tick_size <= 0:
            raise InvalidParameterError("tick_size must be positive")
        if not float(2 * ref_price).is_integer():
            raise InvalidParameterError(f"ref_price {ref_price} is not a multiple of half a tick")
        bids_arr.setflags(write=False)
        asks_arr.setflags(write=False)
        object.__setattr__(self, "tick_size", float(tick_size))
        object.__setattr__(self, "ref_price", float(ref_price))
        object.__setattr__(self, "bids", bids_arr)
        object.__setattr__(self, "asks", asks_arr)

    def __setattr__(self, name, value):
        raise AttributeError("LobState is immutable")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LobState):
            return NotImplemented
        return (
            self.tick_size == other.tick_size
            and self.ref_price == other.ref_price
            and np.array_equal(self.bids, other.bids)
            and np.array_equal(self.asks, other.asks)
        )

    def __repr__(self) -> str:
        return f"LobState(ref={self.ref_price}, bids={self.bids.tolist()}, asks={self.asks.tolist()})"

    @property
    def K(self) -> int:
        return int(self.bids.size)

    def queues(self, side: Side) -> np.ndarray:
        return self.bids if side == Side.BID else self.asks

    def queue(self, side: Side, level: int) -> int:
        return int(self.queues(side)[level - 1])

    def price_of(self, side: Side, level: int) -> float:
        """Price in ticks of ``level`` on ``side``."""
        if side == Side.ASK:
            return self.ref_price + level - 0.5
        return self.ref_price - level + 0.5

    def best_level(self, side: Side) -> int | None:
        nz = np.flatnonzero(self.queues(side))
        return int(nz[0]) + 1 if nz.size else None

    @property
    def mid_price(self) -> float:
        """Mid of the best non-empty quotes, in ticks (falls back to the reference)."""
        b, a = self.best_level(Side.BID), self.best_level(Side.ASK)
        if b is None or a is None:
            return self.ref_price
        return 0.5 * (self.price_of(Side.BID, b) + self.price_of(Side.ASK, a))

    def with_queues(self, bids: Sequence[int] | None = None, asks: Sequence[int] | None = None,
                    ref_price: float | None = None) -> "LobState":
        return LobState(
            self.tick_size,
            self.ref_price if ref_price is None else ref_price,
            self.bids if bids is None else bids,
            self.asks if asks is None else asks,
        )

    def as_array(self) -> np.ndarray:
        """Book as a ``(2, K)`` array, bids first."""
        return np.stack([self.bids, self.asks])


@dataclass(frozen=True)
class OrderEvent:
    """One order-flow event.  ``dt`` is ``None`` when undefined (first event of a queue in a segment)."""

    eta: Eta
    side: Side
    level: int
    size: int
    dt: float | None = None
    q_before: int | None = None
    ts_ns: int | None = None

    def __post_init__(self):
        if self.size < 1:
            raise InvalidEventError(f"event size must be >= 1, got {self.size}")
        if self.dt is not None and self.dt < 0:
            raise InvalidEventError("dt must be non-negative")
        if self.eta.consumes and self.q_before is not None and self.size > self.q_before:
            raise InvalidEventError(f"{self.eta.name} of size {self.size} exceeds queue {self.q_before}")

    def q_bucket(self, aes: float) -> int:
        if self.q_before is None:
            raise ValueError("q_before unknown")
        return quantize_queue(self.q_before, aes)


@dataclass(frozen=True)
class RefPricePolicy:
    """Reference price move rule: probability ``theta`` of a move on best-queue depletion.

    ``refill`` holds one stationary queue-size distribution per level (index 0 is
    level 1); newly exposed prices are drawn from it.
    """

    theta: float
    refill: tuple = ()

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise InvalidParameterError(f"theta must lie in [0, 1], got {self.theta}")
        for dist in self.refill:
            if np.any(np.asarray(dist.support) <= 0):
                raise InvalidParameterError("refill distributions must have strictly positive support")


def quantize_queue(q: float, aes: float) -> int:
    """Queue size in average-event-size units, ``ceil(q / aes)``."""
    if not aes > 0:
        raise InvalidParameterError(f"aes must be positive, got {aes}")
    if q < 0:
        raise InvalidParameterError("queue size must be non-negative")
    return int(math.ceil(q / aes))


def apply_event(state: LobState, ev: OrderEvent) -> tuple[LobState, bool]:
    """Apply one event; returns the new state and whether the best queue was depleted."""
    if not 1 <= ev.level <= state.K:
        raise InvalidEventError(f"level {ev.level} outside 1..{state.K}")
    if ev.eta.is_trade and ev.level != 1:
        raise InvalidEventError("market orders only hit level 1")
    queues = state.queues(ev.side).copy()
    i = ev.level - 1
    q = int(queues[i])
    if ev.eta is Eta.L:
        queues[i] = q + ev.size
    elif ev.eta in (Eta.C_ALL, Eta.M_ALL):
        if q == 0:
            raise InvalidEventError(f"{ev.eta.name} on an empty queue")
        queues[i] = 0
    else:
        if ev.size > q:
            raise InvalidEventError(
                f"{ev.eta.name} of size {ev.size} exceeds queue {q} at {ev.side.label} level {ev.level}"
            )
        queues[i] = q - ev.size
    if ev.side == Side.BID:
        new = state.with_queues(bids=queues)
    else:
        new = state.with_queues(asks=queues)
    depleted = ev.eta.consumes and ev.level == 1 and queues[i] == 0
    return new, bool(depleted)


def shift_reference(state: LobState, direction: int, near_fill: int, far_fill: int) -> LobState:
    """Move the reference one tick and re-index the queues.

    ``direction=+1`` (ask side depleted): asks move one level closer, the new
    deepest ask gets ``far_fill`` and the new best bid (the price the ask side
    just vacated) gets ``near_fill``.  ``direction=-1`` is the mirror image.
    The queue pushed past level ``K`` is discarded.
    """
    bids, asks = state.bids, state.asks
    if direction > 0:
        new_asks = np.concatenate([asks[1:], [far_fill]])
        new_bids = np.concatenate([[near_fill], bids[:-1]])
    elif direction < 0:
        new_bids = np.concatenate([bids[1:], [far_fill]])
        new_asks = np.concatenate([[near_fill], asks[:-1]])
    else:
        raise InvalidParameterError("direction must be +1 or -1")
    return state.with_queues(bids=new_bids, asks=new_asks, ref_price=state.ref_price + direction)


def transition_ref_price(state: LobState, policy: RefPricePolicy, side_depleted: Side,
                         rng: np.random.Generator) -> LobState:
    """Bernoulli(theta) reference move after the best queue of ``side_depleted`` emptied.

    On success the reference moves one tick towards the depleted side (half a tick
    beyond the new mid) and the two newly exposed levels are drawn from the
    refill distributions; on failure the book is returned unchanged.
    """
    if rng.random() >= policy.theta:
        return state
    K = state.K
    if len(policy.refill) < K:
        raise InvalidParameterError(f"refill needs {K} level distributions, got {len(policy.refill)}")
    near = int(policy.refill[0].sample(rng))
    far = int(policy.refill[K - 1].sample(rng))
    return shift_reference(state, Side(side_depleted).sign, near, far)
