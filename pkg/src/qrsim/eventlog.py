"""Simulated event logs: the flow-file columns plus price and book context.

File layout: one ``#``-prefixed JSON metadata line, then a CSV with::

    ts_ns,eta,side,level,size,dt_ns,q_before,ref_price,mid_price,move,bid_1..bid_K,ask_1..ask_K

``ref_price`` is the reference when the event hit (before any move it
triggered), ``move`` the resulting reference change in ticks and the book
columns the state after the event.  The first columns match the flow-file
schema, so :func:`qrsim.flow.read_flow` ingests a log directly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from numba import njit

from .flow import NS, Flow, ParseError, RawUpdate, flow_frame, flow_from_frame, with_queue_dt
from .lob import Eta, LobState, OrderEvent, Side, apply_event, shift_reference


@dataclass
class EventLog:
    flow: Flow
    mid_price: np.ndarray
    move: np.ndarray
    book: np.ndarray  # (n, 2, K) post-event queues
    init_state: LobState
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mid_price = np.asarray(self.mid_price, dtype=np.float64)
        self.move = np.asarray(self.move, dtype=np.int8)
        self.book = np.asarray(self.book).reshape(len(self.flow), 2, self.init_state.K)

    def __len__(self):
        return len(self.flow)

    @property
    def K(self) -> int:
        return self.init_state.K

    @property
    def tick_size(self) -> float:
        return self.init_state.tick_size

    @property
    def t0_ns(self) -> int:
        return int(self.meta.get("t0_ns", 0))

    @property
    def t(self) -> np.ndarray:
        """Event times in seconds since the start of the run."""
        return (self.flow.ts_ns - self.t0_ns) / NS

    @property
    def horizon(self) -> float:
        return float(self.meta.get("horizon", self.t[-1] if len(self) else 0.0))

    def counts(self) -> dict[str, int]:
        c = np.bincount(self.flow.eta, minlength=len(Eta))
        return {e.name: int(c[e]) for e in Eta}

    def summary(self) -> dict:
        return {"n_events": len(self), "n_moves": int(np.count_nonzero(self.move)), "by_type": self.counts(),
                "n_clipped": int(self.meta.get("n_clipped", 0))}

    def ref_after(self) -> np.ndarray:
        return self.flow.ref_price + self.move

    def mid_path(self, step: float, t0: float = 0.0, t1: float | None = None) -> np.ndarray:
        """Mid-price in ticks sampled every ``step`` seconds on ``[t0, t1]`` (last value carried forward)."""
        t1 = self.horizon if t1 is None else t1
        grid = np.arange(t0, t1 + 1e-9 * step, step)
        idx = np.searchsorted(self.t, grid, side="right") - 1
        start = self.init_state.mid_price
        return np.where(idx >= 0, self.mid_price[np.maximum(idx, 0)], start)

    def slice_time(self, t0: float, t1: float) -> "EventLog":
        """Events with ``t0 <= t < t1``; the state before the first kept event becomes the initial state."""
        t = self.t
        idx = np.flatnonzero((t >= t0) & (t < t1))
        if idx.size and idx[0] > 0:
            j = idx[0] - 1
            ref = float(self.flow.ref_price[j] + self.move[j])
            init = LobState(self.tick_size, ref, self.book[j, 0], self.book[j, 1])
        else:
            init = self.init_state
        meta = dict(self.meta, t0_ns=self.t0_ns + int(round(t0 * NS)), horizon=t1 - t0)
        return EventLog(self.flow[idx], self.mid_price[idx], self.move[idx], self.book[idx], init, meta)

    # -- files -------------------------------------------------------------

    def frame(self) -> pd.DataFrame:
        df = flow_frame(self.flow)
        df["mid_price"] = self.mid_price
        df["move"] = self.move
        K = self.K
        for i in range(K):
            df[f"bid_{i + 1}"] = self.book[:, 0, i]
        for i in range(K):
            df[f"ask_{i + 1}"] = self.book[:, 1, i]
        return df

    def header(self) -> dict:
        s = self.init_state
        return dict(self.meta, K=self.K, tick_size=s.tick_size, init_ref=s.ref_price,
                    init_bids=s.bids.tolist(), init_asks=s.asks.tolist())

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("# " + json.dumps(self.header(), sort_keys=True) + "\n")
            self.frame().to_csv(fh, index=False, lineterminator="\n")

    @classmethod
    def read(cls, path) -> "EventLog":
        try:
            with open(path, encoding="utf-8") as fh:
                first = fh.readline()
                if not first.startswith("#"):
                    raise ParseError(f"{path}: missing metadata line")
                meta = json.loads(first[1:])
                df = pd.read_csv(fh)
        except (OSError, json.JSONDecodeError, pd.errors.ParserError) as exc:
            raise ParseError(f"cannot read event log {path}: {exc}") from exc
        except pd.errors.EmptyDataError:
            raise ParseError(f"{path}: no column header") from None
        K = int(meta.pop("K"))
        init = LobState(meta.pop("tick_size"), meta.pop("init_ref"), meta.pop("init_bids"), meta.pop("init_asks"))
        flow = flow_from_frame(df)
        book = np.stack([df[[f"bid_{i}" for i in range(1, K + 1)]].to_numpy(),
                         df[[f"ask_{i}" for i in range(1, K + 1)]].to_numpy()], axis=1) if len(df) else \
            np.zeros((0, 2, K), dtype=np.int64)
        return cls(flow, df["mid_price"].to_numpy(), df["move"].to_numpy(), book, init, meta)


@njit(cache=True)
def _mids(book, ref_after):
    n, _, K = book.shape
    out = np.empty(n)
    for i in range(n):
        b = -1
        a = -1
        for k in range(K):
            if b < 0 and book[i, 0, k] > 0:
                b = k
            if a < 0 and book[i, 1, k] > 0:
                a = k
        out[i] = ref_after[i] + 0.5 * (b - a) if b >= 0 and a >= 0 else ref_after[i]
    return out


def mid_prices(book: np.ndarray, ref_after: np.ndarray) -> np.ndarray:
    """Mid (ticks) of each post-event book; falls back to the reference when a side is empty."""
    return _mids(np.ascontiguousarray(book), np.ascontiguousarray(ref_after, dtype=np.float64))


def replay(log: EventLog) -> list[LobState]:
    """Re-apply the logged events through the matching rules; returns the post-event states.

    A reference move re-indexes the book and takes the two newly exposed
    queues from the logged snapshot, which is the only information the log
    keeps about refill draws.
    """
    state = log.init_state
    out = []
    for i, ev in enumerate(log.flow.events()):
        if ev.q_before is not None and ev.q_before != state.queue(ev.side, ev.level):
            raise AssertionError(f"event {i}: logged q_before {ev.q_before} != replayed {state.queue(ev.side, ev.level)}")
        ev = OrderEvent(ev.eta, ev.side, ev.level, ev.size)
        state, depleted = apply_event(state, ev)
        d = int(log.move[i])
        if d:
            if not depleted:
                raise AssertionError(f"event {i}: reference moved without a depletion")
            snap = log.book[i]
            near_side = Side.BID if d > 0 else Side.ASK
            far_side = Side.ASK if d > 0 else Side.BID
            state = shift_reference(state, d, int(snap[near_side, 0]), int(snap[far_side, -1]))
        out.append(state)
    return out


def updates_from_log(log: EventLog) -> list[RawUpdate]:
    """Raw snapshots and trade reports that a venue feed would have shown for ``log``."""
    tick = log.tick_size

    def snapshot(ts, ref, bids, asks):
        K = len(bids)
        b = tuple((tick * (ref - i + 0.5), int(bids[i - 1])) for i in range(1, K + 1))
        a = tuple((tick * (ref + i - 0.5), int(asks[i - 1])) for i in range(1, K + 1))
        return RawUpdate(int(ts), "book", bids=b, asks=a)

    s = log.init_state
    out = [snapshot(log.t0_ns - 1, s.ref_price, s.bids, s.asks)]
    f = log.flow
    for i in range(len(log)):
        ref = float(f.ref_price[i])
        if Eta(int(f.eta[i])).is_trade:
            side = Side(int(f.side[i]))
            px = ref + 0.5 if side == Side.ASK else ref - 0.5
            out.append(RawUpdate(int(f.ts_ns[i]), "trade", price=tick * px, size=int(f.size[i]), side=side))
        out.append(snapshot(f.ts_ns[i], ref + int(log.move[i]), log.book[i, 0], log.book[i, 1]))
    return out


def log_from_arrays(ts_ns, eta, side, level, size, q_before, ref_price, move, book, init_state: LobState,
                    meta: dict | None = None) -> EventLog:
    """Assemble a log from raw engine output, computing per-queue ``dt`` and mid-prices."""
    n = len(ts_ns)
    flow = Flow(ts_ns, eta, side, level, size, np.full(n, -1), q_before, ref_price)
    flow = with_queue_dt(flow)
    book = np.asarray(book).reshape(n, 2, init_state.K)
    mid = mid_prices(book, flow.ref_price + np.asarray(move))
    return EventLog(flow, mid, move, book, init_state, dict(meta or {}))


def log_from_updates(updates, tick_size: float, K: int | None = None, t0_ns: int | None = None) -> EventLog:
    """Event log of reconstructed historical flow, for stylized-fact analysis.

    Every event of a snapshot gap carries that gap's closing book.  Reference
    moves are not attributed to single events, so ``move`` is zero throughout
    and the log is not meant for replay.
    """
    from .flow import _Book, reconstruct_flow, reference_price, snapshot_state

    books = [u for u in updates if u.kind == "book"]
    if not books:
        raise ParseError("no book snapshots in the update stream")
    K = K or len(books[0].bids)
    flow = reconstruct_flow(updates, tick_size, K)
    ref = None
    snaps: dict[int, LobState] = {}
    first = None
    for u in books:
        b = _Book(u, tick_size)
        ref = reference_price(b.best[Side.BID], b.best[Side.ASK], ref)
        if ref is None:
            continue
        st = snapshot_state(u, tick_size, ref, K)
        snaps[u.ts_ns] = st
        first = first or st
    n = len(flow)
    book = np.zeros((n, 2, K), dtype=np.int64)
    mid = np.empty(n)
    for i, ts in enumerate(flow.ts_ns):
        st = snaps[int(ts)]
        book[i] = st.as_array()
        mid[i] = st.mid_price
    meta = {"t0_ns": int(books[0].ts_ns if t0_ns is None else t0_ns), "source": "historical"}
    if n:
        meta["horizon"] = float((flow.ts_ns[-1] - meta["t0_ns"]) / NS)
    return EventLog(flow, mid, np.zeros(n, dtype=np.int8), book, first, meta)
