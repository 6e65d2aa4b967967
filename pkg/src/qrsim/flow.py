"""Order-flow ingestion: raw CSV parsing, L/C/M reconstruction, sessions and segments.

Raw input schema (header row required, comma separated)::

    ts_ns,kind,side,level,price,size,aggressor

``kind`` is ``book`` (one line per side/level; all lines of a snapshot share
``ts_ns``) or ``trade``.  For trades ``side`` is the resting side that was hit
(optional) and ``aggressor`` is ``buy``/``sell`` (optional); ``level`` is empty.

Order-flow file schema (one event per line)::

    ts_ns,eta,side,level,size,dt_ns,q_before,ref_price

``dt_ns`` is the time since the previous event on the same queue within the
current constant-reference segment, ``-1`` when there is none.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import pandas as pd
from numba import njit

from .lob import Eta, LobState, OrderEvent, Side

NS = 1_000_000_000
DAY_NS = 86_400 * NS

FLOW_COLUMNS = ("ts_ns", "eta", "side", "level", "size", "dt_ns", "q_before", "ref_price")
RAW_COLUMNS = ("ts_ns", "kind", "side", "level", "price", "size", "aggressor")


class ParseError(ValueError):
    pass


# ---------------------------------------------------------------------------
# columnar flow
# ---------------------------------------------------------------------------


@dataclass
class Flow:
    """Columnar event stream; one row per :class:`OrderEvent`."""

    ts_ns: np.ndarray
    eta: np.ndarray
    side: np.ndarray
    level: np.ndarray
    size: np.ndarray
    dt_ns: np.ndarray
    q_before: np.ndarray
    ref_price: np.ndarray

    def __post_init__(self):
        self.ts_ns = np.asarray(self.ts_ns, dtype=np.int64)
        self.eta = np.asarray(self.eta, dtype=np.int8)
        self.side = np.asarray(self.side, dtype=np.int8)
        self.level = np.asarray(self.level, dtype=np.int16)
        self.size = np.asarray(self.size, dtype=np.int64)
        self.dt_ns = np.asarray(self.dt_ns, dtype=np.int64)
        self.q_before = np.asarray(self.q_before, dtype=np.int64)
        self.ref_price = np.asarray(self.ref_price, dtype=np.float64)
        n = self.ts_ns.size
        for name in FLOW_COLUMNS:
            if getattr(self, name).shape != (n,):
                raise ValueError(f"column {name} has the wrong length")

    def __len__(self) -> int:
        return int(self.ts_ns.size)

    def __getitem__(self, idx) -> "Flow":
        return Flow(*(getattr(self, c)[idx] for c in FLOW_COLUMNS))

    @classmethod
    def empty(cls) -> "Flow":
        return cls(*([] for _ in FLOW_COLUMNS))

    @classmethod
    def concat(cls, flows: Sequence["Flow"]) -> "Flow":
        if not flows:
            return cls.empty()
        return cls(*(np.concatenate([getattr(f, c) for f in flows]) for c in FLOW_COLUMNS))

    @classmethod
    def from_events(cls, events: Iterable[OrderEvent], ref_price: float = 0.0) -> "Flow":
        rows = []
        for e in events:
            rows.append((
                e.ts_ns or 0, int(e.eta), int(e.side), e.level, e.size,
                -1 if e.dt is None else int(round(e.dt * NS)),
                -1 if e.q_before is None else e.q_before, ref_price,
            ))
        if not rows:
            return cls.empty()
        return cls(*map(np.array, zip(*rows)))

    def events(self) -> Iterator[OrderEvent]:
        for i in range(len(self)):
            dt = None if self.dt_ns[i] < 0 else self.dt_ns[i] / NS
            yield OrderEvent(Eta(int(self.eta[i])), Side(int(self.side[i])), int(self.level[i]),
                             int(self.size[i]), dt, int(self.q_before[i]), int(self.ts_ns[i]))

    @property
    def dt(self) -> np.ndarray:
        """Per-queue inter-event times in seconds (NaN where undefined)."""
        return np.where(self.dt_ns >= 0, self.dt_ns / NS, np.nan)

    def with_dt(self, dt_ns: np.ndarray) -> "Flow":
        return Flow(self.ts_ns, self.eta, self.side, self.level, self.size, dt_ns, self.q_before, self.ref_price)


@dataclass
class FlowSegment:
    """Maximal run of events under a constant reference price."""

    ref_price: float
    flow: Flow
    day: int = 0

    def __len__(self):
        return len(self.flow)


@dataclass(frozen=True)
class LevelStats:
    level: int
    n_limit: int
    n_cancel: int
    n_market: int
    aes: float
    ait_ms: float
    aes_defined: bool = True


def segment_ids(flow: Flow) -> np.ndarray:
    """Run index of constant (day, reference price)."""
    n = len(flow)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    day = flow.ts_ns // DAY_NS
    change = (flow.ref_price[1:] != flow.ref_price[:-1]) | (day[1:] != day[:-1])
    return np.concatenate([[0], np.cumsum(change)]).astype(np.int64)


@njit(cache=True)
def _queue_dt(ts_ns, side, level, seg, ref, by_ref):
    # one pass in time order; a queue's clock restarts at every segment boundary
    n = ts_ns.size
    out = np.empty(n, dtype=np.int64)
    span = 1
    for i in range(n):
        if level[i] + 1 > span:
            span = level[i] + 1
    last = np.full(2 * span, -1, dtype=np.int64)
    for i in range(n):
        if i > 0:
            if by_ref:
                cut = ref[i] != ref[i - 1] or ts_ns[i] // DAY_NS != ts_ns[i - 1] // DAY_NS
            else:
                cut = seg[i] != seg[i - 1]
            if cut:
                last[:] = -1
        k = side[i] * span + level[i]
        out[i] = -1 if last[k] < 0 else ts_ns[i] - last[k]
        last[k] = ts_ns[i]
    return out


def per_queue_dt(ts_ns: np.ndarray, side: np.ndarray, level: np.ndarray, seg: np.ndarray) -> np.ndarray:
    """Time since the previous event on the same (side, level) queue within a segment; -1 for the first.

    Events must be in time order; ``seg`` labels consecutive runs.
    """
    if ts_ns.size == 0:
        return np.zeros(0, dtype=np.int64)
    return _queue_dt(ts_ns, side, level, np.asarray(seg, dtype=np.int64), np.zeros(1), False)


def with_queue_dt(flow: Flow) -> Flow:
    """Recompute ``dt_ns`` with counters reset at every reference change and day boundary."""
    if len(flow) == 0:
        return flow.with_dt(np.zeros(0, dtype=np.int64))
    dt = _queue_dt(flow.ts_ns, flow.side, flow.level, np.zeros(1, dtype=np.int64), flow.ref_price, True)
    return flow.with_dt(dt)


# ---------------------------------------------------------------------------
# raw updates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RawUpdate:
    """A book snapshot (``kind == "book"``) or a trade report."""

    ts_ns: int
    kind: str
    bids: tuple = ()
    asks: tuple = ()
    price: float | None = None
    size: int | None = None
    side: Side | None = None
    aggressor: str | None = None


def _open_text(source):
    if isinstance(source, (str, Path)):
        try:
            return open(source, newline="", encoding="utf-8")
        except OSError as exc:
            raise ParseError(f"cannot read {source}: {exc}") from exc
    if isinstance(source, io.IOBase) or hasattr(source, "read"):
        return source
    return io.StringIO("".join(line if line.endswith("\n") else line + "\n" for line in source))


def parse_stream(source, tolerance_ns: int = 0) -> list[RawUpdate]:
    """Parse a raw CSV stream (path, file object or iterable of lines) into updates."""
    fh = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            return []
        if header[: len(RAW_COLUMNS) - 1] != list(RAW_COLUMNS[:-1]):
            raise ParseError(f"line 1: expected header {','.join(RAW_COLUMNS)}, got {','.join(header)}")
        updates: list[RawUpdate] = []
        book_ts = None
        book_rows: list[tuple[int, int, Side, int, float, int]] = []
        last_ts = None

        def flush():
            if book_rows:
                updates.append(_snapshot(book_rows))
                book_rows.clear()

        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            row = [c.strip() for c in row] + [""] * (len(RAW_COLUMNS) - len(row))
            ts_s, kind, side_s, level_s, price_s, size_s, aggr = row[:7]
            try:
                ts = int(ts_s)
                price = float(price_s)
                size = int(size_s)
            except ValueError:
                raise ParseError(f"line {lineno}: malformed numeric field in {row!r}") from None
            if size < 0:
                raise ParseError(f"line {lineno}: negative size {size}")
            if last_ts is not None and ts < last_ts - tolerance_ns:
                raise ParseError(f"line {lineno}: timestamp {ts} regresses before {last_ts}")
            last_ts = ts if last_ts is None else max(ts, last_ts)
            if kind in ("book", "book_snapshot"):
                if side_s not in ("bid", "ask"):
                    raise ParseError(f"line {lineno}: book line needs side bid|ask")
                try:
                    level = int(level_s)
                except ValueError:
                    raise ParseError(f"line {lineno}: book line needs an integer level") from None
                if level < 1:
                    raise ParseError(f"line {lineno}: level must be >= 1")
                if book_ts is not None and ts != book_ts:
                    flush()
                book_ts = ts
                book_rows.append((lineno, ts, Side.parse(side_s), level, price, size))
            elif kind == "trade":
                flush()
                book_ts = None
                if size == 0:
                    raise ParseError(f"line {lineno}: trade of size 0")
                side = Side.parse(side_s) if side_s in ("bid", "ask") else None
                if side_s and side is None:
                    raise ParseError(f"line {lineno}: unknown side {side_s!r}")
                if aggr and aggr not in ("buy", "sell"):
                    raise ParseError(f"line {lineno}: unknown aggressor {aggr!r}")
                updates.append(RawUpdate(ts, "trade", price=price, size=size, side=side, aggressor=aggr or None))
            else:
                raise ParseError(f"line {lineno}: unknown kind {kind!r}")
        flush()
        return updates
    finally:
        if isinstance(source, (str, Path)):
            fh.close()


def _snapshot(rows) -> RawUpdate:
    by_side: dict[Side, dict[int, tuple[float, int]]] = {Side.BID: {}, Side.ASK: {}}
    for lineno, _, side, level, price, size in rows:
        if level in by_side[side]:
            raise ParseError(f"line {lineno}: duplicate {side.label} level {level} in snapshot")
        by_side[side][level] = (price, size)
    K = max(len(by_side[Side.BID]), len(by_side[Side.ASK]))
    for side in Side:
        if sorted(by_side[side]) != list(range(1, K + 1)):
            raise ParseError(f"line {rows[0][0]}: snapshot {side.label} levels are not 1..{K}")
    bids = tuple(by_side[Side.BID][i] for i in range(1, K + 1))
    asks = tuple(by_side[Side.ASK][i] for i in range(1, K + 1))
    return RawUpdate(rows[0][1], "book", bids=bids, asks=asks)


def write_raw(path, updates: Sequence[RawUpdate]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RAW_COLUMNS)
        for u in updates:
            if u.kind == "book":
                for side, entries in ((Side.BID, u.bids), (Side.ASK, u.asks)):
                    for i, (price, size) in enumerate(entries, start=1):
                        w.writerow([u.ts_ns, "book", side.label, i, repr(float(price)), int(size), ""])
            else:
                w.writerow([u.ts_ns, "trade", "" if u.side is None else u.side.label, "",
                            repr(float(u.price)), int(u.size), u.aggressor or ""])


# ---------------------------------------------------------------------------
# flow reconstruction
# ---------------------------------------------------------------------------


def reference_price(best_bid: int | None, best_ask: int | None, prev_ref: float | None) -> float | None:
    """Reference price (ticks) for a book with the given best quotes.

    Odd spreads put the reference on the mid; even spreads leave two candidates
    half a tick either side of the mid, and the one closest to ``prev_ref`` wins.
    """
    if best_bid is None or best_ask is None:
        if prev_ref is not None:
            return prev_ref
        if best_bid is not None:
            return best_bid + 0.5
        if best_ask is not None:
            return best_ask - 0.5
        return None
    spread = best_ask - best_bid
    if spread % 2 == 1:
        return (best_ask + best_bid) / 2
    mid = (best_ask + best_bid) // 2
    lo, hi = mid - 0.5, mid + 0.5
    if prev_ref is None:
        return lo
    return hi if abs(hi - prev_ref) < abs(lo - prev_ref) else lo


class _Book:
    """Price-indexed view of one snapshot (prices in integer ticks)."""

    def __init__(self, u: RawUpdate, tick_size: float):
        self.K = len(u.bids)
        self.sizes = {Side.BID: {}, Side.ASK: {}}
        for side, entries in ((Side.BID, u.bids), (Side.ASK, u.asks)):
            for price, size in entries:
                p = int(round(price / tick_size))
                self.sizes[side][p] = self.sizes[side].get(p, 0) + int(size)
        bid_px = [p for p, s in self.sizes[Side.BID].items() if s > 0]
        ask_px = [p for p, s in self.sizes[Side.ASK].items() if s > 0]
        self.best = {Side.BID: max(bid_px) if bid_px else None, Side.ASK: min(ask_px) if ask_px else None}
        # a side is observed from its deepest listed price up to the other side
        self.bid_min = min(self.sizes[Side.BID]) if self.sizes[Side.BID] else None
        self.ask_max = max(self.sizes[Side.ASK]) if self.sizes[Side.ASK] else None

    def observes(self, side: Side, p: int) -> bool:
        if side == Side.BID:
            return self.bid_min is not None and p >= self.bid_min
        return self.ask_max is not None and p <= self.ask_max

    def size(self, side: Side, p: int) -> int:
        return self.sizes[side].get(p, 0)


def level_of(side: Side, price: int, ref: float) -> int:
    if side == Side.ASK:
        return int(round(price - ref + 0.5))
    return int(round(ref - price + 0.5))


def snapshot_state(u: RawUpdate, tick_size: float, ref: float, K: int | None = None) -> LobState:
    """The snapshot as a :class:`LobState` indexed around ``ref`` (unlisted prices are empty)."""
    book = _Book(u, tick_size)
    K = K or book.K
    bids = [book.size(Side.BID, int(round(ref - i + 0.5))) for i in range(1, K + 1)]
    asks = [book.size(Side.ASK, int(round(ref + i - 0.5))) for i in range(1, K + 1)]
    return LobState(tick_size, ref, bids, asks)


def _trade_side(t: RawUpdate, tick_size: float, prev: _Book) -> Side | None:
    if t.side is not None:
        return t.side
    if t.aggressor == "buy":
        return Side.ASK
    if t.aggressor == "sell":
        return Side.BID
    p = int(round(t.price / tick_size))
    if prev.best[Side.ASK] is not None and p >= prev.best[Side.ASK]:
        return Side.ASK
    if prev.best[Side.BID] is not None and p <= prev.best[Side.BID]:
        return Side.BID
    return None


def reconstruct_flow(updates: Sequence[RawUpdate], tick_size: float, K: int | None = None) -> Flow:
    """Turn snapshots and trades into an L/C/M event stream.

    Between consecutive snapshots each price whose size changed yields one
    aggregate event: L for growth, M for a decrease at a price that traded in
    the gap, C otherwise.  Consumption is indexed against the previous
    reference price and emitted first; provision is indexed against the new one.
    Changes at prices that enter or leave the visible depth are not flow.
    """
    rows: list[tuple] = []
    prev: _Book | None = None
    ref_prev: float | None = None
    traded: set[tuple[Side, int]] = set()
    pending: list[RawUpdate] = []
    for u in updates:
        if u.kind == "trade":
            pending.append(u)
            continue
        cur = _Book(u, tick_size)
        depth = K or cur.K
        if prev is None:
            ref_prev = reference_price(cur.best[Side.BID], cur.best[Side.ASK], None)
            prev = cur
            pending.clear()
            continue
        traded.clear()
        for t in pending:
            side = _trade_side(t, tick_size, prev)
            if side is not None:
                traded.add((side, int(round(t.price / tick_size))))
        pending.clear()
        ref_cur = reference_price(cur.best[Side.BID], cur.best[Side.ASK], ref_prev)
        if ref_prev is None:
            ref_prev = ref_cur
        if ref_cur is None:
            prev = cur
            continue
        positives = []
        for side in (Side.BID, Side.ASK):
            prices = sorted(set(prev.sizes[side]) | set(cur.sizes[side]), reverse=(side == Side.BID))
            for p in prices:
                if not (prev.observes(side, p) and cur.observes(side, p)):
                    continue
                before, after = prev.size(side, p), cur.size(side, p)
                delta = after - before
                if delta < 0:
                    level = level_of(side, p, ref_prev)
                    if 1 <= level <= depth:
                        eta = Eta.M if (side, p) in traded else Eta.C
                        rows.append((u.ts_ns, int(eta), int(side), level, -delta, -1, before, ref_prev))
                elif delta > 0:
                    level = level_of(side, p, ref_cur)
                    if 1 <= level <= depth:
                        positives.append((u.ts_ns, int(Eta.L), int(side), level, delta, -1, before, ref_cur))
        rows.extend(positives)
        prev, ref_prev = cur, ref_cur
    if not rows:
        return Flow.empty()
    return with_queue_dt(Flow(*map(np.array, zip(*rows))))


# ---------------------------------------------------------------------------
# sessions, segments, statistics
# ---------------------------------------------------------------------------


def _tod_ns(hhmm: str) -> int:
    h, m = hhmm.split(":")
    return (int(h) * 3600 + int(m) * 60) * NS


def sessionize(flow: Flow, open: str = "09:00", close: str = "18:00") -> list[Flow]:
    """Split into per-day flows restricted to ``[open, close)`` time of day."""
    lo, hi = _tod_ns(open), _tod_ns(close)
    if not lo < hi:
        raise ValueError("session open must precede close")
    tod = flow.ts_ns % DAY_NS
    kept = flow[(tod >= lo) & (tod < hi)]
    if len(kept) == 0:
        return []
    day = kept.ts_ns // DAY_NS
    cuts = np.flatnonzero(np.diff(day)) + 1
    return [with_queue_dt(kept[idx]) for idx in np.split(np.arange(len(kept)), cuts)]


def segment_by_ref_price(day_flow: Flow) -> list[FlowSegment]:
    """Maximal constant-reference runs; per-queue ``dt`` restarts in each one."""
    if len(day_flow) == 0:
        return []
    seg = segment_ids(day_flow)
    cuts = np.flatnonzero(np.diff(seg)) + 1
    out = []
    for idx in np.split(np.arange(len(day_flow)), cuts):
        part = day_flow[idx]
        part = part.with_dt(per_queue_dt(part.ts_ns, part.side, part.level, np.zeros(len(part), dtype=np.int64)))
        out.append(FlowSegment(float(part.ref_price[0]), part, int(part.ts_ns[0] // DAY_NS)))
    return out


def segments_of(flow: Flow, open: str | None = None, close: str | None = None) -> list[FlowSegment]:
    """Sessionize (when a window is given) then segment every day."""
    days = sessionize(flow, open, close) if open and close else [flow]
    return [seg for day in days for seg in segment_by_ref_price(day)]


def _as_flow(data) -> Flow:
    if isinstance(data, Flow):
        return data
    if isinstance(data, FlowSegment):
        return data.flow
    return Flow.concat([d.flow if isinstance(d, FlowSegment) else d for d in data])


def level_stats(data, level: int) -> LevelStats:
    """Table-1 style statistics of one level (both sides pooled)."""
    flow = _as_flow(data)
    at = flow[flow.level == level]
    base = np.where(at.eta == Eta.C_ALL, Eta.C, np.where(at.eta == Eta.M_ALL, Eta.M, at.eta))
    n_l = int(np.sum(base == Eta.L))
    n_c = int(np.sum(base == Eta.C))
    n_m = int(np.sum(base == Eta.M))
    if len(at) == 0:
        return LevelStats(level, 0, 0, 0, float("nan"), float("nan"), aes_defined=False)
    aes = float(at.size.mean())
    valid = at.dt_ns[at.dt_ns >= 0]
    ait = float(valid.mean() / 1e6) if valid.size else float("nan")
    return LevelStats(level, n_l, n_c, n_m, aes, ait)


# ---------------------------------------------------------------------------
# flow files
# ---------------------------------------------------------------------------

_ETA_NAMES = np.array([e.name for e in Eta])
_SIDE_NAMES = np.array([s.label for s in Side])


def flow_frame(flow: Flow) -> pd.DataFrame:
    return pd.DataFrame({
        "ts_ns": flow.ts_ns, "eta": _ETA_NAMES[flow.eta], "side": _SIDE_NAMES[flow.side],
        "level": flow.level, "size": flow.size, "dt_ns": flow.dt_ns, "q_before": flow.q_before,
        "ref_price": flow.ref_price,
    })


def write_flow(path, flow: Flow) -> None:
    flow_frame(flow).to_csv(path, index=False)


def flow_from_frame(df: pd.DataFrame) -> Flow:
    missing = [c for c in FLOW_COLUMNS if c not in df.columns]
    if missing:
        raise ParseError(f"flow file lacks columns {missing}")
    eta_map = {e.name: int(e) for e in Eta}
    side_map = {s.label: int(s) for s in Side}
    try:
        eta = df["eta"].map(eta_map).to_numpy()
        side = df["side"].map(side_map).to_numpy()
    except KeyError as exc:  # pragma: no cover - map() never raises
        raise ParseError(str(exc)) from exc
    if len(df) and (pd.isna(eta).any() or pd.isna(side).any()):
        raise ParseError("flow file has unknown eta or side labels")
    return Flow(df["ts_ns"].to_numpy(), eta.astype(np.int8), side.astype(np.int8), df["level"].to_numpy(),
                df["size"].to_numpy(), df["dt_ns"].to_numpy(), df["q_before"].to_numpy(),
                df["ref_price"].to_numpy())


def read_flow(path) -> Flow:
    """Read a flow file (or an event-log file, whose extra columns are ignored)."""
    try:
        df = pd.read_csv(path, comment="#")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ParseError(f"cannot read flow file {path}: {exc}") from exc
    return flow_from_frame(df)
