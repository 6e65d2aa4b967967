import io

import numpy as np
import pytest

from conftest import T9, make_flow
from qrsim.eventlog import log_from_updates, updates_from_log
from qrsim.flow import (DAY_NS, NS, Flow, ParseError, RawUpdate, level_stats, parse_stream, read_flow,
                        reconstruct_flow, reference_price, segment_by_ref_price, segments_of, sessionize,
                        with_queue_dt, write_flow, write_raw)
from qrsim.lob import Eta, Side

HEADER = "ts_ns,kind,side,level,price,size,aggressor"


def snapshot_lines(ts, bids, asks, tick=1.0, best_bid=100):
    out = []
    for i, s in enumerate(bids):
        out.append(f"{ts},book,bid,{i + 1},{(best_bid - i) * tick},{s},")
    for i, s in enumerate(asks):
        out.append(f"{ts},book,ask,{i + 1},{(best_bid + 1 + i) * tick},{s},")
    return out


def test_empty_file_gives_no_updates():
    assert parse_stream(io.StringIO("")) == []
    assert parse_stream([HEADER]) == []


def test_one_snapshot():
    ups = parse_stream([HEADER] + snapshot_lines(5, [3, 4], [2, 1]))
    assert len(ups) == 1
    u = ups[0]
    assert u.kind == "book" and u.bids == ((100.0, 3), (99.0, 4)) and u.asks == ((101.0, 2), (102.0, 1))


def test_negative_size_names_line():
    lines = [HEADER] + snapshot_lines(5, [3], [2])
    lines[2] = lines[2].replace(",2,", ",-2,")
    with pytest.raises(ParseError, match="line 3"):
        parse_stream(lines)


@pytest.mark.parametrize("bad,msg", [
    ("5,book,bid,1,abc,3,", "malformed"),
    ("5,quote,bid,1,100,3,", "unknown kind"),
    ("5,book,mid,1,100,3,", "side"),
])
def test_malformed_lines(bad, msg):
    with pytest.raises(ParseError, match=msg):
        parse_stream([HEADER, bad])


def test_bad_header_and_regressing_time():
    with pytest.raises(ParseError, match="header"):
        parse_stream(["a,b,c"])
    lines = [HEADER] + snapshot_lines(5, [3], [2]) + snapshot_lines(4, [3], [2])
    with pytest.raises(ParseError, match="regresses"):
        parse_stream(lines)
    assert len(parse_stream(lines, tolerance_ns=1)) == 2


def test_raw_roundtrip(tmp_path):
    ups = [RawUpdate(1, "book", bids=((1.0, 3),), asks=((1.01, 4),)),
           RawUpdate(2, "trade", price=1.01, size=2, side=Side.ASK),
           RawUpdate(3, "book", bids=((1.0, 3),), asks=((1.01, 2),))]
    write_raw(tmp_path / "raw.csv", ups)
    assert parse_stream(tmp_path / "raw.csv") == ups


def recon(before, after, trade=None):
    ups = parse_stream([HEADER] + snapshot_lines(1, [5], before) + ([trade] if trade else [])
                       + snapshot_lines(2, [5], after))
    return reconstruct_flow(ups, 1.0)


def test_positive_delta_is_limit():
    f = recon([10], [14])
    assert len(f) == 1 and f.eta[0] == Eta.L and f.size[0] == 4 and f.side[0] == Side.ASK and f.level[0] == 1


def test_decrease_with_trade_is_market():
    f = recon([10], [6], "1,trade,ask,,101,4,buy")
    assert len(f) == 1 and f.eta[0] == Eta.M and f.size[0] == 4 and f.q_before[0] == 10


def test_decrease_without_trade_is_cancel():
    f = recon([10], [6])
    assert len(f) == 1 and f.eta[0] == Eta.C and f.size[0] == 4


def test_trade_side_from_aggressor_and_price():
    f = recon([10], [6], "1,trade,,,101,4,")
    assert f.eta[0] == Eta.M


def test_reference_price_rule():
    assert reference_price(100, 101, None) == 100.5
    assert reference_price(100, 102, 100.5) == 100.5
    assert reference_price(100, 102, 101.5) == 101.5
    assert reference_price(None, None, None) is None


def test_sessionize_window_and_days():
    rows = [(-60, Eta.L, Side.ASK, 1, 1, 0), (0, Eta.L, Side.ASK, 1, 1, 1), (10, Eta.L, Side.ASK, 1, 1, 2)]
    f = make_flow(rows)
    days = sessionize(f)
    assert len(days) == 1 and len(days[0]) == 2  # 08:59 dropped
    g = Flow.concat([f, make_flow([(0, Eta.L, Side.ASK, 1, 1, 0), (5, Eta.L, Side.ASK, 1, 1, 1)])])
    g.ts_ns[3:] += DAY_NS
    days = sessionize(g)
    assert len(days) == 2
    assert days[1].dt_ns[0] == -1 and days[1].dt_ns[1] == 5 * NS


def test_inside_window_identity():
    f = with_queue_dt(make_flow([(1, Eta.L, Side.BID, 1, 2, 0), (2, Eta.C, Side.BID, 1, 1, 2)]))
    (day,) = sessionize(f)
    for c in ("ts_ns", "eta", "size", "dt_ns"):
        assert np.array_equal(getattr(day, c), getattr(f, c))


@pytest.mark.parametrize("refs,n", [([100.5] * 4, 1), ([100.5, 100.5, 101.5, 101.5], 2),
                                    ([100.5, 101.5, 100.5, 99.5], 4)])
def test_segmentation(refs, n):
    rows = [(i, Eta.L, Side.ASK, 1, 1, i, r) for i, r in enumerate(refs)]
    segs = segment_by_ref_price(with_queue_dt(make_flow(rows)))
    assert len(segs) == n
    for s in segs:
        assert s.flow.dt_ns[0] == -1
        assert np.all(s.flow.ref_price == s.ref_price)


def test_per_queue_dt_is_per_queue():
    rows = [(0, Eta.L, Side.ASK, 1, 1, 0), (1, Eta.L, Side.BID, 1, 1, 0), (3, Eta.L, Side.ASK, 1, 1, 1),
            (4, Eta.L, Side.ASK, 2, 1, 0), (6, Eta.C, Side.BID, 1, 1, 1)]
    f = with_queue_dt(make_flow(rows))
    assert (f.dt_ns // NS).tolist() == [-1, -1, 3, -1, 5]


def test_level_stats():
    rows = [(0, Eta.L, Side.ASK, 1, 2, 0), (0.1, Eta.C, Side.ASK, 1, 4, 2), (0.4, Eta.M, Side.ASK, 1, 6, 6)]
    st = level_stats(with_queue_dt(make_flow(rows)), 1)
    assert st.aes == 4.0 and (st.n_limit, st.n_cancel, st.n_market) == (1, 1, 1)
    assert st.ait_ms == pytest.approx(200.0)
    empty = level_stats(make_flow(rows), 3)
    assert not empty.aes_defined


def test_flow_file_roundtrip(tmp_path, small_log):
    f = small_log.flow
    write_flow(tmp_path / "f.csv", f)
    g = read_flow(tmp_path / "f.csv")
    for c in ("ts_ns", "eta", "side", "level", "size", "dt_ns", "q_before", "ref_price"):
        assert np.array_equal(getattr(f, c), getattr(g, c))


def test_read_flow_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("ts_ns,eta\n1,L\n")
    with pytest.raises(ParseError, match="lacks columns"):
        read_flow(p)
    with pytest.raises(ParseError):
        read_flow(tmp_path / "missing.csv")


def test_reconstruction_recovers_simulated_flow(small_log):
    """Feed-level view of a simulation, rebuilt into flow: one event per snapshot gap matches exactly."""
    log = small_log.slice_time(0, 300)
    ups = updates_from_log(log)
    f = reconstruct_flow(ups, log.tick_size, log.K)
    sim = log.flow
    # every simulated event changes exactly one queue, except reference moves which also re-index the book
    keep = log.move == 0
    got = {(int(t), int(e), int(s), int(l), int(z)) for t, e, s, l, z in zip(f.ts_ns, f.eta, f.side, f.level, f.size)}
    want = {(int(t), int(Eta(e).base), int(s), int(l), int(z)) for t, e, s, l, z, k in
            zip(sim.ts_ns, sim.eta, sim.side, sim.level, sim.size, keep) if k}
    assert want <= got
    assert len(got) - len(want) <= 3 * int((~keep).sum())


def test_historical_log_from_updates(small_log):
    log = small_log.slice_time(0, 120)
    hist = log_from_updates(updates_from_log(log), log.tick_size, log.K)
    assert len(hist) >= int((log.move == 0).sum())
    assert np.all(np.diff(hist.flow.ts_ns) >= 0)
    assert (hist.book >= 0).all()


def test_segments_of_session_window(small_log):
    segs = segments_of(small_log.flow, "09:00", "18:00")
    assert sum(len(s) for s in segs) == len(small_log)
