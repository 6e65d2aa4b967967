"""Command-line front end: ``qrsim ingest | calibrate | simulate | report | pipeline``.

Settings resolve as built-in defaults, then the YAML ``--config`` file, then
command-line flags.  Exit codes: 0 success, 1 usage error, 2 data error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .calibration import CalibrationError, calibrate_model, calibrate_theta
from .engine import SimConfig, SimulationError, run
from .eventlog import EventLog, log_from_updates
from .facts import FactConfig, build_report
from .flow import Flow, ParseError, level_stats, parse_stream, read_flow, segments_of, write_flow
from .hawkes import NonStationaryError
from .lob import InvalidParameterError
from .model import VARIANTS, QRModel

log = logging.getLogger("qrsim")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS = {
    "ingest": {"tick_size": 1.0, "levels": None, "open": "09:00", "close": "18:00"},
    "calibrate": {"variant": "QR", "levels": 5, "theta": 0.7, "n_max": 60, "min_obs": 50, "size_buckets": None,
                  "size_unit": "aes", "separate_sides": False, "tick_size": 1.0, "open": None, "close": None},
    "simulate": {"horizon": 9 * 3600.0, "seed": 0, "variant": None, "theta": None, "seeds": None},
    "report": {},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# config and manifest
# ---------------------------------------------------------------------------


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config file must hold a mapping")
    return data


def resolve(section: str, config: dict, args: argparse.Namespace) -> dict:
    """Defaults < config file section < explicit flags."""
    out = dict(DEFAULTS.get(section, {}))
    file_part = config.get(section, {}) or {}
    if not isinstance(file_part, dict):
        raise UsageError(f"config section {section!r} must be a mapping")
    if "seed" in config and section == "simulate":
        out["seed"] = config["seed"]
    out.update(file_part)
    for key, val in vars(args).items():
        if val is not None and key not in ("cmd", "func", "config", "verbose"):
            out[key] = val
    return out


def config_digest(settings: dict) -> str:
    text = json.dumps(settings, sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_manifest(path: Path, command: str, settings: dict, inputs, outputs, seeds=(), model=None) -> dict:
    """Provenance record, written before any output of the command."""
    man = {"tool": "qrsim", "version": __version__, "command": command, "config_digest": config_digest(settings),
           "settings": settings, "inputs": [str(p) for p in inputs], "outputs": [str(p) for p in outputs],
           "seeds": list(seeds), "model": None if model is None else str(model)}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(man, sort_keys=True, indent=2, default=str) + "\n", encoding="utf-8")
    return man


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json") if out.suffix else out / "manifest.json"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_ingest(args, config) -> int:
    s = resolve("ingest", config, args)
    out = Path(s["out"])
    outputs = [out] + ([Path(s["log"])] if s.get("log") else [])
    write_manifest(_manifest_path(out), "ingest", s, s["inputs"], outputs)
    flows, logs = [], []
    for p in s["inputs"]:
        ups = parse_stream(p)
        lg = log_from_updates(ups, float(s["tick_size"]), s["levels"])
        flows.append(lg.flow)
        logs.append(lg)
    flow = Flow.concat(flows)
    write_flow(out, flow)
    if s.get("log"):
        if len(logs) != 1:
            raise UsageError("--log needs exactly one raw input file")
        logs[0].write(s["log"])
    print(f"{len(flow)} events written to {out}")
    return EXIT_OK


def _stats_table(flow: Flow, K: int) -> str:
    lines = [f"{'level':>5} {'#L':>10} {'#C':>10} {'#M':>10} {'AES':>8} {'AIT ms':>9}"]
    for k in range(1, K + 1):
        st = level_stats(flow, k)
        lines.append(f"{k:>5} {st.n_limit:>10} {st.n_cancel:>10} {st.n_market:>10} {st.aes:>8.3f} {st.ait_ms:>9.2f}")
    return "\n".join(lines)


def _mid_moves(lg: EventLog) -> np.ndarray:
    m = np.concatenate([[lg.init_state.mid_price], lg.mid_price])
    d = np.diff(m)
    return d[d != 0]


def cmd_calibrate(args, config) -> int:
    s = resolve("calibrate", config, args)
    variant = str(s["variant"]).upper()
    if variant not in VARIANTS:
        raise UsageError(f"unknown variant {s['variant']!r}; choose from {', '.join(VARIANTS)}")
    out = Path(s["out"])
    write_manifest(_manifest_path(out), "calibrate", s, s["inputs"], [out])
    flow = Flow.concat([read_flow(p) for p in s["inputs"]])
    segs = segments_of(flow, s.get("open"), s.get("close"))
    theta = s["theta"]
    meta = {}
    if str(theta).lower() == "auto":
        if not s.get("real_log"):
            raise UsageError("--theta auto needs --real-log with mid-prices")
        res = calibrate_theta(_mid_moves(EventLog.read(s["real_log"])))
        theta = res.theta
        meta["theta_calibration"] = {"target": res.target, "achieved": res.achieved}
    model = calibrate_model(segs, variant, K=int(s["levels"]), tick_size=float(s["tick_size"]), theta=float(theta),
                            n_max=int(s["n_max"]), min_obs=int(s["min_obs"]),
                            pool_sides=not s["separate_sides"], size_buckets=s["size_buckets"],
                            size_unit=s["size_unit"])
    model.meta.update(meta, source=[str(p) for p in s["inputs"]])
    model.save(out)
    print(_stats_table(flow, int(s["levels"])))
    print(f"{variant} model written to {out}")
    return EXIT_OK


def cmd_simulate(args, config) -> int:
    s = resolve("simulate", config, args)
    out = Path(s["out"])
    seeds = list(s["seeds"]) if s.get("seeds") else [int(s["seed"])]
    outs = [out] if len(seeds) == 1 else [out.with_name(f"{out.stem}_seed{sd}{out.suffix}") for sd in seeds]
    write_manifest(_manifest_path(out), "simulate", s, [s["model"]], outs, seeds, s["model"])
    model = QRModel.load(s["model"])
    for sd, path in zip(seeds, outs):
        cfg = SimConfig(horizon=float(s["horizon"]), seed=int(sd), variant=s["variant"], theta=s["theta"])
        lg = run(model, cfg)
        lg.write(path)
        print(f"seed {sd}: {len(lg)} events, {lg.summary()['n_moves']} reference moves -> {path}")
    return EXIT_OK


def cmd_report(args, config) -> int:
    s = resolve("report", config, args)
    out = Path(s["out"])
    write_manifest(out / "manifest.json", "report", s, [s["sim"], s["real"]],
                   [out / "report.json", out / "report.txt"])
    sim, real = EventLog.read(s["sim"]), EventLog.read(s["real"])
    fact_cfg = FactConfig.from_dict(config.get("facts"))
    rep = build_report(sim, real, fact_cfg)
    rep.write(out)
    print(rep.render_text(), end="")
    return EXIT_OK


def cmd_pipeline(args, config) -> int:
    """raw feed -> flow + reference log -> model -> simulated logs -> reports."""
    work = Path(args.out)
    work.mkdir(parents=True, exist_ok=True)
    raw = args.raw or config.get("raw")
    if not raw:
        raise UsageError("pipeline needs a raw input file (--raw or 'raw' in the config)")
    ing = argparse.Namespace(inputs=[raw], out=str(work / "flow.csv"), log=str(work / "real_log.csv"),
                             tick_size=args.tick_size, levels=None, open=None, close=None)
    cmd_ingest(ing, config)
    cal = argparse.Namespace(inputs=[str(work / "flow.csv")], out=str(work / "model.json"), variant=args.variant,
                             levels=args.levels, theta=None, n_max=None, min_obs=None, size_buckets=None,
                             size_unit=None, separate_sides=None, tick_size=args.tick_size, real_log=None,
                             open=None, close=None)
    cmd_calibrate(cal, config)
    sim = argparse.Namespace(model=str(work / "model.json"), out=str(work / "sim_log.csv"), horizon=args.horizon,
                             seed=args.seed, variant=None, theta=None, seeds=None)
    cmd_simulate(sim, config)
    rep = argparse.Namespace(sim=str(work / "sim_log.csv"), real=str(work / "real_log.csv"),
                             out=str(work / "report"))
    return cmd_report(rep, config)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qrsim", description="Queue-reactive order book calibration, simulation and scoring.")
    p.add_argument("--version", action="version", version=f"qrsim {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="YAML settings file")

    sp = sub.add_parser("ingest", help="raw CSV feed -> order-flow file")
    common(sp)
    sp.add_argument("inputs", nargs="+")
    sp.add_argument("--out", required=True)
    sp.add_argument("--log", help="also write an event log with book context (single input)")
    sp.add_argument("--tick-size", type=float)
    sp.add_argument("--levels", type=int)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("calibrate", help="order-flow files -> model JSON")
    common(sp)
    sp.add_argument("inputs", nargs="+")
    sp.add_argument("--out", required=True)
    sp.add_argument("--variant", type=str.upper, choices=VARIANTS)
    sp.add_argument("--levels", type=int)
    sp.add_argument("--theta", help="probability in [0, 1], or 'auto' (needs --real-log)")
    sp.add_argument("--real-log")
    sp.add_argument("--n-max", type=int)
    sp.add_argument("--min-obs", type=int)
    sp.add_argument("--size-buckets", type=int)
    sp.add_argument("--size-unit", choices=("aes", "lot"))
    sp.add_argument("--separate-sides", action="store_true", default=None)
    sp.add_argument("--tick-size", type=float)
    sp.add_argument("--open")
    sp.add_argument("--close")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("simulate", help="model JSON -> event log")
    common(sp)
    sp.add_argument("model")
    sp.add_argument("--out", required=True)
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--seeds", type=int, nargs="+")
    sp.add_argument("--variant", type=str.upper, choices=VARIANTS)
    sp.add_argument("--theta", type=float)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("report", help="simulated vs reference log -> stylized-fact report")
    common(sp)
    sp.add_argument("sim")
    sp.add_argument("real")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("pipeline", help="ingest, calibrate, simulate and report in one go")
    common(sp)
    sp.add_argument("--raw")
    sp.add_argument("--out", required=True)
    sp.add_argument("--variant", type=str.upper, choices=VARIANTS)
    sp.add_argument("--levels", type=int)
    sp.add_argument("--tick-size", type=float)
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = load_config(getattr(args, "config", None))
        return args.func(args, config)
    except UsageError as exc:
        print(f"qrsim: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, CalibrationError, FileNotFoundError, KeyError, InvalidParameterError) as exc:
        if isinstance(exc, NonStationaryError):
            print(f"qrsim: numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"qrsim: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SimulationError, FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"qrsim: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
