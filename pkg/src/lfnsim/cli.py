"""Command-line entry point: ``lfnsim run|sweep|optimum|report``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import report
from .controller import total_cwnd_for
from .engine import to_seconds
from .errors import ConfigError
from .harness import BracketError, SweepGrid, find_optimal_total_cwnd, run_burst_study, run_scenario, sweep
from .scenario import CANNED, resolve_scenario

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3

log = logging.getLogger("lfnsim")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_u64, default=None, help="base seed (default: the scenario's, else 1)")
    common.add_argument("--out", type=Path, default=Path("lfnsim-out"), help="output directory")
    common.add_argument("--format", choices=("csv", "svg", "both"), default="csv", dest="fmt")
    common.add_argument("--trace", action="store_true", help="write a per-segment trace.csv")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lfnsim", description="Fixed-window transport simulator for long fat networks.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run one scenario")
    r.add_argument("scenario", help=f"scenario file, or a canned name: {', '.join(CANNED)}")

    s = sub.add_parser("sweep", parents=[common], help="latency x loss grid of completion times")
    s.add_argument("scenario")
    s.add_argument("--latencies", type=_float_list, help="one-way latencies in ms")
    s.add_argument("--losses", type=_float_list, help="per-direction loss probabilities")
    s.add_argument("--reps", type=int)
    s.add_argument("--tables", type=lambda t: t.split(","), help="ramp,reuse (default both)")
    s.add_argument("--jobs", type=int, default=1, help="worker processes")

    o = sub.add_parser("optimum", parents=[common], help="smallest total cwnd reaching a goodput target")
    o.add_argument("scenario")
    o.add_argument("--lo", type=int, help="lower end of the search range (segments)")
    o.add_argument("--hi", type=int, help="upper end of the search range (segments)")
    o.add_argument("--target", type=float, default=0.995, help="fraction of payload rate (default 0.995)")

    rep = sub.add_parser("report", parents=[common], help="draw SVG plots from a results directory")
    rep.add_argument("results", type=Path)
    return p


def _cmd_run(args, cfg) -> int:
    out = report.ensure_writable(args.out)
    if cfg.burst is not None and not cfg.flows:
        outcomes = run_burst_study(cfg)
        report.write_burst(outcomes, out)
        for b in outcomes:
            print(f"{b.case:>24}: peak {b.peak_bytes / 1e6:8.3f} MB  analytic {b.analytic_bytes / 1e6:8.3f} MB  "
                  f"drops {b.drops}  pauses {b.pause_events}")
        return EXIT_OK
    result = run_scenario(cfg, trace=args.trace)
    report.write_run(result, out, args.fmt)
    for fid, f in sorted(result.flows.items()):
        done = f"{f.completion_time:.6f} s" if f.completion_time is not None else "-"
        print(f"{fid:>12}: completion {done}  delivered {f.bytes_delivered} B  retransmits {f.retransmits}  "
              f"rto {len(f.rto_times)}")
    print(f"switch peak {result.switch_peak_bytes:.0f} B, drops {result.switch_drops}; output in {out}")
    return EXIT_OK


def _cmd_sweep(args, cfg) -> int:
    spec = cfg.sweep
    latencies = args.latencies or (spec.latencies_ms if spec else None)
    losses = args.losses or (spec.loss_rates if spec else None)
    if not latencies or not losses:
        raise ConfigError("sweep needs --latencies and --losses (or a sweep section in the scenario)")
    reps = args.reps or (spec.replicates if spec else 20)
    tables = tuple(args.tables or (spec.tables if spec else ("ramp", "reuse")))
    out = report.ensure_writable(args.out)
    grid = SweepGrid(cfg, tuple(latencies), tuple(losses), reps, tables=tables)
    results = sweep(grid, jobs=args.jobs)
    report.write_sweep(results, out, args.fmt)
    for name, cells in sorted(results.items()):
        print(f"[{name}] rtt_ms loss_pct median_s")
        for _, c in sorted(cells.items()):
            print(f"  {c.rtt_ms:7.1f} {c.loss * 100:8.4f} {c.median:9.4f}")
    return EXIT_OK


def _cmd_optimum(args, cfg) -> int:
    out = report.ensure_writable(args.out)
    rtt = 2 * cfg.wan.prop_delay
    bdp = total_cwnd_for(cfg.frame.payload_rate(cfg.wan.rate_bps), rtt, cfg.frame.mss, headroom=0.0)
    lo = args.lo or max(1, math.floor(bdp * 0.9))
    hi = args.hi or math.ceil(bdp * 1.1)
    w = find_optimal_total_cwnd(cfg, lo, hi, target=args.target)
    report.write_csv(out / "optimum.csv", ("rtt_ms", "target", "bdp_segments", "total_cwnd"),
                     [(to_seconds(rtt) * 1000, args.target, bdp, w)])
    print(f"optimal total cwnd {w} segments (BDP {bdp}) at RTT {to_seconds(rtt) * 1000:g} ms")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            for path in report.render_dir(args.results):
                print(path)
            return EXIT_OK
        cfg = resolve_scenario(args.scenario)
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        return {"run": _cmd_run, "sweep": _cmd_sweep, "optimum": _cmd_optimum}[args.command](args, cfg)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except BracketError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
