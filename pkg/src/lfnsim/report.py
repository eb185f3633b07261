"""CSV and SVG output.

All numbers are written with fixed formatting so identical runs produce
byte-identical files. Plots are plain SVG line charts built from strings.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

from .engine import NS_PER_SEC, to_seconds
from .harness import BurstOutcome, CellStats, RunResult

GOODPUT_COLUMNS = ("time_s", "flow_id", "goodput_Bps")
SWEEP_COLUMNS = ("rtt_ms", "loss_pct", "mean_s", "median_s", "stddev_s", "reps")
REPLICATE_COLUMNS = ("rtt_ms", "loss_pct", "rep", "completion_s", "box_s", "rto_count", "retransmits")
FLOW_COLUMNS = ("flow_id", "volume_bytes", "completion_s", "box_s", "bytes_delivered", "data_frames_sent",
                "data_frames_dropped", "retransmits", "rto_count")
LINK_COLUMNS = ("link", "sent", "lost", "tail_dropped")
ACTION_COLUMNS = ("time_s", "flow_id", "old_cwnd", "new_cwnd")
TRACE_COLUMNS = ("time_s", "flow_id", "event", "segment")
BURST_COLUMNS = ("case", "n_senders", "per_sender_rate_bps", "peak_bytes", "analytic_bytes", "drops", "pause_events")


def fmt(value) -> str:
    """Six decimals for floats, plain digits for ints, empty for None."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.6f}"
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path: Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def ensure_writable(out: Path) -> Path:
    """Create ``out`` and prove a file can be written there. Raises OSError."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write-test"
    probe.write_text("")
    probe.unlink()
    return out


# ----------------------------------------------------------- run output


def goodput_rows(result: RunResult) -> list[tuple]:
    rows = []
    width = to_seconds(result.bin_width)
    series = {fid: result.goodput(fid) for fid in sorted(result.series)}
    n = max((s.size for s in series.values()), default=0)
    for i in range(n):
        t = i * width
        for fid, s in series.items():
            rows.append((t, fid, float(s[i]) if i < s.size else 0.0))
    return rows


def flow_rows(result: RunResult) -> list[tuple]:
    rows = []
    for fid in sorted(result.flows):
        f = result.flows[fid]
        rows.append((fid, f.volume, f.completion_time, f.box_width, f.bytes_delivered, f.data_frames_sent,
                     f.data_frames_dropped, f.retransmits, len(f.rto_times)))
    return rows


def write_run(result: RunResult, out: Path, fmt_kind: str = "csv") -> list[Path]:
    out = Path(out)
    written = []
    if fmt_kind in ("csv", "both"):
        written.append(write_csv(out / "goodput.csv", GOODPUT_COLUMNS, goodput_rows(result)))
        written.append(write_csv(out / "flows.csv", FLOW_COLUMNS, flow_rows(result)))
        written.append(write_csv(out / "links.csv", LINK_COLUMNS,
                                 [(l.name, l.sent, l.lost, l.tail_dropped)
                                  for _, l in sorted(result.links.items())]))
        written.append(write_csv(out / "actions.csv", ACTION_COLUMNS,
                                 [(to_seconds(a.time), a.flow, a.old_cwnd, a.new_cwnd) for a in result.action_log]))
        summary = [
            ("scenario", result.scenario),
            ("seed", result.seed),
            ("end_s", to_seconds(result.end_time)),
            ("events", result.events_processed),
            ("switch_peak_bytes", float(result.switch_peak_bytes)),
            ("switch_drops", result.switch_drops),
            ("pause_events", result.pause_events),
            ("window_sum_violations", len(result.sum_violations)),
        ]
        written.append(write_csv(out / "summary.csv", ("key", "value"), summary))
        if result.trace is not None:
            written.append(write_csv(out / "trace.csv", TRACE_COLUMNS,
                                     ((t / NS_PER_SEC, fid, kind, seg) for t, fid, kind, seg in result.trace)))
    if fmt_kind in ("svg", "both"):
        written.append(goodput_svg(goodput_rows(result), out / "goodput.svg", title=f"{result.scenario}: goodput"))
    return written


# --------------------------------------------------------- sweep output


def sweep_rows(cells: dict[tuple[float, float], CellStats]) -> list[tuple]:
    return [(c.rtt_ms, c.loss * 100, c.mean, c.median, c.stddev, len(c.replicates))
            for _, c in sorted(cells.items())]


def replicate_rows(cells: dict[tuple[float, float], CellStats]) -> list[tuple]:
    rows = []
    for _, c in sorted(cells.items()):
        for i, r in enumerate(c.replicates):
            rows.append((c.rtt_ms, c.loss * 100, i, r.completion_s, r.box_s, r.rto_count, r.retransmits))
    return rows


def write_sweep(tables: dict[str, dict], out: Path, fmt_kind: str = "csv") -> list[Path]:
    out = Path(out)
    written = []
    for name, cells in sorted(tables.items()):
        rows = sweep_rows(cells)
        if fmt_kind in ("csv", "both"):
            written.append(write_csv(out / f"sweep_{name}.csv", SWEEP_COLUMNS, rows))
            written.append(write_csv(out / f"replicates_{name}.csv", REPLICATE_COLUMNS, replicate_rows(cells)))
        if fmt_kind in ("svg", "both"):
            written.append(sweep_svg(rows, out / f"sweep_{name}.svg", title=f"median completion ({name})"))
    return written


def write_burst(outcomes: list[BurstOutcome], out: Path) -> Path:
    return write_csv(Path(out) / "burst.csv", BURST_COLUMNS,
                     [(o.case, o.n_senders, float(o.per_sender_rate_bps), float(o.peak_bytes),
                       float(o.analytic_bytes), o.drops, o.pause_events) for o in outcomes])


# ------------------------------------------------------------------ SVG

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
_W, _H = 720, 420
_L, _R, _T, _B = 80, 150, 40, 50


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    first = math.ceil(lo / step) * step
    ticks = []
    v = first
    while v <= hi + step * 1e-9:
        ticks.append(round(v, 10))
        v += step
    return ticks


def _label(v: float) -> str:
    if v != 0 and (abs(v) >= 1e6 or abs(v) < 1e-3):
        return f"{v:.3g}"
    return f"{v:g}"


def line_chart(series: dict[str, list[tuple[float, float]]], title: str, xlabel: str, ylabel: str) -> str:
    xs = [x for pts in series.values() for x, _ in pts] or [0.0, 1.0]
    ys = [y for pts in series.values() for _, y in pts] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(0.0, min(ys)), max(ys)
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y1 = y0 + 1.0
    y1 *= 1.05
    pw, ph = _W - _L - _R, _H - _T - _B

    def px(x: float) -> float:
        return _L + (x - x0) / (x1 - x0) * pw

    def py(y: float) -> float:
        return _T + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}" '
        'font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2 - _R / 2:.1f}" y="22" text-anchor="middle" font-size="14">{_esc(title)}</text>',
        f'<rect x="{_L}" y="{_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _nice_ticks(x0, x1):
        if x0 <= t <= x1:
            out.append(f'<line x1="{px(t):.1f}" y1="{_T + ph}" x2="{px(t):.1f}" y2="{_T + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{px(t):.1f}" y="{_T + ph + 18}" text-anchor="middle">{_label(t)}</text>')
    for t in _nice_ticks(y0, y1):
        if y0 <= t <= y1:
            out.append(f'<line x1="{_L - 5}" y1="{py(t):.1f}" x2="{_L}" y2="{py(t):.1f}" stroke="black"/>')
            out.append(f'<text x="{_L - 8}" y="{py(t) + 4:.1f}" text-anchor="end">{_label(t)}</text>')
    out.append(f'<text x="{_L + pw / 2:.1f}" y="{_H - 10}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="16" y="{_T + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {_T + ph / 2:.1f})">{_esc(ylabel)}</text>')
    for i, (name, pts) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        if pts:
            path = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        ly = _T + 14 + 18 * i
        out.append(f'<line x1="{_W - _R + 12}" y1="{ly - 4}" x2="{_W - _R + 32}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_W - _R + 38}" y="{ly}">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def goodput_svg(rows: list[tuple], path: Path, title: str = "goodput") -> Path:
    """Rows as (time_s, flow_id, goodput_Bps); adds an aggregate line when
    there is more than one flow."""
    series: dict[str, list[tuple[float, float]]] = {}
    totals: dict[float, float] = {}
    for t, fid, g in rows:
        t, g = float(t), float(g)
        series.setdefault(fid, []).append((t, g))
        totals[t] = totals.get(t, 0.0) + g
    if len(series) > 1:
        series["all"] = sorted(totals.items())
    Path(path).write_text(line_chart(series, title, "time (s)", "payload goodput (B/s)"))
    return Path(path)


def sweep_svg(rows: list[tuple], path: Path, title: str = "median completion") -> Path:
    """Rows as sweep CSV tuples; one line per loss rate, median vs RTT."""
    series: dict[str, list[tuple[float, float]]] = {}
    for rtt, loss_pct, _mean, median, _sd, _n in rows:
        series.setdefault(f"loss {float(loss_pct):g}%", []).append((float(rtt), float(median)))
    for pts in series.values():
        pts.sort()
    Path(path).write_text(line_chart(series, title, "RTT (ms)", "median completion (s)"))
    return Path(path)


def render_dir(results: Path) -> list[Path]:
    """Draw SVGs for whatever CSVs a results directory holds."""
    results = Path(results)
    if not results.is_dir():
        raise OSError(f"{results}: not a directory")
    written = []
    g = results / "goodput.csv"
    if g.exists():
        rows = [(r["time_s"], r["flow_id"], r["goodput_Bps"]) for r in read_csv(g)]
        written.append(goodput_svg(rows, results / "goodput.svg", title=f"{results.name}: goodput"))
    for s in sorted(results.glob("sweep_*.csv")):
        rows = [tuple(r[c] for c in SWEEP_COLUMNS) for r in read_csv(s)]
        written.append(sweep_svg(rows, s.with_suffix(".svg"), title=f"median completion ({s.stem[6:]})"))
    if not written:
        raise OSError(f"{results}: no goodput.csv or sweep_*.csv to render")
    return written
