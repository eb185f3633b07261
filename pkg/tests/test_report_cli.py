import csv

import pytest

from conftest import slice_scenario
from lfnsim import report
from lfnsim.cli import main
from lfnsim.harness import SweepGrid, run_scenario, sweep


def _header(path):
    with open(path) as fh:
        return next(csv.reader(fh))


def test_goodput_csv_schema_and_rows(tmp_path):
    r = run_scenario(slice_scenario(volume=10_000_000, one_way_ms=5))
    report.write_run(r, tmp_path)
    path = tmp_path / "goodput.csv"
    assert _header(path) == ["time_s", "flow_id", "goodput_Bps"]
    rows = report.read_csv(path)
    assert len(rows) == r.series["slice"].size
    assert all(len(row["time_s"].split(".")[1]) == 6 for row in rows)
    total = sum(float(row["goodput_Bps"]) for row in rows) * 0.01
    assert total == pytest.approx(10_000_000)


def test_sweep_csv_schema(tmp_path):
    grid = SweepGrid(slice_scenario(volume=2_000_000), (5.0,), (0.0, 0.01), 2)
    report.write_sweep(sweep(grid), tmp_path, "both")
    assert _header(tmp_path / "sweep_reuse.csv") == ["rtt_ms", "loss_pct", "mean_s", "median_s", "stddev_s", "reps"]
    rows = report.read_csv(tmp_path / "sweep_ramp.csv")
    assert [r["rtt_ms"] for r in rows] == ["10.000000", "10.000000"]
    assert [r["loss_pct"] for r in rows] == ["0.000000", "1.000000"]
    assert (tmp_path / "sweep_ramp.svg").read_text().startswith("<svg")


def test_same_seed_gives_byte_identical_files(tmp_path):
    cfg = slice_scenario(volume=5_000_000, loss=0.01, one_way_ms=5)
    for d in ("a", "b"):
        (tmp_path / d).mkdir()
        report.write_run(run_scenario(cfg, trace=True), tmp_path / d, "both")
    for name in ("goodput.csv", "flows.csv", "links.csv", "actions.csv", "summary.csv", "trace.csv", "goodput.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_fmt_is_fixed_point():
    assert report.fmt(1.0) == "1.000000"
    assert report.fmt(2) == "2"
    assert report.fmt(None) == ""
    assert report.fmt(float("inf")) == "inf"


def test_cli_run_and_report(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", "jumbo", "--out", str(out), "--format", "both", "--seed", "7"]) == 0
    assert (out / "goodput.svg").exists()
    summary = {r["key"]: r["value"] for r in report.read_csv(out / "summary.csv")}
    assert summary["seed"] == "7"
    (out / "goodput.svg").unlink()
    assert main(["report", str(out)]) == 0
    assert (out / "goodput.svg").exists()


def test_cli_trace_flag(tmp_path):
    out = tmp_path / "t"
    assert main(["run", "slice-fig3", "--out", str(out), "--trace"]) == 0
    assert _header(out / "trace.csv") == ["time_s", "flow_id", "event", "segment"]


def test_cli_sweep(tmp_path):
    scen = tmp_path / "s.yaml"
    scen.write_text(
        "name: s\nhosts: [{name: a, addr: 10.0.0.1}, {name: b, addr: 20.0.0.1}]\n"
        "routes: [{dst: 20.0.0.0/8, policy: {type: fixed, cwnd: 10000}}]\n"
        "flows: [{id: f, src: a, dst: b, dst_port: 1, volume_bytes: 1000000}]\n"
    )
    out = tmp_path / "o"
    assert main(["sweep", str(scen), "--latencies", "0,10", "--losses", "0", "--reps", "2", "--out", str(out)]) == 0
    assert len(report.read_csv(out / "sweep_reuse.csv")) == 2


def test_cli_burst_study(tmp_path):
    assert main(["run", "burst-switch", "--out", str(tmp_path)]) == 0
    assert len(report.read_csv(tmp_path / "burst.csv")) == 5


def test_cli_optimum(tmp_path):
    assert main(["optimum", "slice-fig3", "--out", str(tmp_path)]) == 0
    row = report.read_csv(tmp_path / "optimum.csv")[0]
    assert 14000 < int(row["total_cwnd"]) < 15000


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: x\nflows: [{id: a}]\n")
    assert main(["run", str(bad), "--out", str(tmp_path)]) == 2
    assert "flows[0].src" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.yaml")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", "jumbo", "--out", str(blocker / "sub")]) == 3
    assert main(["report", str(tmp_path / "nothing-here")]) == 3
    assert main(["sweep", "jumbo", "--out", str(tmp_path)]) == 2
