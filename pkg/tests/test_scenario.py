import pytest
import yaml

from lfnsim.engine import millis, seconds
from lfnsim.errors import ConfigError
from lfnsim.scenario import CANNED, canned_path, load_canned, load_scenario, parse_scenario, resolve_scenario


def _base(**extra):
    data = {
        "name": "t",
        "hosts": [{"name": "a", "addr": "10.0.0.1"}, {"name": "b", "addr": "20.0.0.1"}],
        "routes": [{"name": "r", "dst": "20.0.0.0/8", "policy": {"type": "fixed", "cwnd": 10}}],
        "flows": [{"id": "f", "src": "a", "dst": "b", "dst_port": 5001, "volume_bytes": 1000}],
    }
    data.update(extra)
    return data


@pytest.mark.parametrize("name", CANNED)
def test_canned_scenarios_load(name):
    cfg = load_canned(name)
    assert cfg.name == name
    assert canned_path(name).exists()


def test_defaults():
    cfg = parse_scenario(_base())
    assert cfg.seed == 1
    assert cfg.wan.prop_delay == millis(90) and cfg.wan.loss_prob == 1e-4
    assert cfg.reverse == cfg.wan
    assert cfg.frame.mss == 1448
    assert cfg.flows[0].start_at == 0 and cfg.flows[0].reuse_connection


def test_problems_are_collected_per_field():
    bad = _base(
        seed=-1,
        flows=[{"id": "f", "src": "zz", "dst": "b", "dst_port": 70000, "volume_bytes": 10, "demand_Bps": 5}],
        network={"wan": {"loss": 2, "rate_bps": "fast"}},
        surprise=True,
    )
    with pytest.raises(ConfigError) as err:
        parse_scenario(bad)
    text = "\n".join(err.value.problems)
    for fragment in ("seed", "flows[0].src", "flows[0].dst_port", "network.wan.loss", "network.wan.rate_bps",
                     "surprise: unknown field", "exactly one of volume"):
        assert fragment in text, fragment


def test_plan_validation():
    with pytest.raises(ConfigError) as err:
        parse_scenario(_base(plan=[{"at_s": 1, "actions": [{"set_cwnd": {"flow": "ghost", "cwnd": 3}}]}]))
    assert "unknown flow 'ghost'" in str(err.value)
    with pytest.raises(ConfigError) as err:
        parse_scenario(_base(plan=[{"at_s": 1, "actions": [{"set_cwnd": {"flow": "f", "share": 0.5}}]}]))
    assert "controller.total_cwnd" in str(err.value)
    with pytest.raises(ConfigError):
        parse_scenario(_base(plan=[{"actions": [{"start_flow": "f"}]}]))


def test_plan_parsing():
    cfg = parse_scenario(_base(
        controller={"total_cwnd": 100},
        plan=[
            {"at_s": 2.5, "actions": [{"set_cwnd": {"flow": "f", "share": 0.5}}, {"start_flow": "f"}]},
            {"after_complete": ["f"], "actions": [{"set_cwnd": {"route": "r", "cwnd": 7}}]},
        ],
    ))
    assert cfg.plan[0].at == seconds(2.5)
    assert [a.kind for a in cfg.plan[0].actions] == ["set_cwnd", "start_flow"]
    assert cfg.plan[1].after_complete == ("f",)


def test_start_null_means_plan_started():
    data = _base()
    data["flows"][0]["start_s"] = None
    assert parse_scenario(data).flows[0].start_at is None


def test_sweep_and_burst_sections():
    cfg = load_canned("sweep-tables")
    assert len(cfg.sweep.latencies_ms) == 12 and len(cfg.sweep.loss_rates) == 5
    assert cfg.sweep.replicates == 20
    b = load_canned("burst-switch").burst
    assert b.total_window_pkts == 14764
    assert b.cases[-1].per_sender_rate_bps == float("inf")


def test_with_wan_sets_both_directions():
    cfg = parse_scenario(_base()).with_wan(one_way_ms=200, loss=0.01)
    assert cfg.wan.prop_delay == cfg.reverse.prop_delay == millis(200)
    assert cfg.wan.loss_prob == cfg.reverse.loss_prob == 0.01


def test_load_errors(tmp_path):
    with pytest.raises(OSError):
        load_scenario(tmp_path / "missing.yaml")
    p = tmp_path / "broken.yaml"
    p.write_text("name: [unclosed")
    with pytest.raises(ConfigError):
        load_scenario(p)
    p.write_text("- just\n- a list\n")
    with pytest.raises(ConfigError):
        load_scenario(p)


def test_file_round_trip(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text(yaml.safe_dump(_base(seed=99)))
    assert resolve_scenario(str(p)).seed == 99
    assert resolve_scenario("jumbo").frame.mtu == 9000
