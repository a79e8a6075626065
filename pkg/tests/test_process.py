import pytest

from bdiconc.agent import AgentSpec, PlanRule, Trigger, busy_spin, reveal, send
from bdiconc.bench import run_once
from bdiconc.specfile import pingpong
from conftest import chain_agent, config_of

pytestmark = pytest.mark.slow


def slow_pinger():
    body = (reveal("before spin"), busy_spin(300), reveal("before send"), send("ponger", "ping", 1), reveal("after send"))
    return AgentSpec("pinger", (), (PlanRule(Trigger("goal-added", "start"), body),), ("start",))


def test_pingpong_two_processes():
    report, trace = run_once(pingpong(), "1a1p", timeout=15)
    assert report.quiesced
    assert report.messages == {"pinger->ponger:ping": 1, "ponger->pinger:pong": 1}
    assert len({e.process for e in trace}) == 2
    assert report.classification["observable_class"] == "MULTI_PROCESS"
    assert report.violations == 0


def test_killed_peer_gives_delivery_error():
    cfg = config_of(slow_pinger(), pingpong().agents[1], timeout=15)
    report, trace = run_once(cfg, "1a1p", on_launch=lambda h: h.driver.kill("ponger"))
    assert report.quiesced
    errors = [e for e in trace if e.agent == "pinger" and e.detail.startswith("delivery-error")]
    assert len(errors) == 1
    details = [e.detail for e in trace if e.agent == "pinger" and e.stage == "reveal"]
    assert details[-1] == "after send"
    assert report.stats["dead"] == ["ponger"] and report.stats["delivery_errors"] == 1


def test_single_agent_one_process():
    report, trace = run_once(config_of(chain_agent("solo", 2), timeout=15), "1a1p")
    assert report.quiesced
    assert len({e.process for e in trace}) == 1
    assert report.messages == {}
