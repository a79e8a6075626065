import json
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdiconc.bench import run_once
from bdiconc.specfile import pingpong, ring
from bdiconc.strategy import parse_strategy
from bdiconc.tracing import (
    MULTI_PROCESS,
    PER_AGENT_FLOW,
    POOLED,
    SINGLE_FLOW,
    ClassificationError,
    TraceEvent,
    TraceFormatError,
    TraceSink,
    check_program_order,
    classify,
    dump_jsonl,
    load_jsonl,
    logical_diff,
    logical_trace,
    merge,
    record,
)


def ev(agent="a", cycle=1, stage="sense", intention=None, carrier=1, process=1, detail="", seq=0, wall=0):
    return TraceEvent(seq, wall, agent, cycle, stage, intention, carrier, process, detail)


def cycle_events(agent, cycle, carrier=1, process=1, intention=1, idx=0):
    return [
        ev(agent, cycle, "sense", None, carrier, process),
        ev(agent, cycle, "deliberate", None, carrier, process),
        ev(agent, cycle, "act", intention, carrier, process, f"{idx}:reveal"),
        ev(agent, cycle, "reveal", intention, carrier, process, "x"),
    ]


@pytest.fixture(scope="module")
def pingpong_1a1t():
    report, trace = run_once(pingpong(), "1a1t")
    assert report.quiesced
    return trace


def test_pingpong_has_reveal_points(pingpong_1a1t):
    reveals = [e for e in pingpong_1a1t if e.stage == "reveal"]
    assert len(reveals) >= 8
    assert {e.agent for e in reveals} == {"pinger", "ponger"}


def test_sink_assigns_consecutive_seq():
    sink = TraceSink()
    assert [record(sink, ev()) for _ in range(3)] == [1, 2, 3]


def test_record_after_close_is_dropped():
    sink = TraceSink()
    record(sink, ev())
    sink.close()
    assert record(sink, ev()) is None
    assert len(sink) == 1 and sink.dropped == 1


def test_concurrent_records_total_order():
    sink = TraceSink()
    n_threads, per = 8, 1250

    def work(i):
        for j in range(per):
            sink.record(ev(agent=f"t{i}", detail=str(j)))

    threads = [threading.Thread(target=work, args=(i,)) for i in range(n_threads)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    seqs = [e.seq for e in sink.snapshot()]
    assert seqs == list(range(1, n_threads * per + 1))
    for i in range(n_threads):
        mine = [int(e.detail) for e in sink.events if e.agent == f"t{i}"]
        assert mine == list(range(per))


def test_program_order_clean_trace():
    trace = cycle_events("a", 1) + cycle_events("a", 2, idx=1)
    assert check_program_order(trace) == []


def test_program_order_act_before_sense():
    sense, delib, act, rev = cycle_events("a", 1)
    assert len(check_program_order([act, sense, delib, rev])) == 1


def test_program_order_empty():
    assert check_program_order([]) == []


def test_program_order_action_index_regression():
    trace = cycle_events("a", 1, idx=1) + cycle_events("a", 2, idx=0)
    assert len(check_program_order(trace)) == 1


def test_program_order_interleaved_agents_is_fine():
    a, b = cycle_events("a", 1), cycle_events("b", 1, carrier=2)
    trace = [x for pair in zip(a, b) for x in pair]
    assert check_program_order(trace) == []


def test_program_order_runtime_traces_are_clean(pingpong_1a1t):
    assert check_program_order(pingpong_1a1t) == []


def test_classify_per_agent(pingpong_1a1t):
    report = classify(pingpong_1a1t)
    assert report.observable_class == PER_AGENT_FLOW
    assert report.admits(parse_strategy("1a1t"))
    assert report.evidence["bijection"] is True


def test_classify_single_flow_admits_n1_equivalents():
    _, trace = run_once(pingpong(), "aa1e-fixed:1")
    report = classify(trace)
    assert report.observable_class == SINGLE_FLOW
    for s in ("aa1el", "aa1t", "aa1e-fixed:1"):
        assert report.admits(parse_strategy(s))
    assert not report.admits(parse_strategy("1a1p"))


def test_classify_pooled_bound_is_carrier_count():
    trace = cycle_events("a", 1, carrier=1) + cycle_events("b", 1, carrier=1) + cycle_events("b", 2, carrier=2, idx=1)
    report = classify(trace)
    assert (report.observable_class, report.bound, report.label) == (POOLED, 2, "POOLED(2)")
    assert report.admits(parse_strategy("aa1e-fixed:2"))
    assert not report.admits(parse_strategy("aa1e-fixed:1"))
    assert not report.admits(parse_strategy("aa1t"))


def test_classify_multi_process():
    trace = cycle_events("a", 1, process=10) + cycle_events("b", 1, process=11)
    report = classify(trace)
    assert report.observable_class == MULTI_PROCESS
    assert report.admits(parse_strategy("1a1p"))


def test_classify_same_thread_id_in_two_processes_counts_twice():
    trace = cycle_events("a", 1, carrier=7, process=10) + cycle_events("b", 1, carrier=7, process=11)
    assert classify(trace).evidence["carriers"] == 2


def test_classify_empty_trace():
    with pytest.raises(ClassificationError):
        classify([])


def test_logical_diff_self_identical(pingpong_1a1t):
    assert logical_diff(pingpong_1a1t, pingpong_1a1t).identical


def test_logical_diff_reports_first_divergence():
    a = cycle_events("a", 1)
    b = list(a)
    b[2] = ev("a", 1, "act", 1, 1, 1, "0:send")
    d = logical_diff(a, b)
    assert not d.identical and d.index == 2
    assert d.left[4] == "0:reveal" and d.right[4] == "0:send"


def test_logical_diff_length_mismatch():
    a = cycle_events("a", 1)
    d = logical_diff(a, a[:3])
    assert not d.identical and d.index == 3 and d.right is None


def test_logical_diff_seeded_aa1t_runs_identical():
    _, t1 = run_once(pingpong(), "aa1t")
    _, t2 = run_once(pingpong(), "aa1t")
    assert logical_diff(t1, t2).identical


def test_strategies_agree_on_message_multisets():
    r1, t1 = run_once(ring(4), "aa1t")
    r2, t2 = run_once(ring(4), "1a1t")
    assert r1.messages == r2.messages
    assert sorted((e.agent, e.stage, e.detail) for e in t1) == sorted((e.agent, e.stage, e.detail) for e in t2)


carrier_ids = st.lists(st.integers(1, 5), min_size=1, max_size=30)


@settings(max_examples=50, deadline=None)
@given(carrier_ids, st.permutations(list(range(100, 105))))
def test_logical_trace_renaming_invariant(carriers, relabel):
    trace = [ev(f"a{c}", i, "reveal", None, c, 1, str(i)) for i, c in enumerate(carriers)]
    renamed = [ev(e.agent, e.cycle, e.stage, None, relabel[e.carrier - 1], 1, e.detail, wall=e.wall_ns + 99) for e in trace]
    assert logical_trace(trace) == logical_trace(renamed)
    # carrier indices are first-appearance order
    seen = []
    for c in carriers:
        if c not in seen:
            seen.append(c)
    assert [t[-1] for t in logical_trace(trace)] == [seen.index(c) for c in carriers]


def test_jsonl_round_trip(tmp_path, pingpong_1a1t):
    path = tmp_path / "t.jsonl"
    dump_jsonl(pingpong_1a1t, path)
    assert load_jsonl(path) == pingpong_1a1t
    first = json.loads(path.read_text().splitlines()[0])
    assert list(first) == ["seq", "wall_ns", "agent", "cycle", "stage", "intention", "carrier", "process", "detail"]


def test_jsonl_malformed_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = ev(seq=1).to_json()
    path.write_text(good + "\n" + good[:-5] + "\n")
    with pytest.raises(TraceFormatError) as info:
        load_jsonl(path)
    assert info.value.line == 2


def test_jsonl_missing_field(tmp_path):
    path = tmp_path / "bad.jsonl"
    d = json.loads(ev(seq=1).to_json())
    del d["carrier"]
    path.write_text(json.dumps(d) + "\n")
    with pytest.raises(TraceFormatError, match="carrier"):
        load_jsonl(path)


def test_merge_orders_by_wall_process_seq():
    p1 = [ev("a", 1, seq=1, process=1, wall=10), ev("a", 1, "deliberate", seq=2, process=1, wall=10)]
    p2 = [ev("b", 1, seq=1, process=2, wall=5), ev("b", 1, "deliberate", seq=2, process=2, wall=10)]
    merged = merge(p1, p2)
    assert [(e.process, e.seq) for e in merged] == [(2, 1), (1, 1), (1, 2), (2, 2)]
