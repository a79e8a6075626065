import json
import os
import subprocess
import sys

import pytest

from bdiconc.cli import EXIT_OK, EXIT_TIMEOUT, EXIT_USAGE, main

LOOP_SPEC = """
agents:
  - name: looper
    goals: [spin]
    rules:
      - on: {goal-added: spin}
        do: [{send: {to: looper, performative: noop}}]
      - on: {message-received: noop}
        do: [{send: {to: looper, performative: noop}}]
"""


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_bench_1a1t_reports_per_agent_flow(tmp_path, capsys):
    code, out, _ = run(capsys, "bench", "pingpong", "1a1t", "--out", str(tmp_path))
    assert code == EXIT_OK
    assert "PER_AGENT_FLOW" in out
    report = json.loads((tmp_path / "report-000.json").read_text())
    assert report["classification"]["observable_class"] == "PER_AGENT_FLOW"
    assert report["messages"] == {"pinger->ponger:ping": 1, "ponger->pinger:pong": 1}
    assert (tmp_path / "trace-000.jsonl").exists() and (tmp_path / "logical-000.jsonl").exists()


def test_bench_repeat_single_flow(tmp_path, capsys):
    code, out, _ = run(capsys, "bench", "pingpong", "--strategy", "aa1el", "--repeat", "10", "--out", str(tmp_path))
    assert code == EXIT_OK
    assert "10/10 logically identical" in out
    logical = {(tmp_path / f"logical-{i:03d}.jsonl").read_bytes() for i in range(10)}
    assert len(logical) == 1


def test_bench_out_dir_from_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("BDICONC_OUT", str(tmp_path / "env-out"))
    assert run(capsys, "bench", "pingpong", "aa1t")[0] == EXIT_OK
    assert (tmp_path / "env-out" / "report-000.json").exists()


def test_bench_pipelined(tmp_path, capsys):
    code, out, _ = run(capsys, "bench", "pingpong", "aa1e-fixed:2", "--internal", "pipelined", "--out", str(tmp_path))
    assert code == EXIT_OK and "violations=0" in out


@pytest.mark.parametrize(
    "argv",
    [
        ("bench", "pingpong", "bogus"),
        ("bench", "pingpong"),
        ("bench", "missing.yaml", "aa1t"),
        ("enumerate", "a.(b", "free"),
        ("enumerate", "a|b", "executor"),
        ("speedup", "--agents", "0"),
    ],
)
def test_usage_errors_exit_2(tmp_path, capsys, argv):
    code, _, err = run(capsys, *argv, *(("--out", str(tmp_path)) if argv[0] == "bench" else ()))
    assert code == EXIT_USAGE
    assert err.startswith("error:")


def test_argparse_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["enumerate", "a", "sideways"])
    assert info.value.code == EXIT_USAGE


def test_bench_timeout_exit_3(tmp_path, capsys):
    spec = tmp_path / "loop.yaml"
    spec.write_text(LOOP_SPEC)
    code, out, _ = run(capsys, "bench", str(spec), "aa1t", "--timeout", "0.2", "--out", str(tmp_path / "o"))
    assert code == EXIT_TIMEOUT
    assert "timed-out" in out


@pytest.mark.parametrize(
    "term, discipline, extra, count",
    [("a.b.c|x.y.z", "free", (), 20), ("a.b.c|x.y.z", "event-loop", (), 2), ("a.b.c|x.y.z", "executor", ("-N", "2"), 20), ("a", "free", (), 1)],
)
def test_enumerate_counts(capsys, term, discipline, extra, count):
    code, out, _ = run(capsys, "enumerate", term, discipline, *extra)
    lines = out.strip().splitlines()
    assert code == EXIT_OK
    assert int(lines[-1]) == count
    assert lines[:-1] == sorted(lines[:-1]) and len(lines) == count + 1


def test_enumerate_event_loop_lists_sequences(capsys):
    _, out, _ = run(capsys, "enumerate", "a.b.c|x.y.z", "event-loop")
    assert out.splitlines()[:2] == ["a,x,b,y,c,z", "x,a,y,b,z,c"]


def test_enumerate_recursion_uses_default_depth(capsys):
    _, out, _ = run(capsys, "enumerate", "@X(a)", "free")
    assert out.splitlines() == ["a,a,a", "1"]


def test_classify_fixed4_trace(tmp_path, capsys):
    run(capsys, "bench", "ring-6", "aa1e-fixed:4", "--out", str(tmp_path))
    code, out, _ = run(capsys, "classify", str(tmp_path / "trace-000.jsonl"))
    assert code == EXIT_OK
    first = out.splitlines()[0]
    if "POOLED" in first:
        assert int(first.split("(")[1].rstrip(")")) <= 4
    else:
        assert first in ("class: SINGLE_FLOW",)
    assert "compatible:" in out and "aa1e-fixed" in out


@pytest.mark.slow
def test_classify_1a1p_trace(tmp_path, capsys):
    run(capsys, "bench", "pingpong", "1a1p", "--out", str(tmp_path))
    code, out, _ = run(capsys, "classify", str(tmp_path / "trace-000.jsonl"))
    assert code == EXIT_OK and out.startswith("class: MULTI_PROCESS")


def test_classify_truncated_file(tmp_path, capsys):
    run(capsys, "bench", "pingpong", "aa1t", "--out", str(tmp_path))
    path = tmp_path / "trace-000.jsonl"
    text = path.read_text()
    path.write_text(text[: text.index("\n", len(text) // 2) - 10])
    code, _, err = run(capsys, "classify", str(path))
    assert code == EXIT_USAGE
    assert "line" in err


def test_classify_empty_and_missing(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert run(capsys, "classify", str(empty))[0] == EXIT_USAGE
    assert run(capsys, "classify", str(tmp_path / "nope.jsonl"))[0] == EXIT_USAGE


def test_speedup_table(capsys):
    code, out, _ = run(capsys, "speedup", "--agents", "2", "--work", "1", "--strategies", "aa1t", "aa1e-fixed:2")
    assert code == EXIT_OK
    rows = [l for l in out.splitlines() if l.startswith(("aa1t", "aa1e"))]
    assert len(rows) == 2 and all("quiesced" in r for r in rows)


def test_speedup_empty_list_means_all_six(capsys, monkeypatch):
    import bdiconc.cli as cli

    seen = []
    monkeypatch.setattr(cli, "run_once", lambda config, kind, timeout: (seen.append(str(kind)), _fake_report())[1])
    code, _, _ = run(capsys, "speedup", "--agents", "1", "--strategies")
    assert code == EXIT_OK
    assert len(seen) == 6 and {s.split(":")[0] for s in seen} == {"aa1t", "1a1t", "aa1el", "aa1e-fixed", "aa1e-var", "1a1p"}


def _fake_report():
    from bdiconc.bench import RunReport

    return RunReport("x", True, {}, {}, 0.01, 0), []


def test_merge_command(tmp_path, capsys):
    run(capsys, "bench", "pingpong", "aa1t", "--out", str(tmp_path))
    src = tmp_path / "trace-000.jsonl"
    out = tmp_path / "merged.jsonl"
    assert run(capsys, "merge", str(out), str(src), str(src))[0] == EXIT_OK
    assert len(out.read_text().splitlines()) == 2 * len(src.read_text().splitlines())


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "bdiconc", "enumerate", "a|x", "free"],
        capture_output=True,
        text=True,
        env={**os.environ, "BDICONC_OUT": str(tmp_path)},
    )
    assert proc.returncode == 0 and proc.stdout.splitlines()[-1] == "2"
