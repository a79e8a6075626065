"""Execution traces: recording, JSONL I/O, program-order checking, logical
projection and observable concurrency-class inference.
"""
from __future__ import annotations

import itertools
import json
import threading
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import kernels

FIELDS = ("seq", "wall_ns", "agent", "cycle", "stage", "intention", "carrier", "process", "detail")
STAGES = ("sense", "deliberate", "act", "reveal")
_STAGE_RANK = {"sense": 0, "deliberate": 1, "act": 2}

PER_AGENT_FLOW = "PER_AGENT_FLOW"
SINGLE_FLOW = "SINGLE_FLOW"
POOLED = "POOLED"
MULTI_PROCESS = "MULTI_PROCESS"


class TraceFormatError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ClassificationError(ValueError):
    pass


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    wall_ns: int
    agent: str
    cycle: int
    stage: str
    intention: Optional[int]
    carrier: int
    process: int
    detail: str = ""

    def with_seq(self, seq):
        return replace(self, seq=seq)

    def to_json(self):
        return json.dumps(asdict(self), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d, line=None):
        missing = [f for f in FIELDS if f not in d]
        if missing:
            raise TraceFormatError(f"missing fields {missing}", line)
        if d["stage"] not in STAGES:
            raise TraceFormatError(f"unknown stage {d['stage']!r}", line)
        try:
            return cls(
                seq=int(d["seq"]),
                wall_ns=int(d["wall_ns"]),
                agent=str(d["agent"]),
                cycle=int(d["cycle"]),
                stage=d["stage"],
                intention=None if d["intention"] is None else int(d["intention"]),
                carrier=int(d["carrier"]),
                process=int(d["process"]),
                detail=str(d["detail"]),
            )
        except (TypeError, ValueError) as exc:
            raise TraceFormatError(str(exc), line) from None


class TraceSink:
    """Thread-safe append-only event store; assigns seq 1, 2, ... in append order."""

    def __init__(self):
        self._lock = threading.Lock()
        self._seq = itertools.count(1)
        self.events = []
        self.closed = False
        self.dropped = 0

    def record(self, event):
        with self._lock:
            if self.closed:
                self.dropped += 1
                return None
            seq = next(self._seq)
            self.events.append(event.with_seq(seq))
            return seq

    def ingest(self, events):
        """Append foreign events verbatim (seq kept), e.g. from child processes."""
        with self._lock:
            if self.closed:
                self.dropped += len(events)
                return
            self.events.extend(events)

    def close(self):
        with self._lock:
            self.closed = True

    def snapshot(self):
        with self._lock:
            return list(self.events)

    def __len__(self):
        return len(self.events)


def record(sink, event):
    return sink.record(event)


def dump_jsonl(events, path):
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(ev.to_json())
            fh.write("\n")


def load_jsonl(path):
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                d = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise TraceFormatError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(d, dict):
                raise TraceFormatError("event is not an object", lineno)
            events.append(TraceEvent.from_dict(d, lineno))
    return events


def merge(*traces):
    """Merge per-process traces ordered by (wall_ns, process, seq).

    Cross-process order is only as good as the hosts' wall clocks; order
    inside one process is exact because seq breaks wall-clock ties.
    """
    return sorted(itertools.chain.from_iterable(traces), key=lambda e: (e.wall_ns, e.process, e.seq))


# -- program order


def _act_index(ev):
    head = ev.detail.split(":", 1)[0]
    return int(head) if head.isdigit() else None


def check_program_order(trace):
    """Return a list of human-readable violations; empty when the trace is sound.

    Checks, in trace order:
    * per (agent, cycle): stage events form sense, deliberate, act+ (a prefix);
    * per agent: a cycle's sense comes after every stage event of earlier cycles;
    * per (agent, intention): body indices of act events strictly increase.
    """
    for i, ev in enumerate(trace):
        if not isinstance(ev, TraceEvent):
            raise TraceFormatError(f"not a TraceEvent: {ev!r}", i + 1)
    violations = []
    cycle_stages = defaultdict(list)
    cycle_order = defaultdict(list)
    last_index = {}
    for pos, ev in enumerate(trace):
        if ev.stage in _STAGE_RANK:
            key = (ev.agent, ev.cycle)
            if key not in cycle_stages:
                cycle_order[ev.agent].append(ev.cycle)
            cycle_stages[key].append((pos, ev.stage))
        if ev.stage == "act" and ev.intention is not None:
            idx = _act_index(ev)
            if idx is None:
                continue
            k = (ev.agent, ev.intention)
            prev = last_index.get(k)
            if prev is not None and idx <= prev:
                violations.append(f"{ev.agent} intention {ev.intention}: action {idx} after {prev} (pos {pos})")
            last_index[k] = idx if prev is None else max(prev, idx)

    for (agent, cycle), entries in cycle_stages.items():
        ranks = [_STAGE_RANK[s] for _, s in entries]
        ok = ranks[0] == 0 and all(
            b == a + 1 or (a == b == 2) for a, b in zip(ranks, ranks[1:])
        )
        if not ok:
            violations.append(f"{agent} cycle {cycle}: stage order {[s for _, s in entries]}")

    for agent, cycles in cycle_order.items():
        end_of_prev = -1
        prev_cycle = None
        for cycle in cycles:
            entries = cycle_stages[(agent, cycle)]
            first = entries[0][0]
            if prev_cycle is not None and (cycle < prev_cycle or first < end_of_prev):
                violations.append(f"{agent} cycle {cycle} overlaps cycle {prev_cycle}")
            end_of_prev = max(end_of_prev, entries[-1][0])
            prev_cycle = cycle
    return violations


# -- logical projection


def logical_trace(trace):
    """Project events to (agent, cycle, stage, intention, detail, carrier-index)."""
    renaming = {}
    out = []
    for ev in trace:
        key = (ev.process, ev.carrier)
        idx = renaming.setdefault(key, len(renaming))
        out.append((ev.agent, ev.cycle, ev.stage, ev.intention, ev.detail, idx))
    return out


def dump_logical(trace, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in logical_trace(trace):
            fh.write(json.dumps(rec, separators=(",", ":")))
            fh.write("\n")


@dataclass
class TraceDiff:
    identical: bool
    index: Optional[int] = None
    left: Optional[tuple] = None
    right: Optional[tuple] = None

    def __str__(self):
        if self.identical:
            return "identical"
        return f"diverge at {self.index}: {self.left} != {self.right}"


def logical_diff(trace_a, trace_b):
    a = logical_trace(trace_a)
    b = logical_trace(trace_b)
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return TraceDiff(False, i, x, y)
    if len(a) != len(b):
        i = min(len(a), len(b))
        return TraceDiff(False, i, a[i] if i < len(a) else None, b[i] if i < len(b) else None)
    return TraceDiff(True)


# -- classification


@dataclass(frozen=True)
class Compat:
    """A strategy family compatible with an observation, with parameter bounds."""
    family: str
    min_carriers: int = 1

    def admits(self, kind):
        if kind.family != self.family:
            return False
        if self.family == "aa1e-fixed":
            return kind.n >= self.min_carriers
        return True

    def __str__(self):
        if self.family == "aa1e-fixed":
            return "aa1e-fixed:1" if self.min_carriers <= 1 else f"aa1e-fixed:N>={self.min_carriers}"
        return self.family


@dataclass
class ClassificationReport:
    observable_class: str
    bound: Optional[int]
    evidence: dict
    compatible_strategies: tuple = field(default_factory=tuple)

    def admits(self, kind):
        return any(c.admits(kind) for c in self.compatible_strategies)

    @property
    def label(self):
        return f"{self.observable_class}({self.bound})" if self.observable_class == POOLED else self.observable_class

    def to_dict(self):
        return {
            "observable_class": self.observable_class,
            "bound": self.bound,
            "label": self.label,
            "evidence": self.evidence,
            "compatible_strategies": [str(c) for c in self.compatible_strategies],
        }


def classify(trace):
    if not trace:
        raise ClassificationError("cannot classify an empty trace")
    agents = sorted({e.agent for e in trace})
    carriers = sorted({(e.process, e.carrier) for e in trace})
    processes = sorted({e.process for e in trace})
    a_idx = {a: i for i, a in enumerate(agents)}
    c_idx = {c: i for i, c in enumerate(carriers)}
    inc = kernels.incidence(
        np.fromiter((c_idx[(e.process, e.carrier)] for e in trace), np.int64, len(trace)),
        np.fromiter((a_idx[e.agent] for e in trace), np.int64, len(trace)),
        len(carriers),
        len(agents),
    )
    used = inc > 0
    agents_per_carrier = used.sum(axis=1)
    carriers_per_agent = used.sum(axis=0)
    n_agents, n_carriers = len(agents), len(carriers)
    bijection = bool(
        n_agents == n_carriers and (agents_per_carrier == 1).all() and (carriers_per_agent == 1).all()
    )
    evidence = {
        "events": len(trace),
        "agents": n_agents,
        "carriers": n_carriers,
        "processes": len(processes),
        "max_agents_per_carrier": int(agents_per_carrier.max()),
        "max_carriers_per_agent": int(carriers_per_agent.max()),
        "bijection": bijection,
    }

    fixed_any = Compat("aa1e-fixed", n_carriers)
    if len(processes) > 1:
        cls, bound, compat = MULTI_PROCESS, None, (Compat("1a1p"),)
    elif n_carriers == 1:
        cls, bound = SINGLE_FLOW, None
        compat = [Compat("aa1t"), Compat("aa1el"), Compat("aa1e-fixed", 1), Compat("aa1e-var")]
        if n_agents == 1:
            compat += [Compat("1a1t"), Compat("1a1p")]
        compat = tuple(compat)
    elif bijection:
        cls, bound = PER_AGENT_FLOW, None
        compat = (Compat("1a1t"), fixed_any, Compat("aa1e-var"))
    else:
        cls, bound = POOLED, n_carriers
        compat = (fixed_any, Compat("aa1e-var"))
    return ClassificationReport(cls, bound, evidence, compat)
