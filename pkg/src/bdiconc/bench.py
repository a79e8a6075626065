"""Single benchmark runs and the reports built from them."""
from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field

from .strategy import launch, parse_strategy
from .tracing import ClassificationError, check_program_order, classify, dump_jsonl, dump_logical, logical_diff

ALL_STRATEGIES = ("aa1t:stage", "1a1t", "aa1el", "aa1e-fixed:cores", "aa1e-var:1:cores", "1a1p")


def pair_key(sender, recipient, performative):
    return f"{sender}->{recipient}:{performative}"


@dataclass
class RunReport:
    strategy: str
    quiesced: bool
    messages: dict
    classification: dict
    wall_time: float
    violations: int
    stats: dict = field(default_factory=dict)
    violation_details: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=str)

    def summary(self):
        cls = self.classification.get("label", "-") if self.classification else "-"
        status = "quiesced" if self.quiesced else "timed-out"
        return (
            f"{self.strategy:<18} {status:<9} {self.wall_time * 1000:8.1f} ms  "
            f"msgs={sum(self.messages.values())}  class={cls}  violations={self.violations}"
        )


def run_once(config, strategy, timeout=None, on_launch=None):
    """Launch, await quiescence, stop; returns (RunReport, trace)."""
    kind = parse_strategy(strategy) if isinstance(strategy, str) else strategy
    t0 = time.perf_counter()
    handle = launch(config, kind)
    try:
        if on_launch is not None:
            on_launch(handle)
        result = handle.await_quiescence(timeout if timeout is not None else config.quiescence.timeout)
        wall = time.perf_counter() - t0
    finally:
        handle.stop()
    trace = handle.trace()
    violations = check_program_order(trace)
    try:
        classification = classify(trace).to_dict()
    except ClassificationError:
        classification = {}
    messages = {pair_key(*k): v for k, v in sorted(handle.message_counts().items())}
    stats = result.stats  # snapshot at quiescence, before carriers are torn down
    report = RunReport(str(kind), result.quiesced, messages, classification, wall, len(violations), stats, violations)
    return report, trace


def write_run(out_dir, index, report, trace):
    os.makedirs(out_dir, exist_ok=True)
    stem = f"{index:03d}"
    dump_jsonl(trace, os.path.join(out_dir, f"trace-{stem}.jsonl"))
    dump_logical(trace, os.path.join(out_dir, f"logical-{stem}.jsonl"))
    with open(os.path.join(out_dir, f"report-{stem}.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())


def compare_repeats(traces):
    """Number of traces logically identical to the first, and the first divergence seen."""
    if not traces:
        return 0, None
    same = 1
    first_diff = None
    for t in traces[1:]:
        d = logical_diff(traces[0], t)
        if d.identical:
            same += 1
        elif first_diff is None:
            first_diff = d
    return same, first_diff
