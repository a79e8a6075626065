import pytest

from bdiconc.agent import AgentSpec, PlanRule, Trigger, reveal, send
from bdiconc.runtime import MasConfig, QuiescenceConfig
from bdiconc.tracing import TraceSink


class Recorder:
    """Effector stub: in-memory outbox plus a real trace sink."""

    def __init__(self, known=("pinger", "ponger")):
        self.sink = TraceSink()
        self.outbox = []
        self.known = set(known)

    def deliver(self, message):
        from bdiconc.runtime import DeliveryReceipt

        if message.recipient not in self.known:
            return DeliveryReceipt(False, 0, f"unknown recipient {message.recipient!r}")
        self.outbox.append(message)
        return DeliveryReceipt(True, 0)

    def record(self, event):
        return self.sink.record(event)


@pytest.fixture
def recorder():
    return Recorder()


def chain_agent(name, n_actions, goal="go"):
    """Agent whose single initial goal runs ``n_actions`` reveal actions."""
    body = tuple(reveal(f"{name}-{i}") for i in range(n_actions))
    return AgentSpec(name, (), (PlanRule(Trigger("goal-added", goal), body),), (goal,))


def looping_agent(name="looper"):
    rule = PlanRule(Trigger("goal-added", "spin"), (reveal("tick"), send(name, "noop", 0),))
    again = PlanRule(Trigger("message-received", "noop"), (reveal("tock"), send(name, "noop", 0)))
    return AgentSpec(name, (), (rule, again), ("spin",))


def config_of(*agents, seed=0, timeout=5.0, internal=None):
    kw = {}
    if internal is not None:
        kw["internal"] = internal
    return MasConfig(tuple(agents), seed=seed, quiescence=QuiescenceConfig(timeout=timeout), **kw)


# -- acceptance verdicts, printed once at the end of the session

ACCEPTANCE = {}


class criterion:
    """Context manager recording PASS/FAIL for one acceptance criterion."""

    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            verdict = "PASS"
        elif issubclass(exc_type, pytest.skip.Exception):
            verdict = "SKIP"
            self.detail = self.detail or str(exc)
        else:
            verdict = "FAIL"
            self.detail = self.detail or f"{exc_type.__name__}: {exc}".splitlines()[0]
        ACCEPTANCE[self.number] = f"criterion {self.number} {verdict}: {self.title}" + (
            f" ({self.detail})" if self.detail else ""
        )
        return False


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
