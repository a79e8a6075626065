"""MAS assembly, in-memory transport and run lifecycle helpers."""
from __future__ import annotations

import random
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from .agent import Agent, AgentSpec, InternalModelConfig
from .tracing import TraceSink


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class QuiescenceConfig:
    idle_cycles: int = 3
    timeout: float = 10.0


@dataclass(frozen=True)
class MasConfig:
    agents: tuple = ()
    internal: InternalModelConfig = field(default_factory=InternalModelConfig)
    seed: int = 0
    quiescence: QuiescenceConfig = field(default_factory=QuiescenceConfig)

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))

    def validate(self):
        seen = set()
        for spec in self.agents:
            if not isinstance(spec, AgentSpec):
                raise ConfigError(f"not an AgentSpec: {spec!r}")
            if spec.name in seen:
                raise ConfigError(f"duplicate agent name {spec.name!r}")
            seen.add(spec.name)
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.quiescence.idle_cycles < 1:
            raise ConfigError("idle-cycles threshold must be >= 1")
        return self

    def with_internal(self, internal):
        return MasConfig(self.agents, internal, self.seed, self.quiescence)

    def with_seed(self, seed):
        return MasConfig(self.agents, self.internal, seed, self.quiescence)


@dataclass(frozen=True)
class DeliveryReceipt:
    ok: bool
    latency_ns: int = 0
    error: Optional[str] = None


class InMemoryTransport:
    """Routes messages straight into recipient mailboxes."""

    kind = "in-memory"

    def __init__(self, routes, on_post=None):
        self.routes = routes
        self.on_post = on_post
        self._lock = threading.Lock()
        self.delivered = Counter()
        self.errors = 0
        self.accepted = 0

    def deliver(self, message):
        t0 = time.perf_counter_ns()
        agent = self.routes.get(message.recipient)
        if agent is None:
            with self._lock:
                self.errors += 1
            return DeliveryReceipt(False, time.perf_counter_ns() - t0, f"unknown recipient {message.recipient!r}")
        agent.post(message)
        with self._lock:
            self.accepted += 1
            self.delivered[(message.sender, message.recipient, message.performative)] += 1
        if self.on_post is not None:
            self.on_post(agent)
        return DeliveryReceipt(True, time.perf_counter_ns() - t0)


def deliver(transport, message):
    return transport.deliver(message)


class Mas:
    """An assembled MAS: agents with mailboxes, a transport and a trace sink.

    Assembly starts no carrier; a strategy does that.
    """

    def __init__(self, config, sink=None):
        config.validate()
        self.config = config
        self.sink = sink if sink is not None else TraceSink()
        self.rng = random.Random(config.seed)
        self.agents = {}
        for spec in config.agents:
            self.agents[spec.name] = Agent(spec, config.internal, effector=self)
        self.transport = InMemoryTransport(self.agents)

    @property
    def order(self):
        return list(self.agents.values())

    def deliver(self, message):
        return self.transport.deliver(message)

    def record(self, event):
        return self.sink.record(event)

    def progress_marker(self):
        return self.transport.accepted + sum(a.cycle for a in self.agents.values())

    def is_quiescent(self):
        threshold = self.config.quiescence.idle_cycles
        before = self.progress_marker()
        if not all(a.quiescent(threshold) for a in self.agents.values()):
            return False
        return self.progress_marker() == before

    def message_counts(self):
        return dict(self.transport.delivered)

    def stats(self):
        return {
            "sent": sum(a.sent for a in self.agents.values()),
            "delivered": sum(self.transport.delivered.values()),
            "delivery_errors": self.transport.errors,
            "dropped_events": sum(a.dropped_events for a in self.agents.values()),
            "failed_agents": sorted(a.name for a in self.agents.values() if a.failed),
            "cycles": {a.name: a.cycle for a in self.agents.values()},
        }


def assemble(config, sink=None):
    return Mas(config, sink)


@dataclass
class QuiescenceResult:
    quiesced: bool
    elapsed: float
    stats: dict

    @property
    def status(self):
        return "quiesced" if self.quiesced else "timed-out"


def await_quiescence(handle, timeout=None, poll=0.001):
    """Poll ``handle.is_quiescent()`` until it holds or ``timeout`` elapses."""
    if timeout is None:
        timeout = handle.config.quiescence.timeout
    t0 = time.perf_counter()
    deadline = t0 + timeout
    while True:
        if handle.is_quiescent():
            return QuiescenceResult(True, time.perf_counter() - t0, handle.stats())
        if time.perf_counter() >= deadline:
            return QuiescenceResult(False, time.perf_counter() - t0, handle.stats())
        time.sleep(poll)
