"""Agent model: beliefs, mailbox, intentions, plan rules and the
sense / deliberate / act control loop.

Agents never start carriers themselves. A strategy calls the stage methods
(or :meth:`Agent.step`) from whatever carrier it owns; the agent only
guarantees that its state is touched by one stage at a time.
"""
from __future__ import annotations

import logging
import os
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from . import kernels
from .tracing import TraceEvent

log = logging.getLogger(__name__)

MESSAGE_RECEIVED = "message-received"
BELIEF_UPDATED = "belief-updated"
GOAL_ADDED = "goal-added"
EVENT_KINDS = (MESSAGE_RECEIVED, BELIEF_UPDATED, GOAL_ADDED)

ACTION_KINDS = ("send", "update-belief", "add-goal", "reveal-carrier", "busy-spin", "log")

SYNCHRONOUS = "synchronous"
PIPELINED = "stage-pipelined"


class ContractViolation(RuntimeError):
    """A stage operation was invoked outside its contract."""


class PlanError(ValueError):
    """A plan rule or action is malformed."""


def is_literal(value):
    if isinstance(value, bool):
        return False
    if isinstance(value, (int, str)):
        return True
    if isinstance(value, tuple):
        return all(is_literal(v) for v in value)
    return False


def is_var(term):
    return isinstance(term, str) and term.startswith("?") and len(term) > 1


def substitute(term, bindings):
    if is_var(term):
        if term not in bindings:
            raise PlanError(f"unbound variable {term}")
        return bindings[term]
    if isinstance(term, tuple):
        return tuple(substitute(t, bindings) for t in term)
    return term


def unify(pattern, value, bindings):
    """Match ``pattern`` against ``value``; returns extended bindings or None."""
    if is_var(pattern):
        if pattern in bindings:
            return bindings if bindings[pattern] == value else None
        out = dict(bindings)
        out[pattern] = value
        return out
    if isinstance(pattern, tuple):
        if not isinstance(value, tuple) or len(value) != len(pattern):
            return None
        for p, v in zip(pattern, value):
            bindings = unify(p, v, bindings)
            if bindings is None:
                return None
        return bindings
    return bindings if pattern == value else None


@dataclass(frozen=True)
class Belief:
    key: str
    value: Any


@dataclass(frozen=True)
class Message:
    sender: str
    recipient: str
    performative: str
    payload: Any = 0
    send_seq: int = 0

    def __post_init__(self):
        if not is_literal(self.payload):
            raise PlanError(f"payload is not a literal: {self.payload!r}")


@dataclass(frozen=True)
class Event:
    kind: str
    name: str
    source: Any = None
    parallel: bool = False

    def bindings(self):
        if self.kind == MESSAGE_RECEIVED:
            msg = self.source
            return {"?sender": msg.sender, "?payload": msg.payload}
        if self.kind == BELIEF_UPDATED:
            return {"?value": self.source.value}
        return {}


@dataclass(frozen=True)
class Trigger:
    kind: str
    name: str

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise PlanError(f"unknown trigger kind {self.kind!r}")


@dataclass(frozen=True)
class GuardTerm:
    """Belief condition; ``pattern=None`` only tests that the key exists."""
    key: str
    pattern: Any = None
    negated: bool = False


@dataclass(frozen=True)
class Action:
    kind: str
    args: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if self.kind not in ACTION_KINDS:
            raise PlanError(f"unknown action kind {self.kind!r}")
        if self.kind == "busy-spin" and self.args.get("ms", 0) < 0:
            raise PlanError("busy-spin duration must be >= 0")


def send(to, performative, payload=0):
    return Action("send", {"to": to, "performative": performative, "payload": payload})


def update_belief(key, value):
    return Action("update-belief", {"key": key, "value": value})


def add_goal(goal, parallel=False):
    return Action("add-goal", {"goal": goal, "parallel": parallel})


def reveal(label=""):
    return Action("reveal-carrier", {"label": label})


def busy_spin(ms):
    return Action("busy-spin", {"ms": ms})


def log_action(text):
    return Action("log", {"text": text})


@dataclass(frozen=True)
class PlanRule:
    trigger: Trigger
    body: tuple
    guard: tuple = ()

    def __post_init__(self):
        if not self.body:
            raise PlanError(f"rule on {self.trigger} has an empty body")
        object.__setattr__(self, "body", tuple(self.body))
        object.__setattr__(self, "guard", tuple(self.guard))

    def match(self, event, beliefs):
        if event.kind != self.trigger.kind or event.name != self.trigger.name:
            return None
        bindings = event.bindings()
        for term in self.guard:
            present = term.key in beliefs and (
                term.pattern is None or unify(term.pattern, beliefs[term.key], bindings) is not None
            )
            if term.negated:
                if present:
                    return None
                continue
            if not present:
                return None
            if term.pattern is not None:
                bindings = unify(term.pattern, beliefs[term.key], bindings)
            if bindings is None:
                return None
        return bindings


@dataclass
class Intention:
    id: int
    rule: PlanRule
    bindings: dict
    spawned_parallel: bool = False
    index: int = 0

    @property
    def remaining(self):
        return self.rule.body[self.index:]

    @property
    def done(self):
        return self.index >= len(self.rule.body)


@dataclass(frozen=True)
class AgentSpec:
    name: str
    initial_beliefs: tuple = ()
    rules: tuple = ()
    initial_goals: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "initial_beliefs", tuple(self.initial_beliefs))
        object.__setattr__(self, "rules", tuple(self.rules))
        object.__setattr__(self, "initial_goals", tuple(self.initial_goals))


@dataclass(frozen=True)
class InternalModelConfig:
    mode: str = SYNCHRONOUS
    max_percepts_per_sense: int = 64
    max_actions_per_act: int = 1

    def __post_init__(self):
        if self.mode not in (SYNCHRONOUS, PIPELINED):
            raise ValueError(f"unknown internal mode {self.mode!r}")
        if self.max_percepts_per_sense < 1 or self.max_actions_per_act < 1:
            raise ValueError("percept and action counts must be >= 1")

    @property
    def actions_per_cycle(self):
        return 1 if self.mode == SYNCHRONOUS else self.max_actions_per_act


@dataclass
class Effect:
    action: Action
    receipt: Any = None
    error: Optional[str] = None


@dataclass
class StepReport:
    idle: bool
    events: list = field(default_factory=list)


@dataclass(frozen=True)
class Task:
    """One schedulable stage of one agent's cycle."""
    agent: str
    stage: str
    run: Callable[[], Any]


class Agent:
    """Runtime state of one agent.

    ``effector`` must provide ``deliver(message) -> receipt`` and
    ``record(TraceEvent) -> seq``.
    """

    def __init__(self, spec, internal=None, effector=None):
        self.spec = spec
        self.name = spec.name
        self.internal = internal or InternalModelConfig()
        self.effector = effector
        self.beliefs = {b.key: b.value for b in spec.initial_beliefs}
        self.mailbox = deque()
        self.lock = threading.Lock()
        self.pending = deque(Event(GOAL_ADDED, g) for g in spec.initial_goals)
        self.intentions = deque()
        self.next_intention = 1
        self.cycle = 0
        self.idle_streak = 0
        self.dropped_events = 0
        self.failed = False
        self.failure = None
        self.parked = False
        self._send_seq = 0
        self._events = []
        self._selection = []
        self._active = False
        self._collect = None

    # -- mailbox side, callable from any carrier

    def post(self, message):
        with self.lock:
            self.mailbox.append(message)

    def quiescent(self, threshold):
        with self.lock:
            return self.failed or (self.idle_streak >= threshold and not self.mailbox)

    # -- tracing

    def _trace(self, stage, intention=None, detail=""):
        if self.effector is None:
            return None
        ev = TraceEvent(
            seq=0,
            wall_ns=time.time_ns(),
            agent=self.name,
            cycle=self.cycle,
            stage=stage,
            intention=intention,
            carrier=threading.get_native_id(),
            process=os.getpid(),
            detail=detail,
        )
        seq = self.effector.record(ev)
        if seq is not None and self._collect is not None:
            self._collect.append(ev.with_seq(seq))
        return seq

    # -- stages

    def sense(self):
        """Drain up to M messages plus all pending internal events."""
        if self.failed:
            self._active = False
            return []
        with self.lock:
            limit = self.internal.max_percepts_per_sense
            drained = [self.mailbox.popleft() for _ in range(min(limit, len(self.mailbox)))]
            internal = list(self.pending)
            self.pending.clear()
            events = internal + [Event(MESSAGE_RECEIVED, m.performative, m) for m in drained]
            active = bool(events or self.intentions)
            if active:
                self.idle_streak = 0
                self.cycle += 1
            else:
                self.idle_streak += 1
        self._active = active
        self._events = events
        self._selection = []
        if active:
            self._trace("sense", detail=f"events={len(events)}")
        return events

    def deliberate(self, events=None):
        """Spawn intentions for ``events`` and pick the next action(s)."""
        if events is None:
            events = self._events
        if not self._active or self.failed:
            self._selection = []
            return []
        spawned = 0
        for event in events:
            for rule in self.spec.rules:
                bindings = rule.match(event, self.beliefs)
                if bindings is not None:
                    self.intentions.append(Intention(self.next_intention, rule, bindings, event.parallel))
                    self.next_intention += 1
                    spawned += 1
                    break
            else:
                self.dropped_events += 1
        selection = []
        for _ in range(min(self.internal.actions_per_cycle, len(self.intentions))):
            intention = self.intentions.popleft()
            selection.append((intention, intention.rule.body[intention.index]))
        self._selection = selection
        self._trace("deliberate", detail=f"spawned={spawned} selected={len(selection)}")
        return selection

    def act(self, selection=None):
        """Execute the selected actions; returns one :class:`Effect` per action."""
        if selection is None:
            selection = self._selection
        if not self._active or self.failed:
            return []
        if not selection:
            self._trace("act", detail="none")
            return []
        effects = []
        for pos, (intention, action) in enumerate(selection):
            self._trace("act", intention.id, f"{intention.index}:{action.kind}")
            try:
                effect = self._execute(intention, action)
            except Exception as exc:  # user action failure isolates this agent only
                self.failed = True
                self.failure = f"{type(exc).__name__}: {exc}"
                self._trace("reveal", intention.id, f"failure: {self.failure}")
                log.warning("agent %s failed: %s", self.name, self.failure)
                for other, _ in selection[pos + 1:]:
                    self.intentions.appendleft(other)
                break
            effects.append(effect)
            intention.index += 1
            if not intention.done:
                self.intentions.append(intention)
        self._selection = []
        return effects

    def _execute(self, intention, action):
        b = intention.bindings
        args = action.args
        kind = action.kind
        if kind == "send":
            self._send_seq += 1
            msg = Message(
                sender=self.name,
                recipient=substitute(args["to"], b),
                performative=substitute(args["performative"], b),
                payload=substitute(args.get("payload", 0), b),
                send_seq=self._send_seq,
            )
            receipt = self.effector.deliver(msg)
            error = getattr(receipt, "error", None)
            if error:
                self._trace("reveal", intention.id, f"delivery-error: {error}")
            return Effect(action, receipt, error)
        if kind == "update-belief":
            key = substitute(args["key"], b)
            value = substitute(args["value"], b)
            self.beliefs[key] = value
            self.pending.append(Event(BELIEF_UPDATED, key, Belief(key, value)))
        elif kind == "add-goal":
            goal = substitute(args["goal"], b)
            self.pending.append(Event(GOAL_ADDED, goal, parallel=bool(args.get("parallel"))))
        elif kind == "reveal-carrier":
            self._trace("reveal", intention.id, str(substitute(args.get("label", ""), b)))
        elif kind == "busy-spin":
            kernels.spin(args["ms"] / 1000.0)
        elif kind == "log":
            log.info("[%s] %s", self.name, substitute(args["text"], b))
        return Effect(action)

    def run_stage(self, stage):
        if stage == "sense":
            return self.sense()
        if stage == "deliberate":
            return self.deliberate()
        if stage == "act":
            return self.act()
        if stage == "step":
            return self.step()
        raise ValueError(f"unknown stage {stage!r}")

    @property
    def active(self):
        """True while the current cycle has work (set by :meth:`sense`)."""
        return self._active

    def step(self):
        """One synchronous cycle on the calling carrier."""
        collected = []
        self._collect = collected
        try:
            self.sense()
            self.deliberate()
            self.act()
        finally:
            self._collect = None
        return StepReport(idle=not self._active, events=collected)

    @property
    def sent(self):
        """Send actions attempted so far, delivered or not."""
        return self._send_seq

    def decompose_step(self):
        """Split one cycle into three chained stage tasks.

        The caller must run them in list order; each consumes its
        predecessor's output through the agent state.
        """
        if self.internal.mode != PIPELINED:
            raise ContractViolation("decompose_step requires the stage-pipelined internal mode")
        return [
            Task(self.name, "sense", self.sense),
            Task(self.name, "deliberate", self.deliberate),
            Task(self.name, "act", self.act),
        ]
