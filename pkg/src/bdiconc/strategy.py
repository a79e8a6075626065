"""External concurrency models: how agent control loops map onto carriers.

Six strategies share one interface (:func:`launch` returning an
:class:`ExecutionHandle`):

=============  ==============================================================
``1a1t``       one OS thread per agent, each running its own loop
``aa1t``       one thread, cooperative round-robin by stage or by whole step
``aa1el``      one event loop (single-carrier FIFO of agent tasks)
``aa1e-fixed`` executor with N carriers sharing one FIFO
``aa1e-var``   executor whose carrier count follows the runnable count
``1a1p``       one child process per agent, messages over loopback TCP
=============  ==============================================================
"""
from __future__ import annotations

import itertools
import logging
import os
import threading
from collections import deque
from dataclasses import dataclass
from typing import Optional

from .agent import PIPELINED
from .runtime import ConfigError, Mas, await_quiescence
from .tracing import TraceSink

log = logging.getLogger(__name__)

STAGE_POLICY = "stage"
STEP_POLICY = "step"
PARK_INTERVAL = 0.001
SHRINK_GRACE = 0.010

FAMILIES = ("1a1t", "aa1t", "aa1el", "aa1e-fixed", "aa1e-var", "1a1p")


class StrategyError(ConfigError):
    pass


class EnvironmentUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class StrategyKind:
    family: str
    policy: Optional[str] = None
    n: Optional[int] = None
    lo: Optional[int] = None
    hi: Optional[int] = None
    port: Optional[int] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise StrategyError(f"unknown strategy family {self.family!r}")
        if self.family == "aa1t" and self.policy not in (STAGE_POLICY, STEP_POLICY):
            raise StrategyError(f"aa1t policy must be 'stage' or 'step', got {self.policy!r}")
        if self.family == "aa1e-fixed" and (self.n is None or self.n < 1):
            raise StrategyError(f"aa1e-fixed needs N >= 1, got {self.n}")
        if self.family == "aa1e-var" and (self.lo is None or self.hi is None or not 1 <= self.lo <= self.hi):
            raise StrategyError(f"aa1e-var needs 1 <= MIN <= MAX, got {self.lo}:{self.hi}")

    @property
    def single_flow(self):
        return self.family in ("aa1t", "aa1el") or (self.family == "aa1e-fixed" and self.n == 1)

    def __str__(self):
        if self.family == "aa1t":
            return f"aa1t:{self.policy}"
        if self.family == "aa1e-fixed":
            return f"aa1e-fixed:{self.n}"
        if self.family == "aa1e-var":
            return f"aa1e-var:{self.lo}:{self.hi}"
        if self.family == "1a1p":
            return f"1a1p:{self.port or 0}"
        return self.family


def _count(text, what):
    if text == "cores":
        return os.cpu_count() or 1
    try:
        return int(text)
    except ValueError:
        raise StrategyError(f"{what} must be an integer, got {text!r}") from None


def parse_strategy(text):
    """Parse ``1a1t | aa1t[:stage|:step] | aa1el | aa1e-fixed:N | aa1e-var:MIN:MAX | 1a1p[:PORT]``."""
    parts = text.strip().lower().split(":")
    head, args = parts[0], parts[1:]
    if head == "1a1t" and not args:
        return StrategyKind("1a1t")
    if head == "aa1t" and len(args) <= 1:
        return StrategyKind("aa1t", policy=args[0] if args else STAGE_POLICY)
    if head == "aa1el" and not args:
        return StrategyKind("aa1el")
    if head == "aa1e-fixed" and len(args) == 1:
        return StrategyKind("aa1e-fixed", n=_count(args[0], "N"))
    if head == "aa1e-var" and len(args) == 2:
        return StrategyKind("aa1e-var", lo=_count(args[0], "MIN"), hi=_count(args[1], "MAX"))
    if head == "1a1p" and len(args) <= 1:
        port = _count(args[0], "PORT") if args else 0
        if not 0 <= port < 65536:
            raise StrategyError(f"port out of range: {port}")
        return StrategyKind("1a1p", port=port)
    raise StrategyError(f"unknown strategy {text!r}")


def aa1t_schedule(agent_order, policy=STAGE_POLICY):
    """Endless round-robin of (agent, stage) items for the single-thread model.

    ``stage`` policy yields every agent's sense, then every deliberate, then
    every act; ``step`` policy yields one whole step per agent.
    """
    agents = list(agent_order)
    if not agents:
        return
    if policy == STAGE_POLICY:
        stages = ("sense", "deliberate", "act")
    elif policy == STEP_POLICY:
        stages = ("step",)
    else:
        raise StrategyError(f"unknown aa1t policy {policy!r}")
    for stage, agent in itertools.cycle([(s, a) for s in stages for a in agents]):
        yield agent, stage


# -- schedulers


@dataclass(frozen=True)
class Ticket:
    id: int
    accepted: bool


def clamp_carriers(runnable, lo, hi):
    return max(lo, min(runnable, hi))


class _FifoScheduler:
    """A FIFO task queue drained by pool carriers."""

    def __init__(self):
        self._queue = deque()
        self._cond = threading.Condition()
        self._tickets = itertools.count(1)
        self._threads = []
        self._state = "created"
        self.executed = 0
        self.errors = 0
        self.running = 0
        self.max_in_flight = 0
        self.live = 0
        self.live_high_water = 0
        self.live_low_water = None
        self.carrier_ids = set()

    @property
    def is_running(self):
        return self._state == "running"

    def enqueue(self, task):
        with self._cond:
            if self._state == "stopped":
                return Ticket(next(self._tickets), False)
            self._queue.append(task)
            self._on_enqueue()
            self._cond.notify()
            return Ticket(next(self._tickets), True)

    def _on_enqueue(self):
        pass

    def _spawn(self):
        t = threading.Thread(target=self._worker, name=f"{type(self).__name__}-{len(self._threads)}", daemon=True)
        self.live += 1
        self.live_high_water = max(self.live_high_water, self.live)
        self._threads.append(t)
        t.start()

    def _note_live(self):
        if self.live_low_water is None or self.live < self.live_low_water:
            self.live_low_water = self.live

    def _next_task(self):
        """Called with the condition held; returns a task or None to retire."""
        while not self._queue:
            if self._state == "stopped":
                return None
            self._cond.wait()
        return self._queue.popleft()

    def _worker(self):
        with self._cond:
            self.carrier_ids.add(threading.get_native_id())
        while True:
            with self._cond:
                task = None if self._state == "stopped" else self._next_task()
                if task is None:
                    self.live -= 1
                    self._cond.notify_all()
                    return
                self.running += 1
                self.max_in_flight = max(self.max_in_flight, self.running)
            try:
                task()
            except Exception:
                self.errors += 1
                log.exception("task failed")
            finally:
                with self._cond:
                    self.running -= 1
                    self.executed += 1

    def stop(self):
        with self._cond:
            if self._state == "stopped":
                return
            self._state = "stopped"
            self._queue.clear()
            self._cond.notify_all()
        me = threading.current_thread()
        for t in list(self._threads):
            if t is not me:
                t.join()

    def stats(self):
        return {
            "tasks_executed": self.executed,
            "task_errors": self.errors,
            "carrier_high_water": self.live_high_water,
            "max_in_flight": self.max_in_flight,
            "distinct_carriers": len(self.carrier_ids),
        }


class EventLoop(_FifoScheduler):
    """Single carrier executing tasks strictly in enqueue order."""

    def start(self):
        with self._cond:
            if self._state != "created":
                return
            self._state = "running"
            self._spawn()


class FixedExecutor(_FifoScheduler):
    def __init__(self, n):
        if n < 1:
            raise StrategyError(f"executor needs N >= 1, got {n}")
        super().__init__()
        self.n = n

    def start(self):
        with self._cond:
            if self._state != "created":
                return
            self._state = "running"
            for _ in range(self.n):
                self._spawn()


class VariableExecutor(_FifoScheduler):
    """Executor whose carrier count tracks clamp(runnable, min, max).

    Grows eagerly on enqueue; a carrier retires only after idling for
    ``grace`` seconds while the pool is above target. Running tasks are
    never interrupted.
    """

    def __init__(self, lo, hi, grace=SHRINK_GRACE):
        if not 1 <= lo <= hi:
            raise StrategyError(f"variable executor needs 1 <= min <= max, got {lo}:{hi}")
        super().__init__()
        self.lo = lo
        self.hi = hi
        self.grace = grace

    def start(self):
        with self._cond:
            if self._state != "created":
                return
            self._state = "running"
            self._resize_locked(len(self._queue))

    def target(self, runnable):
        return clamp_carriers(runnable, self.lo, self.hi)

    def resize(self, runnable):
        with self._cond:
            return self._resize_locked(runnable)

    def _resize_locked(self, runnable):
        target = self.target(runnable)
        if self._state == "running":
            while self.live < target:
                self._spawn()
        return target

    def _on_enqueue(self):
        if self._state == "running":
            self._resize_locked(len(self._queue) + self.running)

    def _next_task(self):
        while not self._queue:
            if self._state == "stopped":
                return None
            if not self._cond.wait(self.grace):
                if self.live > self.target(len(self._queue) + self.running):
                    self._note_live_after_retire()
                    return None
        return self._queue.popleft()

    def _note_live_after_retire(self):
        # live is decremented by the caller; record the post-retirement count
        low = self.live - 1
        if self.live_low_water is None or low < self.live_low_water:
            self.live_low_water = low

    def stats(self):
        s = super().stats()
        s["carrier_low_water"] = self.lo if self.live_low_water is None else self.live_low_water
        s["live"] = self.live
        return s


def resize(executor, runnable):
    return executor.resize(runnable)


def enqueue(target, task):
    return target.enqueue(task)


# -- drivers


class _Driver:
    def __init__(self, mas, kind):
        self.mas = mas
        self.kind = kind
        self.threshold = mas.config.quiescence.idle_cycles
        self._stopping = threading.Event()

    def is_quiescent(self):
        return self.mas.is_quiescent()

    def stats(self):
        return self.mas.stats()


class OneAgentOneThread(_Driver):
    def start(self):
        self._wake = {a.name: threading.Event() for a in self.mas.order}
        self.mas.transport.on_post = lambda agent: self._wake[agent.name].set()
        self._threads = [
            threading.Thread(target=self._loop, args=(a,), name=f"agent-{a.name}", daemon=True)
            for a in self.mas.order
        ]
        for t in self._threads:
            t.start()

    def _loop(self, agent):
        wake = self._wake[agent.name]
        while not self._stopping.is_set():
            wake.clear()
            agent.step()
            if agent.failed:
                return
            if not agent.active:
                wake.wait(PARK_INTERVAL)

    def stop(self):
        self._stopping.set()
        for t in self._threads:
            t.join()

    def stats(self):
        s = super().stats()
        s["carrier_high_water"] = len(self._threads)
        return s


class AllAgentsOneThread(_Driver):
    def start(self):
        self._rounds = 0
        self._thread = threading.Thread(target=self._loop, name="aa1t", daemon=True)
        self._thread.start()

    def _loop(self):
        agents = self.mas.order
        if not agents:
            return
        by_name = {a.name: a for a in agents}
        per_round = len(agents) * (3 if self.kind.policy == STAGE_POLICY else 1)
        schedule = aa1t_schedule([a.name for a in agents], self.kind.policy)
        while not self._stopping.is_set():
            busy = False
            for _ in range(per_round):
                name, stage = next(schedule)
                agent = by_name[name]
                agent.run_stage(stage)
                if stage in ("sense", "step") and agent.active:
                    busy = True
            self._rounds += 1
            if not busy:
                self._stopping.wait(PARK_INTERVAL)

    def stop(self):
        self._stopping.set()
        self._thread.join()

    def stats(self):
        s = super().stats()
        s["carrier_high_water"] = 1
        s["rounds"] = self._rounds
        return s


class TaskStrategy(_Driver):
    """Agents as self-re-enqueueing tasks on an event loop or executor.

    Each agent has at most one task queued or running at any time; an
    agent idle for the quiescence threshold parks and is re-enqueued when
    a message arrives.
    """

    def __init__(self, mas, kind, scheduler):
        super().__init__(mas, kind)
        self.scheduler = scheduler
        self.pipelined = mas.config.internal.mode == PIPELINED

    def start(self):
        self.mas.transport.on_post = self._wake
        order = list(self.mas.order)
        self.mas.rng.shuffle(order)
        for agent in order:
            self._enqueue_cycle(agent)
        self.scheduler.start()

    def _enqueue_cycle(self, agent):
        if self.pipelined:
            sense, deliberate, act = agent.decompose_step()
            self.scheduler.enqueue(lambda: self._run_sense(agent, sense, deliberate, act))
        else:
            self.scheduler.enqueue(lambda: self._run_step(agent))

    def _run_step(self, agent):
        agent.step()
        self._after_cycle(agent)

    def _run_sense(self, agent, sense, deliberate, act):
        sense.run()
        if agent.active:
            self.scheduler.enqueue(lambda: self._run_deliberate(agent, deliberate, act))
        else:
            self._after_cycle(agent)

    def _run_deliberate(self, agent, deliberate, act):
        deliberate.run()
        self.scheduler.enqueue(lambda: self._run_act(agent, act))

    def _run_act(self, agent, act):
        act.run()
        self._after_cycle(agent)

    def _after_cycle(self, agent):
        if self._stopping.is_set():
            return
        with agent.lock:
            if agent.failed or (agent.idle_streak >= self.threshold and not agent.mailbox):
                agent.parked = True
                return
        self._enqueue_cycle(agent)

    def _wake(self, agent):
        with agent.lock:
            if not agent.parked:
                return
            agent.parked = False
        self._enqueue_cycle(agent)

    def stop(self):
        self._stopping.set()
        self.scheduler.stop()

    def stats(self):
        s = super().stats()
        s.update(self.scheduler.stats())
        return s


class ExecutionHandle:
    """Controls one launched run: start, await quiescence, stop."""

    def __init__(self, strategy, config, sink, driver, mas=None):
        self.strategy = strategy
        self.config = config
        self.sink = sink
        self.driver = driver
        self.mas = mas
        self._started = False
        self._stopped = False
        self._lock = threading.Lock()

    def start(self):
        with self._lock:
            if self._started:
                return
            self._started = True
        self.driver.start()

    def is_quiescent(self):
        return self.driver.is_quiescent()

    def await_quiescence(self, timeout=None):
        return await_quiescence(self, timeout)

    def stop(self):
        with self._lock:
            if self._stopped:
                return
            self._stopped = True
        if self._started:
            self.driver.stop()
        self.sink.close()

    def stats(self):
        s = self.driver.stats()
        s["strategy"] = str(self.strategy)
        return s

    def message_counts(self):
        return self.driver.message_counts() if hasattr(self.driver, "message_counts") else self.mas.message_counts()

    def trace(self):
        return self.sink.snapshot()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def make_scheduler(kind):
    if kind.family == "aa1el":
        return EventLoop()
    if kind.family == "aa1e-fixed":
        return FixedExecutor(kind.n)
    if kind.family == "aa1e-var":
        return VariableExecutor(kind.lo, kind.hi)
    raise StrategyError(f"{kind} is not task-based")


def launch(config, strategy, sink=None):
    """Start every agent of ``config`` under ``strategy``; returns a running handle."""
    if isinstance(strategy, str):
        strategy = parse_strategy(strategy)
    config.validate()
    sink = sink if sink is not None else TraceSink()
    if strategy.family == "1a1p":
        from .process import ProcessDriver

        driver = ProcessDriver(config, strategy, sink)
        handle = ExecutionHandle(strategy, config, sink, driver)
    else:
        mas = Mas(config, sink)
        if strategy.family == "1a1t":
            driver = OneAgentOneThread(mas, strategy)
        elif strategy.family == "aa1t":
            driver = AllAgentsOneThread(mas, strategy)
        else:
            driver = TaskStrategy(mas, strategy, make_scheduler(strategy))
        handle = ExecutionHandle(strategy, config, sink, driver, mas)
    try:
        handle.start()
    except Exception:
        handle.stop()
        raise
    return handle
