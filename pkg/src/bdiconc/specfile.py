"""MAS specification files (YAML) and the bundled example specs.

Schema::

    seed: 0                       # optional, 64-bit unsigned
    internal:                     # optional
      mode: synchronous           # or stage-pipelined
      max_percepts_per_sense: 64
      max_actions_per_act: 1
    quiescence: {idle_cycles: 3, timeout: 10.0}
    agents:
      - name: pinger
        beliefs: {count: 0}
        goals: [start]
        rules:
          - on: {goal-added: start}          # or message-received / belief-updated
            guard: [{key: count, value: 0}]  # optional; add "not: true" to negate
            do:
              - reveal-carrier: before-send
              - send: {to: ponger, performative: ping, payload: 1}
              - update-belief: {key: count, value: 1}
              - add-goal: announce           # {add-goal: g, parallel: true} spawns a new intention
              - busy-spin: 5                 # milliseconds of CPU
              - log: hello

Strings starting with ``?`` are variables. Message triggers bind ``?sender``
and ``?payload``; belief triggers bind ``?value``; guards may bind more.
YAML lists become tuples.
"""
from __future__ import annotations

import re
from importlib import resources

import yaml

from .agent import (
    ACTION_KINDS,
    Action,
    AgentSpec,
    Belief,
    GuardTerm,
    InternalModelConfig,
    PlanError,
    PlanRule,
    Trigger,
    add_goal,
    busy_spin,
    reveal,
    send,
    update_belief,
)
from .runtime import ConfigError, MasConfig, QuiescenceConfig


class SpecError(ConfigError):
    pass


def _lit(v):
    if isinstance(v, list):
        return tuple(_lit(x) for x in v)
    if isinstance(v, bool) or not isinstance(v, (int, str, tuple)):
        raise SpecError(f"not a literal (int, string or list): {v!r}")
    return v


def _unlit(v):
    if isinstance(v, tuple):
        return [_unlit(x) for x in v]
    return v


def _action(d):
    if isinstance(d, str):
        d = {d: None}
    if not isinstance(d, dict):
        raise SpecError(f"action must be a mapping: {d!r}")
    kinds = [k for k in d if k in ACTION_KINDS]
    if len(kinds) != 1:
        raise SpecError(f"action needs exactly one of {ACTION_KINDS}: {d!r}")
    kind = kinds[0]
    arg = d[kind]
    if kind == "send":
        if not isinstance(arg, dict) or "to" not in arg or "performative" not in arg:
            raise SpecError("send needs 'to' and 'performative'")
        return send(arg["to"], arg["performative"], _lit(arg.get("payload", 0)))
    if kind == "update-belief":
        if not isinstance(arg, dict) or "key" not in arg or "value" not in arg:
            raise SpecError("update-belief needs 'key' and 'value'")
        return update_belief(arg["key"], _lit(arg["value"]))
    if kind == "add-goal":
        return add_goal(str(arg), parallel=bool(d.get("parallel", False)))
    if kind == "reveal-carrier":
        return reveal("" if arg is None else str(arg))
    if kind == "busy-spin":
        if not isinstance(arg, (int, float)) or arg < 0:
            raise SpecError("busy-spin needs a non-negative duration in ms")
        return busy_spin(arg)
    return Action("log", {"text": "" if arg is None else str(arg)})


def _rule(d):
    # YAML 1.1 reads a bare `on` key as boolean true
    trigger = d.get("on", d.get(True))
    try:
        (kind, name), = trigger.items()
    except (KeyError, AttributeError, ValueError):
        raise SpecError(f"rule needs 'on: {{<event-kind>: <name>}}': {d!r}") from None
    guard = tuple(
        GuardTerm(g["key"], None if g.get("value") is None else _lit(g["value"]), bool(g.get("not", False)))
        for g in d.get("guard") or ()
    )
    try:
        return PlanRule(Trigger(kind, str(name)), tuple(_action(a) for a in d.get("do", ())), guard)
    except PlanError as exc:
        raise SpecError(str(exc)) from None


def agent_from_dict(d):
    if "name" not in d:
        raise SpecError("agent needs a name")
    beliefs = tuple(Belief(str(k), _lit(v)) for k, v in (d.get("beliefs") or {}).items())
    return AgentSpec(
        name=str(d["name"]),
        initial_beliefs=beliefs,
        rules=tuple(_rule(r) for r in d.get("rules", ())),
        initial_goals=tuple(str(g) for g in d.get("goals", ())),
    )


def _action_to_dict(a):
    args = a.args
    if a.kind == "send":
        return {"send": {"to": args["to"], "performative": args["performative"], "payload": _unlit(args["payload"])}}
    if a.kind == "update-belief":
        return {"update-belief": {"key": args["key"], "value": _unlit(args["value"])}}
    if a.kind == "add-goal":
        return {"add-goal": args["goal"], "parallel": bool(args.get("parallel"))}
    if a.kind == "reveal-carrier":
        return {"reveal-carrier": args.get("label", "")}
    if a.kind == "busy-spin":
        return {"busy-spin": args["ms"]}
    return {"log": args.get("text", "")}


def agent_to_dict(spec):
    return {
        "name": spec.name,
        "beliefs": {b.key: _unlit(b.value) for b in spec.initial_beliefs},
        "goals": list(spec.initial_goals),
        "rules": [
            {
                "on": {r.trigger.kind: r.trigger.name},
                "guard": [{"key": g.key, "value": _unlit(g.pattern), "not": g.negated} for g in r.guard],
                "do": [_action_to_dict(a) for a in r.body],
            }
            for r in spec.rules
        ],
    }


def config_from_dict(d):
    if not isinstance(d, dict) or "agents" not in d:
        raise SpecError("spec must be a mapping with an 'agents' list")
    internal = InternalModelConfig(**(d.get("internal") or {}))
    quiescence = QuiescenceConfig(**(d.get("quiescence") or {}))
    return MasConfig(
        agents=tuple(agent_from_dict(a) for a in d["agents"] or ()),
        internal=internal,
        seed=int(d.get("seed", 0)),
        quiescence=quiescence,
    ).validate()


def load_spec(path):
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise SpecError(f"{path}: {exc}") from None
    try:
        return config_from_dict(data)
    except (TypeError, ValueError) as exc:
        raise SpecError(f"{path}: {exc}") from None


def pingpong():
    text = resources.files("bdiconc.specs").joinpath("pingpong.yaml").read_text(encoding="utf-8")
    return config_from_dict(yaml.safe_load(text))


def ring(n=8):
    """Token ring of ``n`` agents; one lap, then a0 records completion."""
    if n < 2:
        raise SpecError("a ring needs at least 2 agents")
    names = [f"a{i}" for i in range(n)]
    agents = []
    for i, name in enumerate(names):
        nxt = names[(i + 1) % n]
        rules = []
        goals = ()
        if i == 0:
            goals = ("start",)
            rules.append(PlanRule(Trigger("goal-added", "start"), (reveal("start"), send(nxt, "token", 1))))
            rules.append(PlanRule(
                Trigger("message-received", "token"),
                (reveal("token back"), update_belief("laps", "?payload")),
            ))
        else:
            rules.append(PlanRule(
                Trigger("message-received", "token"),
                (reveal("token in"), send(nxt, "token", "?payload"), reveal("token out")),
            ))
        agents.append(AgentSpec(name, (), tuple(rules), goals))
    return MasConfig(tuple(agents))


def spinner(m=64, work_ms=5.0):
    """``m`` independent agents, each burning ``work_ms`` of CPU once."""
    if m < 1:
        raise SpecError("spinner needs at least one agent")
    rule = PlanRule(Trigger("goal-added", "work"), (busy_spin(work_ms), reveal("done")))
    agents = tuple(AgentSpec(f"s{i}", (), (rule,), ("work",)) for i in range(m))
    return MasConfig(agents, quiescence=QuiescenceConfig(timeout=120.0))


def resolve(name_or_path, work_ms=5.0):
    """A bundled spec name (``pingpong``, ``ring-N``, ``spinner-M``) or a YAML path."""
    if name_or_path == "pingpong":
        return pingpong()
    m = re.fullmatch(r"ring(?:-(\d+))?", name_or_path)
    if m:
        return ring(int(m.group(1) or 8))
    m = re.fullmatch(r"spinner(?:-(\d+))?", name_or_path)
    if m:
        return spinner(int(m.group(1) or 64), work_ms)
    return load_spec(name_or_path)
