"""Process terms and brute-force interleaving enumeration.

Terms are built from atoms, sequential composition, parallel composition
and guarded tail recursion. Three disciplines constrain how parallel
components may interleave:

* ``free``: any interleaving that respects each component's own order
  (independent threads);
* ``event-loop``: one carrier, FIFO queue, each finished task enqueues its
  component's successor;
* ``executor``: N carriers over the same FIFO queue; a task's label is
  observed when it completes.

Text syntax: ``a.b.c | x.y.z``; ``.`` binds tighter than ``|``; parentheses
group; ``@X(t)`` is the recursive process ``X = t . X``; ``0`` is idle.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from functools import lru_cache

DEFAULT_DEPTH = 3

FREE = "free"
EVENT_LOOP = "event-loop"
EXECUTOR = "executor"
DISCIPLINES = (FREE, EVENT_LOOP, EXECUTOR)


class TermError(ValueError):
    pass


@dataclass(frozen=True)
class Idle:
    def __str__(self):
        return "0"


IDLE = Idle()


@dataclass(frozen=True)
class Atom:
    label: str

    def __str__(self):
        return self.label


@dataclass(frozen=True)
class Seq:
    first: object
    then: object

    def __str__(self):
        return f"{_wrap(self.first, Par)}.{_wrap(self.then, Par)}"


@dataclass(frozen=True)
class Par:
    parts: tuple

    def __str__(self):
        return " | ".join(str(p) for p in self.parts)


@dataclass(frozen=True)
class Rec:
    """``name = body . name``; body must start with an atom."""
    name: str
    body: object

    def __post_init__(self):
        if not _guarded(self.body):
            raise TermError(f"recursion @{self.name} is unguarded: body must begin with an atom")

    def __str__(self):
        return f"@{self.name}({self.body})"


def _wrap(t, kind):
    return f"({t})" if isinstance(t, kind) else str(t)


def _guarded(t):
    if isinstance(t, Atom):
        return True
    if isinstance(t, Seq):
        return _guarded(t.first)
    if isinstance(t, Par):
        return bool(t.parts) and all(_guarded(p) for p in t.parts)
    if isinstance(t, Rec):
        return _guarded(t.body)
    return False


def seq(*terms):
    terms = [t if not isinstance(t, str) else Atom(t) for t in terms]
    terms = [t for t in terms if t != IDLE]
    if not terms:
        return IDLE
    out = terms[-1]
    for t in reversed(terms[:-1]):
        out = Seq(t, out)
    return out


def par(*terms):
    terms = tuple(t if not isinstance(t, str) else Atom(t) for t in terms)
    terms = tuple(t for t in terms if t != IDLE)
    if not terms:
        return IDLE
    if len(terms) == 1:
        return terms[0]
    return Par(terms)


def chain(labels):
    """Sequential term over ``labels``."""
    return seq(*[Atom(str(x)) for x in labels])


# -- parsing

_TOKEN = re.compile(r"\s*(?:(@)|([A-Za-z0-9_:\-]+)|(.))")


def _tokenize(text):
    pos = 0
    out = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            break
        if m.group(1):
            out.append(("@", "@"))
        elif m.group(2):
            out.append(("id", m.group(2)))
        elif m.group(3) in ".|()":
            out.append((m.group(3), m.group(3)))
        else:
            raise TermError(f"unexpected character {m.group(3)!r} at {m.start(3)}")
        pos = m.end()
    return out


def parse_term(text):
    tokens = _tokenize(text)
    if not tokens:
        raise TermError("empty term")
    pos = 0

    def peek():
        return tokens[pos][0] if pos < len(tokens) else None

    def expect(kind):
        nonlocal pos
        if peek() != kind:
            got = tokens[pos][1] if pos < len(tokens) else "end of input"
            raise TermError(f"expected {kind!r}, got {got!r}")
        pos += 1
        return tokens[pos - 1][1]

    def parallel():
        parts = [sequence()]
        while peek() == "|":
            expect("|")
            parts.append(sequence())
        return parts[0] if len(parts) == 1 else Par(tuple(parts))

    def sequence():
        units = [unit()]
        while peek() == ".":
            expect(".")
            units.append(unit())
        return seq(*units)

    def unit():
        kind = peek()
        if kind == "id":
            label = expect("id")
            return IDLE if label == "0" else Atom(label)
        if kind == "(":
            expect("(")
            t = parallel()
            expect(")")
            return t
        if kind == "@":
            expect("@")
            name = expect("id")
            expect("(")
            body = parallel()
            expect(")")
            return Rec(name, body)
        got = tokens[pos][1] if pos < len(tokens) else "end of input"
        raise TermError(f"unexpected {got!r}")

    term = parallel()
    if pos != len(tokens):
        raise TermError(f"trailing input at token {tokens[pos][1]!r}")
    return term


def as_term(term):
    return parse_term(term) if isinstance(term, str) else term


# -- semantics


def has_recursion(t):
    if isinstance(t, Rec):
        return True
    if isinstance(t, Seq):
        return has_recursion(t.first) or has_recursion(t.then)
    if isinstance(t, Par):
        return any(has_recursion(p) for p in t.parts)
    return False


def unroll(t, depth):
    """Replace every recursion by ``depth`` copies of its body."""
    if isinstance(t, Rec):
        body = unroll(t.body, depth)
        return seq(*([body] * depth))
    if isinstance(t, Seq):
        return seq(unroll(t.first, depth), unroll(t.then, depth))
    if isinstance(t, Par):
        return par(*(unroll(p, depth) for p in t.parts))
    return t


def _finite(term, depth):
    term = as_term(term)
    if has_recursion(term):
        if depth is None:
            raise TermError("recursive term needs a depth bound")
        if depth < 0:
            raise TermError("depth bound must be >= 0")
        term = unroll(term, depth)
    return term


def steps(t):
    """Small-step transitions: list of (label, successor)."""
    if isinstance(t, Atom):
        return [(t.label, IDLE)]
    if isinstance(t, Seq):
        return [(label, seq(nxt, t.then)) for label, nxt in steps(t.first)]
    if isinstance(t, Par):
        out = []
        for i, p in enumerate(t.parts):
            for label, nxt in steps(p):
                out.append((label, par(*t.parts[:i], nxt, *t.parts[i + 1:])))
        return out
    if isinstance(t, Rec):
        raise TermError("unroll recursion before stepping")
    return []


@dataclass(frozen=True)
class InterleavingSet:
    sequences: frozenset
    discipline: str

    def __len__(self):
        return len(self.sequences)

    def __contains__(self, item):
        return tuple(item) in self.sequences

    def __iter__(self):
        return iter(sorted(self.sequences))

    def sorted(self):
        return sorted(self.sequences)


def enumerate_free(term, depth=None):
    """Every maximal trace of ``term``: the linear extensions of its components."""
    term = _finite(term, depth)

    @lru_cache(maxsize=None)
    def traces(t):
        succ = steps(t)
        if not succ:
            return frozenset([()])
        out = set()
        for label, nxt in succ:
            for rest in traces(nxt):
                out.add((label,) + rest)
        return frozenset(out)

    return InterleavingSet(traces(term), FREE)


def labels(t):
    t = as_term(t)
    if isinstance(t, Atom):
        return {t.label}
    if isinstance(t, Seq):
        return labels(t.first) | labels(t.then)
    if isinstance(t, (Par,)):
        return set().union(*(labels(p) for p in t.parts))
    if isinstance(t, Rec):
        return labels(t.body)
    return set()


def _linear(t):
    if t == IDLE:
        return []
    if isinstance(t, Atom):
        return [t.label]
    if isinstance(t, Seq):
        return _linear(t.first) + _linear(t.then)
    raise TermError(f"component {t} is not sequential")


def components_of(term, depth=None):
    """Split a term into sequential components (label lists)."""
    if isinstance(term, (list, tuple)):
        out = []
        for c in term:
            if isinstance(c, (list, tuple)):
                out.append([str(x) for x in c])
            else:
                out.append(_linear(_finite(c, depth)))
        return out
    term = _finite(term, depth)
    parts = term.parts if isinstance(term, Par) else (term,)
    return [_linear(p) for p in parts if p != IDLE]


def _orders(k, queue_orders):
    if queue_orders is None:
        return list(itertools.permutations(range(k)))
    orders = [tuple(o) for o in queue_orders]
    for o in orders:
        if sorted(o) != list(range(k)):
            raise TermError(f"queue order {o} is not a permutation of the components")
    return orders


def _run_event_loop(comps, order):
    queue = list(order)
    pos = [0] * len(comps)
    out = []
    while queue:
        c = queue.pop(0)
        out.append(comps[c][pos[c]])
        pos[c] += 1
        if pos[c] < len(comps[c]):
            queue.append(c)
    return tuple(out)


def enumerate_event_loop(components, queue_orders=None, depth=None):
    """One sequence per initial queue order under self-re-enqueueing tasks."""
    comps = [c for c in components_of(components, depth) if c]
    seqs = {_run_event_loop(comps, o) for o in _orders(len(comps), queue_orders)}
    return InterleavingSet(frozenset(seqs), EVENT_LOOP)


def _executor_settle(n, queue, running):
    queue = list(queue)
    running = set(running)
    while queue and len(running) < n:
        running.add(queue.pop(0))
    return tuple(queue), frozenset(running)


def enumerate_executor(components, n, depth=None, queue_orders=None):
    """Completion orders of self-re-enqueueing components on ``n`` carriers."""
    if n < 1:
        raise TermError(f"executor needs N >= 1, got {n}")
    comps = [c for c in components_of(components, depth) if c]

    @lru_cache(maxsize=None)
    def traces(queue, running, pos):
        if not running:
            return frozenset([()])
        out = set()
        for c in running:
            label = comps[c][pos[c]]
            npos = pos[:c] + (pos[c] + 1,) + pos[c + 1:]
            nqueue = queue + ((c,) if npos[c] < len(comps[c]) else ())
            q2, r2 = _executor_settle(n, nqueue, running - {c})
            for rest in traces(q2, r2, npos):
                out.add((label,) + rest)
        return frozenset(out)

    seqs = set()
    for order in _orders(len(comps), queue_orders):
        q, r = _executor_settle(n, order, ())
        seqs |= traces(q, r, (0,) * len(comps))
    return InterleavingSet(frozenset(seqs), EXECUTOR)


def enumerate_discipline(term, discipline, n=None, depth=None):
    if discipline == FREE:
        return enumerate_free(term, depth)
    if discipline == EVENT_LOOP:
        return enumerate_event_loop(term, depth=depth)
    if discipline == EXECUTOR:
        if n is None:
            raise TermError("executor discipline needs N")
        return enumerate_executor(term, n, depth)
    raise TermError(f"unknown discipline {discipline!r}")


def is_admissible(sequence, term, discipline=FREE, n=None, depth=None):
    """True iff ``sequence`` is one of the interleavings ``discipline`` allows.

    Decided by simulating the discipline along the sequence, so it agrees
    with membership in :func:`enumerate_discipline` without materialising
    the whole set.
    """
    sequence = tuple(sequence)
    if isinstance(term, (list, tuple)):
        comps = components_of(term)
        known = set(itertools.chain.from_iterable(comps))
        term = par(*(chain(c) for c in comps))
    else:
        term = _finite(term, depth)
        known = labels(term)
    unknown = set(sequence) - known
    if unknown:
        raise TermError(f"labels not in term: {sorted(unknown)}")
    if discipline == FREE:
        states = {term}
        for label in sequence:
            states = {nxt for t in states for lab, nxt in steps(t) if lab == label}
            if not states:
                return False
        return IDLE in states
    comps = [c for c in components_of(term) if c]
    if discipline == EVENT_LOOP:
        return any(_run_event_loop(comps, o) == sequence for o in _orders(len(comps), None))
    if discipline == EXECUTOR:
        if n is None or n < 1:
            raise TermError("executor discipline needs N >= 1")
        states = set()
        for order in _orders(len(comps), None):
            q, r = _executor_settle(n, order, ())
            states.add((q, r, (0,) * len(comps)))
        for label in sequence:
            nxt_states = set()
            for queue, running, pos in states:
                for c in running:
                    if comps[c][pos[c]] != label:
                        continue
                    npos = pos[:c] + (pos[c] + 1,) + pos[c + 1:]
                    nqueue = queue + ((c,) if npos[c] < len(comps[c]) else ())
                    q2, r2 = _executor_settle(n, nqueue, running - {c})
                    nxt_states.add((q2, r2, npos))
            states = nxt_states
            if not states:
                return False
        return any(not running for _, running, _ in states)
    raise TermError(f"unknown discipline {discipline!r}")
