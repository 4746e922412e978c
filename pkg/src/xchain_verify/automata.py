"""Interface automata: composability, products and execution fragments.

States are opaque hashable identifiers and actions are plain strings. Two
automata that mention the same action string refer to the same action.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

State = Hashable
ActionId = str
Step = tuple  # (source, action, target)


class AutomatonError(ValueError):
    pass


class UnknownStateError(AutomatonError):
    pass


class ComposabilityError(AutomatonError):
    def __init__(self, report: "ComposabilityReport", where: str = ""):
        self.report = report
        prefix = f"{where}: " if where else ""
        super().__init__(prefix + "; ".join(str(v) for v in report.violations))


@dataclass(frozen=True)
class InterfaceAutomaton:
    states: frozenset
    initial_states: frozenset
    input_actions: frozenset
    output_actions: frozenset
    internal_actions: frozenset
    steps: frozenset
    name: str = field(default="", compare=False)

    def __post_init__(self):
        for attr in ("states", "initial_states", "input_actions",
                     "output_actions", "internal_actions", "steps"):
            object.__setattr__(self, attr, frozenset(getattr(self, attr)))
        ins, outs, hid = self.input_actions, self.output_actions, self.internal_actions
        if ins & outs or ins & hid or outs & hid:
            raise AutomatonError(
                f"{self.name or 'automaton'}: action sets overlap: "
                f"{sorted(map(str, (ins & outs) | (ins & hid) | (outs & hid)))}")
        if not self.initial_states:
            raise AutomatonError(f"{self.name or 'automaton'}: no initial state")
        if not self.initial_states <= self.states:
            raise AutomatonError(f"{self.name or 'automaton'}: initial states not in states")
        actions = self.actions
        for step in self.steps:
            src, act, dst = step
            if src not in self.states or dst not in self.states:
                raise AutomatonError(f"{self.name or 'automaton'}: step {step!r} uses unknown state")
            if act not in actions:
                raise AutomatonError(f"{self.name or 'automaton'}: step {step!r} uses undeclared action")

    @property
    def actions(self) -> frozenset:
        return self.input_actions | self.output_actions | self.internal_actions

    def successors(self, state, action) -> set:
        return {dst for (src, act, dst) in self.steps if src == state and act == action}


def enabled_actions(automaton: InterfaceAutomaton, state) -> set:
    if state not in automaton.states:
        raise UnknownStateError(f"unknown state {state!r}")
    return {act for (src, act, _) in automaton.steps if src == state}


def shared_actions(a: InterfaceAutomaton, b: InterfaceAutomaton) -> set:
    return set(a.actions & b.actions)


@dataclass(frozen=True)
class Violation:
    condition: int
    description: str
    offending: frozenset

    def __str__(self):
        return f"condition {self.condition} ({self.description}): {sorted(self.offending)}"


@dataclass(frozen=True)
class ComposabilityReport:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def check_composability(a: InterfaceAutomaton, b: InterfaceAutomaton) -> ComposabilityReport:
    checks = (
        (1, "inputs intersect", a.input_actions & b.input_actions),
        (2, "outputs intersect", a.output_actions & b.output_actions),
        (3, "first internal actions visible to second", a.internal_actions & b.actions),
        (4, "second internal actions visible to first", b.internal_actions & a.actions),
    )
    return ComposabilityReport(tuple(
        Violation(n, text, frozenset(bad)) for n, text, bad in checks if bad))


def _pair(u, w, flatten_left: bool):
    if flatten_left and isinstance(u, tuple):
        return u + (w,)
    return (u, w)


def compose(a: InterfaceAutomaton, b: InterfaceAutomaton, *, _flatten: bool = False) -> InterfaceAutomaton:
    """Product of two composable automata.

    Private actions interleave; shared actions synchronise and become
    internal. Product states are ``(u, w)`` pairs.
    """
    report = check_composability(a, b)
    if not report:
        raise ComposabilityError(report, f"{a.name or 'a'} x {b.name or 'b'}")
    shared = a.actions & b.actions

    def pair(u, w):
        return _pair(u, w, _flatten)

    a_out = {}
    for (u, act, u2) in a.steps:
        a_out.setdefault(act, []).append((u, u2))
    b_out = {}
    for (w, act, w2) in b.steps:
        b_out.setdefault(act, []).append((w, w2))

    steps = set()
    for act, moves in a_out.items():
        if act in shared:
            continue
        for (u, u2) in moves:
            for w in b.states:
                steps.add((pair(u, w), act, pair(u2, w)))
    for act, moves in b_out.items():
        if act in shared:
            continue
        for (w, w2) in moves:
            for u in a.states:
                steps.add((pair(u, w), act, pair(u, w2)))
    for act in shared:
        for (u, u2) in a_out.get(act, ()):
            for (w, w2) in b_out.get(act, ()):
                steps.add((pair(u, w), act, pair(u2, w2)))

    return InterfaceAutomaton(
        states={pair(u, w) for u in a.states for w in b.states},
        initial_states={pair(u, w) for u in a.initial_states for w in b.initial_states},
        input_actions=(a.input_actions | b.input_actions) - shared,
        output_actions=(a.output_actions | b.output_actions) - shared,
        internal_actions=a.internal_actions | b.internal_actions | shared,
        steps=steps,
        name=f"{a.name}*{b.name}" if a.name and b.name else "",
    )


def compose_all(automata: Sequence[InterfaceAutomaton]) -> InterfaceAutomaton:
    """Left-fold product; states are flat tuples in list order."""
    if not automata:
        raise AutomatonError("compose_all needs at least one automaton")
    if len(automata) == 1:
        return automata[0]
    result = automata[0]
    for i, nxt in enumerate(automata[1:], start=1):
        report = check_composability(result, nxt)
        if not report:
            raise ComposabilityError(
                report, f"cannot compose {nxt.name or f'automaton {i}'} onto "
                        f"{result.name or 'the first ' + str(i) + ' automata'}")
        result = compose(result, nxt, _flatten=i > 1)
    return result


def reachable_states(automaton: InterfaceAutomaton) -> set:
    succ = {}
    for (src, _, dst) in automaton.steps:
        succ.setdefault(src, set()).add(dst)
    seen = set(automaton.initial_states)
    frontier = list(seen)
    while frontier:
        s = frontier.pop()
        for t in succ.get(s, ()):
            if t not in seen:
                seen.add(t)
                frontier.append(t)
    return seen


@dataclass(frozen=True)
class ExecutionFragment:
    """Alternating states and actions ``v0, a0, v1, ..., vt``."""
    states: tuple
    actions: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "actions", tuple(self.actions))
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("a fragment has exactly one more state than actions")

    @classmethod
    def from_sequence(cls, seq: Iterable) -> "ExecutionFragment":
        seq = list(seq)
        return cls(tuple(seq[0::2]), tuple(seq[1::2]))

    def triples(self):
        return zip(self.states, self.actions, self.states[1:])

    def prefix(self, n: int) -> "ExecutionFragment":
        return ExecutionFragment(self.states[:n + 1], self.actions[:n])

    def __len__(self):
        return len(self.actions)


@dataclass(frozen=True)
class FragmentVerdict:
    valid: bool
    index: int | None = None  # first offending step index

    def __bool__(self):
        return self.valid


def validate_fragment(automaton: InterfaceAutomaton, fragment: ExecutionFragment) -> FragmentVerdict:
    if fragment.states[0] not in automaton.states:
        return FragmentVerdict(False, 0)
    for i, triple in enumerate(fragment.triples()):
        if triple not in automaton.steps:
            return FragmentVerdict(False, i)
    return FragmentVerdict(True)
