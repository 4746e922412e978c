"""Synchronous four-phase round execution.

Each round runs: (1) send, (2) contract-local, (3) read, (4) party-local.
Strategies are called in phase 4 and the messages they stage go out in
phase 1 of the following round; the very first staging call happens in a
round-0 party-local phase.

Every source of nondeterminism (delivery delay, intra-round message order)
goes through a :class:`Chooser`, so an execution is fully determined by its
bindings plus the list of choices made. Replaying the same choices
reproduces the same trace.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

from .automata import ExecutionFragment, InterfaceAutomaton
from .values import KnowledgeSet, KnowledgeViolation, sort_key


# -- messages and strategy outputs --------------------------------------------


@dataclass(frozen=True)
class Message:
    sender: int
    target: int
    function: str
    payload: tuple
    send_round: int
    deliver_round: int


@dataclass(frozen=True)
class Send:
    """A contract call staged by a strategy for the next send phase."""
    sender: int
    target: int
    function: str
    payload: tuple = ()


@dataclass(frozen=True)
class Disclose:
    """Hidden party-to-party channel; only deviating strategies use it."""
    sender: int
    recipient: int
    values: tuple


@dataclass(frozen=True)
class StrategyContext:
    parties: tuple            # controlled party indices
    party_names: tuple
    contract_names: tuple
    party_inputs: tuple       # the full input party vector
    contract_inputs: tuple
    delta: int
    params: dict = field(default_factory=dict, compare=False)

    @property
    def me(self) -> int:
        return self.parties[0]


class PartyStrategy:
    """Deterministic policy for one party (or a coalition, for joint ones).

    Subclasses implement :meth:`act`. Local state must be treated as an
    immutable value: return a new one rather than mutating.
    """

    name = "idle"
    ref = "idle"
    joint = False

    def start(self, ctx: StrategyContext) -> Any:
        return None

    def act(self, ctx: StrategyContext, rnd: int, local: Any,
            knowledge: KnowledgeSet, observed: tuple) -> tuple[list, Any]:
        """Return ``(outputs, new_local)`` to stage for round ``rnd``."""
        return [], local

    def idle(self, ctx: StrategyContext, rnd: int, local: Any) -> bool:
        """True once the strategy will never emit again after round ``rnd``."""
        return True

    def __repr__(self):
        return f"<{type(self).__name__} {self.ref}>"


@dataclass(frozen=True)
class Binding:
    strategy: PartyStrategy
    context: StrategyContext

    @property
    def parties(self) -> tuple:
        return self.context.parties


# -- contracts ----------------------------------------------------------------


@dataclass(frozen=True)
class ContractStep:
    state: Any
    action: str | None      # automaton action id for the step taken
    published: tuple = ()


class Contract:
    """Deterministic contract machine driven by the scheduler.

    ``apply`` returns None for calls that are not enabled; the scheduler
    consumes and logs them without changing state.
    """

    name: str

    def initial(self, input_value) -> Any:
        raise NotImplementedError

    def apply(self, state, message: Message, rnd: int) -> ContractStep | None:
        raise NotImplementedError

    def tick(self, state, rnd: int) -> ContractStep | None:
        return None

    def output(self, state):
        raise NotImplementedError

    def public_values(self, state) -> tuple:
        return ()

    def pending(self, state) -> bool:
        return False

    def phase(self, state):
        return state

    def describe(self, state) -> str:
        return str(self.phase(state))

    def automaton(self, party_names: Sequence[str]) -> InterfaceAutomaton:
        raise NotImplementedError


class AutomatonContract(Contract):
    """Contract given as an explicit deterministic interface automaton.

    A call whose function name is an input action enabled in the current
    state takes that step; payload is ignored. Enabled internal actions
    fire on the contract-local tick, smallest action id first. Output
    contract values are the state ids themselves.
    """

    def __init__(self, name: str, automaton: InterfaceAutomaton):
        self.name = name
        self._automaton = automaton
        self._next = {}
        for (src, act, dst) in automaton.steps:
            if (src, act) in self._next and self._next[(src, act)] != dst:
                raise ValueError(f"contract {name} is nondeterministic on {(src, act)!r}")
            self._next[(src, act)] = dst

    def __reduce__(self):
        return (AutomatonContract, (self.name, self._automaton))

    def initial(self, input_value):
        if input_value not in self._automaton.states:
            raise ValueError(f"{input_value!r} is not a state of contract {self.name}")
        return input_value

    def apply(self, state, message, rnd):
        if message.function not in self._automaton.input_actions:
            return None
        dst = self._next.get((state, message.function))
        return None if dst is None else ContractStep(dst, message.function)

    def tick(self, state, rnd):
        for act in sorted(self._automaton.internal_actions):
            dst = self._next.get((state, act))
            if dst is not None:
                return ContractStep(dst, act)
        return None

    def pending(self, state):
        return any((state, act) in self._next for act in self._automaton.internal_actions)

    def output(self, state):
        return state

    def automaton(self, party_names=()):
        return self._automaton


# -- trace --------------------------------------------------------------------


TRACE_FIELDS = ("round", "phase", "actor", "action", "payload", "state", "step")


@dataclass(frozen=True)
class TraceEvent:
    round: int
    phase: int
    actor: str
    action: str
    payload: tuple = ()
    state: str = ""
    step: str | None = None   # automaton action id when a contract step was taken

    def as_dict(self) -> dict:
        return {"round": self.round, "phase": self.phase, "actor": self.actor,
                "action": self.action, "payload": [str(v) for v in self.payload],
                "state": self.state, "step": self.step}

    def to_line(self) -> str:
        return json.dumps(self.as_dict(), separators=(",", ":"))


def trace_lines(trace: Iterable[TraceEvent]) -> str:
    return "".join(ev.to_line() + "\n" for ev in trace)


# -- nondeterminism -----------------------------------------------------------


class Chooser:
    """Resolves choice points from a replay prefix, defaulting to option 0."""

    def __init__(self, prefix: Sequence[int] = ()):
        self.prefix = list(prefix)
        self.made: list[int] = []
        self.widths: list[int] = []

    def choose(self, n: int) -> int:
        if n <= 1:
            return 0
        i = len(self.made)
        pick = self.prefix[i] if i < len(self.prefix) else 0
        if not 0 <= pick < n:
            raise ValueError(f"replayed choice {pick} out of range at point {i} (width {n})")
        self.made.append(pick)
        self.widths.append(n)
        return pick


@dataclass(frozen=True)
class DeliveryPolicy:
    """How long each message takes, in rounds, within ``[0, delta]``."""
    name: str
    delta: int = 1

    def delay(self, message: Message, chooser: Chooser) -> int:
        if self.name == "immediate":
            return 0
        if self.name == "adversarial-max":
            return self.delta
        if self.name == "exhaustive":
            return chooser.choose(self.delta + 1)
        raise ValueError(f"unknown delivery policy {self.name!r}")


BUILTIN_POLICIES = ("immediate", "adversarial-max")
ALL_POLICIES = BUILTIN_POLICIES + ("exhaustive",)


def canonical_message_order(messages: Iterable[Message]) -> list:
    """Deterministic total order: deliver round, sender, function, payload."""
    return sorted(messages, key=lambda m: (m.deliver_round, m.sender, m.function,
                                           tuple(sort_key(v) for v in m.payload),
                                           m.target, m.send_round))


# -- round state --------------------------------------------------------------


@dataclass(frozen=True)
class RoundState:
    round: int
    contract_states: tuple
    party_states: tuple          # one local state per binding
    knowledge: tuple             # one KnowledgeSet per party
    in_flight: tuple = ()
    staged: tuple = ()           # Send / Disclose outputs for the next round
    trace: tuple = ()


class SchedulerError(RuntimeError):
    pass


def _check_bindings(bindings: Sequence[Binding], m: int):
    owner = {}
    for i, b in enumerate(bindings):
        for p in b.parties:
            if p in owner:
                raise SchedulerError(f"party {p} bound twice")
            owner[p] = i
    if set(owner) != set(range(m)):
        raise SchedulerError("every party needs exactly one strategy binding")
    return owner


def _knowledge_for(binding: Binding, knowledge: tuple) -> KnowledgeSet:
    ks = knowledge[binding.parties[0]]
    for p in binding.parties[1:]:
        ks = ks.absorb(knowledge[p])
    return ks


def _party_local_phase(rnd: int, bindings, contracts, contract_states, party_states,
                       knowledge, events) -> tuple[tuple, tuple, tuple]:
    observed = tuple(contract_states)
    staged, new_locals = [], []
    pnames = bindings[0].context.party_names
    for b, local in zip(bindings, party_states):
        outputs, local = b.strategy.act(b.context, rnd + 1, local,
                                        _knowledge_for(b, knowledge), observed)
        for out in outputs:
            if out.sender not in b.parties:
                raise SchedulerError(f"strategy {b.strategy.ref} emitted for party {out.sender}")
            if isinstance(out, Send):
                events.append(TraceEvent(rnd, 4, pnames[out.sender], "stage",
                                         out.payload, f"{out.function}>{contracts[out.target].name}"))
            else:
                events.append(TraceEvent(rnd, 4, pnames[out.sender], "stage-disclose",
                                         out.values, f">{pnames[out.recipient]}"))
            staged.append(out)
        new_locals.append(local)
    # coalition members pool what they know at the round boundary
    for b in bindings:
        if len(b.parties) > 1:
            pooled = _knowledge_for(b, knowledge)
            for p in b.parties:
                gained = knowledge[p].new_atoms(pooled)
                if gained:
                    events.append(TraceEvent(rnd, 4, pnames[p], "learn", tuple(gained)))
            knowledge = tuple(pooled if p in b.parties else k for p, k in enumerate(knowledge))
    return tuple(staged), tuple(new_locals), knowledge


def initial_round_state(bindings: Sequence[Binding], contracts: Sequence[Contract],
                        contract_inputs: Sequence, knowledge: Sequence[Iterable]) -> RoundState:
    """Round-0 configuration with strategies' first messages staged."""
    m = len(bindings[0].context.party_names)
    _check_bindings(bindings, m)
    cstates = tuple(c.initial(v) for c, v in zip(contracts, contract_inputs))
    ks = tuple(KnowledgeSet(k) for k in knowledge)
    locals_ = tuple(b.strategy.start(b.context) for b in bindings)
    events = []
    staged, locals_, ks = _party_local_phase(0, bindings, contracts, cstates, locals_, ks, events)
    return RoundState(0, cstates, locals_, ks, (), staged, tuple(events))


def run_round(state: RoundState, bindings: Sequence[Binding], contracts: Sequence[Contract],
              delivery: DeliveryPolicy, *, chooser: Chooser | None = None,
              exhaustive_order: bool = False) -> RoundState:
    chooser = chooser or Chooser()
    rnd = state.round + 1
    pnames = bindings[0].context.party_names
    events = list(state.trace)
    knowledge = list(state.knowledge)
    in_flight = list(state.in_flight)

    # phase 1: send
    for out in state.staged:
        sender_ks = knowledge[out.sender]
        payload = out.payload if isinstance(out, Send) else out.values
        for v in payload:
            if not sender_ks.can_produce(v):
                raise KnowledgeViolation(
                    f"round {rnd}: {pnames[out.sender]} cannot produce {v}")
        if isinstance(out, Send):
            msg = Message(out.sender, out.target, out.function, tuple(out.payload), rnd, rnd)
            d = delivery.delay(msg, chooser)
            if not 0 <= d <= delivery.delta:
                raise SchedulerError(f"delivery delay {d} outside [0, {delivery.delta}]")
            msg = replace(msg, deliver_round=rnd + d)
            in_flight.append(msg)
            events.append(TraceEvent(rnd, 1, pnames[out.sender], "send", msg.payload,
                                     f"{msg.function}>{contracts[msg.target].name}@{msg.deliver_round}"))
        else:
            events.append(TraceEvent(rnd, 1, pnames[out.sender], "disclose", tuple(out.values),
                                     f">{pnames[out.recipient]}"))
            gained = knowledge[out.recipient].new_atoms(out.values)
            knowledge[out.recipient] = knowledge[out.recipient].absorb(out.values)
            if gained:
                events.append(TraceEvent(rnd, 1, pnames[out.recipient], "learn", tuple(gained)))

    # phase 2: contract-local
    cstates = list(state.contract_states)
    remaining = []
    due = {}
    for msg in in_flight:
        if msg.deliver_round <= rnd:
            due.setdefault(msg.target, []).append(msg)
        else:
            remaining.append(msg)
    for ci, contract in enumerate(contracts):
        fired = contract.tick(cstates[ci], rnd)
        if fired is not None:
            cstates[ci] = fired.state
            events.append(TraceEvent(rnd, 2, contract.name, "timeout", fired.published,
                                     contract.describe(fired.state), fired.action))
        batch = canonical_message_order(due.get(ci, ()))
        if exhaustive_order and len(batch) > 1:
            perms = list(itertools.permutations(range(len(batch))))
            batch = [batch[i] for i in perms[chooser.choose(len(perms))]]
        for msg in batch:
            res = contract.apply(cstates[ci], msg, rnd)
            if res is None:
                events.append(TraceEvent(rnd, 2, contract.name, f"ignore:{msg.function}",
                                         msg.payload, contract.describe(cstates[ci])))
                continue
            cstates[ci] = res.state
            events.append(TraceEvent(rnd, 2, contract.name, f"call:{msg.function}",
                                     msg.payload, contract.describe(res.state), res.action))

    # phase 3: read
    public = [v for c, s in zip(contracts, cstates) for v in c.public_values(s)]
    for p in range(len(knowledge)):
        gained = knowledge[p].new_atoms(public)
        events.append(TraceEvent(rnd, 3, pnames[p], "read", (),
                                 " ".join(f"{c.name}={c.describe(s)}" for c, s in zip(contracts, cstates))))
        if gained:
            knowledge[p] = knowledge[p].absorb(public)
            events.append(TraceEvent(rnd, 3, pnames[p], "learn", tuple(gained)))

    # phase 4: party-local
    staged, locals_, ks = _party_local_phase(rnd, bindings, contracts, tuple(cstates),
                                             state.party_states, tuple(knowledge), events)
    return RoundState(rnd, tuple(cstates), locals_, ks, tuple(remaining), staged, tuple(events))


def quiescent(state: RoundState, bindings, contracts) -> bool:
    return (not state.in_flight and not state.staged
            and not any(c.pending(s) for c, s in zip(contracts, state.contract_states))
            and all(b.strategy.idle(b.context, state.round, loc)
                    for b, loc in zip(bindings, state.party_states)))


@dataclass(frozen=True)
class ExecutionResult:
    final_vector: tuple
    trace: tuple
    final_state: RoundState
    choices: tuple     # choices actually made, replayable
    widths: tuple      # option count at each choice point


def run_execution(initial: RoundState, bindings: Sequence[Binding], contracts: Sequence[Contract],
                  delivery: DeliveryPolicy, horizon: int, *, choices: Sequence[int] = (),
                  exhaustive_order: bool = False) -> ExecutionResult:
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    chooser = Chooser(choices)
    state = initial
    while state.round < horizon:
        state = run_round(state, bindings, contracts, delivery, chooser=chooser,
                          exhaustive_order=exhaustive_order)
        if quiescent(state, bindings, contracts):
            break
    final = tuple(c.output(s) for c, s in zip(contracts, state.contract_states))
    return ExecutionResult(final, state.trace, state, tuple(chooser.made), tuple(chooser.widths))


def explore(initial: RoundState, bindings, contracts, delivery, horizon, *,
            exhaustive_order: bool = False):
    """Yield one execution per distinct resolution of every choice point.

    Depth-first over choice vectors by replay: after each run, advance the
    deepest choice that still has unexplored options.
    """
    prefix: list[int] = []
    while True:
        res = run_execution(initial, bindings, contracts, delivery, horizon,
                            choices=prefix, exhaustive_order=exhaustive_order)
        yield res
        made, widths = list(res.choices), list(res.widths)
        while made and made[-1] + 1 >= widths[-1]:
            made.pop()
            widths.pop()
        if not made:
            return
        made[-1] += 1
        prefix = made


# -- projections and trace scans ---------------------------------------------


def project_trace(trace: Iterable[TraceEvent], system: InterfaceAutomaton, start) -> ExecutionFragment:
    """Project contract steps in a trace onto a composed system automaton.

    Read events are stutter steps and are dropped. When an action has no
    step from the current state, the offending target is recorded as
    ``None`` so that validation reports that index.
    """
    succ = {}
    for (src, act, dst) in system.steps:
        succ.setdefault((src, act), []).append(dst)
    states, actions = [start], []
    cur = start
    for ev in trace:
        if ev.step is None:
            continue
        nxt = succ.get((cur, ev.step))
        target = sorted(nxt, key=repr)[0] if nxt else None
        actions.append(ev.step)
        states.append(target)
        if target is None:
            break
        cur = target
    return ExecutionFragment(tuple(states), tuple(actions))


def knowledge_history(trace: Iterable[TraceEvent], party_name: str) -> list:
    """(round, atom) pairs a party learned during the execution, in order."""
    return [(ev.round, v) for ev in trace
            if ev.actor == party_name and ev.action == "learn" for v in ev.payload]


def ever_knew(trace: Iterable[TraceEvent], party_name: str, value) -> bool:
    return any(v == value for _, v in knowledge_history(trace, party_name))
