"""Execution function by enumeration, and the three correctness checks.

Verdicts are relative to the strategy catalog: "arbitrary deviation" is
approximated by the finite menu a scenario declares.
"""

from __future__ import annotations

import itertools
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable

from .automata import InterfaceAutomaton, compose_all
from .scheduler import (ALL_POLICIES, Binding, DeliveryPolicy, PartyStrategy, StrategyContext,
                        explore, initial_round_state, run_execution)
from .task import CrossChainTask, FeasibilityReport, Transition, check_feasibility

WORKERS_ENV = "XCHAIN_VERIFY_WORKERS"


class ModelMismatchError(RuntimeError):
    """An execution ended in a contract vector the task does not declare."""


class EmptyCatalogWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Protocol:
    task: CrossChainTask
    contracts: tuple
    compliant: tuple                 # one strategy per party
    horizon: int
    delta: int = 1
    initial_knowledge: tuple = ()    # per party, iterable of values
    params: dict = field(default_factory=dict, compare=False)
    display_names: tuple = ()
    party_automata: tuple | None = None
    name: str = ""

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if len(self.compliant) != self.task.m:
            raise ValueError("need one compliant strategy per party")
        if len(self.contracts) != self.task.n:
            raise ValueError("need one contract per task contract")
        if not self.initial_knowledge:
            object.__setattr__(self, "initial_knowledge", ((),) * self.task.m)

    @property
    def parties(self) -> tuple:
        return self.task.parties

    def context(self, parties: Iterable[int], ip, ic) -> StrategyContext:
        return StrategyContext(parties=tuple(sorted(parties)), party_names=self.task.parties,
                               contract_names=self.task.contracts, party_inputs=tuple(ip),
                               contract_inputs=tuple(ic), delta=self.delta,
                               params={**self.params, "contracts": tuple(self.contracts)})

    def bindings(self, assignment: "Assignment", ip, ic) -> list:
        return [Binding(strat, self.context(parties, ip, ic)) for parties, strat in assignment]

    def initial_state(self, bindings, ic):
        return initial_round_state(bindings, self.contracts, ic, self.initial_knowledge)

    @cached_property
    def system_automaton(self) -> InterfaceAutomaton | None:
        if self.party_automata is None:
            return None
        return compose_all(list(self.party_automata)
                           + [c.automaton(self.task.parties) for c in self.contracts])

    def system_start(self, ic) -> tuple:
        parts = [next(iter(sorted(a.initial_states, key=repr))) for a in self.party_automata]
        bindings_free = [c.phase(c.initial(v)) for c, v in zip(self.contracts, ic)]
        return tuple(parts + bindings_free)


@dataclass(frozen=True)
class StrategyCatalog:
    deviations: dict = field(default_factory=dict)   # party index -> tuple of strategies
    joint: tuple = ()                                # (frozenset of parties, strategy) pairs

    def for_party(self, p: int) -> tuple:
        return tuple(self.deviations.get(p, ()))

    def size(self) -> int:
        return sum(len(v) for v in self.deviations.values()) + len(self.joint)

    def extended(self, other: "StrategyCatalog") -> "StrategyCatalog":
        devs = {p: self.for_party(p) + tuple(s for s in other.for_party(p) if s not in self.for_party(p))
                for p in set(self.deviations) | set(other.deviations)}
        return StrategyCatalog(devs, self.joint + tuple(j for j in other.joint if j not in self.joint))


@dataclass(frozen=True)
class CheckerOptions:
    policies: tuple = ("immediate", "adversarial-max")
    exhaustive_order: bool = False
    exhaustive_delay: bool = False
    workers: int | None = None

    @property
    def all_policies(self) -> tuple:
        pols = tuple(self.policies)
        if self.exhaustive_delay and "exhaustive" not in pols:
            pols += ("exhaustive",)
        for p in pols:
            if p not in ALL_POLICIES:
                raise ValueError(f"unknown delivery policy {p!r}")
        return pols

    def resolved_workers(self) -> int:
        if self.workers is not None:
            return max(1, int(self.workers))
        env = os.environ.get(WORKERS_ENV)
        return max(1, int(env)) if env else 1


# (parties tuple, strategy) pairs, ordered by first party
Assignment = tuple


def assignment_label(protocol: Protocol, assignment: Assignment) -> tuple:
    names = protocol.task.parties
    return tuple((tuple(names[p] for p in parties), strat.ref) for parties, strat in assignment)


def enumerate_assignments(protocol: Protocol, catalog: StrategyCatalog,
                          compliance: frozenset) -> list:
    """All strategy assignments for a compliance set, in deterministic order."""
    m = protocol.task.m
    compliant_part = [((p,), protocol.compliant[p]) for p in sorted(compliance)]
    deviators = sorted(set(range(m)) - compliance)
    if not deviators:
        return [tuple(compliant_part)]
    out = []
    menus = [[((p,), s) for s in catalog.for_party(p)] for p in deviators]
    for combo in itertools.product(*menus):
        out.append(tuple(sorted(compliant_part + list(combo), key=lambda b: b[0])))
    for parties, strat in catalog.joint:
        if frozenset(parties) == frozenset(deviators):
            out.append(tuple(sorted(compliant_part + [(tuple(sorted(parties)), strat)],
                                    key=lambda b: b[0])))
    return out


@dataclass(frozen=True)
class Witness:
    """A replayable execution: strategies, delivery policy, choice vector."""
    compliance: tuple
    assignment: tuple           # ((party names), strategy ref) pairs
    policy: str
    choices: tuple
    party_inputs: tuple
    contract_inputs: tuple
    final_vector: tuple
    utility: tuple
    exhaustive_order: bool = False
    trace: tuple = field(default=(), compare=False)

    @property
    def key(self) -> tuple:
        return (tuple(ref for _, ref in self.assignment), self.policy, self.choices)


def _run_job(job):
    protocol, assignment, policy, ip, ic, exhaustive_order = job
    bindings = protocol.bindings(assignment, ip, ic)
    init = protocol.initial_state(bindings, ic)
    delivery = DeliveryPolicy(policy, protocol.delta)
    best = {}
    for res in explore(init, bindings, protocol.contracts, delivery, protocol.horizon,
                       exhaustive_order=exhaustive_order):
        vec = res.final_vector
        key = res.choices
        if vec not in best or key < best[vec][0]:
            best[vec] = (key, res.trace)
    return best


def _run_jobs(jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) < 2:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


@dataclass(frozen=True)
class XiEntry:
    compliance: frozenset
    ip_index: int
    ic_index: int
    outcomes: dict             # final vector -> Witness (smallest key)
    runs: int

    @property
    def vectors(self) -> frozenset:
        return frozenset(self.outcomes)


def compute_xi(protocol: Protocol, catalog: StrategyCatalog, party_inputs, contract_inputs,
               compliance: Iterable, options: CheckerOptions | None = None) -> XiEntry:
    """Set of final contract vectors reachable under a compliance set."""
    options = options or CheckerOptions()
    task = protocol.task
    comp = frozenset(task.party_index(p) for p in compliance)
    ip, ic = tuple(party_inputs), tuple(contract_inputs)
    ip_i = task.input_party_vectors.index(ip)
    ic_i = task.input_contract_vectors.index(ic)
    deviators = set(range(task.m)) - comp
    for p in sorted(deviators):
        if not catalog.for_party(p) and not any(p in ps for ps, _ in catalog.joint):
            warnings.warn(f"no deviating strategies for party {task.parties[p]}", EmptyCatalogWarning,
                          stacklevel=2)
    assignments = enumerate_assignments(protocol, catalog, comp)
    jobs = [(protocol, a, pol, ip, ic, options.exhaustive_order)
            for a in assignments for pol in options.all_policies]
    results = _run_jobs(jobs, options.resolved_workers())
    names = task.parties
    outcomes = {}
    runs = 0
    for (_, assignment, policy, _, _, _), best in zip(jobs, results):
        for vec, (choices, trace) in best.items():
            runs += 1
            if vec not in task.output_contract_vectors:
                raise ModelMismatchError(
                    f"execution ended in {vec!r}, which is not a declared output contract vector "
                    f"(strategies {assignment_label(protocol, assignment)}, policy {policy})")
            w = Witness(compliance=tuple(names[p] for p in sorted(comp)),
                        assignment=assignment_label(protocol, assignment), policy=policy,
                        choices=tuple(choices), party_inputs=ip, contract_inputs=ic,
                        final_vector=vec, utility=task.utility_vector(Transition(ip, ic, vec)),
                        exhaustive_order=options.exhaustive_order, trace=tuple(trace))
            if vec not in outcomes or w.key < outcomes[vec].key:
                outcomes[vec] = w
    ordered = {v: outcomes[v] for v in sorted(outcomes, key=task.output_contract_vectors.index)}
    return XiEntry(comp, ip_i, ic_i, ordered, runs)


def resolve_ref(ref: str, protocol: Protocol, catalog: StrategyCatalog | None = None) -> PartyStrategy:
    """Find the strategy instance a witness names by its reference."""
    pool = list(protocol.compliant)
    if catalog is not None:
        for p in range(protocol.task.m):
            pool.extend(catalog.for_party(p))
        pool.extend(s for _, s in catalog.joint)
    for strat in pool:
        if strat.ref == ref:
            return strat
    from .swap import strategy_from_ref
    try:
        return strategy_from_ref(ref)
    except KeyError:
        raise KeyError(f"unknown strategy reference {ref!r}") from None


def replay_witness(protocol: Protocol, witness: Witness, catalog: StrategyCatalog | None = None):
    """Re-run a witness's execution; returns the scheduler's ExecutionResult."""
    task = protocol.task
    assignment = tuple((tuple(task.party_index(n) for n in names), resolve_ref(ref, protocol, catalog))
                       for names, ref in witness.assignment)
    bindings = protocol.bindings(assignment, witness.party_inputs, witness.contract_inputs)
    init = protocol.initial_state(bindings, witness.contract_inputs)
    return run_execution(init, bindings, protocol.contracts, DeliveryPolicy(witness.policy, protocol.delta),
                         protocol.horizon, choices=witness.choices,
                         exhaustive_order=witness.exhaustive_order)


def compliance_sets(m: int) -> list:
    """All subsets of parties, largest first, then lexicographic."""
    out = []
    for size in range(m, -1, -1):
        out.extend(frozenset(c) for c in itertools.combinations(range(m), size))
    return out


class XiTable:
    """Lazily computed execution function over all inputs and compliance sets."""

    def __init__(self, protocol: Protocol, catalog: StrategyCatalog, options: CheckerOptions | None = None):
        self.protocol = protocol
        self.catalog = catalog
        self.options = options or CheckerOptions()
        self._cache = {}

    def get(self, compliance, ip_i: int = 0, ic_i: int = 0) -> XiEntry:
        comp = frozenset(compliance)
        key = (comp, ip_i, ic_i)
        if key not in self._cache:
            task = self.protocol.task
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", EmptyCatalogWarning)
                self._cache[key] = compute_xi(self.protocol, self.catalog,
                                              task.input_party_vectors[ip_i],
                                              task.input_contract_vectors[ic_i], comp, self.options)
        return self._cache[key]

    def input_pairs(self):
        task = self.protocol.task
        return itertools.product(range(len(task.input_party_vectors)),
                                 range(len(task.input_contract_vectors)))

    def all_entries(self) -> list:
        return [self.get(c, i, j) for i, j in self.input_pairs()
                for c in compliance_sets(self.protocol.task.m)]


@dataclass(frozen=True)
class Verdict:
    property: str
    passed: bool
    witness: Witness | None = None
    detail: str = ""
    baseline: Witness | None = None     # Nash: the compliant outcome compared against
    vacuous: bool = False

    def __bool__(self):
        return self.passed


def check_liveness(protocol, catalog, options=None, table: XiTable | None = None) -> Verdict:
    table = table or XiTable(protocol, catalog, options)
    task = protocol.task
    everyone = frozenset(range(task.m))
    for i, j in table.input_pairs():
        entry = table.get(everyone, i, j)
        for vec, w in entry.outcomes.items():
            for p, u in enumerate(w.utility):
                if not u > 0:
                    return Verdict("liveness", False, w,
                                   f"all compliant: {task.parties[p]} gets {u} in {list(vec)}, not > 0")
    return Verdict("liveness", True)


def _catalog_gaps(protocol, catalog) -> list:
    return [protocol.task.parties[p] for p in range(protocol.task.m)
            if not catalog.for_party(p) and not any(p in ps for ps, _ in catalog.joint)]


def check_safety(protocol, catalog, options=None, table: XiTable | None = None) -> Verdict:
    table = table or XiTable(protocol, catalog, options)
    task = protocol.task
    for comp in compliance_sets(task.m):
        if not comp:
            continue    # executions with no compliant party are excluded
        for i, j in table.input_pairs():
            entry = table.get(comp, i, j)
            for vec, w in entry.outcomes.items():
                for q in sorted(comp):
                    if w.utility[q] < 0:
                        return Verdict("safety", False, w,
                                       f"compliant {task.parties[q]} gets {w.utility[q]} "
                                       f"in {list(vec)}")
    return Verdict("safety", True, vacuous=bool(_catalog_gaps(protocol, catalog)))


def check_coalition_nash(protocol, catalog, options=None, table: XiTable | None = None) -> Verdict:
    table = table or XiTable(protocol, catalog, options)
    task = protocol.task
    everyone = frozenset(range(task.m))
    for coalition in compliance_sets(task.m):
        if not coalition or coalition == everyone:
            continue
        others = everyone - coalition
        for i, j in table.input_pairs():
            conform = table.get(everyone, i, j)
            deviate = table.get(others, i, j)
            for vec, base in conform.outcomes.items():
                u_conform = sum((base.utility[q] for q in coalition), Fraction(0))
                for vec2, w in deviate.outcomes.items():
                    u_dev = sum((w.utility[q] for q in coalition), Fraction(0))
                    if u_dev > u_conform:
                        names = ",".join(task.parties[q] for q in sorted(coalition))
                        return Verdict("coalition-nash", False, w,
                                       f"coalition {{{names}}} gets {u_dev} deviating ({list(vec2)}) "
                                       f"vs {u_conform} complying ({list(vec)})", baseline=base)
    return Verdict("coalition-nash", True, vacuous=bool(_catalog_gaps(protocol, catalog)))


@dataclass(frozen=True)
class VerificationReport:
    protocol_name: str
    parties: tuple
    contracts: tuple
    feasibility: FeasibilityReport
    xi: tuple                # XiEntry per (inputs, compliance set)
    verdicts: tuple          # liveness, safety, coalition-nash
    notes: tuple = ()
    catalog_size: int = 0

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def verdict(self, name: str) -> Verdict:
        return next(v for v in self.verdicts if v.property == name)

    def xi_for(self, compliance_names: Iterable[str], ip_i: int = 0, ic_i: int = 0) -> XiEntry:
        comp = frozenset(self.parties.index(n) for n in compliance_names)
        return next(e for e in self.xi if e.compliance == comp and e.ip_index == ip_i and e.ic_index == ic_i)


def verify(protocol: Protocol, catalog: StrategyCatalog, options: CheckerOptions | None = None) -> VerificationReport:
    options = options or CheckerOptions()
    table = XiTable(protocol, catalog, options)
    feas = check_feasibility(protocol.task)
    entries = table.all_entries()
    verdicts = (check_liveness(protocol, catalog, options, table),
                check_safety(protocol, catalog, options, table),
                check_coalition_nash(protocol, catalog, options, table))
    notes = []
    gaps = _catalog_gaps(protocol, catalog)
    if gaps:
        notes.append("no deviating strategies for " + ", ".join(gaps)
                     + ": safety and coalition-nash hold vacuously for those deviations")
    everyone = frozenset(range(protocol.task.m))
    for e in entries:
        if e.compliance == everyone and len(e.outcomes) > 1:
            notes.append("all-compliant executions have more than one outcome; "
                         "coalition-nash compares every compliant outcome against every deviating one")
            break
    if not feas.ok:
        notes.append("task is not feasible; see feasibility conditions")
    notes.append("verdicts are relative to the declared strategy catalog "
                 f"({catalog.size()} deviating strategies)")
    return VerificationReport(protocol.name, protocol.task.parties, protocol.task.contracts,
                              feas, tuple(entries), verdicts, tuple(notes), catalog.size())
