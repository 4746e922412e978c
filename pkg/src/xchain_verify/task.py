"""Cross-chain tasks, utilities and the feasibility conditions."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping


class TaskError(ValueError):
    pass


class DomainError(TaskError):
    pass


class UnknownPartyError(TaskError):
    pass


@dataclass(frozen=True)
class Transition:
    party_inputs: tuple
    contract_inputs: tuple
    contract_outputs: tuple


class Classification(enum.Enum):
    PREFERRED = "preferred"
    ACCEPTABLE = "acceptable-not-preferred"
    UNACCEPTABLE = "unacceptable"


def as_rational(x) -> Fraction:
    if isinstance(x, float):
        raise TypeError(f"utilities must be exact; got float {x!r}")
    return Fraction(x)


@dataclass(frozen=True)
class CrossChainTask:
    """A task ``(I_P, I_C, O_C, U)`` over named parties and contracts.

    ``utility`` maps ``(party_inputs, contract_inputs, contract_outputs)``
    triples to a tuple of one exact rational per party.
    """

    parties: tuple
    contracts: tuple
    input_party_vectors: tuple
    input_contract_vectors: tuple
    output_contract_vectors: tuple
    utility: Mapping = field(compare=False)

    def __post_init__(self):
        object.__setattr__(self, "parties", tuple(self.parties))
        object.__setattr__(self, "contracts", tuple(self.contracts))
        for attr in ("input_party_vectors", "input_contract_vectors", "output_contract_vectors"):
            object.__setattr__(self, attr, tuple(tuple(v) for v in getattr(self, attr)))
        m, n = len(self.parties), len(self.contracts)
        if len(set(self.parties)) != m or len(set(self.contracts)) != n:
            raise TaskError("party and contract names must be unique")
        for vec in self.input_party_vectors:
            if len(vec) != m:
                raise TaskError(f"input party vector {vec!r} does not have {m} entries")
        for vec in self.input_contract_vectors + self.output_contract_vectors:
            if len(vec) != n:
                raise TaskError(f"contract vector {vec!r} does not have {n} entries")
        table = {}
        for key, values in dict(self.utility).items():
            values = tuple(as_rational(v) for v in values)
            if len(values) != m:
                raise TaskError(f"utility for {key!r} does not have {m} entries")
            table[tuple(tuple(k) for k in key)] = values
        object.__setattr__(self, "utility", table)

    @property
    def m(self) -> int:
        return len(self.parties)

    @property
    def n(self) -> int:
        return len(self.contracts)

    def party_index(self, party) -> int:
        if isinstance(party, int) and 0 <= party < self.m:
            return party
        try:
            return self.parties.index(party)
        except ValueError:
            raise UnknownPartyError(f"unknown party {party!r}") from None

    def transitions(self) -> Iterable[Transition]:
        for ip, ic, oc in itertools.product(self.input_party_vectors,
                                            self.input_contract_vectors,
                                            self.output_contract_vectors):
            yield Transition(ip, ic, oc)

    def missing_utility_cells(self) -> list:
        return [t for t in self.transitions()
                if (t.party_inputs, t.contract_inputs, t.contract_outputs) not in self.utility]

    def utility_vector(self, t: Transition) -> tuple:
        key = (tuple(t.party_inputs), tuple(t.contract_inputs), tuple(t.contract_outputs))
        if (key[0] not in self.input_party_vectors
                or key[1] not in self.input_contract_vectors
                or key[2] not in self.output_contract_vectors):
            raise DomainError(f"transition {key!r} is outside the task's domain")
        try:
            return self.utility[key]
        except KeyError:
            raise DomainError(f"utility undefined for {key!r}") from None


def party_utility(task: CrossChainTask, t: Transition, party) -> Fraction:
    return task.utility_vector(t)[task.party_index(party)]


def coalition_utility(task: CrossChainTask, t: Transition, coalition: Iterable) -> Fraction:
    members = {task.party_index(p) for p in coalition}
    if not members:
        return Fraction(0)
    vec = task.utility_vector(t)
    return sum((vec[i] for i in members), Fraction(0))


def classify_transition(task: CrossChainTask, t: Transition) -> Classification:
    vec = task.utility_vector(t)
    if all(u > 0 for u in vec):
        return Classification.PREFERRED
    if all(u >= 0 for u in vec):
        return Classification.ACCEPTABLE
    return Classification.UNACCEPTABLE


def is_acceptable(task, t) -> bool:
    return classify_transition(task, t) is not Classification.UNACCEPTABLE


@dataclass(frozen=True)
class FeasibilityVerdict:
    condition: int
    name: str
    ok: bool
    witness: dict | None = None


@dataclass(frozen=True)
class FeasibilityReport:
    verdicts: tuple

    @property
    def ok(self) -> bool:
        return all(v.ok for v in self.verdicts)

    def __getitem__(self, condition: int) -> FeasibilityVerdict:
        return self.verdicts[condition - 1]


def _null_transition_condition(task: CrossChainTask) -> FeasibilityVerdict:
    name = "null transition acceptable"
    for ic in task.input_contract_vectors:
        if ic not in task.output_contract_vectors:
            return FeasibilityVerdict(1, name, False,
                                      {"reason": "input contract vector not an output",
                                       "contract_inputs": ic})
    for ip, ic in itertools.product(task.input_party_vectors, task.input_contract_vectors):
        t = Transition(ip, ic, ic)
        if not is_acceptable(task, t):
            return FeasibilityVerdict(1, name, False,
                                      {"reason": "null transition unacceptable",
                                       "party_inputs": ip, "contract_inputs": ic,
                                       "utility": task.utility_vector(t)})
    return FeasibilityVerdict(1, name, True)


def _preferred_exists_condition(task: CrossChainTask) -> FeasibilityVerdict:
    name = "preferred transition exists"
    for ip, ic in itertools.product(task.input_party_vectors, task.input_contract_vectors):
        if not any(classify_transition(task, Transition(ip, ic, oc)) is Classification.PREFERRED
                   for oc in task.output_contract_vectors):
            return FeasibilityVerdict(2, name, False,
                                      {"party_inputs": ip, "contract_inputs": ic})
    return FeasibilityVerdict(2, name, True)


def _input_lying_condition(task: CrossChainTask) -> FeasibilityVerdict:
    name = "no harm from lying about inputs"
    for ip, ip2 in itertools.product(task.input_party_vectors, repeat=2):
        for p in range(task.m):
            if ip[p] != ip2[p]:
                continue
            for ic, oc in itertools.product(task.input_contract_vectors,
                                            task.output_contract_vectors):
                u1 = party_utility(task, Transition(ip, ic, oc), p)
                u2 = party_utility(task, Transition(ip2, ic, oc), p)
                if u1 >= 0 and u2 < 0:
                    return FeasibilityVerdict(3, name, False, {
                        "party": task.parties[p], "party_inputs": ip,
                        "other_party_inputs": ip2, "contract_inputs": ic,
                        "contract_outputs": oc, "utilities": (u1, u2)})
    return FeasibilityVerdict(3, name, True)


def check_feasibility(task: CrossChainTask) -> FeasibilityReport:
    return FeasibilityReport((
        _null_transition_condition(task),
        _preferred_exists_condition(task),
        _input_lying_condition(task),
    ))
