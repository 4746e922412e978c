"""Scenario files: YAML documents describing a complete verification problem.

Grammar (top-level keys; ``?`` marks optional ones)::

    name?:      string
    delta?:     int >= 0 (rounds of possible delivery delay, default 1)
    parties:    list of {id: str, name?: str}
    contracts:  list of either
                  {id, template: htlc, asset, owner, counterparty, refund?, hashlock?}
                  {id, automaton: {states, initial, inputs?, outputs?, internal?, steps}}
    task:
      party_inputs:     list of vectors (one entry per party; entries are opaque)
      contract_inputs:  list of vectors (one entry per contract)
      contract_outputs: list of vectors
      utility:          list of [ip_index, ic_index, oc_index, [u per party]]
                        utilities are ints or "p/q" strings
    knowledge?: {party id: [value text, ...]}     e.g. secret:s, hash:s, token:a
    scripts?:   {name: [{round, party, contract, call, payload?}, ...]}
    protocol:
      horizon:    int >= 1
      params?:    mapping passed to strategies
      strategies: {party id: strategy reference}
    catalog?:
      <party id>: [strategy reference, ...]
      joint?:     [{parties: [ids], strategy: reference}, ...]
    checker?:   {policies?: [...], exhaustive_order?: bool, exhaustive_delay?: bool}

Strategy references: ``idle``, ``script:<name>``, and the swap family
``htlc-swap:<initiator|responder>[/<deviation>]`` or
``htlc-swap:joint/transfer-<assets>``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import yaml

from .automata import AutomatonError, InterfaceAutomaton
from .checker import CheckerOptions, Protocol, StrategyCatalog
from .scheduler import ALL_POLICIES, AutomatonContract, PartyStrategy, Send
from .swap import (BROKEN_VARIANTS, HtlcContract, SwapConfig, build_swap_protocol, strategy_from_ref,
                   system_automata)
from .task import CrossChainTask, TaskError
from .values import from_text, sort_key

SCENARIO_SUFFIXES = (".yaml", ".yml")


class ScenarioError(Exception):
    """Raised for unreadable or invalid scenarios; carries every diagnostic."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class Diagnostic:
    severity: str       # "error" or "warning"
    where: str
    message: str

    def __str__(self):
        return f"{self.severity}: {self.where}: {self.message}"


class IdleStrategy(PartyStrategy):
    """Never sends anything."""

    name = "idle"
    ref = "idle"

    def __eq__(self, other):
        return type(other) is IdleStrategy

    def __hash__(self):
        return hash("idle")


@dataclass(frozen=True)
class ScriptStrategy(PartyStrategy):
    """Fixed schedule of contract calls: ``(round, party, contract, call, payload)`` rows."""

    script: str
    rows: tuple = field(compare=False, default=())
    joint: bool = False

    @property
    def name(self):
        return self.script

    @property
    def ref(self):
        return f"script:{self.script}"

    def start(self, ctx):
        return 0

    def act(self, ctx, rnd, local, knowledge, observed):
        out = [Send(p, c, call, payload) for (r, p, c, call, payload) in self.rows
               if r == rnd and p in ctx.parties]
        return out, rnd

    def idle(self, ctx, rnd, local):
        return all(r <= rnd for r, p, *_ in self.rows if p in ctx.parties)


@dataclass
class Scenario:
    name: str
    protocol: Protocol
    catalog: StrategyCatalog
    options: CheckerOptions
    source: str | None = None

    def strategy_for(self, party: int, label: str) -> PartyStrategy:
        """Resolve a party's strategy by catalog label or full reference."""
        for s in (self.protocol.compliant[party],) + self.catalog.for_party(party):
            if label in (s.ref, s.name):
                return s
        for parties, s in self.catalog.joint:
            if party in parties and label in (s.ref, s.name):
                return s
        raise KeyError(label)


# -- loading ------------------------------------------------------------------


def _mark(exc) -> str:
    mark = getattr(exc, "problem_mark", None) or getattr(exc, "context_mark", None)
    if mark is None:
        return "?"
    return f"line {mark.line + 1}, column {mark.column + 1}"


def parse_text(text: str, where: str = "<scenario>") -> dict:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        problem = getattr(exc, "problem", None) or str(exc)
        raise ScenarioError([Diagnostic("error", f"{where}: {_mark(exc)}", f"parse error: {problem}")]) from None
    if not isinstance(doc, dict):
        raise ScenarioError([Diagnostic("error", where, "scenario must be a mapping at top level")])
    return doc


def packaged_scenarios() -> dict:
    """Shipped scenario files by stem name."""
    root = resources.files("xchain_verify") / "scenarios"
    return {Path(p.name).stem: p for p in root.iterdir() if p.name.endswith(SCENARIO_SUFFIXES)}


def resolve_path(path: str):
    """Find a scenario: the literal path, the path plus a suffix, or a shipped one by name."""
    p = Path(path)
    if p.is_file():
        return p
    for suf in SCENARIO_SUFFIXES:
        if Path(str(p) + suf).is_file():
            return Path(str(p) + suf)
    shipped = packaged_scenarios()
    stem = p.name
    for suf in SCENARIO_SUFFIXES:
        if stem.endswith(suf):
            stem = stem[: -len(suf)]
    if stem in shipped:
        return shipped[stem]
    raise ScenarioError([Diagnostic("error", str(path), "no such scenario file")])


def load(path: str) -> Scenario:
    resolved = resolve_path(path)
    text = resolved.read_text(encoding="utf-8")
    return from_document(parse_text(text, str(path)), source=str(path))


def loads(text: str) -> Scenario:
    return from_document(parse_text(text))


def _freeze(x):
    if isinstance(x, list):
        return tuple(_freeze(v) for v in x)
    if isinstance(x, dict):
        return {k: _freeze(v) for k, v in x.items()}
    return x


def _rational(x):
    if isinstance(x, bool) or isinstance(x, float):
        raise ValueError(f"utility {x!r} must be an int or a 'p/q' string")
    return Fraction(x)


class _Builder:
    """Validates a scenario document while building it, collecting all diagnostics."""

    def __init__(self, doc: dict):
        self.doc = doc
        self.diags: list[Diagnostic] = []

    def error(self, where, msg):
        self.diags.append(Diagnostic("error", where, msg))

    def warn(self, where, msg):
        self.diags.append(Diagnostic("warning", where, msg))

    def section(self, key, kind, required=True):
        val = self.doc.get(key)
        if val is None:
            if required:
                self.error(key, "missing section")
            return kind()
        if not isinstance(val, kind):
            self.error(key, f"expected a {kind.__name__}")
            return kind()
        return val

    # -- parts

    def parties(self):
        ids, names = [], []
        for i, p in enumerate(self.section("parties", list)):
            if not isinstance(p, dict) or "id" not in p:
                self.error(f"parties[{i}]", "each party needs an id")
                continue
            pid = str(p["id"])
            if pid in ids:
                self.error(f"parties[{i}]", f"duplicate party {pid!r}")
            ids.append(pid)
            names.append(str(p.get("name", pid)))
        if not ids:
            self.error("parties", "at least one party is required")
        return tuple(ids), tuple(names)

    def party_ref(self, where, pid, parties):
        if str(pid) not in parties:
            self.error(where, f"undeclared party {pid!r}")
            return None
        return parties.index(str(pid))

    def contracts(self, parties):
        out, ids = [], []
        for i, c in enumerate(self.section("contracts", list)):
            where = f"contracts[{i}]"
            if not isinstance(c, dict) or "id" not in c:
                self.error(where, "each contract needs an id")
                continue
            cid = str(c["id"])
            if cid in ids:
                self.error(where, f"duplicate contract {cid!r}")
            ids.append(cid)
            if c.get("template") == "htlc":
                missing = [k for k in ("asset", "owner", "counterparty") if k not in c]
                if missing:
                    self.error(where, "htlc contract missing " + ", ".join(missing))
                    out.append(None)
                    continue
                owner = self.party_ref(where + ".owner", c["owner"], parties)
                cp = self.party_ref(where + ".counterparty", c["counterparty"], parties)
                if owner is None or cp is None:
                    out.append(None)
                    continue
                out.append(HtlcContract(cid, str(c["asset"]), owner, cp, parties,
                                        refund=bool(c.get("refund", True)),
                                        hashlock=bool(c.get("hashlock", True))))
            elif "automaton" in c:
                out.append(self.automaton_contract(where, cid, c["automaton"]))
            else:
                self.error(where, "contract needs 'template: htlc' or an 'automaton' section")
                out.append(None)
        return tuple(ids), out

    def automaton_contract(self, where, cid, spec):
        if not isinstance(spec, dict):
            self.error(where, "automaton must be a mapping")
            return None
        try:
            steps = {(str(s), str(a), str(t)) for s, a, t in spec.get("steps", [])}
            aut = InterfaceAutomaton(
                states={str(s) for s in spec.get("states", [])},
                initial_states={str(s) for s in spec.get("initial", [])},
                input_actions={str(a) for a in spec.get("inputs", [])},
                output_actions={str(a) for a in spec.get("outputs", [])},
                internal_actions={str(a) for a in spec.get("internal", [])},
                steps=steps, name=cid)
            return AutomatonContract(cid, aut)
        except (AutomatonError, ValueError, TypeError) as exc:
            self.error(where + ".automaton", str(exc))
            return None

    def task(self, parties, contract_ids):
        t = self.section("task", dict)
        vecs = {}
        for key, width in (("party_inputs", len(parties)), ("contract_inputs", len(contract_ids)),
                           ("contract_outputs", len(contract_ids))):
            raw = t.get(key)
            if not isinstance(raw, list) or not raw:
                self.error(f"task.{key}", "expected a non-empty list of vectors")
                vecs[key] = ()
                continue
            good = []
            for i, v in enumerate(raw):
                if not isinstance(v, list) or len(v) != width:
                    self.error(f"task.{key}[{i}]", f"expected a vector of {width} entries")
                else:
                    good.append(_freeze(v))
            vecs[key] = tuple(good)
        ips, ics, ocs = vecs["party_inputs"], vecs["contract_inputs"], vecs["contract_outputs"]
        table = {}
        for i, row in enumerate(t.get("utility") or []):
            where = f"task.utility[{i}]"
            if not (isinstance(row, list) and len(row) == 4 and isinstance(row[3], list)):
                self.error(where, "expected [ip_index, ic_index, oc_index, [utilities]]")
                continue
            a, b, c, us = row
            if not all(isinstance(x, int) for x in (a, b, c)):
                self.error(where, "indices must be integers")
                continue
            if not (0 <= a < len(ips) and 0 <= b < len(ics) and 0 <= c < len(ocs)):
                self.error(where, f"index triple ({a}, {b}, {c}) is out of range")
                continue
            if len(us) != len(parties):
                self.error(where, f"expected {len(parties)} utilities")
                continue
            try:
                vals = tuple(_rational(u) for u in us)
            except (ValueError, ZeroDivisionError) as exc:
                self.error(where, str(exc))
                continue
            if (a, b, c) in table:
                self.error(where, f"duplicate utility cell ({a}, {b}, {c})")
            table[(a, b, c)] = vals
        if ips and ics and ocs:
            for a in range(len(ips)):
                for b in range(len(ics)):
                    for c in range(len(ocs)):
                        if (a, b, c) not in table:
                            self.error("task.utility", f"missing utility cell ({a}, {b}, {c})")
        if any(d.severity == "error" and d.where.startswith("task") for d in self.diags):
            return None
        try:
            return CrossChainTask(parties, contract_ids, ips, ics, ocs,
                                  {(ips[a], ics[b], ocs[c]): u for (a, b, c), u in table.items()})
        except TaskError as exc:
            self.error("task", str(exc))
            return None

    def knowledge(self, parties):
        know = [[] for _ in parties]
        for pid, vals in self.section("knowledge", dict, required=False).items():
            idx = self.party_ref(f"knowledge.{pid}", pid, parties)
            if idx is None:
                continue
            for v in vals or []:
                try:
                    know[idx].append(from_text(str(v)))
                except ValueError as exc:
                    self.error(f"knowledge.{pid}", str(exc))
        return tuple(tuple(sorted(k, key=sort_key)) for k in know)

    def scripts(self, parties, contract_ids):
        out = {}
        for name, rows in self.section("scripts", dict, required=False).items():
            parsed = []
            for i, row in enumerate(rows or []):
                where = f"scripts.{name}[{i}]"
                try:
                    p = self.party_ref(where, row["party"], parties)
                    if str(row["contract"]) not in contract_ids:
                        self.error(where, f"undeclared contract {row['contract']!r}")
                        continue
                    payload = tuple(from_text(str(v)) for v in row.get("payload", []))
                    if p is not None:
                        parsed.append((int(row["round"]), p, contract_ids.index(str(row["contract"])),
                                       str(row["call"]), payload))
                except (KeyError, TypeError, ValueError) as exc:
                    self.error(where, f"bad script row: {exc}")
            out[str(name)] = ScriptStrategy(str(name), tuple(parsed))
        return out

    def strategy(self, where, ref, scripts, parties_bound=None):
        ref = str(ref)
        if ref == "idle":
            return IdleStrategy()
        if ref.startswith("script:"):
            name = ref[len("script:"):]
            if name not in scripts:
                self.error(where, f"undeclared script {name!r}")
                return None
            s = scripts[name]
            if parties_bound and len(parties_bound) > 1:
                return ScriptStrategy(s.script, s.rows, joint=True)
            return s
        try:
            return strategy_from_ref(ref)
        except KeyError:
            self.error(where, f"unknown strategy reference {ref!r}")
            return None


def from_document(doc: dict, source: str | None = None) -> Scenario:
    b = _Builder(doc)
    parties, display = b.parties()
    contract_ids, contracts = b.contracts(parties)
    task = b.task(parties, contract_ids)
    knowledge = b.knowledge(parties)
    scripts = b.scripts(parties, contract_ids)

    delta = doc.get("delta", 1)
    if not isinstance(delta, int) or isinstance(delta, bool) or delta < 0:
        b.error("delta", "must be a non-negative integer")
        delta = 1

    proto = b.section("protocol", dict)
    horizon = proto.get("horizon")
    if not isinstance(horizon, int) or horizon < 1:
        b.error("protocol.horizon", "must be an integer >= 1")
    params = _freeze(proto.get("params") or {})
    if not isinstance(params, dict):
        b.error("protocol.params", "must be a mapping")
        params = {}
    bound = proto.get("strategies") or {}
    compliant = [None] * len(parties)
    for pid, ref in bound.items():
        idx = b.party_ref(f"protocol.strategies.{pid}", pid, parties)
        if idx is not None:
            compliant[idx] = b.strategy(f"protocol.strategies.{pid}", ref, scripts)
    for i, pid in enumerate(parties):
        if str(pid) not in {str(k) for k in bound}:
            b.error("protocol.strategies", f"no compliant strategy bound for party {pid!r}")

    cat = b.section("catalog", dict, required=False)
    deviations, joint = {}, []
    for key, refs in cat.items():
        if key == "joint":
            for i, entry in enumerate(refs or []):
                where = f"catalog.joint[{i}]"
                if not isinstance(entry, dict):
                    b.error(where, "expected {parties, strategy}")
                    continue
                idxs = [b.party_ref(where, p, parties) for p in entry.get("parties", [])]
                if None in idxs or len(idxs) < 2:
                    if len(idxs) < 2:
                        b.error(where, "joint strategies need at least two parties")
                    continue
                s = b.strategy(where, entry.get("strategy"), scripts, idxs)
                if s is not None:
                    joint.append((frozenset(idxs), s))
            continue
        idx = b.party_ref(f"catalog.{key}", key, parties)
        if idx is None:
            continue
        menu = []
        for i, ref in enumerate(refs or []):
            s = b.strategy(f"catalog.{key}[{i}]", ref, scripts)
            if s is not None:
                menu.append(s)
        deviations[idx] = tuple(menu)

    chk = b.section("checker", dict, required=False)
    policies = tuple(chk.get("policies", ("immediate", "adversarial-max")))
    for p in policies:
        if p not in ALL_POLICIES:
            b.error("checker.policies", f"unknown delivery policy {p!r}")
    options = CheckerOptions(policies=policies, exhaustive_order=bool(chk.get("exhaustive_order", False)),
                             exhaustive_delay=bool(chk.get("exhaustive_delay", False)))

    uses_swap = any(s is not None and s.ref.startswith("htlc-swap:")
                    for s in compliant + [s for m in deviations.values() for s in m] + [s for _, s in joint])
    if uses_swap:
        for key in ("secret", "initiator_deadline_offset", "responder_deadline_offset", "decoys"):
            if key not in params:
                b.error("protocol.params", f"swap strategies need parameter {key!r}")
        if not all(isinstance(c, HtlcContract) for c in contracts):
            b.error("contracts", "swap strategies need htlc contracts")

    errors = [d for d in b.diags if d.severity == "error"]
    if errors:
        raise ScenarioError(b.diags)
    htlc_only = all(isinstance(c, HtlcContract) for c in contracts)
    protocol = Protocol(task=task, contracts=tuple(contracts), compliant=tuple(compliant), horizon=horizon,
                        delta=delta, initial_knowledge=knowledge, params=params,
                        display_names=display,
                        party_automata=tuple(system_automata(parties, contracts)[:len(parties)])
                        if htlc_only else None,
                        name=str(doc.get("name", source or "scenario")))
    return Scenario(protocol.name, protocol, StrategyCatalog(deviations, tuple(joint)), options, source)


def validate_text(text: str, where: str = "<scenario>") -> list:
    """All diagnostics for a document; an empty list means it is valid."""
    try:
        from_document(parse_text(text, where), source=where)
    except ScenarioError as exc:
        return exc.diagnostics
    return []


# -- dumping ------------------------------------------------------------------


def _utility_text(u: Fraction):
    return u.numerator if u.denominator == 1 else f"{u.numerator}/{u.denominator}"


def _plain(x):
    if isinstance(x, tuple):
        return [_plain(v) for v in x]
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    return x


def to_document(protocol: Protocol, catalog: StrategyCatalog, options: CheckerOptions) -> dict:
    """Scenario document for a protocol built from htlc contracts and swap strategies."""
    task = protocol.task
    parties = task.parties
    names = protocol.display_names or parties
    contracts = []
    for c in protocol.contracts:
        if not isinstance(c, HtlcContract):
            raise TypeError("only htlc contracts can be serialized")
        entry = {"id": c.name, "template": "htlc", "asset": c.asset,
                 "owner": parties[c.owner], "counterparty": parties[c.counterparty]}
        if not c.refund:
            entry["refund"] = False
        if not c.hashlock:
            entry["hashlock"] = False
        contracts.append(entry)
    utility = []
    for a, ip in enumerate(task.input_party_vectors):
        for b, ic in enumerate(task.input_contract_vectors):
            for c, oc in enumerate(task.output_contract_vectors):
                utility.append([a, b, c, [_utility_text(u) for u in task.utility[(ip, ic, oc)]]])
    doc = {
        "name": protocol.name,
        "delta": protocol.delta,
        "parties": [{"id": p, "name": n} for p, n in zip(parties, names)],
        "contracts": contracts,
        "task": {"party_inputs": _plain(task.input_party_vectors),
                 "contract_inputs": _plain(task.input_contract_vectors),
                 "contract_outputs": _plain(task.output_contract_vectors),
                 "utility": utility},
        "knowledge": {p: [str(v) for v in k] for p, k in zip(parties, protocol.initial_knowledge)},
        "protocol": {"horizon": protocol.horizon,
                     "params": _plain({k: protocol.params[k] for k in sorted(protocol.params)}),
                     "strategies": {p: s.ref for p, s in zip(parties, protocol.compliant)}},
        "catalog": {**{parties[p]: [s.ref for s in catalog.for_party(p)] for p in range(task.m)},
                    "joint": [{"parties": [parties[i] for i in sorted(ps)], "strategy": s.ref}
                              for ps, s in catalog.joint]},
        "checker": {"policies": list(options.policies), "exhaustive_order": options.exhaustive_order,
                    "exhaustive_delay": options.exhaustive_delay},
    }
    return doc


class _FlowList(list):
    """List rendered on one line."""


class _Dumper(yaml.SafeDumper):
    pass


_Dumper.add_representer(_FlowList, lambda d, v: d.represent_sequence("tag:yaml.org,2002:seq", v,
                                                                     flow_style=True))


def dumps(doc: dict) -> str:
    doc = dict(doc)
    task = doc.get("task")
    if task:
        task = dict(task)
        task["party_inputs"] = [_FlowList(v) for v in task["party_inputs"]]
        task["utility"] = [_FlowList(r) for r in task["utility"]]
        doc["task"] = task
    return yaml.dump(doc, Dumper=_Dumper, sort_keys=False, default_flow_style=None, width=100)


def builtin_swap_document(variant: str = "swap") -> dict:
    """Document for the built-in swap or one of its broken variants."""
    cfg = SwapConfig(**BROKEN_VARIANTS[variant]) if variant != "swap" else SwapConfig()
    return to_document(*build_swap_protocol(cfg))


SHIPPED = ("swap",) + tuple(BROKEN_VARIANTS)


def write_shipped(directory: str | os.PathLike) -> list:
    """(Re)generate the shipped scenario files into ``directory``."""
    out = []
    for name in SHIPPED:
        path = Path(directory) / f"{name}.yaml"
        path.write_text(dumps(builtin_swap_document(name)), encoding="utf-8")
        out.append(path)
    return out
