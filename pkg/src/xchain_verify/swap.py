"""Two-party hashed-timelock swap: contracts, task, strategies, catalog.

Timing. With ``D = delta + 1`` simulation rounds per protocol step (send,
up to ``delta`` rounds of delay, observe), step ``k`` is due by round
``1 + (k - 1) * D``. The initiator's contract expires at
``escrow_round + 3D + delta`` and the responder's at
``escrow_round + D + delta``; with ``delta = 0`` those are rounds 4 and 3,
so the responder's escrow always expires one full step before the
initiator's. Refunds fire in the contract-local phase after expiry.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from fractions import Fraction

from .automata import InterfaceAutomaton
from .scheduler import Contract, ContractStep, Disclose, PartyStrategy, Send
from .task import CrossChainTask
from .values import HashOf, Plain, Secret, Token

UNESCROWED, ESCROWED, CLAIMED, REFUNDED = "Unescrowed", "Escrowed", "Claimed", "Refunded"
ESCROW = "escrow"   # output value of an asset still locked at the horizon


def hash_match(candidate, hashkey) -> bool:
    if not isinstance(hashkey, HashOf):
        raise TypeError(f"hashkey must be a HashOf value, not {hashkey!r}")
    return isinstance(candidate, Secret) and candidate.name == hashkey.secret


def ownership(asset: str, owner: str) -> str:
    return f"{asset}->{owner}"


def parse_ownership(text: str) -> tuple[str, str]:
    asset, sep, owner = str(text).partition("->")
    if not sep:
        raise ValueError(f"expected 'asset->owner', got {text!r}")
    return asset, owner


# -- contract -----------------------------------------------------------------


@dataclass(frozen=True)
class HtlcState:
    phase: str
    owner: int
    counterparty: int
    asset: str
    hashkey: HashOf | None = None
    deadline: int | None = None
    escrow_round: int | None = None
    published: tuple = ()


@dataclass(frozen=True)
class HtlcContract(Contract):
    """Hashed-timelock escrow for one asset between a fixed owner and counterparty.

    ``escrow(token, hashkey, deadline)`` from the owner locks the asset;
    ``claim(secret)`` from the counterparty releases it when the secret
    matches and the round is not past the deadline, publishing the secret.
    ``refund`` and ``hashlock`` can be switched off to build broken variants.
    """

    name: str
    asset: str
    owner: int
    counterparty: int
    party_names: tuple
    refund: bool = True
    hashlock: bool = True

    # -- action ids
    @property
    def escrow_action(self):
        return f"{self.party_names[self.owner]}.escrow>{self.name}"

    @property
    def claim_action(self):
        return f"{self.party_names[self.counterparty]}.claim>{self.name}"

    @property
    def refund_action(self):
        return f"{self.name}.refund"

    def read_action(self, party_name):
        return f"{self.name}.read>{party_name}"

    def initial(self, input_value):
        asset, owner = parse_ownership(input_value)
        if asset != self.asset or owner not in self.party_names:
            raise ValueError(f"{input_value!r} is not an initial state of {self.name}")
        return HtlcState(UNESCROWED, self.party_names.index(owner), self.counterparty, asset)

    def apply(self, state: HtlcState, message, rnd):
        if message.function == "escrow":
            if state.phase != UNESCROWED or message.sender != state.owner:
                return None
            if len(message.payload) != 3:
                return None
            token, hashkey, deadline = message.payload
            if (token != Token(self.asset) or not isinstance(hashkey, HashOf)
                    or not isinstance(deadline, Plain) or not isinstance(deadline.literal, int)):
                return None
            return ContractStep(replace(state, phase=ESCROWED, hashkey=hashkey,
                                        deadline=deadline.literal, escrow_round=rnd),
                                self.escrow_action)
        if message.function == "claim":
            if state.phase != ESCROWED or message.sender != state.counterparty:
                return None
            if rnd > state.deadline or len(message.payload) != 1:
                return None
            secret = message.payload[0]
            if self.hashlock and not hash_match(secret, state.hashkey):
                return None
            published = (secret,) if isinstance(secret, Secret) else ()
            return ContractStep(replace(state, phase=CLAIMED, published=state.published + published),
                                self.claim_action, published)
        return None

    def tick(self, state: HtlcState, rnd):
        if self.refund and state.phase == ESCROWED and rnd > state.deadline:
            return ContractStep(replace(state, phase=REFUNDED), self.refund_action)
        return None

    def output(self, state: HtlcState):
        if state.phase == CLAIMED:
            return ownership(self.asset, self.party_names[state.counterparty])
        if state.phase == ESCROWED:
            return ownership(self.asset, ESCROW)
        return ownership(self.asset, self.party_names[state.owner])

    def public_values(self, state: HtlcState):
        vals = (Token(self.asset),)
        if state.hashkey is not None:
            vals += (state.hashkey,)
        return vals + state.published

    def pending(self, state: HtlcState):
        return self.refund and state.phase == ESCROWED

    def phase(self, state: HtlcState):
        return state.phase

    def describe(self, state: HtlcState):
        if state.phase == UNESCROWED:
            return UNESCROWED
        extra = f"(h={state.hashkey.secret},deadline={state.deadline})"
        return state.phase + extra

    def automaton(self, party_names=None) -> InterfaceAutomaton:
        party_names = party_names or self.party_names
        phases = (UNESCROWED, ESCROWED, CLAIMED, REFUNDED)
        reads = {self.read_action(p) for p in party_names}
        steps = {(UNESCROWED, self.escrow_action, ESCROWED),
                 (ESCROWED, self.claim_action, CLAIMED)}
        internal = set()
        if self.refund:
            steps.add((ESCROWED, self.refund_action, REFUNDED))
            internal.add(self.refund_action)
        steps |= {(ph, r, ph) for ph in phases for r in reads}
        return InterfaceAutomaton(phases, {UNESCROWED}, {self.escrow_action, self.claim_action},
                                  reads, internal, steps, name=self.name)


def party_automaton(party_name: str, calls, reads) -> InterfaceAutomaton:
    """Automaton recording which of a party's contract calls have taken effect.

    A state is the sorted tuple of calls done so far; each call takes effect
    at most once. Reads are self-loops.
    """
    calls = sorted(calls)
    states = [tuple(c for c, bit in zip(calls, bits) if bit)
              for bits in itertools.product((0, 1), repeat=len(calls))]
    steps = set()
    for st in states:
        for c in calls:
            if c not in st:
                steps.add((st, c, tuple(sorted(st + (c,)))))
        for r in reads:
            steps.add((st, r, st))
    return InterfaceAutomaton(states, {()}, set(reads), set(calls), set(), steps, name=party_name)


def system_automata(party_names, contracts) -> list:
    """Party automata (declaration order) followed by contract automata."""
    out = []
    for p in party_names:
        calls = set()
        for c in contracts:
            if c.party_names[c.owner] == p:
                calls.add(c.escrow_action)
            if c.party_names[c.counterparty] == p:
                calls.add(c.claim_action)
        out.append(party_automaton(p, calls, {c.read_action(p) for c in contracts}))
    out.extend(c.automaton(party_names) for c in contracts)
    return out


# -- task ---------------------------------------------------------------------


def holdings_utility(own_asset: str, wanted_asset: str, me: str, outcome: dict) -> Fraction:
    """2 with both assets, 1 with only the wanted one, 0 with only its own, -1 with neither."""
    has_own = outcome.get(own_asset) == me
    has_wanted = outcome.get(wanted_asset) == me
    return Fraction({(True, True): 2, (False, True): 1,
                     (True, False): 0, (False, False): -1}[(has_own, has_wanted)])


def build_swap_task(parties=("A", "B"), assets=("a", "b"), contracts=("CA", "CB"),
                    locked_outcomes: bool = False, overrides: dict | None = None) -> CrossChainTask:
    """The swap task: one input vector each side, four ownership outcomes.

    ``locked_outcomes`` adds outcomes where an asset is still in escrow,
    needed for variants whose contracts can strand an asset. ``overrides``
    maps ``(outcome vector, party)`` to a replacement utility.
    """
    pa, pb = parties
    xa, xb = assets
    ip = ((pb, xa, xb), (pa, xb, xa))
    ic = (ownership(xa, pa), ownership(xb, pb))
    holders_a = (pa, pb) + ((ESCROW,) if locked_outcomes else ())
    holders_b = (pa, pb) + ((ESCROW,) if locked_outcomes else ())
    # outcome order: [a->A,b->A], [a->B,b->A], [a->A,b->B], [a->B,b->B]
    outcomes = tuple((ownership(xa, ha), ownership(xb, hb))
                     for hb in holders_b for ha in holders_a)
    overrides = overrides or {}
    utility = {}
    for oc in outcomes:
        holder = dict(parse_ownership(v) for v in oc)
        u_a = holdings_utility(xa, xb, pa, holder)
        u_b = holdings_utility(xb, xa, pb, holder)
        u_a = Fraction(overrides.get((oc, pa), u_a))
        u_b = Fraction(overrides.get((oc, pb), u_b))
        utility[(ip, ic, oc)] = (u_a, u_b)
    return CrossChainTask(parties=tuple(parties), contracts=tuple(contracts),
                          input_party_vectors=(ip,), input_contract_vectors=(ic,),
                          output_contract_vectors=outcomes, utility=utility)


# -- strategies ---------------------------------------------------------------


def step_round(k: int, delta: int) -> int:
    """Latest round at which protocol step ``k`` (1-based) is sent."""
    return 1 + (k - 1) * (delta + 1)


def default_offsets(delta: int) -> dict:
    d = delta + 1
    return {"initiator_deadline_offset": 3 * d + delta,
            "responder_deadline_offset": d + delta}


def default_horizon(delta: int) -> int:
    return 4 * (delta + 1) + delta + 2


@dataclass(frozen=True)
class Mutation:
    """A structural departure from the compliant script at one step.

    kinds: ``omit``, ``corrupt`` (with ``field``), ``late``, ``replay``,
    ``reveal`` (initiator claim step only), ``early``.
    """
    kind: str
    step: str               # "escrow" or "claim"
    field: str | None = None

    @property
    def label(self) -> str:
        if self.kind == "omit":
            return f"no-{self.step}"
        if self.kind == "reveal":
            return "reveal-secret"
        if self.field:
            return f"{self.kind}-{self.step}-{self.field}"
        return f"{self.kind}-{self.step}"


ROLES = ("initiator", "responder")


def _find(ctx, observed, *, owner=None, counterparty=None):
    contracts = ctx.params["contracts"]
    for i, c in enumerate(contracts):
        if (owner is None or c.owner == owner) and (counterparty is None or c.counterparty == counterparty):
            return i, observed[i]
    raise LookupError("no matching contract")


@dataclass(frozen=True)
class SwapStrategy(PartyStrategy):
    """Initiator (Alice) or responder (Bob) of the swap, optionally mutated.

    Local state is ``(stage, memo)`` with stage one of ``start``,
    ``escrowed``, ``done``. Compliant parties give up ("exit") when their
    step's window closes without the counterparty having done its part.
    """

    role: str
    mutation: Mutation | None = None

    @property
    def name(self):
        return self.mutation.label if self.mutation else "compliant"

    @property
    def ref(self):
        return f"htlc-swap:{self.role}" + (f"/{self.mutation.label}" if self.mutation else "")

    def start(self, ctx):
        return ("start", None)

    def idle(self, ctx, rnd, local):
        return local[0] == "done"

    def act(self, ctx, rnd, local, knowledge, observed):
        stage, memo = local
        if stage == "done":
            return [], local
        m = self.mutation
        step = "escrow" if stage == "start" else "claim"
        mut = m if m is not None and m.step == step else None
        if self.role == "initiator":
            handler = self._initiator_escrow if stage == "start" else self._initiator_claim
        else:
            handler = self._responder_escrow if stage == "start" else self._responder_claim
        return handler(ctx, rnd, memo, knowledge, observed, mut)

    # -- initiator ----------------------------------------------------------

    def _initiator_escrow(self, ctx, rnd, memo, knowledge, observed, mut):
        due = step_round(1, ctx.delta)
        at = due + (ctx.delta + 1) if (mut and mut.kind == "late") else due
        if mut and mut.kind == "early":
            at = due - (ctx.delta + 1)
        if rnd < at:
            return [], ("start", memo)
        if rnd > at or (mut and mut.kind == "omit"):
            return [], DONE
        own_i, _ = _find(ctx, observed, owner=ctx.me)
        payload = self._escrow_payload(ctx, rnd, HashOf(ctx.params["secret"]),
                                       ctx.params["initiator_deadline_offset"], mut)
        return [Send(ctx.me, own_i, "escrow", payload)], ("escrowed", payload)

    def _initiator_claim(self, ctx, rnd, memo, knowledge, observed, mut):
        me, delta, d = ctx.me, ctx.delta, ctx.delta + 1
        secret = Secret(ctx.params["secret"])
        other_i, other = _find(ctx, observed, counterparty=me)
        due = step_round(3, delta)
        if mut and mut.kind == "early":
            if rnd < due - d:
                return [], ("escrowed", memo)
            return [Send(me, other_i, "claim", (secret,))], DONE
        if mut and mut.kind == "late":
            if rnd < due + d:
                return [], ("escrowed", memo)
            if rnd > due + d or other.phase != ESCROWED:
                return [], DONE
            return [Send(me, other_i, "claim", (secret,))], DONE
        if rnd > due:
            return [], DONE
        if not (other.phase == ESCROWED and other.hashkey == HashOf(secret.name)
                and other.deadline >= rnd + delta):
            return [], ("escrowed", memo)
        if mut is None:
            return [Send(me, other_i, "claim", (secret,))], DONE
        if mut.kind == "omit":
            return [], DONE
        if mut.kind == "reveal":
            return [Disclose(me, other.owner, (secret,))], DONE
        if mut.kind == "replay":
            own_i, _ = _find(ctx, observed, owner=me)
            return [Send(me, own_i, "escrow", memo)], DONE
        if mut.kind == "corrupt":
            return [Send(me, other_i, "claim", (_decoy(ctx),))], DONE
        raise ValueError(f"unsupported mutation {mut}")

    # -- responder ----------------------------------------------------------

    def _responder_escrow(self, ctx, rnd, memo, knowledge, observed, mut):
        me, delta, d = ctx.me, ctx.delta, ctx.delta + 1
        own_i, _ = _find(ctx, observed, owner=me)
        _, other = _find(ctx, observed, counterparty=me)
        due = step_round(2, delta)
        hashkey = other.hashkey
        if mut and mut.kind in ("late", "early"):
            at = due + d if mut.kind == "late" else due - d
            if rnd < at:
                return [], ("start", memo)
            if rnd > at or other.phase != ESCROWED or not knowledge.can_produce(hashkey):
                return [], DONE
        else:
            if rnd > due:
                return [], DONE
            if other.phase != ESCROWED:
                return [], ("start", memo)
            if other.deadline < rnd + 2 * d + delta:
                return [], DONE
            if mut and mut.kind == "omit":
                return [], DONE
        payload = self._escrow_payload(ctx, rnd, hashkey,
                                       ctx.params["responder_deadline_offset"], mut)
        return [Send(me, own_i, "escrow", payload)], ("escrowed", payload)

    def _responder_claim(self, ctx, rnd, memo, knowledge, observed, mut):
        me, d = ctx.me, ctx.delta + 1
        own_i, _ = _find(ctx, observed, owner=me)
        other_i, other = _find(ctx, observed, counterparty=me)
        if other.phase != ESCROWED:
            return [], DONE
        known = sorted(s.name for s in knowledge.secrets() if hash_match(s, other.hashkey))
        if not known:
            if rnd > other.deadline + d:
                return [], DONE
            return [], ("escrowed", memo)
        if mut is None or mut.kind not in ("late", "early"):
            if rnd > other.deadline:
                return [], DONE
        if mut is None:
            return [Send(me, other_i, "claim", (Secret(known[0]),))], DONE
        if mut.kind == "late":
            if rnd <= other.deadline:
                return [], ("escrowed", memo)
            return [Send(me, other_i, "claim", (Secret(known[0]),))], DONE
        if mut.kind in ("omit", "early"):
            # an early claim would have been due before the secret was public
            return [], DONE
        if mut.kind == "replay":
            return [Send(me, own_i, "escrow", memo)], DONE
        if mut.kind == "corrupt":
            return [Send(me, other_i, "claim", (_decoy(ctx),))], DONE
        raise ValueError(f"unsupported mutation {mut}")

    def _escrow_payload(self, ctx, rnd, hashkey, offset, mut):
        contracts = ctx.params["contracts"]
        token = Token(contracts[_index_of_owner(ctx)].asset)
        deadline = Plain(rnd + offset)
        if mut and mut.kind == "corrupt":
            if mut.field == "asset":
                token = Token(next(c.asset for c in contracts if c.asset != token.name))
            elif mut.field == "hashkey":
                hashkey = HashOf(_decoy(ctx).name)
            elif mut.field == "deadline":
                deadline = Plain(0)
        return (token, hashkey, deadline)


DONE = ("done", None)


def _decoy(ctx) -> Secret:
    return Secret(ctx.params["decoys"][ctx.me])


def _index_of_owner(ctx) -> int:
    return _find(ctx, ctx.params["contracts"], owner=ctx.me)[0]


@dataclass(frozen=True)
class JointTransfer(PartyStrategy):
    """Coalition policy: both parties cooperate to move the listed assets.

    Each listed asset's owner escrows it under the coalition's secret and the
    counterparty claims it at once. Used for executions with no compliant
    party.
    """

    assets: tuple = ()
    joint = True

    @property
    def name(self):
        return "transfer-" + ("-".join(self.assets) if self.assets else "none")

    @property
    def ref(self):
        return f"htlc-swap:joint/{self.name}"

    def start(self, ctx):
        return frozenset()

    def act(self, ctx, rnd, local, knowledge, observed):
        secret = Secret(ctx.params["secret"])
        out, done = [], set(local)
        for i, c in enumerate(ctx.params["contracts"]):
            if c.asset not in self.assets:
                continue
            st = observed[i]
            if st.phase == UNESCROWED and ("escrow", i) not in done:
                out.append(Send(c.owner, i, "escrow",
                                (Token(c.asset), HashOf(secret.name),
                                 Plain(rnd + ctx.params["initiator_deadline_offset"]))))
                done.add(("escrow", i))
            elif st.phase == ESCROWED and ("claim", i) not in done:
                out.append(Send(c.counterparty, i, "claim", (secret,)))
                done.add(("claim", i))
        return out, frozenset(done)

    def idle(self, ctx, rnd, local):
        return len(local) >= 2 * len(self.assets)


def mutations_for(role: str, extended: bool = False) -> list:
    """Deviation menu for one role, in a fixed order.

    The first entries mirror the case lists of the swap analysis; the rest
    are generated from the two protocol steps and the escrow payload fields.
    ``extended`` adds early sends, which can race the counterparty's call
    within a round.
    """
    muts = [Mutation("omit", "escrow"), Mutation("omit", "claim")]
    if role == "initiator":
        muts.append(Mutation("reveal", "claim"))
    for f in ("asset", "hashkey", "deadline"):
        muts.append(Mutation("corrupt", "escrow", f))
    muts.append(Mutation("corrupt", "claim", "secret"))
    muts += [Mutation("late", "escrow"), Mutation("late", "claim"), Mutation("replay", "claim")]
    if extended:
        muts += [Mutation("early", "escrow"), Mutation("early", "claim")]
    return muts


def strategy_from_ref(ref: str) -> PartyStrategy:
    """Resolve an ``htlc-swap:...`` reference to a strategy instance."""
    family, sep, rest = ref.partition(":")
    if family != "htlc-swap" or not sep:
        raise KeyError(ref)
    role, _, label = rest.partition("/")
    if role == "joint":
        if not label.startswith("transfer-"):
            raise KeyError(ref)
        body = label[len("transfer-"):]
        return JointTransfer(() if body == "none" else tuple(body.split("-")))
    if role not in ROLES:
        raise KeyError(ref)
    if not label or label == "compliant":
        return SwapStrategy(role)
    for m in mutations_for(role, extended=True):
        if m.label == label:
            return SwapStrategy(role, m)
    raise KeyError(ref)


# -- scenario assembly --------------------------------------------------------


@dataclass
class SwapConfig:
    parties: tuple = ("A", "B")
    display_names: tuple = ("Alice", "Bob")
    assets: tuple = ("a", "b")
    contract_names: tuple = ("CA", "CB")
    delta: int = 1
    secret: str = "s"
    initiator_deadline_offset: int | None = None
    responder_deadline_offset: int | None = None
    horizon: int | None = None
    initiator_refund: bool = True
    responder_refund: bool = True
    hashlock: bool = True
    utility_overrides: dict = field(default_factory=dict)
    extended_catalog: bool = False
    name: str = "swap"


def build_swap_contracts(cfg: SwapConfig) -> tuple:
    pa, pb = cfg.parties
    return (HtlcContract(cfg.contract_names[0], cfg.assets[0], 0, 1, tuple(cfg.parties),
                         refund=cfg.initiator_refund, hashlock=cfg.hashlock),
            HtlcContract(cfg.contract_names[1], cfg.assets[1], 1, 0, tuple(cfg.parties),
                         refund=cfg.responder_refund, hashlock=cfg.hashlock))


def swap_params(cfg: SwapConfig, contracts) -> dict:
    offs = default_offsets(cfg.delta)
    if cfg.initiator_deadline_offset is not None:
        offs["initiator_deadline_offset"] = cfg.initiator_deadline_offset
    if cfg.responder_deadline_offset is not None:
        offs["responder_deadline_offset"] = cfg.responder_deadline_offset
    return {"secret": cfg.secret,
            "decoys": tuple(f"x_{p}" for p in cfg.parties),
            "contracts": tuple(contracts),
            **offs}


def build_swap_protocol(cfg: SwapConfig | None = None):
    """Return ``(protocol, catalog, options)`` for the swap scenario."""
    from .checker import CheckerOptions, Protocol, StrategyCatalog

    cfg = cfg or SwapConfig()
    contracts = build_swap_contracts(cfg)
    locked = not (cfg.initiator_refund and cfg.responder_refund)
    task = build_swap_task(cfg.parties, cfg.assets, cfg.contract_names,
                           locked_outcomes=locked, overrides=cfg.utility_overrides)
    params = swap_params(cfg, contracts)
    knowledge = ((Secret(cfg.secret), Secret(params["decoys"][0])),
                 (Secret(params["decoys"][1]),))
    protocol = Protocol(
        task=task,
        contracts=contracts,
        compliant=(SwapStrategy("initiator"), SwapStrategy("responder")),
        horizon=cfg.horizon if cfg.horizon is not None else default_horizon(cfg.delta),
        delta=cfg.delta,
        initial_knowledge=knowledge,
        params={k: v for k, v in params.items() if k != "contracts"},
        display_names=tuple(cfg.display_names),
        party_automata=tuple(system_automata(cfg.parties, contracts)[:2]),
        name=cfg.name,
    )
    catalog = StrategyCatalog(
        deviations={0: tuple(SwapStrategy("initiator", m) for m in mutations_for("initiator", cfg.extended_catalog)),
                    1: tuple(SwapStrategy("responder", m) for m in mutations_for("responder", cfg.extended_catalog))},
        joint=((frozenset({0, 1}), JointTransfer(())),
               (frozenset({0, 1}), JointTransfer((cfg.assets[0],))),
               (frozenset({0, 1}), JointTransfer((cfg.assets[1],))),
               (frozenset({0, 1}), JointTransfer(tuple(cfg.assets)))),
    )
    return protocol, catalog, CheckerOptions()


BROKEN_VARIANTS = {
    "swap-broken-timeout": dict(initiator_refund=False, name="swap-broken-timeout"),
    "swap-broken-deadline": dict(responder_deadline_offset=0, name="swap-broken-deadline"),
    "swap-broken-utility": dict(
        utility_overrides={(("a->B", "b->B"), "A"): 3}, name="swap-broken-utility"),
}
