import re

import pytest

from xchain_verify.checker import enumerate_assignments, verify
from xchain_verify.scheduler import DeliveryPolicy, Message, explore
from xchain_verify.swap import (CLAIMED, ESCROWED, REFUNDED, UNESCROWED, SwapConfig, build_swap_protocol,
                                default_horizon, default_offsets, hash_match, mutations_for,
                                strategy_from_ref)
from xchain_verify.task import check_feasibility
from xchain_verify.values import HashOf, Plain, Secret, Token

from test_scheduler import deviation, swap_run

PROTO, CATALOG, OPTIONS = build_swap_protocol()
CA, CB = PROTO.contracts


def test_hash_match():
    assert hash_match(Secret("s1"), HashOf("s1"))
    assert not hash_match(Secret("s2"), HashOf("s1"))
    assert not hash_match(HashOf("s1"), HashOf("s1"))
    with pytest.raises(TypeError):
        hash_match(Secret("s1"), Secret("s1"))


def _escrow(state, sender=0, payload=(Token("a"), HashOf("s"), Plain(5)), rnd=1):
    return CA.apply(state, Message(sender, 0, "escrow", payload, rnd, rnd), rnd)


def test_htlc_lifecycle():
    s0 = CA.initial("a->A")
    assert s0.phase == UNESCROWED and CA.output(s0) == "a->A"
    s1 = _escrow(s0).state
    assert s1.phase == ESCROWED and s1.deadline == 5 and CA.output(s1) == "a->escrow"
    assert HashOf("s") in CA.public_values(s1)
    assert CA.tick(s1, 5) is None
    refunded = CA.tick(s1, 6)
    assert refunded.state.phase == REFUNDED and CA.output(refunded.state) == "a->A"
    claim = CA.apply(s1, Message(1, 0, "claim", (Secret("s"),), 5, 5), 5)
    assert claim.state.phase == CLAIMED and claim.published == (Secret("s"),)
    assert CA.output(claim.state) == "a->B"


@pytest.mark.parametrize("sender, payload", [
    (1, (Token("a"), HashOf("s"), Plain(5))),       # not the owner
    (0, (Token("b"), HashOf("s"), Plain(5))),       # wrong asset
    (0, (Token("a"), Secret("s"), Plain(5))),       # hashkey is not a hash
    (0, (Token("a"), HashOf("s"))),                 # short payload
])
def test_htlc_ignores_bad_escrows(sender, payload):
    assert _escrow(CA.initial("a->A"), sender, payload) is None


def test_htlc_ignores_bad_claims():
    s1 = _escrow(CA.initial("a->A")).state
    assert CA.apply(s1, Message(1, 0, "claim", (Secret("x"),), 2, 2), 2) is None
    assert CA.apply(s1, Message(0, 0, "claim", (Secret("s"),), 2, 2), 2) is None
    assert CA.apply(s1, Message(1, 0, "claim", (Secret("s"),), 6, 6), 6) is None


def test_deadlines_at_delta_zero_match_refund_rounds():
    offs = default_offsets(0)
    assert (offs["initiator_deadline_offset"], offs["responder_deadline_offset"]) == (3, 1)
    assert default_horizon(0) == 6
    proto, _, _ = build_swap_protocol(SwapConfig(delta=0))
    res = swap_run((proto.compliant[0], deviation(1, "no-claim")), proto=proto)
    deadlines = [int(m) for m in re.findall(r"deadline=(\d+)", " ".join(e.state for e in res.trace
                                                                      if e.action == "call:escrow"))]
    assert deadlines == [4, 3]


def test_swap_task_feasible():
    assert check_feasibility(PROTO.task).ok


@pytest.mark.parametrize("alice, bob, final", [
    ("compliant", "compliant", ("a->B", "b->A")),
    ("no-claim", "compliant", ("a->A", "b->B")),
    ("reveal-secret", "compliant", ("a->B", "b->B")),
    ("no-escrow", "compliant", ("a->A", "b->B")),
    ("compliant", "no-escrow", ("a->A", "b->B")),
    ("compliant", "no-claim", ("a->A", "b->A")),
])
@pytest.mark.parametrize("policy", ["immediate", "adversarial-max"])
def test_case_rows(alice, bob, final, policy):
    a = PROTO.compliant[0] if alice == "compliant" else deviation(0, alice)
    b = PROTO.compliant[1] if bob == "compliant" else deviation(1, bob)
    assert swap_run((a, b), policy).final_vector == final


def test_compliant_run_completes_by_round_four_at_delta_zero():
    proto, _, _ = build_swap_protocol(SwapConfig(delta=0))
    res = swap_run(proto.compliant, proto=proto)
    last_call = max(ev.round for ev in res.trace if ev.action.startswith("call:"))
    assert last_call <= 4 and res.final_vector == ("a->B", "b->A")


def test_catalog_contents():
    alice = [s.name for s in CATALOG.for_party(0)]
    bob = [s.name for s in CATALOG.for_party(1)]
    assert {"no-escrow", "no-claim", "reveal-secret"} <= set(alice)
    assert {"no-escrow", "no-claim"} <= set(bob)
    assert "reveal-secret" not in bob
    assert not any(s.name.startswith("early") for s in CATALOG.for_party(0))
    assert any(m.label == "early-claim" for m in mutations_for("initiator", extended=True))


def test_strategy_refs_round_trip():
    for strat in list(PROTO.compliant) + [s for p in (0, 1) for s in CATALOG.for_party(p)] \
            + [s for _, s in CATALOG.joint]:
        assert strategy_from_ref(strat.ref) == strat
    with pytest.raises(KeyError):
        strategy_from_ref("htlc-swap:initiator/bogus")


def _escrow_deadlines(trace):
    out = {}
    for ev in trace:
        if ev.action == "call:escrow":
            out[ev.actor] = int(re.search(r"deadline=(\d+)", ev.state).group(1))
    return out


def every_run(proto=PROTO, catalog=CATALOG, policies=("immediate", "adversarial-max")):
    ip, ic = proto.task.input_party_vectors[0], proto.task.input_contract_vectors[0]
    for comp in ((0, 1), (0,), (1,), ()):
        for assignment in enumerate_assignments(proto, catalog, frozenset(comp)):
            for pol in policies:
                bindings = proto.bindings(assignment, ip, ic)
                init = proto.initial_state(bindings, ic)
                for res in explore(init, bindings, proto.contracts, DeliveryPolicy(pol, proto.delta),
                                   proto.horizon):
                    yield comp, assignment, pol, res


def test_no_premature_refund_and_no_stuck_escrow():
    for comp, _, _, res in every_run(policies=("immediate", "adversarial-max", "exhaustive")):
        deadlines = _escrow_deadlines(res.trace)
        for ev in res.trace:
            if ev.action == "timeout":
                assert ev.round > deadlines[ev.actor]
        assert all("escrow" not in v for v in res.final_vector), (comp, res.final_vector)


def test_deadline_nesting_in_compliant_runs():
    for comp, assignment, _, res in every_run():
        if comp != (0, 1):
            continue
        d = _escrow_deadlines(res.trace)
        assert d["CB"] < d["CA"]


def test_secrecy_when_alice_never_reveals():
    s = Secret("s")
    checked = 0
    for comp, assignment, _, res in every_run():
        if comp != (1,):
            continue
        alice_sent_s = any(ev.actor == "A" and ev.action in ("send", "disclose") and s in ev.payload
                           for ev in res.trace)
        if alice_sent_s:
            continue
        checked += 1
        assert not any(ev.actor == "B" and ev.action == "learn" and s in ev.payload for ev in res.trace)
        assert s not in res.final_state.knowledge[1]
    assert checked > 0


def test_giveaway_without_hashlock_breaks_nash():
    proto, catalog, options = build_swap_protocol(SwapConfig(hashlock=False, name="giveaway"))
    rep = verify(proto, catalog, options)
    assert not rep.verdict("coalition-nash").passed


def test_extended_catalog_early_claim_races_escrow():
    proto, catalog, _ = build_swap_protocol(SwapConfig(extended_catalog=True))
    from xchain_verify.checker import CheckerOptions
    rep = verify(proto, catalog, CheckerOptions(exhaustive_order=True))
    assert rep.passed
    assert ("a->B", "b->A") in rep.xi_for(["B"]).outcomes
