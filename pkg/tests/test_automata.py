import pytest
from hypothesis import given, settings, strategies as st

from xchain_verify.automata import (AutomatonError, ComposabilityError, ExecutionFragment,
                                    InterfaceAutomaton, UnknownStateError, check_composability,
                                    compose, compose_all, enabled_actions, reachable_states,
                                    shared_actions, validate_fragment)
from xchain_verify.swap import ESCROWED, SwapConfig, build_swap_contracts, system_automata

from oracles import brute_compose, brute_composable, brute_reachable, random_automaton


def ia(states, init, ins=(), outs=(), hid=(), steps=(), name=""):
    return InterfaceAutomaton(set(states), set(init), set(ins), set(outs), set(hid), set(steps), name)


def test_enabled_actions_single_step():
    a = ia({"v0", "v1"}, {"v0"}, ins={"x"}, steps={("v0", "x", "v1")})
    assert enabled_actions(a, "v0") == {"x"}
    assert enabled_actions(a, "v1") == set()


def test_enabled_actions_unknown_state():
    a = ia({"v0"}, {"v0"})
    with pytest.raises(UnknownStateError):
        enabled_actions(a, "nope")


def test_htlc_escrowed_enables_claim_and_refund():
    ca = build_swap_contracts(SwapConfig())[0].automaton()
    visible = {x for x in enabled_actions(ca, ESCROWED) if ".read>" not in x}
    assert visible == {"B.claim>CA", "CA.refund"}


def test_shared_actions():
    a = ia({0}, {0}, outs={"m"})
    b = ia({0}, {0}, ins={"m"})
    c = ia({0}, {0}, ins={"q"})
    assert shared_actions(a, b) == {"m"}
    assert shared_actions(a, c) == set()


def test_swap_party_and_contract_share_their_calls():
    alice, bob, ca, cb = system_automata(("A", "B"), build_swap_contracts(SwapConfig()))
    assert shared_actions(alice, ca) == {"A.escrow>CA", "CA.read>A"}
    assert shared_actions(alice, cb) == {"A.claim>CB", "CB.read>A"}
    assert shared_actions(alice, bob) == set()


@pytest.mark.parametrize("kwargs_a, kwargs_b, condition, offending", [
    (dict(ins={"x"}), dict(ins={"x"}), 1, {"x"}),
    (dict(outs={"y"}), dict(outs={"y"}), 2, {"y"}),
    (dict(hid={"h"}), dict(ins={"h"}), 3, {"h"}),
    (dict(outs={"h"}), dict(hid={"h"}), 4, {"h"}),
])
def test_composability_violations(kwargs_a, kwargs_b, condition, offending):
    rep = check_composability(ia({0}, {0}, **kwargs_a), ia({0}, {0}, **kwargs_b))
    assert not rep.ok
    assert [(v.condition, set(v.offending)) for v in rep.violations] == [(condition, offending)]


def test_disjoint_automata_compose():
    assert check_composability(ia({0}, {0}, ins={"a"}), ia({0}, {0}, outs={"b"})).ok


def test_compose_rejects_incomposable():
    with pytest.raises(ComposabilityError):
        compose(ia({0}, {0}, ins={"x"}), ia({0}, {0}, ins={"x"}))


def test_compose_with_trivial_automaton_is_isomorphic():
    b = ia({"w0", "w1"}, {"w0"}, ins={"i"}, outs={"o"}, steps={("w0", "i", "w1"), ("w1", "o", "w0")})
    p = compose(ia({"u"}, {"u"}), b)
    assert p.states == {("u", "w0"), ("u", "w1")}
    assert p.steps == {(("u", "w0"), "i", ("u", "w1")), (("u", "w1"), "o", ("u", "w0"))}
    assert p.input_actions == {"i"} and p.output_actions == {"o"}


def test_shared_step_synchronises_and_becomes_internal():
    a = ia({"u0", "u1"}, {"u0"}, outs={"m"}, steps={("u0", "m", "u1")})
    b = ia({"w0", "w1"}, {"w0"}, ins={"m"}, steps={("w0", "m", "w1")})
    p = compose(a, b)
    assert p.steps == {(("u0", "w0"), "m", ("u1", "w1"))}
    assert p.internal_actions == {"m"}
    assert not p.input_actions and not p.output_actions


def test_two_state_counts_match_brute_force():
    a = ia({0, 1}, {0}, outs={"s"}, hid={"p"}, steps={(0, "s", 1), (1, "p", 0)})
    b = ia({0, 1}, {0}, ins={"s"}, outs={"q"}, steps={(0, "s", 1), (1, "q", 0)})
    p = compose(a, b)
    assert p.steps == brute_compose(a, b)["steps"]
    assert len(p.steps) == 1 + 2 + 2


def test_compose_all_base_cases():
    a = ia({0, 1}, {0}, outs={"m"}, steps={(0, "m", 1)})
    b = ia({0, 1}, {0}, ins={"m"}, steps={(0, "m", 1)})
    assert compose_all([a]) == a
    assert compose_all([a, b]) == compose(a, b)
    with pytest.raises(AutomatonError):
        compose_all([])


def test_compose_all_names_failing_pair():
    a, b = ia({0}, {0}, name="a"), ia({0}, {0}, ins={"x"}, name="b")
    c = ia({0}, {0}, ins={"x"}, name="c")
    with pytest.raises(ComposabilityError, match="c"):
        compose_all([a, b, c])


def test_swap_system_reachable_states_match_brute_force():
    components = system_automata(("A", "B"), build_swap_contracts(SwapConfig()))
    system = compose_all(components)
    assert reachable_states(system) == brute_reachable(components)
    assert all(len(s) == 4 for s in system.states)


def test_automaton_invariants_enforced():
    with pytest.raises(AutomatonError):
        ia({0}, {0}, ins={"x"}, outs={"x"})
    with pytest.raises(AutomatonError):
        ia({0}, set())
    with pytest.raises(AutomatonError):
        ia({0}, {1})
    with pytest.raises(AutomatonError):
        ia({0}, {0}, steps={(0, "undeclared", 0)})


def test_validate_fragment():
    a = ia({0, 1}, {0}, ins={"x"}, steps={(0, "x", 1)})
    assert validate_fragment(a, ExecutionFragment((0,)))
    assert validate_fragment(a, ExecutionFragment.from_sequence([0, "x", 1]))
    bad = validate_fragment(a, ExecutionFragment.from_sequence([1, "x", 0]))
    assert not bad and bad.index == 0
    later = validate_fragment(a, ExecutionFragment.from_sequence([0, "x", 1, "x", 1]))
    assert later.index == 1
    assert validate_fragment(a, ExecutionFragment(("zz",))).index == 0


actions = st.sets(st.sampled_from([f"x{i}" for i in range(6)]), max_size=6)


@st.composite
def automata(draw, prefix):
    n = draw(st.integers(1, 4))
    states = [f"{prefix}{i}" for i in range(n)]
    acts = sorted(draw(actions))
    kinds = [draw(st.sampled_from("ioh")) for _ in acts]
    ins = {a for a, k in zip(acts, kinds) if k == "i"}
    outs = {a for a, k in zip(acts, kinds) if k == "o"}
    hid = {a for a, k in zip(acts, kinds) if k == "h"}
    steps = set()
    if acts:
        steps = draw(st.sets(st.tuples(st.sampled_from(states), st.sampled_from(acts),
                                       st.sampled_from(states)), max_size=10))
    init = draw(st.sets(st.sampled_from(states), min_size=1))
    return InterfaceAutomaton(states, init, ins, outs, hid, steps)


@settings(max_examples=150, deadline=None)
@given(automata("u"), automata("w"))
def test_composability_symmetric_and_matches_definition(a, b):
    assert check_composability(a, b).ok == check_composability(b, a).ok == brute_composable(a, b)


@settings(max_examples=150, deadline=None)
@given(automata("u"), automata("w"))
def test_product_properties(a, b):
    if not brute_composable(a, b):
        return
    p = compose(a, b)
    ref = brute_compose(a, b)
    assert p.steps == ref["steps"]
    assert p.states == ref["states"] and p.initial_states == ref["initial"]
    assert not (p.input_actions & p.output_actions) and not (p.input_actions & p.internal_actions)
    shared = shared_actions(a, b)
    assert shared <= p.internal_actions
    assert not (shared & (p.input_actions | p.output_actions))


@settings(max_examples=100, deadline=None)
@given(automata("u"), st.data())
def test_prefixes_of_valid_fragments_are_valid(a, data):
    state = data.draw(st.sampled_from(sorted(a.initial_states)))
    seq = [state]
    for _ in range(data.draw(st.integers(0, 5))):
        outgoing = sorted(s for s in a.steps if s[0] == seq[-1])
        if not outgoing:
            break
        _, act, nxt = data.draw(st.sampled_from(outgoing))
        seq += [act, nxt]
    frag = ExecutionFragment.from_sequence(seq)
    assert validate_fragment(a, frag)
    for n in range(len(frag) + 1):
        assert validate_fragment(a, frag.prefix(n))


def test_random_generator_stays_within_bounds():
    import random
    rng = random.Random(1)
    for _ in range(50):
        a = random_automaton(rng, ["x0", "x1", "x2", "x3", "x4", "x5"])
        assert len(a.states) <= 4 and len(a.actions) <= 6
