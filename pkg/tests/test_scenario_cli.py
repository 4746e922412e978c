import json
import subprocess
import sys
from pathlib import Path

import pytest

from xchain_verify import scenario
from xchain_verify.checker import verify
from xchain_verify.cli import run
from xchain_verify.report import render_machine

SHIPPED_DIR = Path(scenario.__file__).parent / "scenarios"


def xi_table(rep):
    return [(sorted(e.compliance), list(e.outcomes)) for e in rep.xi]


@pytest.mark.parametrize("name", scenario.SHIPPED)
def test_shipped_files_match_builtin_constructors(name):
    assert (SHIPPED_DIR / f"{name}.yaml").read_text() == scenario.dumps(scenario.builtin_swap_document(name))


def test_round_trip_preserves_verdicts_and_tables():
    from xchain_verify.swap import build_swap_protocol
    proto, catalog, options = build_swap_protocol()
    direct = verify(proto, catalog, options)
    sc = scenario.loads(scenario.dumps(scenario.builtin_swap_document()))
    reparsed = verify(sc.protocol, sc.catalog, sc.options)
    assert [(v.property, v.passed) for v in direct.verdicts] == [(v.property, v.passed) for v in reparsed.verdicts]
    assert xi_table(direct) == xi_table(reparsed)
    assert render_machine(direct) == render_machine(reparsed)


def test_resolves_shipped_scenarios_by_name():
    assert scenario.resolve_path("examples/swap").name == "swap.yaml"
    with pytest.raises(scenario.ScenarioError):
        scenario.resolve_path("examples/nope")


SWAP_TEXT = (SHIPPED_DIR / "swap.yaml").read_text()


def test_validate_lists_all_diagnostics():
    broken = SWAP_TEXT.replace("  - [0, 0, 3, [-1, 2]]\n", "").replace(
        "strategies: {A: 'htlc-swap:initiator', B: 'htlc-swap:responder'}",
        "strategies: {A: 'htlc-swap:initiator', B: 'htlc-swap:responder', Carol: idle}")
    diags = scenario.validate_text(broken)
    text = "\n".join(map(str, diags))
    assert "missing utility cell (0, 0, 3)" in text
    assert "undeclared party 'Carol'" in text
    assert len(diags) == 2


def test_parse_error_has_line_and_column():
    diags = scenario.validate_text("name: x\nparties: [\n")
    assert len(diags) == 1 and "line 3, column 1" in str(diags[0])


def test_float_utilities_rejected():
    diags = scenario.validate_text(SWAP_TEXT.replace("[0, 0, 2, [0, 0]]", "[0, 0, 2, [0.5, 0]]"))
    assert any("must be an int" in d.message for d in diags)


AUTOMATON_SCENARIO = """
name: toy
delta: 0
parties: [{id: P}, {id: Q}]
contracts:
  - id: K
    automaton:
      states: [idle, paid, done]
      initial: [idle]
      inputs: [pay, ack]
      steps: [[idle, pay, paid], [paid, ack, done]]
task:
  party_inputs: [[p, q]]
  contract_inputs: [[idle]]
  contract_outputs: [[idle], [paid], [done]]
  utility:
    - [0, 0, 0, [0, 0]]
    - [0, 0, 1, [-1, 1]]
    - [0, 0, 2, ["1/2", "1/2"]]
scripts:
  pay: [{round: 1, party: P, contract: K, call: pay}]
  ack: [{round: 2, party: Q, contract: K, call: ack}]
protocol:
  horizon: 4
  strategies: {P: 'script:pay', Q: 'script:ack'}
catalog:
  P: [idle]
  Q: [idle]
"""


def test_generic_automaton_scenario_verifies():
    sc = scenario.loads(AUTOMATON_SCENARIO)
    rep = verify(sc.protocol, sc.catalog, sc.options)
    assert rep.xi_for(["P", "Q"]).vectors == {("done",)}
    assert rep.xi_for(["P"]).vectors == {("paid",)}
    assert not rep.verdict("safety").passed          # P pays, Q never acknowledges
    assert rep.verdict("liveness").passed


# -- command line --------------------------------------------------------------


def test_cli_simulate_compliant():
    code, out, err = run(["simulate", "examples/swap", "--compliance", "A,B"])
    assert code == 0 and not err
    final = json.loads(out.splitlines()[-1])
    assert final["final_vector"] == ["a->B", "b->A"]


def test_cli_simulate_bob_deviates():
    code, out, _ = run(["simulate", "examples/swap", "--compliance", "A", "--bob-strategy", "no-escrow"])
    assert code == 0 and json.loads(out.splitlines()[-1])["final_vector"] == ["a->A", "b->B"]
    code, out2, _ = run(["simulate", "examples/swap", "--compliance", "A", "--strategy", "B=no-escrow"])
    assert out2 == out


def test_cli_simulate_joint_and_errors():
    code, out, _ = run(["simulate", "examples/swap", "--compliance", "", "--strategy", "A=transfer-a-b"])
    assert code == 0 and json.loads(out.splitlines()[-1])["final_vector"] == ["a->B", "b->A"]
    assert run(["simulate", "examples/swap", "--compliance", "A"])[0] == 2
    assert run(["simulate", "examples/swap", "--compliance", "A", "--bob-strategy", "nonsense"])[0] == 2
    assert run(["simulate", "examples/swap", "--alice-strategy", "no-claim"])[0] == 2


def test_cli_simulate_is_deterministic():
    args = ["simulate", "examples/swap", "--delivery", "adversarial-max"]
    assert run(args) == run(args)


def test_cli_verify_exit_codes():
    code, out, _ = run(["verify", "examples/swap"])
    assert code == 0
    assert [l.strip() for l in out.splitlines() if l.strip().endswith(": PASS") and l.startswith("  ")
            and not l.startswith("  (")] == ["liveness: PASS", "safety: PASS", "coalition-nash: PASS"]
    code, out, _ = run(["verify", "examples/swap-broken-timeout"])
    assert code == 1 and "safety: FAIL" in out and "r1 p1 A send" in out


def test_cli_machine_report_xi_sizes():
    code, out, _ = run(["verify", "--format", "machine", "examples/swap"])
    recs = [json.loads(l) for l in out.splitlines()]
    sizes = {tuple(r["compliance"]): len(r["outcomes"]) for r in recs if r["record"] == "xi"}
    assert (sizes[("A", "B")], sizes[("A",)], sizes[("B",)]) == (1, 2, 2)
    assert recs[-1] == {"record": "summary", "status": "PASS"}


def test_cli_input_errors_give_no_partial_output(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("parties: [\n")
    for cmd in ("simulate", "verify", "validate"):
        code, out, err = run([cmd, str(bad)])
        assert code == 2 and out == "" and "line" in err
    assert run(["verify", str(tmp_path / "missing.yaml")])[0] == 2
    assert run(["frobnicate"])[0] == 2
    assert run([])[0] == 2


def test_cli_validate(tmp_path):
    code, out, _ = run(["validate", "examples/swap"])
    assert code == 0 and out.strip() == "0 errors"
    f = tmp_path / "s.yaml"
    f.write_text(SWAP_TEXT.replace("  - [0, 0, 1, [1, 1]]\n", ""))
    code, _, err = run(["validate", str(f)])
    assert code == 2 and "(0, 0, 1)" in err and "1 errors" in err


def test_cli_demo_swap():
    code, out, _ = run(["demo", "swap"])
    assert code == 0 and "overall: PASS" in out
    code, out, _ = run(["demo", "swap", "--print-scenario"])
    assert out == SWAP_TEXT


def test_console_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "xchain_verify", "verify", "examples/swap-broken-deadline"],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "liveness: FAIL" in proc.stdout
