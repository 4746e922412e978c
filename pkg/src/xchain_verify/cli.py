"""Command line: ``xchain-verify {validate,simulate,verify,demo}``.

Exit status is 0 when everything passes, 1 when a property fails, and 2
for any input error. Output is assembled completely before it is written,
so an error never leaves a partial report behind.
"""

from __future__ import annotations

import argparse
import json
import re
import sys

from . import report as report_mod
from . import scenario as scenario_mod
from .checker import CheckerOptions, verify
from .scheduler import ALL_POLICIES, DeliveryPolicy, run_execution
from .values import KnowledgeViolation

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2

_PARTY_FLAG = re.compile(r"^--([A-Za-z0-9_]+)-strategy(?:=(.*))?$")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="xchain-verify", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="check a scenario file without running it")
    v.add_argument("scenario")

    s = sub.add_parser("simulate", help="run one execution and print its trace",
                       epilog="Per-party strategies may also be given as --<party>-strategy NAME, "
                              "using a party id or display name, e.g. --bob-strategy no-escrow.")
    s.add_argument("scenario")
    s.add_argument("--compliance", help="comma-separated compliant parties (default: all)")
    s.add_argument("--strategy", action="append", default=[], metavar="PARTY=NAME",
                   help="strategy for a deviating party (catalog name or full reference)")
    s.add_argument("--delivery", choices=ALL_POLICIES, default="immediate")
    s.add_argument("--choices", default="", help="comma-separated choice vector to replay")
    s.add_argument("--exhaustive-order", action="store_true")

    r = sub.add_parser("verify", help="check liveness, safety and coalition-nash")
    r.add_argument("scenario")
    _verify_flags(r)

    d = sub.add_parser("demo", help="built-in scenarios")
    d.add_argument("which", choices=["swap"])
    d.add_argument("--print-scenario", action="store_true", help="print the scenario file instead")
    _verify_flags(d)
    return p


def _verify_flags(p):
    p.add_argument("--format", choices=["text", "machine"], default="text")
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: $XCHAIN_VERIFY_WORKERS or 1)")
    p.add_argument("--exhaustive-order", action="store_true", default=None,
                   help="explore every within-round message order")
    p.add_argument("--exhaustive-delay", action="store_true", default=None,
                   help="also explore every delivery delay")


def _split_party_flags(argv):
    """Pull ``--<party>-strategy`` flags out of argv; returns (rest, [(party, name)])."""
    rest, pairs, i = [], [], 0
    while i < len(argv):
        m = _PARTY_FLAG.match(argv[i])
        if m and m.group(1) != "":
            if m.group(2) is not None:
                pairs.append((m.group(1), m.group(2)))
            elif i + 1 < len(argv):
                pairs.append((m.group(1), argv[i + 1]))
                i += 1
            else:
                raise UsageError(f"{argv[i]} needs a value")
        else:
            rest.append(argv[i])
        i += 1
    return rest, pairs


def _party_index(sc, token: str) -> int:
    proto = sc.protocol
    for i, (pid, name) in enumerate(zip(proto.parties, proto.display_names or proto.parties)):
        if token.lower() in (pid.lower(), name.lower()):
            return i
    raise UsageError(f"unknown party {token!r}")


def _options(sc, args) -> CheckerOptions:
    base = sc.options
    return CheckerOptions(
        policies=base.policies,
        exhaustive_order=base.exhaustive_order if args.exhaustive_order is None else args.exhaustive_order,
        exhaustive_delay=base.exhaustive_delay if args.exhaustive_delay is None else args.exhaustive_delay,
        workers=args.workers)


def cmd_validate(args) -> tuple[int, str]:
    try:
        path = scenario_mod.resolve_path(args.scenario)
        text = path.read_text(encoding="utf-8")
    except (scenario_mod.ScenarioError, OSError) as exc:
        return EXIT_INPUT, f"error: {args.scenario}: {exc}\n1 errors\n"
    diags = scenario_mod.validate_text(text, args.scenario)
    errors = sum(d.severity == "error" for d in diags)
    out = "".join(f"{d}\n" for d in diags) + f"{errors} errors\n"
    return (EXIT_INPUT if errors else EXIT_OK), out


def cmd_simulate(args, party_flags) -> tuple[int, str]:
    sc = scenario_mod.load(args.scenario)
    proto = sc.protocol
    m = proto.task.m
    if args.compliance is None:
        compliance = set(range(m))
    else:
        compliance = {_party_index(sc, t.strip()) for t in args.compliance.split(",") if t.strip()}
    chosen = {}
    for spec in args.strategy:
        party, sep, name = spec.partition("=")
        if not sep:
            raise UsageError(f"--strategy expects PARTY=NAME, got {spec!r}")
        chosen[_party_index(sc, party.strip())] = name.strip()
    for party, name in party_flags:
        chosen[_party_index(sc, party)] = name
    for p in chosen:
        if p in compliance:
            raise UsageError(f"party {proto.parties[p]} is compliant; drop it from --compliance "
                             "to give it another strategy")
    assignment = [((p,), proto.compliant[p]) for p in sorted(compliance)]
    joint_done = set()
    for p in sorted(set(range(m)) - compliance):
        if p in joint_done:
            continue
        if p not in chosen:
            raise UsageError(f"deviating party {proto.parties[p]} needs a strategy "
                             f"(--{proto.parties[p]}-strategy NAME)")
        try:
            strat = sc.strategy_for(p, chosen[p])
        except KeyError:
            raise UsageError(f"unknown strategy {chosen[p]!r} for party {proto.parties[p]}") from None
        if strat.joint:
            members = next(ps for ps, s in sc.catalog.joint if s == strat)
            if members & compliance:
                raise UsageError(f"joint strategy {strat.ref} covers a compliant party")
            joint_done |= set(members)
            assignment.append((tuple(sorted(members)), strat))
        else:
            assignment.append(((p,), strat))
    assignment.sort(key=lambda b: b[0])
    try:
        choices = tuple(int(c) for c in args.choices.split(",") if c.strip())
    except ValueError:
        raise UsageError(f"--choices expects integers, got {args.choices!r}") from None
    ip = proto.task.input_party_vectors[0]
    ic = proto.task.input_contract_vectors[0]
    bindings = proto.bindings(tuple(assignment), ip, ic)
    init = proto.initial_state(bindings, ic)
    try:
        res = run_execution(init, bindings, proto.contracts, DeliveryPolicy(args.delivery, proto.delta),
                            proto.horizon, choices=choices, exhaustive_order=args.exhaustive_order)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    lines = [ev.to_line() for ev in res.trace]
    final = {"record": "final", "final_vector": list(res.final_vector), "choices": list(res.choices)}
    if res.final_vector in proto.task.output_contract_vectors:
        from .task import Transition
        final["utility"] = [str(u) for u in proto.task.utility_vector(Transition(ip, ic, res.final_vector))]
    lines.append(json.dumps(final, sort_keys=True, separators=(",", ":")))
    return EXIT_OK, "\n".join(lines) + "\n"


def _render(rep, fmt) -> tuple[int, str]:
    text = report_mod.render_machine(rep) if fmt == "machine" else report_mod.render_text(rep)
    return (EXIT_OK if rep.passed else EXIT_FAIL), text


def cmd_verify(args) -> tuple[int, str]:
    sc = scenario_mod.load(args.scenario)
    return _render(verify(sc.protocol, sc.catalog, _options(sc, args)), args.format)


def cmd_demo(args) -> tuple[int, str]:
    doc = scenario_mod.builtin_swap_document("swap")
    if args.print_scenario:
        return EXIT_OK, scenario_mod.dumps(doc)
    sc = scenario_mod.from_document(doc, source="builtin:swap")
    return _render(verify(sc.protocol, sc.catalog, _options(sc, args)), args.format)


def run(argv=None) -> tuple[int, str, str]:
    """Run the CLI; returns ``(exit status, stdout text, stderr text)``."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        rest, party_flags = _split_party_flags(argv)
        args = build_parser().parse_args(rest)
        if party_flags and args.command != "simulate":
            raise UsageError("--<party>-strategy flags only apply to simulate")
        if args.command == "validate":
            code, out = cmd_validate(args)
            return code, (out if code == EXIT_OK else ""), ("" if code == EXIT_OK else out)
        if args.command == "simulate":
            code, out = cmd_simulate(args, party_flags)
        elif args.command == "verify":
            code, out = cmd_verify(args)
        else:
            code, out = cmd_demo(args)
        return code, out, ""
    except SystemExit as exc:       # --help
        return (EXIT_OK if not exc.code else EXIT_INPUT), "", ""
    except UsageError as exc:
        return EXIT_INPUT, "", f"error: {exc}\n"
    except scenario_mod.ScenarioError as exc:
        return EXIT_INPUT, "", "".join(f"{d}\n" for d in exc.diagnostics)
    except KnowledgeViolation as exc:
        return EXIT_INPUT, "", f"error: modeling bug: {exc}\n"
    except Exception as exc:        # never leak other exit codes
        return EXIT_INPUT, "", f"error: {type(exc).__name__}: {exc}\n"


def main(argv=None) -> int:
    code, out, err = run(argv)
    if out:
        sys.stdout.write(out)
    if err:
        sys.stderr.write(err)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
