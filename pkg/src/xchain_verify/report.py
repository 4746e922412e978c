"""Rendering verification reports as text and as JSON Lines.

The machine format is one JSON object per line, each with a ``record``
field: ``header``, ``feasibility`` (x3), ``xi`` (one per inputs and
compliance set), ``verdict`` (x3), ``note``, and a closing ``summary``.
Keys are sorted and nothing time-dependent is included, so identical
inputs give byte-identical output.
"""

from __future__ import annotations

import json
from fractions import Fraction

from .checker import VerificationReport, Witness


def _frac(u: Fraction) -> str:
    return str(u)


def _jsonable(x):
    if isinstance(x, Fraction):
        return _frac(x)
    if isinstance(x, (tuple, list)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (str, int, bool)) or x is None:
        return x
    return str(x)


def witness_dict(w: Witness, *, with_trace: bool = True) -> dict:
    out = {"compliance": list(w.compliance),
           "strategies": [{"parties": list(ps), "strategy": ref} for ps, ref in w.assignment],
           "policy": w.policy,
           "choices": list(w.choices),
           "exhaustive_order": w.exhaustive_order,
           "party_inputs": _jsonable(w.party_inputs),
           "contract_inputs": _jsonable(w.contract_inputs),
           "final_vector": list(w.final_vector),
           "utility": [_frac(u) for u in w.utility]}
    if with_trace:
        out["trace"] = [ev.as_dict() for ev in w.trace]
    return out


def _set_text(parties, comp) -> str:
    return "{" + ",".join(parties[p] for p in sorted(comp)) + "}"


def machine_records(report: VerificationReport) -> list:
    parties = report.parties
    recs = [{"record": "header", "protocol": report.protocol_name, "parties": list(parties),
             "contracts": list(report.contracts), "catalog_size": report.catalog_size}]
    for v in report.feasibility.verdicts:
        recs.append({"record": "feasibility", "condition": v.condition, "name": v.name,
                     "status": "PASS" if v.ok else "FAIL", "witness": _jsonable(v.witness)})
    for e in report.xi:
        recs.append({"record": "xi", "compliance": [parties[p] for p in sorted(e.compliance)],
                     "party_inputs_index": e.ip_index, "contract_inputs_index": e.ic_index,
                     "outcomes": [{"vector": list(vec), "utility": [_frac(u) for u in w.utility],
                                   "witness": witness_dict(w, with_trace=False)}
                                  for vec, w in e.outcomes.items()]})
    for v in report.verdicts:
        rec = {"record": "verdict", "property": v.property, "status": "PASS" if v.passed else "FAIL",
               "detail": v.detail, "vacuous": v.vacuous,
               "witness": witness_dict(v.witness) if v.witness else None}
        if v.baseline is not None:
            rec["baseline"] = witness_dict(v.baseline, with_trace=False)
        recs.append(rec)
    for n in report.notes:
        recs.append({"record": "note", "text": n})
    recs.append({"record": "summary", "status": "PASS" if report.passed else "FAIL"})
    return recs


def render_machine(report: VerificationReport) -> str:
    return "".join(json.dumps(r, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"
                   for r in machine_records(report))


def _vec(v) -> str:
    return "[" + ", ".join(str(x) for x in v) + "]"


def render_text(report: VerificationReport) -> str:
    parties = report.parties
    lines = [f"protocol {report.protocol_name}: parties {', '.join(parties)}; "
             f"contracts {', '.join(report.contracts)}", "", "feasibility"]
    for v in report.feasibility.verdicts:
        lines.append(f"  ({v.condition}) {v.name}: {'PASS' if v.ok else 'FAIL'}")
        if not v.ok:
            lines.append(f"      witness: {_jsonable(v.witness)}")
    lines += ["", "execution function"]
    for e in report.xi:
        head = f"  Xi({_set_text(parties, e.compliance)})"
        if e.ip_index or e.ic_index:
            head += f" inputs ({e.ip_index}, {e.ic_index})"
        outs = ", ".join(f"{_vec(vec)} u={_vec(_frac(u) for u in w.utility)}"
                         for vec, w in e.outcomes.items())
        lines.append(f"{head} = {{{outs}}}")
    lines += ["", "verdicts"]
    for v in report.verdicts:
        status = "PASS" if v.passed else "FAIL"
        lines.append(f"  {v.property}: {status}" + (" (vacuous for some deviators)" if v.vacuous else ""))
        if not v.passed:
            w = v.witness
            lines.append(f"    {v.detail}")
            lines.append("    witness: " + "; ".join(f"{','.join(ps)}={ref}" for ps, ref in w.assignment)
                         + f"; delivery {w.policy}; choices {list(w.choices)}")
            lines.append(f"    final {_vec(w.final_vector)} utility {_vec(_frac(u) for u in w.utility)}")
            for ev in w.trace:
                payload = " ".join(str(x) for x in ev.payload)
                lines.append(f"      r{ev.round} p{ev.phase} {ev.actor} {ev.action}"
                             + (f" {payload}" if payload else "") + (f" -> {ev.state}" if ev.state else ""))
    if report.notes:
        lines += ["", "notes"] + [f"  - {n}" for n in report.notes]
    lines += ["", "overall: " + ("PASS" if report.passed else "FAIL")]
    return "\n".join(lines) + "\n"
