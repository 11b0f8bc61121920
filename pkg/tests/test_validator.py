import copy
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import PAPER_GRAMMAR, make_schema
from handmorph.config import ValidatorConfig
from handmorph.grammar import expand, parse_grammar
from handmorph.llm import ReplyError, StubProvider
from handmorph.model import Edge, Finding, HandGraph, Node
from handmorph.validator import (
    CATALOG,
    DEFAULT_SEVERITY_WEIGHTS,
    RevisionExhausted,
    assess_structure_llm,
    catalog_weight_total,
    decide,
    revision_loop,
    run_rule_checks,
)

PAPER = parse_grammar(PAPER_GRAMMAR)
BAD_MOUNT = {
    **copy.deepcopy(PAPER_GRAMMAR),
    "components": {**PAPER_GRAMMAR["components"], "M1": "mount", "C1": "adapter"},
    "structure_rules": ["S -> P <-> F1 <-> F2 <-> F3", "F1 -> M1 <-> C1 <-> J1 <-> L1 <-> J2 <-> L2 <-> J3"]
    + PAPER_GRAMMAR["structure_rules"][2:],
}


def assess(score, issues=(), suggestions=()):
    return json.dumps({"score": score, "issues": list(issues), "suggestions": list(suggestions)})


def ids(findings):
    return {f.check_id for f in findings}


def expected_score(failed):
    total = sum(DEFAULT_SEVERITY_WEIGHTS[c.severity.value] for c in CATALOG)
    lost = sum(DEFAULT_SEVERITY_WEIGHTS[c.severity.value] for c in CATALOG if c.check_id in failed)
    return 1 - lost / total


# --------------------------------------------------------------------------
# Catalog and rule checks


def test_catalog_ids_unique_and_stable():
    assert [c.check_id for c in CATALOG] == ["R1", "R2", "R3", "R4", "R5", "R6", "R7"]
    assert catalog_weight_total() == 4 * 5 + 2 * 2


def test_paper_graph_passes_everything():
    findings, score = run_rule_checks(expand(PAPER), PAPER)
    assert findings == () and score == 1.0


def test_orphan_joint_is_r3_critical():
    g = expand(PAPER)
    graph = HandGraph(g.nodes + (Node("orphan", "joint", "J99"),), g.edges)
    findings, score = run_rule_checks(graph, PAPER)
    assert "R3" in ids(findings)
    assert next(f for f in findings if f.check_id == "R3").severity.value == "critical"
    assert score < 1


def test_chain_ending_in_link_is_r4_warning():
    data = copy.deepcopy(PAPER_GRAMMAR)
    data["structure_rules"][1] = "F1 -> J1 <-> L1 <-> J2 <-> L2"
    g = parse_grammar(data)
    findings, score = run_rule_checks(expand(g), g)
    assert ids(findings) == {"R4"}
    assert findings[0].severity.value == "warning"
    assert score == pytest.approx(1 - 2 / catalog_weight_total(), abs=1e-12)
    assert score == pytest.approx(expected_score({"R4"}), abs=1e-12)


def test_non_alternating_chain_is_r4():
    data = copy.deepcopy(PAPER_GRAMMAR)
    data["structure_rules"][1] = "F1 -> J1 <-> J2 <-> L1 <-> J3"
    g = parse_grammar(data)
    assert ids(run_rule_checks(expand(g), g)[0]) == {"R4"}


def test_two_hop_mount_is_r2():
    g = parse_grammar(BAD_MOUNT)
    findings, score = run_rule_checks(expand(g), g)
    assert ids(findings) == {"R2"}
    assert score == pytest.approx(expected_score({"R2"}))


def test_single_mount_passes_r2():
    data = copy.deepcopy(BAD_MOUNT)
    data["structure_rules"][1] = "F1 -> M1 <-> J1 <-> L1 <-> J2 <-> L2 <-> J3"
    data["components"].pop("C1")
    g = parse_grammar(data)
    assert run_rule_checks(expand(g), g)[0] == ()


def test_finger_attached_twice_is_r2():
    g = expand(PAPER)
    palm = g.nodes[0].id
    last = [n.id for n in g.nodes if n.label == "J3"][0]
    graph = HandGraph(g.nodes, g.edges + (Edge(palm, last, "bidirectional"),))
    assert "R2" in ids(run_rule_checks(graph, PAPER)[0])


def test_nine_fingers_is_r5():
    comps = {"P": "palm", **{f"J{i}": "joint" for i in range(9)}}
    g = parse_grammar({"components": comps,
                       "structure_rules": ["S -> P <-> " + " <-> ".join(f"J{i}" for i in range(9))],
                       "connection_rules": [], "layout_hints": {}})
    assert "R5" in ids(run_rule_checks(expand(g), g)[0])


def test_palm_without_fingers_is_r5():
    g = parse_grammar({"components": {"P": "palm"}, "structure_rules": ["S -> P"],
                       "connection_rules": [], "layout_hints": {}})
    assert ids(run_rule_checks(expand(g), g)[0]) == {"R5"}


def bypass(nodes, edges):
    """A graph built without constructor checks, as a buggy producer might hand over."""
    graph = object.__new__(HandGraph)
    object.__setattr__(graph, "nodes", tuple(nodes))
    object.__setattr__(graph, "edges", tuple(edges))
    return graph


def test_duplicate_ids_are_r6_and_two_palms_r1():
    g = expand(PAPER)
    dup = bypass(g.nodes + (Node(g.nodes[1].id, "joint", "Jx"),), g.edges)
    assert "R6" in ids(run_rule_checks(dup, PAPER)[0])
    two = bypass(g.nodes + (Node("extra", "palm", "P2"),), g.edges)
    assert "R1" in ids(run_rule_checks(two, PAPER)[0])
    none = bypass([n for n in g.nodes if n.kind.value != "palm"],
                  [e for e in g.edges if e.a != g.nodes[0].id])
    assert "R1" in ids(run_rule_checks(none, PAPER)[0])


@pytest.mark.parametrize("value,bad", [("24 mm", False), ("0.5", False), ("palmar", False),
                                       ("-3 mm", True), ("0", True), ("12 parsecs", True)])
def test_layout_hints_r7(value, bad):
    data = copy.deepcopy(PAPER_GRAMMAR)
    data["layout_hints"] = {"finger_spacing": value}
    g = parse_grammar(data)
    assert ("R7" in ids(run_rule_checks(expand(g), g)[0])) == bad


def test_rule_checks_pure():
    g = parse_grammar(BAD_MOUNT)
    graph = expand(g)
    assert run_rule_checks(graph, g) == run_rule_checks(graph, g)


# --------------------------------------------------------------------------
# LLM assessment


def test_assessment_normalized():
    stub = StubProvider({"assess": [assess(8, ["a"], ["b"])]})
    a = assess_structure_llm(PAPER, make_schema(), stub)
    assert a.score == pytest.approx(0.8)
    assert a.issues == ("a",) and a.suggestions == ("b",)
    prompt = stub.requests[0].messages[-1].content
    assert "J1 <-> L1" in prompt and "water bottle" in prompt


def test_assessment_from_fenced_prose():
    reply = "Overall the hand looks sound.\n```json\n" + assess(7) + "\n```\nLet me know."
    assert assess_structure_llm(PAPER, make_schema(), StubProvider({"assess": [reply]})).score == pytest.approx(0.7)


def test_assessment_clamped():
    assert assess_structure_llm(PAPER, make_schema(), StubProvider({"assess": [assess(14)]})).score == 1.0


def test_assessment_malformed_twice_errors():
    stub = StubProvider({"assess": ["{score: eight", "still not json"]})
    with pytest.raises(ReplyError):
        assess_structure_llm(PAPER, make_schema(), stub)
    assert len(stub.calls) == 2


# --------------------------------------------------------------------------
# Decision


def test_decide_examples():
    r = decide(1.0, 0.8, ())
    assert r.combined_score == pytest.approx(0.9) and r.accepted
    crit = (Finding("R3", "critical", "orphan"),)
    assert not decide(1.0, 1.0, crit).accepted
    r = decide(0.5, 0.5, ())
    assert r.combined_score == pytest.approx(0.5) and not r.accepted


def test_decide_threshold_boundary():
    assert decide(0.7, 0.7, ()).accepted


unit = st.floats(0, 1)


@given(unit, unit, unit, unit, st.booleans())
def test_decide_monotone(r1, l1, dr, dl, critical):
    findings = (Finding("R3", "critical", "x"),) if critical else ()
    lo = decide(r1, l1, findings)
    hi = decide(min(1, r1 + dr), min(1, l1 + dl), findings)
    assert not (lo.accepted and not hi.accepted)
    if critical:
        assert not lo.accepted and not hi.accepted


# --------------------------------------------------------------------------
# Revision loop


def test_valid_grammar_accepted_first_iteration():
    stub = StubProvider({"assess": [assess(8)]})
    out = revision_loop(PAPER, make_schema(), stub)
    assert out.iterations == 1 and out.report.accepted
    assert stub.call_counts() == {"assess": 1}


def test_invalid_then_valid_accepted_on_iteration_two():
    stub = StubProvider({"assess": [assess(5, ["two mounts"], ["attach directly"]), assess(8)],
                         "revise": [json.dumps(PAPER_GRAMMAR)]})
    seen = []
    out = revision_loop(parse_grammar(BAD_MOUNT), make_schema(), stub,
                        on_report=lambda i, r, g: seen.append(i))
    assert out.iterations == 2 and seen == [1, 2]
    assert out.grammar == PAPER and out.report.accepted
    assert not out.reports[0].accepted
    prompt = next(r for r in stub.requests if r.purpose == "revise").messages[-1].content
    assert "[R2]" in prompt and "attach directly" in prompt and "M1 <-> C1" in prompt


def test_always_invalid_exhausts_with_three_reports():
    stub = StubProvider({"assess": [assess(9)] * 3, "revise": [json.dumps(BAD_MOUNT)] * 2})
    with pytest.raises(RevisionExhausted) as e:
        revision_loop(parse_grammar(BAD_MOUNT), make_schema(), stub, max_iterations=3)
    assert len(e.value.reports) == 3
    assert all("R2" in ids(r.findings) for r in e.value.reports)
    assert stub.call_counts() == {"assess": 3, "revise": 2}


def test_critical_vetoes_any_score():
    stub = StubProvider({"assess": [assess(10)]})
    with pytest.raises(RevisionExhausted) as e:
        revision_loop(parse_grammar(BAD_MOUNT), make_schema(), stub, max_iterations=1)
    assert e.value.reports[0].llm_score == 1.0 and not e.value.reports[0].accepted


def test_cyclic_grammar_reported_not_raised():
    data = {"components": {"P": "palm", "J1": "joint"}, "structure_rules": ["S -> P <-> F1", "F1 -> J1 <-> F1"],
            "connection_rules": [], "layout_hints": {}}
    stub = StubProvider({"assess": [assess(9), assess(9)], "revise": [json.dumps(PAPER_GRAMMAR)]})
    out = revision_loop(parse_grammar(data), make_schema(), stub, config=ValidatorConfig())
    assert out.reports[0].findings[0].check_id == "R0"
    assert out.reports[0].rule_score == 0.0
    assert out.report.accepted


def test_max_iterations_must_be_positive():
    with pytest.raises(ValueError):
        revision_loop(PAPER, make_schema(), StubProvider({}), max_iterations=0)
