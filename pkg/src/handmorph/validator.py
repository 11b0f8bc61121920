"""Hybrid structure validation: rule checks + LLM assessment, combined decision, revision loop."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Callable, List, Mapping, Optional, Sequence, Tuple

from .config import ValidatorConfig
from .grammar import (
    ATTACH_KINDS,
    CHAIN_KINDS,
    ExpansionError,
    GrammarError,
    expand,
    finger_branches,
    format_grammar,
)
from .llm import LLMProvider, ProviderError, build_request, request_json
from .model import (
    SCORE_SLACK,
    Finding,
    HandGrammar,
    HandGraph,
    NodeKind,
    SemanticSchema,
    Severity,
    ValidationReport,
    serialize_artifact,
)


@dataclass(frozen=True)
class RuleCheck:
    check_id: str
    description: str
    severity: Severity


# Ids are stable: they appear in revision prompts and persisted reports.
CATALOG: Tuple[RuleCheck, ...] = (
    RuleCheck("R1", "exactly one palm", Severity.CRITICAL),
    RuleCheck("R2", "every finger chain attached to the palm through at most one mount or connection",
              Severity.CRITICAL),
    RuleCheck("R3", "all components connected to the palm", Severity.CRITICAL),
    RuleCheck("R4", "finger chains alternate joint and link and end in a joint", Severity.WARNING),
    RuleCheck("R5", "finger count within [1, 8]", Severity.CRITICAL),
    RuleCheck("R6", "node ids unique", Severity.CRITICAL),
    RuleCheck("R7", "numeric layout hints parse and are positive", Severity.WARNING),
)
# Reported when a grammar cannot be expanded at all (cycle, runaway size).
EXPANSION_CHECK = "R0"

DEFAULT_SEVERITY_WEIGHTS = {"info": 1.0, "warning": 2.0, "critical": 4.0}
FINGER_COUNT_LIMITS = (1, 8)

_NUMERIC_START = re.compile(r"^\s*[-+]?(\d|\.\d)")
_NUMERIC = re.compile(r"^\s*([-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?)\s*(mm|deg|°|%)?\s*$")


def catalog_weight_total(weights: Mapping[str, float] = DEFAULT_SEVERITY_WEIGHTS) -> float:
    return sum(weights[c.severity.value] for c in CATALOG)


# --------------------------------------------------------------------------
# Rule checks


def _check_mounting(graph: HandGraph, palm: str, kinds, adj) -> List[str]:
    problems = []
    for i, branch in enumerate(finger_branches(graph)):
        members = set(branch.nodes)
        if branch.palm_edges > 1:
            problems.append(f"finger {i} attached to the palm by {branch.palm_edges} connections")
            continue
        # Count mount/connector hops between the palm and the first chain node.
        frontier = [(nb, 0) for nb in adj[palm] if nb in members]
        seen = {palm}
        hops = None
        while frontier:
            node, depth = frontier.pop(0)
            if node in seen:
                continue
            seen.add(node)
            if kinds[node] in CHAIN_KINDS:
                hops = depth
                break
            if kinds[node] in ATTACH_KINDS:
                frontier.extend((nb, depth + 1) for nb in adj[node] if nb in members)
        if hops is None:
            problems.append(f"finger {i} is not mounted on the palm through a mount or direct joint")
        elif hops > 1:
            problems.append(f"finger {i} is attached through {hops} mounts/connectors")
    return problems


def _chain_problems(graph: HandGraph, palm: str, kinds, adj) -> List[str]:
    problems = []
    for i, branch in enumerate(finger_branches(graph)):
        chain = [n for n in branch.nodes if kinds[n] in (NodeKind.JOINT, NodeKind.LINK)]
        if not chain:
            problems.append(f"finger {i} has no joint/link chain")
            continue
        inside = set(chain)
        deg = {n: sum(1 for nb in adj[n] if nb in inside) for n in chain}
        n_edges = sum(deg.values()) // 2
        ends = [n for n in chain if deg[n] <= 1]
        if len(chain) > 1 and (max(deg.values()) > 2 or n_edges != len(chain) - 1 or len(ends) != 2):
            problems.append(f"finger {i} joints and links do not form a single chain")
            continue
        # Walk from the end nearest the palm side (touching palm/mount/connector/root).
        def near_base(n):
            return any(nb == palm or kinds[nb] not in (NodeKind.JOINT, NodeKind.LINK, NodeKind.TENDON)
                       for nb in adj[n])
        start = next((n for n in ends if near_base(n)), ends[0])
        order, prev = [start], None
        while len(order) < len(chain):
            nxt = next(nb for nb in adj[order[-1]] if nb in inside and nb != prev and nb not in order)
            prev = order[-1]
            order.append(nxt)
        seq = [kinds[n] for n in order]
        if any(a == b for a, b in zip(seq, seq[1:])):
            problems.append(f"finger {i} chain does not alternate joint/link")
        elif seq[-1] is not NodeKind.JOINT:
            problems.append(f"finger {i} chain ends in a link instead of a joint")
    return problems


def _hint_problems(hints: Mapping[str, str]) -> List[str]:
    problems = []
    for key in sorted(hints):
        value = hints[key]
        if not _NUMERIC_START.match(value):
            continue
        m = _NUMERIC.match(value)
        if not m:
            problems.append(f"layout hint {key}={value!r} does not parse as a number")
        elif float(m.group(1)) <= 0:
            problems.append(f"layout hint {key}={value!r} is not positive")
    return problems


def run_rule_checks(
    graph: HandGraph,
    grammar: HandGrammar,
    severity_weights: Mapping[str, float] = DEFAULT_SEVERITY_WEIGHTS,
) -> Tuple[Tuple[Finding, ...], float]:
    """Evaluate the full catalog. Returns (findings, weighted pass fraction)."""
    kinds = {n.id: n.kind for n in graph.nodes}
    adj = graph.adjacency()
    palms = [n.id for n in graph.nodes if n.kind is NodeKind.PALM]
    palm = palms[0] if palms else None
    problems = {c.check_id: [] for c in CATALOG}

    if len(palms) != 1:
        problems["R1"].append(f"graph has {len(palms)} palm nodes")
    ids = [n.id for n in graph.nodes]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        problems["R6"].append(f"duplicate node ids: {', '.join(dupes)}")

    if palm is not None:
        problems["R2"] = _check_mounting(graph, palm, kinds, adj)
        problems["R4"] = _chain_problems(graph, palm, kinds, adj)
        count = len(finger_branches(graph))
    else:
        count = 0
    start = palm if palm is not None else (ids[0] if ids else None)
    seen = set()
    todo = [start] if start is not None else []
    while todo:
        cur = todo.pop()
        if cur in seen:
            continue
        seen.add(cur)
        todo.extend(adj.get(cur, ()))
    orphans = [n.label + f"({n.id})" for n in graph.nodes if n.id not in seen]
    if orphans:
        problems["R3"].append(f"components not connected to the palm: {', '.join(orphans)}")
    lo, hi = FINGER_COUNT_LIMITS
    if not lo <= count <= hi:
        problems["R5"].append(f"{count} fingers outside [{lo}, {hi}]")
    problems["R7"] = _hint_problems(grammar.layout_hints)

    findings = []
    passed = total = 0.0
    for check in CATALOG:
        w = severity_weights[check.severity.value]
        total += w
        if problems[check.check_id]:
            findings.extend(Finding(check.check_id, check.severity, msg) for msg in problems[check.check_id])
        else:
            passed += w
    return tuple(findings), passed / total


# --------------------------------------------------------------------------
# LLM assessment and decision


@dataclass(frozen=True)
class Assessment:
    score: float
    issues: Tuple[str, ...] = ()
    suggestions: Tuple[str, ...] = ()


def assess_structure_llm(
    grammar: HandGrammar,
    schema: SemanticSchema,
    provider: LLMProvider,
    *,
    scope: str = "",
    model: str = "",
) -> Assessment:
    """Ask the provider to score the structure 0-10; the score is normalised to [0, 1]."""
    request = build_request("assess", {
        "task_goal": schema.task_goal,
        "schema_json": serialize_artifact(schema).strip(),
        "grammar_json": json.dumps(format_grammar(grammar), indent=2, ensure_ascii=False),
    }, model=model, scope=scope)
    value = request_json(provider, request, "assessment")
    score = min(10.0, max(0.0, float(value["score"]))) / 10.0
    return Assessment(score, tuple(value.get("issues", ())), tuple(value.get("suggestions", ())))


def decide(
    rule_score: float,
    llm_score: float,
    findings: Sequence[Finding],
    config: ValidatorConfig = ValidatorConfig(),
    assessment: Optional[Assessment] = None,
) -> ValidationReport:
    combined = config.w_rule * rule_score + config.w_llm * llm_score
    combined = min(1.0, max(0.0, combined))
    critical = any(f.severity is Severity.CRITICAL for f in findings)
    accepted = combined >= config.threshold - SCORE_SLACK and not critical
    return ValidationReport(
        tuple(findings), rule_score, llm_score, combined, accepted, config.threshold,
        assessment.issues if assessment else (), assessment.suggestions if assessment else (),
    )


def validate_structure(
    grammar: HandGrammar,
    schema: SemanticSchema,
    provider: LLMProvider,
    config: ValidatorConfig = ValidatorConfig(),
    *,
    scope: str = "",
    model: str = "",
) -> Tuple[ValidationReport, Optional[HandGraph]]:
    """One validation pass: expand, rule-check, assess, decide."""
    try:
        graph = expand(grammar)
    except ExpansionError as e:
        graph = None
        findings: Tuple[Finding, ...] = (Finding(e.check_id, Severity.CRITICAL, str(e)),)
        rule_score = 0.0
    else:
        findings, rule_score = run_rule_checks(graph, grammar, config.severity_weights)
    assessment = assess_structure_llm(grammar, schema, provider, scope=scope, model=model)
    return decide(rule_score, assessment.score, findings, config, assessment), graph


# --------------------------------------------------------------------------
# Revision loop


class RevisionExhausted(ProviderError):
    """No acceptable grammar within the iteration budget."""

    def __init__(self, message: str, reports: Sequence[ValidationReport], grammar: HandGrammar,
                 graph: Optional[HandGraph]):
        self.reports = tuple(reports)
        self.grammar = grammar
        self.graph = graph
        super().__init__(message)


@dataclass(frozen=True)
class RevisionOutcome:
    grammar: HandGrammar
    graph: HandGraph
    report: ValidationReport
    reports: Tuple[ValidationReport, ...]

    @property
    def iterations(self) -> int:
        return len(self.reports)


def format_findings(findings: Sequence[Finding]) -> str:
    if not findings:
        return "- none"
    return "\n".join(f"- [{f.check_id}] ({f.severity.value}) {f.message}" for f in findings)


def _bullets(items: Sequence[str]) -> str:
    return "\n".join(f"- {s}" for s in items) if items else "- none"


def revise_grammar(
    grammar: HandGrammar,
    schema: SemanticSchema,
    report: ValidationReport,
    provider: LLMProvider,
    *,
    scope: str = "",
    model: str = "",
) -> HandGrammar:
    request = build_request("revise", {
        "schema_json": serialize_artifact(schema).strip(),
        "grammar_json": json.dumps(format_grammar(grammar), indent=2, ensure_ascii=False),
        "findings": format_findings(report.findings),
        "issues": _bullets(report.issues),
        "suggestions": _bullets(report.suggestions),
    }, model=model, scope=scope)
    from .grammar import parse_grammar
    return request_json(provider, request, "grammar", parse_grammar)


def revision_loop(
    grammar: HandGrammar,
    schema: SemanticSchema,
    provider: LLMProvider,
    max_iterations: Optional[int] = None,
    config: ValidatorConfig = ValidatorConfig(),
    *,
    scope: str = "",
    model: str = "",
    on_report: Optional[Callable[[int, ValidationReport, HandGrammar], None]] = None,
) -> RevisionOutcome:
    """Validate, and re-prompt with the findings until accepted or out of iterations.

    Sends at most ``max_iterations`` assessments and ``max_iterations - 1`` revisions.
    """
    limit = config.max_iterations if max_iterations is None else max_iterations
    if limit < 1:
        raise ValueError("max_iterations must be >= 1")
    reports: List[ValidationReport] = []
    graph = None
    for iteration in range(1, limit + 1):
        report, graph = validate_structure(grammar, schema, provider, config, scope=scope, model=model)
        reports.append(report)
        if on_report is not None:
            on_report(iteration, report, grammar)
        if report.accepted:
            return RevisionOutcome(grammar, graph, report, tuple(reports))
        if iteration < limit:
            try:
                grammar = revise_grammar(grammar, schema, report, provider, scope=scope, model=model)
            except GrammarError as e:  # pragma: no cover - request_json converts these
                raise RevisionExhausted(str(e), reports, grammar, graph) from None
    raise RevisionExhausted(
        f"structure not accepted after {limit} iterations", reports, grammar, graph)
