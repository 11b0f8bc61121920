"""Shared domain types and the canonical run-artifact JSON format.

Every type is a frozen dataclass whose invariants are checked in
``__post_init__``. ``serialize_artifact`` / ``deserialize_artifact`` convert
between these values and canonical JSON text (sorted keys, UTF-8, floats at
six significant digits).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Mapping, Optional, Sequence, Tuple


class InvariantError(ValueError):
    """A value violates a type invariant. ``path`` is the JSON path of the offender."""

    def __init__(self, message: str, path: str = ""):
        self.message = message
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)

    def at(self, prefix: str) -> "InvariantError":
        if not prefix:
            return self
        if not self.path:
            joined = prefix
        elif self.path.startswith("["):
            joined = prefix + self.path
        else:
            joined = f"{prefix}.{self.path}"
        return InvariantError(self.message, joined)


class ArtifactError(ValueError):
    """Artifact text is not valid JSON or names an unknown kind."""


class Level(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


class GraspType(str, Enum):
    FORCE_BASED = "force_based"
    FINE_MANIPULATION = "fine_manipulation"
    TOOL_BASED = "tool_based"


class Connector(str, Enum):
    BIDIRECTIONAL = "bidirectional"
    SEQUENTIAL = "sequential"
    NONE = "none"


class NodeKind(str, Enum):
    PALM = "palm"
    FINGER_ROOT = "finger_root"
    JOINT = "joint"
    LINK = "link"
    MOUNT = "mount"
    TENDON = "tendon"
    CONNECTOR = "connector"


class Severity(str, Enum):
    INFO = "info"
    WARNING = "warning"
    CRITICAL = "critical"


# Leading letter of a terminal symbol -> component kind.
KIND_PREFIXES: Dict[str, NodeKind] = {
    "P": NodeKind.PALM,
    "F": NodeKind.FINGER_ROOT,
    "J": NodeKind.JOINT,
    "L": NodeKind.LINK,
    "T": NodeKind.TENDON,
    "M": NodeKind.MOUNT,
    "C": NodeKind.CONNECTOR,
}

MAX_FINGERS = 8


def kind_of_terminal(symbol: str) -> NodeKind:
    try:
        return KIND_PREFIXES[symbol[:1].upper()]
    except KeyError:
        raise InvariantError(
            f"terminal {symbol!r} must start with one of {''.join(KIND_PREFIXES)}"
        ) from None


def _finite(value: float, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvariantError(f"expected a number, got {value!r}", name)
    value = float(value)
    if not math.isfinite(value):
        raise InvariantError("must be finite", name)
    return value


def _enum(cls, value, name: str):
    try:
        return cls(value)
    except ValueError:
        allowed = ", ".join(m.value for m in cls)
        raise InvariantError(f"{value!r} not one of {{{allowed}}}", name) from None


def _set(obj, name, value):
    object.__setattr__(obj, name, value)


# --------------------------------------------------------------------------
# Semantic schema


@dataclass(frozen=True)
class SemanticSchema:
    task_goal: str
    object_name: str
    object_size_mm: Tuple[float, float, float]
    object_mass_g: float
    material: str
    fragility: Level
    surface_friction: Level
    force_level: Level
    precision_level: Level
    grasp_type: GraspType

    def __post_init__(self):
        if not isinstance(self.task_goal, str) or not self.task_goal.strip():
            raise InvariantError("task_goal must be non-empty text", "task_goal")
        for name in ("object_name", "material"):
            if not isinstance(getattr(self, name), str):
                raise InvariantError("must be text", name)
        size = tuple(self.object_size_mm)
        if len(size) != 3:
            raise InvariantError("must have exactly 3 dimensions", "object_size_mm")
        size = tuple(_finite(v, f"object_size_mm[{i}]") for i, v in enumerate(size))
        for i, v in enumerate(size):
            if v <= 0:
                raise InvariantError("dimension must be strictly positive", f"object_size_mm[{i}]")
        _set(self, "object_size_mm", size)
        mass = _finite(self.object_mass_g, "object_mass_g")
        if mass < 0:
            raise InvariantError("mass must be non-negative", "object_mass_g")
        _set(self, "object_mass_g", mass)
        for name in ("fragility", "surface_friction", "force_level", "precision_level"):
            _set(self, name, _enum(Level, getattr(self, name), name))
        _set(self, "grasp_type", _enum(GraspType, self.grasp_type, "grasp_type"))

    def to_dict(self) -> dict:
        return {
            "task_goal": self.task_goal,
            "object_name": self.object_name,
            "object_size_mm": list(self.object_size_mm),
            "object_mass_g": self.object_mass_g,
            "material": self.material,
            "fragility": self.fragility.value,
            "surface_friction": self.surface_friction.value,
            "force_level": self.force_level.value,
            "precision_level": self.precision_level.value,
            "grasp_type": self.grasp_type.value,
        }

    @classmethod
    def from_dict(cls, data: Any) -> "SemanticSchema":
        return _build(cls, data, required=(
            "task_goal", "object_name", "object_size_mm", "object_mass_g", "material",
            "fragility", "surface_friction", "force_level", "precision_level", "grasp_type",
        ))


# --------------------------------------------------------------------------
# Grammar


@dataclass(frozen=True)
class RhsItem:
    symbol: str
    connector: Connector

    def __post_init__(self):
        if not isinstance(self.symbol, str) or not self.symbol:
            raise InvariantError("symbol must be non-empty text", "symbol")
        _set(self, "connector", _enum(Connector, self.connector, "connector"))


@dataclass(frozen=True)
class ProductionRule:
    lhs: str
    rhs: Tuple[RhsItem, ...]

    def __post_init__(self):
        if not isinstance(self.lhs, str) or not self.lhs:
            raise InvariantError("lhs must be non-empty text", "lhs")
        rhs = tuple(self.rhs)
        if not rhs:
            raise InvariantError("rhs must be non-empty", "rhs")
        for i, item in enumerate(rhs[:-1]):
            if item.connector is Connector.NONE:
                raise InvariantError("only the last element may carry connector none", f"rhs[{i}].connector")
        if rhs[-1].connector is not Connector.NONE:
            raise InvariantError("last element must carry connector none", f"rhs[{len(rhs) - 1}].connector")
        _set(self, "rhs", rhs)

    @property
    def symbols(self) -> Tuple[str, ...]:
        return tuple(item.symbol for item in self.rhs)

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": [[i.symbol, i.connector.value] for i in self.rhs]}

    @classmethod
    def from_dict(cls, data: Any) -> "ProductionRule":
        r = _Reader(data, ("lhs", "rhs"))
        items = []
        for i, pair in enumerate(r.list("rhs")):
            if not isinstance(pair, list) or len(pair) != 2:
                raise InvariantError("expected [symbol, connector]", f"rhs[{i}]")
            try:
                items.append(RhsItem(pair[0], pair[1]))
            except InvariantError as e:
                raise e.at(f"rhs[{i}]") from None
        return cls(r.get("lhs"), tuple(items))


@dataclass(frozen=True)
class HandGrammar:
    nonterminals: frozenset
    terminals: frozenset
    attributes: Mapping[str, Mapping[str, str]]
    rules: Tuple[ProductionRule, ...]
    start_symbol: str
    layout_hints: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        nts = frozenset(self.nonterminals)
        ts = frozenset(self.terminals)
        _set(self, "nonterminals", nts)
        _set(self, "terminals", ts)
        _set(self, "rules", tuple(self.rules))
        if nts & ts:
            raise InvariantError(f"symbols both terminal and nonterminal: {sorted(nts & ts)}", "terminals")
        if self.start_symbol not in nts:
            raise InvariantError(f"start symbol {self.start_symbol!r} is not a nonterminal", "start_symbol")
        for sym in sorted(ts):
            try:
                kind_of_terminal(sym)
            except InvariantError as e:
                raise e.at("terminals") from None
        for i, rule in enumerate(self.rules):
            if rule.lhs not in nts:
                raise InvariantError(f"lhs {rule.lhs!r} is not a nonterminal", f"rules[{i}].lhs")
            for j, sym in enumerate(rule.symbols):
                if sym not in nts and sym not in ts:
                    raise InvariantError(f"symbol {sym!r} is not defined", f"rules[{i}].rhs[{j}]")
        starts = sum(1 for r in self.rules if r.lhs == self.start_symbol)
        if starts != 1:
            raise InvariantError(f"expected exactly one rule for start symbol, found {starts}", "rules")
        for sym, attrs in self.attributes.items():
            if sym not in nts and sym not in ts:
                raise InvariantError(f"attributes for undefined symbol {sym!r}", "attributes")
            for k, v in attrs.items():
                if not isinstance(k, str) or not isinstance(v, str):
                    raise InvariantError("attribute keys and values must be text", f"attributes.{sym}")
        for k, v in self.layout_hints.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise InvariantError("layout hint keys and values must be text", "layout_hints")

    def rule_for(self, symbol: str) -> Optional[ProductionRule]:
        for rule in self.rules:
            if rule.lhs == symbol:
                return rule
        return None

    def to_dict(self) -> dict:
        return {
            "nonterminals": sorted(self.nonterminals),
            "terminals": sorted(self.terminals),
            "attributes": {s: dict(a) for s, a in self.attributes.items()},
            "rules": [r.to_dict() for r in self.rules],
            "start_symbol": self.start_symbol,
            "layout_hints": dict(self.layout_hints),
        }

    @classmethod
    def from_dict(cls, data: Any) -> "HandGrammar":
        r = _Reader(data, ("nonterminals", "terminals", "attributes", "rules", "start_symbol", "layout_hints"))
        rules = r.items("rules", ProductionRule.from_dict)
        return cls(
            frozenset(r.list("nonterminals")),
            frozenset(r.list("terminals")),
            r.dict("attributes"),
            tuple(rules),
            r.get("start_symbol"),
            r.dict("layout_hints"),
        )


# --------------------------------------------------------------------------
# Graph


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    label: str

    def __post_init__(self):
        _set(self, "kind", _enum(NodeKind, self.kind, "kind"))

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind.value, "label": self.label}

    @classmethod
    def from_dict(cls, data: Any) -> "Node":
        r = _Reader(data, ("id", "kind", "label"))
        return cls(r.get("id"), r.get("kind"), r.get("label"))


@dataclass(frozen=True)
class Edge:
    a: str
    b: str
    directedness: Connector

    def __post_init__(self):
        d = _enum(Connector, self.directedness, "directedness")
        if d is Connector.NONE:
            raise InvariantError("edges are bidirectional or sequential", "directedness")
        _set(self, "directedness", d)

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "directedness": self.directedness.value}

    @classmethod
    def from_dict(cls, data: Any) -> "Edge":
        r = _Reader(data, ("a", "b", "directedness"))
        return cls(r.get("a"), r.get("b"), r.get("directedness"))


@dataclass(frozen=True)
class HandGraph:
    nodes: Tuple[Node, ...]
    edges: Tuple[Edge, ...]

    def __post_init__(self):
        nodes = tuple(self.nodes)
        edges = tuple(self.edges)
        _set(self, "nodes", nodes)
        _set(self, "edges", edges)
        seen = set()
        for i, n in enumerate(nodes):
            if n.id in seen:
                raise InvariantError(f"duplicate node id {n.id!r}", f"nodes[{i}].id")
            seen.add(n.id)
        for i, e in enumerate(edges):
            for end, name in ((e.a, "a"), (e.b, "b")):
                if end not in seen:
                    raise InvariantError(f"edge endpoint {end!r} is not a node", f"edges[{i}].{name}")
        palms = sum(1 for n in nodes if n.kind is NodeKind.PALM)
        if palms != 1:
            raise InvariantError(f"expected exactly one palm node, found {palms}", "nodes")

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def adjacency(self) -> Dict[str, list]:
        adj: Dict[str, list] = {n.id: [] for n in self.nodes}
        for e in self.edges:
            adj.setdefault(e.a, []).append(e.b)
            adj.setdefault(e.b, []).append(e.a)
        return adj

    def to_dict(self) -> dict:
        return {"nodes": [n.to_dict() for n in self.nodes], "edges": [e.to_dict() for e in self.edges]}

    @classmethod
    def from_dict(cls, data: Any) -> "HandGraph":
        r = _Reader(data, ("nodes", "edges"))
        return cls(tuple(r.items("nodes", Node.from_dict)), tuple(r.items("edges", Edge.from_dict)))


# --------------------------------------------------------------------------
# Parameters


@dataclass(frozen=True)
class FingerParams:
    mount_angle_deg: float
    mount_translation_mm: float
    metacarpal_length_mm: float
    scale: float

    def __post_init__(self):
        for name in ("mount_angle_deg", "mount_translation_mm", "metacarpal_length_mm", "scale"):
            _set(self, name, _finite(getattr(self, name), name))
        if self.scale <= 0:
            raise InvariantError("scale must be > 0", "scale")
        if self.metacarpal_length_mm <= 0:
            raise InvariantError("metacarpal_length_mm must be > 0", "metacarpal_length_mm")

    def to_dict(self) -> dict:
        return {
            "mount_angle_deg": self.mount_angle_deg,
            "mount_translation_mm": self.mount_translation_mm,
            "metacarpal_length_mm": self.metacarpal_length_mm,
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, data: Any) -> "FingerParams":
        return _build(cls, data, required=(
            "mount_angle_deg", "mount_translation_mm", "metacarpal_length_mm", "scale"))


@dataclass(frozen=True)
class OphParams:
    fingers: Tuple[FingerParams, ...]
    palm_width_mm: float
    palm_curvature: float

    def __post_init__(self):
        fingers = tuple(self.fingers)
        _set(self, "fingers", fingers)
        if not 1 <= len(fingers) <= MAX_FINGERS:
            raise InvariantError(f"finger count {len(fingers)} outside [1, {MAX_FINGERS}]", "fingers")
        width = _finite(self.palm_width_mm, "palm_width_mm")
        if width <= 0:
            raise InvariantError("palm_width_mm must be > 0", "palm_width_mm")
        curv = _finite(self.palm_curvature, "palm_curvature")
        if not 0.0 <= curv <= 1.0:
            raise InvariantError("palm_curvature must lie in [0, 1]", "palm_curvature")
        _set(self, "palm_width_mm", width)
        _set(self, "palm_curvature", curv)

    @property
    def finger_count(self) -> int:
        return len(self.fingers)

    def to_dict(self) -> dict:
        return {
            "fingers": [f.to_dict() for f in self.fingers],
            "palm_width_mm": self.palm_width_mm,
            "palm_curvature": self.palm_curvature,
        }

    @classmethod
    def from_dict(cls, data: Any) -> "OphParams":
        r = _Reader(data, ("fingers", "palm_width_mm", "palm_curvature"))
        fingers = r.items("fingers", FingerParams.from_dict)
        return _construct(cls, fingers=tuple(fingers), palm_width_mm=r.get("palm_width_mm"),
                          palm_curvature=r.get("palm_curvature"))


@dataclass(frozen=True)
class DerivedFingerGeometry:
    """Full finger geometry derived from a scale and the fixed ratio table.

    Not a run artifact: always re-derived from ``OphParams``.
    """

    metacarpal_length_mm: float
    segment_lengths_mm: Tuple[float, float, float]
    joint_diameters_mm: Tuple[float, float, float]
    link_widths_mm: Tuple[float, ...]
    total_length_mm: float

    def __post_init__(self):
        for name in ("segment_lengths_mm", "joint_diameters_mm", "link_widths_mm"):
            _set(self, name, tuple(float(v) for v in getattr(self, name)))
        if len(self.segment_lengths_mm) != 3 or len(self.joint_diameters_mm) != 3:
            raise InvariantError("expected 3 phalanx lengths and 3 joint diameters")
        values = (self.metacarpal_length_mm, self.total_length_mm, *self.segment_lengths_mm,
                  *self.joint_diameters_mm, *self.link_widths_mm)
        if not all(math.isfinite(v) and v > 0 for v in values):
            raise InvariantError("all derived lengths must be positive")
        expected = self.metacarpal_length_mm + sum(self.segment_lengths_mm)
        if not math.isclose(self.total_length_mm, expected, rel_tol=1e-9):
            raise InvariantError("total_length_mm must equal metacarpal plus phalanges", "total_length_mm")


# --------------------------------------------------------------------------
# Validation and candidates


@dataclass(frozen=True)
class Finding:
    check_id: str
    severity: Severity
    message: str

    def __post_init__(self):
        _set(self, "severity", _enum(Severity, self.severity, "severity"))

    def to_dict(self) -> dict:
        return {"check_id": self.check_id, "severity": self.severity.value, "message": self.message}

    @classmethod
    def from_dict(cls, data: Any) -> "Finding":
        return _build(cls, data, required=("check_id", "severity", "message"))


def _unit(value, name):
    v = _finite(value, name)
    if not 0.0 <= v <= 1.0:
        raise InvariantError("must lie in [0, 1]", name)
    return v


@dataclass(frozen=True)
class ValidationReport:
    findings: Tuple[Finding, ...]
    rule_score: float
    llm_score: float
    combined_score: float
    accepted: bool
    threshold: float = 0.7
    issues: Tuple[str, ...] = ()
    suggestions: Tuple[str, ...] = ()

    def __post_init__(self):
        _set(self, "findings", tuple(self.findings))
        _set(self, "issues", tuple(self.issues))
        _set(self, "suggestions", tuple(self.suggestions))
        for name in ("rule_score", "llm_score", "combined_score", "threshold"):
            _set(self, name, _unit(getattr(self, name), name))
        if not isinstance(self.accepted, bool):
            raise InvariantError("must be a boolean", "accepted")
        if self.accepted:
            if self.combined_score < self.threshold - SCORE_SLACK:
                raise InvariantError("accepted report must reach the threshold", "accepted")
            if self.has_critical:
                raise InvariantError("accepted report must have no critical finding", "accepted")

    @property
    def has_critical(self) -> bool:
        return any(f.severity is Severity.CRITICAL for f in self.findings)

    def to_dict(self) -> dict:
        return {
            "findings": [f.to_dict() for f in self.findings],
            "rule_score": self.rule_score,
            "llm_score": self.llm_score,
            "combined_score": self.combined_score,
            "accepted": self.accepted,
            "threshold": self.threshold,
            "issues": list(self.issues),
            "suggestions": list(self.suggestions),
        }

    @classmethod
    def from_dict(cls, data: Any) -> "ValidationReport":
        r = _Reader(data, ("findings", "rule_score", "llm_score", "combined_score", "accepted"),
                    ("threshold", "issues", "suggestions"))
        kwargs = {k: r.get(k) for k in ("rule_score", "llm_score", "combined_score", "accepted")}
        kwargs["findings"] = tuple(r.items("findings", Finding.from_dict))
        if r.has("threshold"):
            kwargs["threshold"] = r.get("threshold")
        kwargs["issues"] = tuple(r.list("issues")) if r.has("issues") else ()
        kwargs["suggestions"] = tuple(r.list("suggestions")) if r.has("suggestions") else ()
        return _construct(cls, **kwargs)


# Floats on disk carry six significant digits, so arithmetic invariants are
# re-checked after decoding with a tolerance of that quantum.
SCORE_SLACK = 1e-12
DECODE_REL_TOL = 1e-5


@dataclass(frozen=True)
class Violation:
    check_id: str
    message: str
    finger: Optional[int] = None

    def to_dict(self) -> dict:
        return {"check_id": self.check_id, "message": self.message, "finger": self.finger}

    @classmethod
    def from_dict(cls, data: Any) -> "Violation":
        r = _Reader(data, ("check_id", "message"), ("finger",))
        return cls(r.get("check_id"), r.get("message"), r.get("finger") if r.has("finger") else None)


@dataclass(frozen=True)
class FilterResult:
    passed: bool
    violations: Tuple[Violation, ...] = ()

    def __post_init__(self):
        vs = tuple(sorted(self.violations, key=lambda v: (v.check_id, -1 if v.finger is None else v.finger, v.message)))
        _set(self, "violations", vs)
        if self.passed != (not vs):
            raise InvariantError("passed must be true exactly when there are no violations", "passed")

    @property
    def violated_checks(self) -> Tuple[str, ...]:
        return tuple(sorted({v.check_id for v in self.violations}))

    def to_dict(self) -> dict:
        return {"passed": self.passed, "violations": [v.to_dict() for v in self.violations]}

    @classmethod
    def from_dict(cls, data: Any) -> "FilterResult":
        r = _Reader(data, ("passed", "violations"))
        return _construct(cls, passed=r.get("passed"), violations=tuple(r.items("violations", Violation.from_dict)))


def _score10(value, name):
    if value is None:
        return None
    v = _finite(value, name)
    if not 0.0 <= v <= 10.0:
        raise InvariantError("must lie in [0, 10]", name)
    return v


@dataclass(frozen=True)
class DesignCandidate:
    variant_id: str
    schema: SemanticSchema
    grammar: Optional[HandGrammar] = None
    graph: Optional[HandGraph] = None
    params: Optional[OphParams] = None
    filter_result: Optional[FilterResult] = None
    semantic_score: Optional[float] = None
    size_score: Optional[float] = None
    total_score: Optional[float] = None
    scad_path: Optional[str] = None
    semantic_weight: float = 0.6
    cue: str = ""
    description: str = ""
    rejection: Optional[str] = None

    def __post_init__(self):
        self._check(rel_tol=0.0)

    def _check(self, rel_tol: float):
        for name in ("semantic_score", "size_score", "total_score"):
            _set(self, name, _score10(getattr(self, name), name))
        w = _unit(self.semantic_weight, "semantic_weight")
        _set(self, "semantic_weight", w)
        if self.semantic_score is not None and self.size_score is not None:
            expected = w * self.semantic_score + (1.0 - w) * self.size_score
            if self.total_score is None:
                raise InvariantError("total_score required when both sub-scores are present", "total_score")
            if abs(self.total_score - expected) > max(1e-9, rel_tol * abs(expected)):
                raise InvariantError(
                    f"total_score {self.total_score} != weighted sum {expected}", "total_score")

    @property
    def survived(self) -> bool:
        return self.rejection is None and self.filter_result is not None and self.filter_result.passed

    def to_dict(self) -> dict:
        return {
            "variant_id": self.variant_id,
            "schema": self.schema.to_dict(),
            "grammar": self.grammar.to_dict() if self.grammar else None,
            "graph": self.graph.to_dict() if self.graph else None,
            "params": self.params.to_dict() if self.params else None,
            "filter_result": self.filter_result.to_dict() if self.filter_result else None,
            "semantic_score": self.semantic_score,
            "size_score": self.size_score,
            "total_score": self.total_score,
            "scad_path": self.scad_path,
            "semantic_weight": self.semantic_weight,
            "cue": self.cue,
            "description": self.description,
            "rejection": self.rejection,
        }

    @classmethod
    def from_dict(cls, data: Any) -> "DesignCandidate":
        names = ("variant_id", "schema", "grammar", "graph", "params", "filter_result",
                 "semantic_score", "size_score", "total_score", "scad_path",
                 "semantic_weight", "cue", "description", "rejection")
        r = _Reader(data, ("variant_id", "schema"), names[2:])
        kwargs = {"variant_id": r.get("variant_id")}
        nested = {"schema": SemanticSchema, "grammar": HandGrammar, "graph": HandGraph,
                  "params": OphParams, "filter_result": FilterResult}
        for name in names[1:]:
            if not r.has(name):
                continue
            value = r.get(name)
            if name in nested and value is not None:
                try:
                    value = nested[name].from_dict(value)
                except InvariantError as e:
                    raise e.at(name) from None
            kwargs[name] = value
        # Scores went through six-significant-digit rounding on disk.
        obj = object.__new__(cls)
        defaults = {f: getattr(cls, f) for f in names[2:] if hasattr(cls, f)}
        for name in names:
            _set(obj, name, kwargs.get(name, defaults.get(name)))
        if not isinstance(obj.variant_id, str) or not obj.variant_id:
            raise InvariantError("variant_id must be non-empty text", "variant_id")
        obj._check(rel_tol=DECODE_REL_TOL)
        return obj


# --------------------------------------------------------------------------
# Strict dict reading


class _Reader:
    def __init__(self, data: Any, required: Sequence[str], optional: Sequence[str] = ()):
        if not isinstance(data, dict):
            raise InvariantError(f"expected an object, got {type(data).__name__}")
        allowed = set(required) | set(optional)
        for key in sorted(data):
            if key not in allowed:
                raise InvariantError("unknown field", key)
        for key in required:
            if key not in data:
                raise InvariantError("missing required field", key)
        self.data = data

    def has(self, key: str) -> bool:
        return key in self.data

    def get(self, key: str):
        return self.data[key]

    def list(self, key: str) -> list:
        v = self.data[key]
        if not isinstance(v, list):
            raise InvariantError("expected a list", key)
        return v

    def dict(self, key: str) -> dict:
        v = self.data[key]
        if not isinstance(v, dict):
            raise InvariantError("expected an object", key)
        return v

    def items(self, key: str, parse: Callable[[Any], Any]) -> list:
        out = []
        for i, item in enumerate(self.list(key)):
            try:
                out.append(parse(item))
            except InvariantError as e:
                raise e.at(f"{key}[{i}]") from None
        return out


def _construct(cls, **kwargs):
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise InvariantError(str(e)) from None


def _build(cls, data, required):
    r = _Reader(data, required)
    return _construct(cls, **{k: r.get(k) for k in required})


# --------------------------------------------------------------------------
# Canonical JSON


ARTIFACT_KINDS: Dict[str, type] = {
    "schema": SemanticSchema,
    "grammar": HandGrammar,
    "graph": HandGraph,
    "params": OphParams,
    "finger": FingerParams,
    "report": ValidationReport,
    "filter": FilterResult,
    "candidate": DesignCandidate,
}


def format_float(x: float) -> str:
    """Six significant digits, always carrying a decimal point or exponent."""
    if not math.isfinite(x):
        raise ValueError(f"non-finite float {x!r}")
    text = repr(float(f"{x:.6g}"))
    return "0.0" if text == "-0.0" else text


def _emit(value: Any, indent: int) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, Enum):
        return json.dumps(value.value, ensure_ascii=False)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        inner = ",\n".join(pad + _emit(v, indent + 1) for v in value)
        return "[\n" + inner + "\n" + end + "]"
    if isinstance(value, dict):
        if not value:
            return "{}"
        inner = ",\n".join(
            pad + json.dumps(str(k), ensure_ascii=False) + ": " + _emit(value[k], indent + 1)
            for k in sorted(value)
        )
        return "{\n" + inner + "\n" + end + "}"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def canonical_json(data: Any) -> str:
    return _emit(data, 0) + "\n"


def serialize_artifact(value: Any) -> str:
    """Canonical JSON text for any artifact type (or a plain JSON-compatible value)."""
    data = value.to_dict() if hasattr(value, "to_dict") else value
    return canonical_json(data)


def deserialize_artifact(text: str, expected_kind: str):
    try:
        cls = ARTIFACT_KINDS[expected_kind]
    except KeyError:
        raise ArtifactError(f"unknown artifact kind {expected_kind!r}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ArtifactError(f"malformed JSON: {e}") from None
    return cls.from_dict(data)
