"""Hand grammar parsing, one-pass expansion to a component graph, and graph signatures."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from typing import Any, Dict, List, Tuple

from .model import (
    Connector,
    Edge,
    HandGrammar,
    HandGraph,
    InvariantError,
    KIND_PREFIXES,
    Node,
    NodeKind,
    ProductionRule,
    RhsItem,
    kind_of_terminal,
)

MAX_NODES = 10_000
SECTIONS = ("components", "structure_rules", "connection_rules", "layout_hints")

CONNECTOR_TOKENS = {
    "<->": Connector.BIDIRECTIONAL,
    "↔": Connector.BIDIRECTIONAL,
    "<=>": Connector.BIDIRECTIONAL,
    "->": Connector.SEQUENTIAL,
    "→": Connector.SEQUENTIAL,
    "bidirectional": Connector.BIDIRECTIONAL,
    "sequential": Connector.SEQUENTIAL,
}
CONNECTOR_TEXT = {Connector.BIDIRECTIONAL: "<->", Connector.SEQUENTIAL: "->"}

_SYMBOL = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*")
_CONNECTOR = re.compile(r"\s*(<->|<=>|->|↔|→|bidirectional|sequential)\s*")
_PRODUCTION = re.compile(r"\s*(->|→|::=)\s*")

CHAIN_KINDS = (NodeKind.JOINT, NodeKind.LINK, NodeKind.FINGER_ROOT)
ATTACH_KINDS = (NodeKind.MOUNT, NodeKind.CONNECTOR)


class GrammarError(ValueError):
    """The grammar text is malformed or cannot be expanded."""

    def __init__(self, message: str, symbol: str = "", check_id: str = "R0"):
        self.symbol = symbol
        self.check_id = check_id
        super().__init__(message)


class ExpansionError(GrammarError):
    pass


# --------------------------------------------------------------------------
# Parsing


def _parse_rhs_text(text: str, lhs: str) -> List[RhsItem]:
    items: List[RhsItem] = []
    pos = 0
    while True:
        m = _SYMBOL.match(text, pos)
        if not m:
            raise GrammarError(f"rule {lhs}: expected a symbol at {text[pos:]!r}", lhs)
        symbol, pos = m.group(1), m.end()
        if pos >= len(text):
            items.append(RhsItem(symbol, Connector.NONE))
            return items
        c = _CONNECTOR.match(text, pos)
        if not c:
            token = re.match(r"\s*([^\sA-Za-z0-9_]+|\S+)", text[pos:]).group(1)
            raise GrammarError(f"rule {lhs}: unknown connector token {token!r}", lhs)
        items.append(RhsItem(symbol, CONNECTOR_TOKENS[c.group(1)]))
        pos = c.end()


def _parse_rhs_list(values: list, lhs: str) -> List[RhsItem]:
    if values and all(isinstance(v, dict) for v in values):
        items = []
        for i, v in enumerate(values):
            sym = v.get("symbol")
            conn = v.get("connector", "none" if i == len(values) - 1 else None)
            if not isinstance(sym, str):
                raise GrammarError(f"rule {lhs}: element {i} lacks a symbol", lhs)
            if i == len(values) - 1:
                conn = "none" if conn in (None, "none") else conn
            if conn == "none" and i < len(values) - 1 or conn not in ("none", *CONNECTOR_TOKENS):
                raise GrammarError(f"rule {lhs}: unknown connector token {conn!r}", lhs)
            items.append(RhsItem(sym, Connector.NONE if conn == "none" else CONNECTOR_TOKENS[conn]))
        return items
    if not all(isinstance(v, str) for v in values):
        raise GrammarError(f"rule {lhs}: rhs list must hold strings or objects", lhs)
    return _parse_rhs_text(" ".join(values), lhs)


def _parse_rule(entry: Any, index: int) -> ProductionRule:
    if isinstance(entry, str):
        m = _SYMBOL.match(entry)
        arrow = _PRODUCTION.match(entry, m.end()) if m else None
        if not m or not arrow:
            raise GrammarError(f"structure rule {index}: expected 'LHS -> rhs', got {entry!r}")
        lhs, rhs = m.group(1), entry[arrow.end():]
        items = _parse_rhs_text(rhs, lhs)
    elif isinstance(entry, dict):
        unknown = set(entry) - {"lhs", "rhs"}
        if unknown:
            raise GrammarError(f"structure rule {index}: unknown keys {sorted(unknown)}")
        lhs, rhs = entry.get("lhs"), entry.get("rhs")
        if not isinstance(lhs, str) or not lhs:
            raise GrammarError(f"structure rule {index}: missing lhs")
        if isinstance(rhs, str):
            items = _parse_rhs_text(rhs, lhs)
        elif isinstance(rhs, list) and rhs:
            items = _parse_rhs_list(rhs, lhs)
        else:
            raise GrammarError(f"rule {lhs}: rhs must be a non-empty string or list", lhs)
    else:
        raise GrammarError(f"structure rule {index}: expected a string or object")
    return ProductionRule(lhs, tuple(items))


def _parse_components(section: Any) -> Dict[str, Dict[str, str]]:
    if isinstance(section, list):
        as_dict = {}
        for i, entry in enumerate(section):
            if isinstance(entry, str):
                as_dict[entry] = {}
                continue
            if not isinstance(entry, dict):
                raise GrammarError(f"component {i}: expected a symbol or an object")
            entry = dict(entry)
            sym = entry.pop("symbol", None) or entry.pop("id", None)
            if not isinstance(sym, str):
                raise GrammarError(f"component {i}: missing symbol")
            as_dict[sym] = entry
        section = as_dict
    if not isinstance(section, dict):
        raise GrammarError("components must be an object or list")
    out = {}
    for sym, value in section.items():
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", sym):
            raise GrammarError(f"invalid component symbol {sym!r}", sym)
        if isinstance(value, str):
            attrs = {"description": value} if value else {}
        elif isinstance(value, dict):
            attrs = {str(k): v if isinstance(v, str) else json.dumps(v) for k, v in value.items()}
        elif value is None:
            attrs = {}
        else:
            raise GrammarError(f"component {sym}: expected text or object", sym)
        out[sym] = attrs
    return out


def parse_grammar(text: Any) -> HandGrammar:
    """Parse the JSON grammar format (text or already-decoded object) into a HandGrammar."""
    if isinstance(text, str):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise GrammarError(f"malformed grammar JSON: {e}") from None
    else:
        data = text
    if not isinstance(data, dict):
        raise GrammarError("grammar must be a JSON object")
    for section in SECTIONS:
        if section not in data:
            raise GrammarError(f"missing section {section!r}")
    unknown = set(data) - set(SECTIONS) - {"start_symbol"}
    if unknown:
        raise GrammarError(f"unknown grammar sections {sorted(unknown)}")

    components = _parse_components(data["components"])
    rules_in = data["structure_rules"]
    if not isinstance(rules_in, list):
        raise GrammarError("structure_rules must be a list")
    try:
        rules = [_parse_rule(entry, i) for i, entry in enumerate(rules_in)]
    except InvariantError as e:
        raise GrammarError(f"invalid structure rule: {e}") from None
    start = data.get("start_symbol", "S")
    if not isinstance(start, str) or not start:
        raise GrammarError("start_symbol must be non-empty text")
    if not any(r.lhs == start for r in rules):
        raise GrammarError(f"no start rule for {start!r}", start)

    lhs_counts = Counter(r.lhs for r in rules)
    dupes = sorted(s for s, n in lhs_counts.items() if n > 1)
    if dupes:
        raise GrammarError(f"multiple rules for {', '.join(dupes)}", dupes[0])
    nonterminals = set(lhs_counts)
    terminals = set(components) - nonterminals
    for rule in rules:
        for sym in rule.symbols:
            if sym not in nonterminals and sym not in terminals:
                raise GrammarError(f"symbol {sym} referenced but never defined", sym)
    for sym in sorted(terminals):
        if sym[:1].upper() not in KIND_PREFIXES:
            raise GrammarError(
                f"terminal {sym} must start with one of {''.join(KIND_PREFIXES)}", sym)

    attributes = {s: dict(a) for s, a in components.items() if a}
    connections = data["connection_rules"]
    if not isinstance(connections, list):
        raise GrammarError("connection_rules must be a list")
    defined = nonterminals | terminals
    for i, conn in enumerate(connections):
        if not isinstance(conn, dict) or set(conn) - {"finger", "to", "via"} or "finger" not in conn:
            raise GrammarError(f"connection rule {i}: expected {{finger, to, via?}}")
        finger, to, via = conn["finger"], conn.get("to", ""), conn.get("via", "")
        for sym in (finger, to, via):
            if sym and sym not in defined:
                raise GrammarError(f"symbol {sym} referenced but never defined", sym)
        if via and (via not in terminals or kind_of_terminal(via) not in ATTACH_KINDS):
            raise GrammarError(f"connection rule {i}: via {via} must be a mount or connector terminal", via)
        attrs = attributes.setdefault(finger, {})
        if to:
            attrs["attach_to"] = to
        if via:
            attrs["via"] = via

    hints = data["layout_hints"]
    if not isinstance(hints, dict):
        raise GrammarError("layout_hints must be an object")
    hints = {str(k): v if isinstance(v, str) else json.dumps(v) for k, v in hints.items()}
    try:
        return HandGrammar(frozenset(nonterminals), frozenset(terminals), attributes,
                           tuple(rules), start, hints)
    except InvariantError as e:
        raise GrammarError(f"grammar violates invariant: {e}") from None


def format_grammar(grammar: HandGrammar) -> dict:
    """Inverse of parse_grammar: the JSON grammar format for a HandGrammar."""
    components: Dict[str, Dict[str, str]] = {}
    connections = []
    for sym in sorted(grammar.terminals | grammar.nonterminals):
        attrs = dict(grammar.attributes.get(sym, {}))
        to, via = attrs.pop("attach_to", ""), attrs.pop("via", "")
        if to or via:
            conn = {"finger": sym}
            if to:
                conn["to"] = to
            if via:
                conn["via"] = via
            connections.append(conn)
        if sym in grammar.terminals or attrs:
            components[sym] = attrs
    rules = []
    for rule in grammar.rules:
        parts = []
        for item in rule.rhs:
            parts.append(item.symbol)
            if item.connector is not Connector.NONE:
                parts.append(CONNECTOR_TEXT[item.connector])
        rules.append(f"{rule.lhs} -> {' '.join(parts)}")
    return {
        "start_symbol": grammar.start_symbol,
        "components": components,
        "structure_rules": rules,
        "connection_rules": connections,
        "layout_hints": dict(grammar.layout_hints),
    }


# --------------------------------------------------------------------------
# Expansion


def expand(grammar: HandGrammar) -> HandGraph:
    """Expand every nonterminal once, starting from the start symbol.

    Inside a rule that contains a palm terminal, the palm is a hub: every other
    element's entry node is attached to it. Elsewhere adjacent elements are
    chained exit-to-entry with the rule's connector.
    """
    nodes: List[Node] = []
    edges: List[Edge] = []

    def new_node(symbol: str) -> str:
        if len(nodes) >= MAX_NODES:
            raise ExpansionError(f"expansion exceeds {MAX_NODES} nodes", symbol)
        node_id = f"n{len(nodes)}"
        nodes.append(Node(node_id, kind_of_terminal(symbol), symbol))
        return node_id

    def is_palm(symbol: str) -> bool:
        return symbol in grammar.terminals and kind_of_terminal(symbol) is NodeKind.PALM

    def build(symbol: str, stack: Tuple[str, ...]) -> Tuple[str, str]:
        if symbol in grammar.terminals:
            node_id = new_node(symbol)
            return node_id, node_id
        if symbol in stack:
            cycle = " -> ".join(stack[stack.index(symbol):] + (symbol,))
            raise ExpansionError(f"recursive rule cycle: {cycle}", symbol)
        rule = grammar.rule_for(symbol)
        if rule is None:
            raise ExpansionError(f"no rule for nonterminal {symbol}", symbol)
        inner = stack + (symbol,)
        rhs = rule.rhs
        hub = next((i for i, item in enumerate(rhs) if is_palm(item.symbol)), None)
        parts = []
        for i, item in enumerate(rhs):
            parts.append(build(item.symbol, inner))
            if hub is not None and i != hub and i > hub:
                attach(parts[hub][0], rhs[i].symbol, parts[i][0], rhs[i - 1].connector)
        if hub is None:
            for i in range(len(parts) - 1):
                edges.append(Edge(parts[i][1], parts[i + 1][0], rhs[i].connector))
            return parts[0][0], parts[-1][1]
        for i in range(hub):
            attach(parts[hub][0], rhs[i].symbol, parts[i][0], rhs[i].connector)
        palm = parts[hub][0]
        return palm, palm

    def attach(palm: str, symbol: str, entry: str, connector: Connector):
        via = grammar.attributes.get(symbol, {}).get("via")
        if via:
            mount = new_node(via)
            edges.append(Edge(palm, mount, connector))
            edges.append(Edge(mount, entry, connector))
        else:
            edges.append(Edge(palm, entry, connector))

    build(grammar.start_symbol, ())
    palms = sum(1 for n in nodes if n.kind is NodeKind.PALM)
    if palms != 1:
        raise ExpansionError(f"expansion yields {palms} palm nodes, expected exactly one",
                             grammar.start_symbol, check_id="R1")
    return HandGraph(tuple(nodes), tuple(edges))


# --------------------------------------------------------------------------
# Graph analysis


@dataclass(frozen=True)
class FingerBranch:
    """A connected component of the graph minus the palm that touches the palm."""

    nodes: Tuple[str, ...]
    palm_edges: int


def palm_id(graph: HandGraph) -> str:
    return next(n.id for n in graph.nodes if n.kind is NodeKind.PALM)


def finger_branches(graph: HandGraph) -> List[FingerBranch]:
    palm = palm_id(graph)
    kinds = {n.id: n.kind for n in graph.nodes}
    order = {n.id: i for i, n in enumerate(graph.nodes)}
    adj = graph.adjacency()
    comp: Dict[str, int] = {}
    groups: List[List[str]] = []
    for n in graph.nodes:
        if n.id == palm or n.id in comp:
            continue
        idx = len(groups)
        members = []
        todo = [n.id]
        comp[n.id] = idx
        while todo:
            cur = todo.pop()
            members.append(cur)
            for nb in adj[cur]:
                if nb != palm and nb not in comp:
                    comp[nb] = idx
                    todo.append(nb)
        groups.append(sorted(members, key=order.__getitem__))
    palm_edges = Counter()
    for e in graph.edges:
        if e.a == palm and e.b != palm:
            palm_edges[comp[e.b]] += 1
        elif e.b == palm and e.a != palm:
            palm_edges[comp[e.a]] += 1
    out = []
    for idx, members in enumerate(groups):
        if palm_edges[idx] and any(kinds[m] in CHAIN_KINDS for m in members):
            out.append(FingerBranch(tuple(members), palm_edges[idx]))
    return out


def reachable_from_palm(graph: HandGraph) -> set:
    adj = graph.adjacency()
    start = palm_id(graph)
    seen = {start}
    todo = [start]
    while todo:
        cur = todo.pop()
        for nb in adj[cur]:
            if nb not in seen:
                seen.add(nb)
                todo.append(nb)
    return seen


@dataclass(frozen=True)
class CanonicalGraphSignature:
    node_kind_counts: Tuple[Tuple[str, int], ...]
    edge_label_multiset: Tuple[Tuple[Tuple[str, str, str], int], ...]
    finger_chain_lengths: Tuple[Tuple[int, int], ...]

    @property
    def node_count(self) -> int:
        return sum(c for _, c in self.node_kind_counts)

    @property
    def finger_count(self) -> int:
        return len(self.finger_chain_lengths)

    def kind_counts(self) -> Dict[str, int]:
        return dict(self.node_kind_counts)

    def to_dict(self) -> dict:
        return {
            "node_kind_counts": dict(self.node_kind_counts),
            "edge_label_multiset": [[list(k), c] for k, c in self.edge_label_multiset],
            "finger_chain_lengths": [list(x) for x in self.finger_chain_lengths],
        }


def signature(graph: HandGraph) -> CanonicalGraphSignature:
    kinds = {n.id: n.kind.value for n in graph.nodes}
    node_counts = Counter(kinds.values())
    edge_labels = Counter()
    for e in graph.edges:
        a, b = kinds[e.a], kinds[e.b]
        if e.directedness is Connector.BIDIRECTIONAL:
            a, b = sorted((a, b))
        edge_labels[(a, b, e.directedness.value)] += 1
    chains = []
    for branch in finger_branches(graph):
        members = [kinds[m] for m in branch.nodes]
        chains.append((members.count("joint"), members.count("link")))
    return CanonicalGraphSignature(
        tuple(sorted(node_counts.items())),
        tuple(sorted(edge_labels.items())),
        tuple(sorted(chains)),
    )


def multiset_jaccard(a: Counter, b: Counter) -> float:
    """Sum of elementwise minima over sum of maxima; 1.0 for two empty multisets."""
    keys = set(a) | set(b)
    hi = sum(max(a[k], b[k]) for k in keys)
    if hi == 0:
        return 1.0
    return sum(min(a[k], b[k]) for k in keys) / hi


def graph_distance(a: CanonicalGraphSignature, b: CanonicalGraphSignature) -> float:
    """Weighted node / edge-label / finger-chain difference in [0, 1].

    node term:   sum over kinds of |count difference| / larger node total
    edge term:   1 - multiset Jaccard of edge labels
    finger term: 1 - multiset Jaccard of per-finger (joints, links) chains
    With identical chain shapes the finger term is |finger count diff| / max count.
    """
    ka, kb = a.kind_counts(), b.kind_counts()
    max_nodes = max(a.node_count, b.node_count)
    node_term = 0.0
    if max_nodes:
        diff = sum(abs(ka.get(k, 0) - kb.get(k, 0)) for k in set(ka) | set(kb))
        node_term = min(1.0, diff / max_nodes)
    edge_term = 1.0 - multiset_jaccard(Counter(dict(a.edge_label_multiset)),
                                       Counter(dict(b.edge_label_multiset)))
    finger_term = 1.0 - multiset_jaccard(Counter(a.finger_chain_lengths), Counter(b.finger_chain_lengths))
    d = 0.4 * node_term + 0.4 * edge_term + 0.2 * finger_term
    return min(1.0, max(0.0, d))
