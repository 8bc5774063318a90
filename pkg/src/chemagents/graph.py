"""Abstract process-flow graphs: equipment nodes, stream connections, validation."""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

MASKED = "MASKED"

DEFAULT_CATEGORIES: dict[str, tuple[str, ...]] = {
    "reaction": (
        "Reactor",
        "Fixed-bed reactor",
        "Fluidized-bed reactor",
        "Stirred tank reactor",
        "Tubular reactor",
    ),
    "separation": (
        "Distillation column",
        "Gas-Liquid Separator",
        "Absorber",
        "Stripper",
        "Extraction column",
        "Flash drum",
        "Filter",
        "Centrifuge",
        "Crystallizer",
        "Dryer",
    ),
    "heat-exchange": (
        "Heat exchanger",
        "Cooler/Condenser",
        "Heater",
        "Reboiler",
        "Kettle HEX",
        "Furnace",
        "Evaporator",
    ),
    "transport": ("Centrifugal pump", "Vacuum pump", "Compressor", "Blower", "Valve"),
    "storage": ("Storage tank", "Buffer tank"),
    "mixing-splitting": ("Mixer", "Splitter"),
    "source-sink": ("Feed", "Product"),
}


class GraphError(ValueError):
    """Raised for malformed graph construction or graph text."""


@dataclass(frozen=True)
class EquipmentNode:
    id: str
    type: str
    label: str = ""
    attrs: dict[str, str] = field(default_factory=dict, hash=False)

    def __post_init__(self) -> None:
        if not self.id:
            raise GraphError("equipment id must be non-empty")


@dataclass(frozen=True)
class Connection:
    source: str
    target: str
    stream: str | None = None
    attrs: dict[str, str] = field(default_factory=dict, hash=False)

    def __post_init__(self) -> None:
        if not self.source or not self.target:
            raise GraphError("connection endpoints must be non-empty")


@dataclass(frozen=True)
class AbstractGraph:
    equipment: tuple[EquipmentNode, ...] = ()
    connections: tuple[Connection, ...] = ()

    def node(self, node_id: str) -> EquipmentNode | None:
        for n in self.equipment:
            if n.id == node_id:
                return n
        return None

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.equipment]

    def inlets(self, node_id: str) -> list[Connection]:
        return [c for c in self.connections if c.target == node_id]

    def outlets(self, node_id: str) -> list[Connection]:
        return [c for c in self.connections if c.source == node_id]


class EquipmentOntology:
    """Controlled equipment vocabulary grouped by category."""

    def __init__(self, categories: dict[str, Sequence[str]] | None = None):
        categories = DEFAULT_CATEGORIES if categories is None else categories
        self.categories = {k: tuple(v) for k, v in categories.items()}
        seen: dict[str, str] = {}
        for cat, names in self.categories.items():
            for name in names:
                if name in seen:
                    raise ValueError(f"type {name!r} listed in both {seen[name]} and {cat}")
                seen[name] = cat
        self._category_of = seen
        self._by_key = {_key(n): n for n in seen}

    @property
    def types(self) -> list[str]:
        return list(self._category_of)

    def __contains__(self, name: object) -> bool:
        return name in self._category_of

    def category(self, name: str) -> str | None:
        return self._category_of.get(name)

    def canonical(self, name: str) -> str | None:
        """Map a loosely written type name onto its canonical spelling."""
        return self._by_key.get(_key(name))


def _key(name: str) -> str:
    return " ".join(name.lower().split())


def build_graph(nodes: Iterable[EquipmentNode], edges: Iterable[Connection]) -> AbstractGraph:
    nodes = tuple(nodes)
    counts = Counter(n.id for n in nodes)
    dups = [i for i, c in counts.items() if c > 1]
    if dups:
        raise GraphError(f"duplicate id {dups[0]}")
    return AbstractGraph(nodes, tuple(edges))


# --- validation -------------------------------------------------------------

LEGALITY = "legality"
COMPLIANCE = "compliance"


@dataclass(frozen=True)
class Violation:
    rule_id: str
    severity: str
    targets: tuple[str, ...]
    message: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "rule_id": self.rule_id,
            "severity": self.severity,
            "targets": list(self.targets),
            "message": self.message,
        }


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def legal(self) -> bool:
        return not any(v.severity == LEGALITY for v in self.violations)

    @property
    def compliant(self) -> bool:
        return not self.violations

    def compliance_failures(self) -> list[Violation]:
        return list(self.violations)

    def to_dict(self) -> dict[str, Any]:
        return {
            "legal": self.legal,
            "compliant": self.compliant,
            "violations": [v.to_dict() for v in self.violations],
        }


def _has_directed_cycle(graph: AbstractGraph) -> bool:
    ids = set(graph.node_ids)
    adj: dict[str, list[str]] = {i: [] for i in ids}
    for c in graph.connections:
        if c.source in ids and c.target in ids:
            adj[c.source].append(c.target)
    state: dict[str, int] = {}

    def visit(u: str) -> bool:
        state[u] = 1
        for v in adj[u]:
            s = state.get(v, 0)
            if s == 1 or (s == 0 and visit(v)):
                return True
        state[u] = 2
        return False

    return any(state.get(u, 0) == 0 and visit(u) for u in graph.node_ids)


def _rule_recycle(graph, ontology):
    if not _has_directed_cycle(graph):
        yield (), "design requires at least one recycle loop"


def _rule_reaction(graph, ontology):
    if not any(ontology.category(n.type) == "reaction" for n in graph.equipment):
        yield (), "design requires a reaction unit"


def _rule_separation(graph, ontology):
    if not any(ontology.category(n.type) == "separation" for n in graph.equipment):
        yield (), "design requires a separation unit"


def _rule_purge(graph, ontology):
    for n in graph.equipment:
        if n.type != "Splitter":
            continue
        for c in graph.outlets(n.id):
            dest = graph.node(c.target)
            if dest is not None and dest.type == "Product":
                return
    yield (), "design requires a purge: a Splitter discharging to a Product"


# Case-specific compliance rules a design task file may switch on by id.
EXTRA_RULES = {
    "E1": _rule_recycle,
    "E2": _rule_reaction,
    "E3": _rule_separation,
    "E4": _rule_purge,
}


def validate_topology(
    graph: AbstractGraph,
    ontology: EquipmentOntology | None = None,
    extra_rules: Sequence[str] = (),
) -> ValidationReport:
    """Check legality rules L1-L3 and compliance rules C1-C6 plus any extras.

    Legality failures make a graph invalid; compliance failures make a legal
    graph incorrect. Violations are collected, never raised, except for an
    unknown extra rule id which is a configuration error.
    """
    ontology = ontology or EquipmentOntology()
    unknown = [r for r in extra_rules if r not in EXTRA_RULES]
    if unknown:
        raise ValueError(f"unknown extra rule {unknown[0]}")
    out: list[Violation] = []
    ids = set(graph.node_ids)

    for i, c in enumerate(graph.connections):
        for end in (c.source, c.target):
            if end not in ids:
                out.append(Violation("L1", LEGALITY, (end,), f"connection {i} references absent node {end}"))
    comps = connected_components(graph)
    if len(comps) > 1:
        stray = tuple(sorted(set().union(*comps[1:])))
        out.append(Violation("L2", LEGALITY, stray, f"graph has {len(comps)} disconnected components"))
    for n in graph.equipment:
        if n.type != MASKED and n.type not in ontology:
            out.append(Violation("L3", LEGALITY, (n.id,), f"type {n.type!r} is not in the equipment ontology"))

    for n in graph.equipment:
        n_in = len(graph.inlets(n.id))
        n_out = len(graph.outlets(n.id))
        if n.type != "Feed" and n_in < 1:
            out.append(Violation("C1", COMPLIANCE, (n.id,), f"{n.id} has no inlet"))
        if n.type != "Product" and n_out < 1:
            out.append(Violation("C2", COMPLIANCE, (n.id,), f"{n.id} has no outlet"))
        if n.type == "Mixer" and n_in < 2:
            out.append(Violation("C3", COMPLIANCE, (n.id,), f"mixer {n.id} needs at least 2 inlets"))
        if n.type == "Splitter" and n_out < 2:
            out.append(Violation("C4", COMPLIANCE, (n.id,), f"splitter {n.id} needs at least 2 outlets"))
        if n.type == "Distillation column" and n_out < 2:
            out.append(Violation("C5", COMPLIANCE, (n.id,), f"column {n.id} needs at least 2 outlets"))
    for i, c in enumerate(graph.connections):
        if c.source == c.target:
            out.append(Violation("C6", COMPLIANCE, (c.source,), f"connection {i} is a self-loop on {c.source}"))
    for rule_id in extra_rules:
        for targets, msg in EXTRA_RULES[rule_id](graph, ontology):
            out.append(Violation(rule_id, COMPLIANCE, tuple(targets), msg))
    return ValidationReport(tuple(out))


def connected_components(graph: AbstractGraph) -> list[set[str]]:
    """Partition node ids by undirected reachability, in first-appearance order."""
    ids = graph.node_ids
    adj: dict[str, set[str]] = {i: set() for i in ids}
    for c in graph.connections:
        if c.source in adj and c.target in adj:
            adj[c.source].add(c.target)
            adj[c.target].add(c.source)
    seen: set[str] = set()
    comps = []
    for start in ids:
        if start in seen:
            continue
        comp = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in comp:
                    comp.add(v)
                    stack.append(v)
        seen |= comp
        comps.append(comp)
    return comps


# --- masking ----------------------------------------------------------------


@dataclass(frozen=True)
class MaskedGraph:
    graph: AbstractGraph
    masked_id: str
    truth_type: str | None = None


def mask_node(graph: AbstractGraph, node_id: str | None = None, seed: int | None = None) -> MaskedGraph:
    if node_id is None or graph.node(node_id) is None:
        if seed is None:
            raise GraphError(f"node {node_id} not in graph and no seed given")
        pool = [n.id for n in graph.equipment if n.type not in ("Feed", "Product")]
        if not pool:
            raise GraphError("no maskable node (only Feed/Product present)")
        node_id = random.Random(seed).choice(pool)
    target = graph.node(node_id)
    assert target is not None
    nodes = tuple(
        replace(n, type=MASKED, label=MASKED) if n.id == node_id else n for n in graph.equipment
    )
    return MaskedGraph(AbstractGraph(nodes, graph.connections), node_id, target.type)


# --- serialization ----------------------------------------------------------

_NODE_KEYS = ("id", "type", "label", "attrs")
_EDGE_KEYS = ("from", "to", "stream", "attrs")


def graph_to_dict(graph: AbstractGraph) -> dict[str, Any]:
    return {
        "equipment": [
            {"id": n.id, "type": n.type, "label": n.label, "attrs": dict(n.attrs)} for n in graph.equipment
        ],
        "connections": [
            {"from": c.source, "to": c.target, "stream": c.stream, "attrs": dict(c.attrs)}
            for c in graph.connections
        ],
    }


def serialize_graph(graph: AbstractGraph) -> str:
    return json.dumps(graph_to_dict(graph), indent=2, ensure_ascii=False) + "\n"


def _attrs(obj: dict, where: str) -> dict[str, str]:
    attrs = obj.get("attrs", {})
    if not isinstance(attrs, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in attrs.items()
    ):
        raise GraphError(f"{where}.attrs must map strings to strings")
    return dict(attrs)


def _string(obj: dict, key: str, where: str, required: bool = True) -> str | None:
    if key not in obj:
        if required:
            raise GraphError(f"{where}: missing field {key!r}")
        return None
    val = obj[key]
    if val is None and not required:
        return None
    if not isinstance(val, str):
        raise GraphError(f"{where}.{key} must be a string")
    return val


def node_from_dict(obj: Any, where: str) -> EquipmentNode:
    if not isinstance(obj, dict):
        raise GraphError(f"{where} must be an object")
    extra = set(obj) - set(_NODE_KEYS)
    if extra:
        raise GraphError(f"{where}: unknown key {sorted(extra)[0]!r}")
    node_id = _string(obj, "id", where)
    if not node_id:
        raise GraphError(f"{where}.id must be non-empty")
    return EquipmentNode(
        node_id, _string(obj, "type", where), _string(obj, "label", where, False) or "", _attrs(obj, where)
    )


def connection_from_dict(obj: Any, where: str) -> Connection:
    if not isinstance(obj, dict):
        raise GraphError(f"{where} must be an object")
    extra = set(obj) - set(_EDGE_KEYS)
    if extra:
        raise GraphError(f"{where}: unknown key {sorted(extra)[0]!r}")
    src = _string(obj, "from", where)
    dst = _string(obj, "to", where)
    if not src or not dst:
        raise GraphError(f"{where}: endpoints must be non-empty")
    return Connection(src, dst, _string(obj, "stream", where, False), _attrs(obj, where))


def graph_from_dict(data: Any) -> AbstractGraph:
    if not isinstance(data, dict):
        raise GraphError("graph text must hold an object")
    extra = set(data) - {"equipment", "connections"}
    if extra:
        raise GraphError(f"unknown key {sorted(extra)[0]!r}")
    for key in ("equipment", "connections"):
        if not isinstance(data.get(key), list):
            raise GraphError(f"field {key!r} must be an array")
    nodes = [node_from_dict(o, f"equipment[{i}]") for i, o in enumerate(data["equipment"])]
    edges = [connection_from_dict(o, f"connections[{i}]") for i, o in enumerate(data["connections"])]
    return build_graph(nodes, edges)


def parse_graph(text: str) -> AbstractGraph:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return graph_from_dict(data)


def load_graph(path) -> AbstractGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_graph(fh.read())
