from __future__ import annotations

import json

from hypothesis import strategies as st

from chemagents.graph import AbstractGraph, Connection, EquipmentNode, EquipmentOntology, build_graph, graph_to_dict
from chemagents.llm import ScriptedClient


def scripted(*entries: tuple[str, int, str]) -> ScriptedClient:
    return ScriptedClient([{"agent": a, "turn": t, "content": c} for a, t, c in entries])


def graph_block(graph: AbstractGraph | dict) -> str:
    data = graph if isinstance(graph, dict) else graph_to_dict(graph)
    return "@@graph\n" + json.dumps(data, indent=2) + "\n@@end"


def chain(*types: str, prefix: str = "U") -> AbstractGraph:
    """Linear graph of the given types with ids U1, U2, ..."""
    nodes = [EquipmentNode(f"{prefix}{i}", t, t.lower()) for i, t in enumerate(types, 1)]
    edges = [Connection(a.id, b.id) for a, b in zip(nodes, nodes[1:])]
    return build_graph(nodes, edges)


def compliant_line() -> AbstractGraph:
    """Feed -> Reactor -> Distillation column -> Product, second column outlet to Product2."""
    nodes = [
        EquipmentNode("F1", "Feed", "feed"),
        EquipmentNode("R1", "Reactor", "reactor"),
        EquipmentNode("C1", "Distillation column", "column"),
        EquipmentNode("P1", "Product", "product"),
        EquipmentNode("P2", "Product", "bottoms"),
    ]
    edges = [Connection("F1", "R1"), Connection("R1", "C1"), Connection("C1", "P1"), Connection("C1", "P2")]
    return build_graph(nodes, edges)


# --- hypothesis strategies ---------------------------------------------------

GRAPH_TYPES = [*EquipmentOntology().types, "MASKED", "Membrane Separator"]
_IDS = st.text(alphabet="ABCDEFGHKLMPRSVX0123456789", min_size=1, max_size=6)
_ATTRS = st.dictionaries(st.text(max_size=5), st.text(max_size=8), max_size=2)


@st.composite
def graphs(draw, max_nodes: int = 30, floating: bool = True) -> AbstractGraph:
    ids = draw(st.lists(_IDS, min_size=0, max_size=max_nodes, unique=True))
    nodes = [
        EquipmentNode(i, draw(st.sampled_from(GRAPH_TYPES)), draw(st.text(max_size=12)), draw(_ATTRS))
        for i in ids
    ]
    endpoint = st.sampled_from(ids) | _IDS if (ids and floating) else (st.sampled_from(ids) if ids else _IDS)
    n_edges = draw(st.integers(0, 2 * len(ids) + (1 if floating else 0))) if (ids or floating) else 0
    edges = [
        Connection(draw(endpoint), draw(endpoint), draw(st.none() | st.text(max_size=8)), draw(_ATTRS))
        for _ in range(n_edges)
    ]
    return build_graph(nodes, edges)
