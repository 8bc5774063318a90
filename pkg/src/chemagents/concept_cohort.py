"""Concept cohort: PFD topology parsing, masked-unit completion and the design/critique loop."""

from __future__ import annotations

import base64
import json
import logging
import mimetypes
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .agents import agent
from .grammar import BlockError, extract_block, extract_sections, split_fields
from .graph import (
    COMPLIANCE,
    MASKED,
    AbstractGraph,
    Connection,
    EquipmentNode,
    EquipmentOntology,
    GraphError,
    MaskedGraph,
    ValidationReport,
    Violation,
    build_graph,
    connection_from_dict,
    graph_to_dict,
    node_from_dict,
    parse_graph,
    serialize_graph,
    validate_topology,
)
from .llm import ChatClient, Message
from .orchestration import AgentRun, AgentSpec, Stage, Transcript, WorkflowSpec, run_agent, run_workflow

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".gif", ".webp", ".bmp"}
DEFAULT_K_MAX = 10
DEFAULT_MAX_ITERS = 7


# --- inputs -------------------------------------------------------------------------


@dataclass(frozen=True)
class PfdInput:
    kind: str  # "text" or "image"
    payload: str  # schematic description, or an image path

    def __post_init__(self) -> None:
        if self.kind not in ("text", "image"):
            raise ValueError(f"unknown PFD input kind {self.kind!r}")

    @classmethod
    def load(cls, path: str | Path) -> "PfdInput":
        path = Path(path)
        if path.suffix.lower() in IMAGE_SUFFIXES:
            if not path.is_file():
                raise FileNotFoundError(path)
            return cls("image", str(path))
        return cls("text", path.read_text(encoding="utf-8"))

    def content(self, instructions: str) -> str | list[dict[str, Any]]:
        """User-message content: plain text, or text plus an inline image part."""
        if self.kind == "text":
            return f"{instructions}\n\nProcess flow diagram (textual):\n{self.payload}"
        data = Path(self.payload).read_bytes()
        mime = mimetypes.guess_type(self.payload)[0] or "image/png"
        return [{"type": "text", "text": instructions},
                {"type": "image", "data": base64.b64encode(data).decode("ascii"), "media_type": mime}]


def _vocabulary(ontology: EquipmentOntology) -> str:
    return "Equipment vocabulary: " + ", ".join(ontology.types)


def _ask(spec: AgentSpec, content: Any, client: ChatClient, parse, transcript: Transcript | None):
    """Run ``spec`` and parse its reply, reprompting once with the parse error.

    Returns ``(value, error)``; ``value`` is None when both attempts failed.
    """
    run = run_agent(spec, content, client)
    if transcript is not None:
        transcript.record(run)
    try:
        return parse(run.output.text), None
    except (BlockError, GraphError, ValueError) as exc:
        retry = run_agent(spec, f"Your previous answer could not be parsed ({exc}). Answer again in the required format.",
                          client, history=[Message("user", content, sender="user"), *run.messages])
        if transcript is not None:
            transcript.record(retry)
        try:
            return parse(retry.output.text), None
        except (BlockError, GraphError, ValueError) as exc2:
            return None, str(exc2)


def _graph_json(text: str) -> dict[str, Any]:
    body = extract_block(text, "graph")
    try:
        data = json.loads(body)
    except json.JSONDecodeError as exc:
        raise BlockError(f"@@graph block is not valid JSON: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise BlockError("@@graph block must hold a JSON object")
    return data


# --- topology parsing -------------------------------------------------------------------


@dataclass
class EquipmentParse:
    nodes: list[EquipmentNode]
    flags: list[str] = field(default_factory=list)


@dataclass
class LinkParse:
    connections: list[Connection]
    dropped: int = 0
    flags: list[str] = field(default_factory=list)


def parse_equipment(pfd: PfdInput, client: ChatClient, ontology: EquipmentOntology | None = None,
                    transcript: Transcript | None = None, model: str = "") -> EquipmentParse:
    ontology = ontology or EquipmentOntology()

    def parse(text: str) -> list[dict[str, Any]]:
        items = _graph_json(text).get("equipment", [])
        if not isinstance(items, list):
            raise BlockError("'equipment' must be a list")
        return [node_from_dict(obj, f"equipment[{i}]") for i, obj in enumerate(items)]

    prompt = pfd.content(f"{_vocabulary(ontology)}\nList every equipment unit in the diagram.")
    raw, err = _ask(agent("equip", model), prompt, client, parse, transcript)
    if raw is None:
        return EquipmentParse([], [f"equipment parse failed: {err}"])
    nodes, flags, seen = [], [], set()
    for n in raw:
        if n.id in seen:
            flags.append(f"duplicate equipment id {n.id} dropped")
            continue
        seen.add(n.id)
        canon = ontology.canonical(n.type)
        if canon is not None and canon != n.type:
            n = EquipmentNode(n.id, canon, n.label, n.attrs)
        elif canon is None and n.type != MASKED:
            flags.append(f"{n.id}: type {n.type!r} outside ontology")
        nodes.append(n)
    if not nodes:
        flags.append("no equipment parsed")
    return EquipmentParse(nodes, flags)


def parse_links(pfd: PfdInput, nodes: Sequence[EquipmentNode], client: ChatClient,
                transcript: Transcript | None = None, model: str = "") -> LinkParse:
    """Ask for streams among ``nodes`` and drop every edge with an endpoint outside them."""

    def parse(text: str) -> list[Connection]:
        items = _graph_json(text).get("connections", [])
        if not isinstance(items, list):
            raise BlockError("'connections' must be a list")
        return [connection_from_dict(obj, f"connections[{i}]") for i, obj in enumerate(items)]

    listing = "\n".join(f"- {n.id}: {n.type}" + (f" ({n.label})" if n.label else "") for n in nodes) or "- (none)"
    prompt = pfd.content(f"Identified equipment (the only allowed endpoints):\n{listing}\nList every stream.")
    raw, err = _ask(agent("link", model), prompt, client, parse, transcript)
    if raw is None:
        return LinkParse([], 0, [f"link parse failed: {err}"])
    return filter_links(raw, nodes)


def filter_links(edges: Sequence[Connection], nodes: Sequence[EquipmentNode]) -> LinkParse:
    ids = {n.id for n in nodes}
    kept, flags = [], []
    for c in edges:
        if c.source in ids and c.target in ids:
            kept.append(c)
        else:
            flags.append(f"floating edge {c.source}->{c.target} dropped")
    return LinkParse(kept, len(edges) - len(kept), flags)


def _gated(graph: AbstractGraph, report: ValidationReport) -> ValidationReport:
    # an empty topology passes every rule vacuously but describes no process
    if graph.equipment:
        return report
    return ValidationReport(report.violations + (Violation("EMPTY", COMPLIANCE, (), "graph has no equipment"),))


def check_graph(graph: AbstractGraph, ontology: EquipmentOntology | None = None,
                extra_rules: Sequence[str] = ()) -> ValidationReport:
    return _gated(graph, validate_topology(graph, ontology, extra_rules))


@dataclass
class TopologyResult:
    graph: AbstractGraph
    report: ValidationReport
    dropped_edges: int
    flags: list[str]
    transcript: Transcript


def parse_topology(pfd: PfdInput, client: ChatClient, ontology: EquipmentOntology | None = None,
                   model: str = "") -> TopologyResult:
    ontology = ontology or EquipmentOntology()
    flags: list[str] = []
    dropped = {"n": 0}

    def equipment(p: PfdInput, tr: Transcript) -> tuple[PfdInput, list[EquipmentNode]]:
        res = parse_equipment(p, client, ontology, tr, model)
        flags.extend(res.flags)
        return p, res.nodes

    def links(arg, tr: Transcript) -> tuple[list[EquipmentNode], list[Connection]]:
        p, nodes = arg
        res = parse_links(p, nodes, client, tr, model)
        flags.extend(res.flags)
        dropped["n"] = res.dropped
        return nodes, res.connections

    def combine(arg, tr: Transcript) -> AbstractGraph:
        return build_graph(*arg)

    def validate(g: AbstractGraph, tr: Transcript) -> tuple[AbstractGraph, ValidationReport]:
        return g, check_graph(g, ontology)

    workflow = WorkflowSpec((
        Stage("equip_extract", "pfd", "pfd+nodes", equipment),
        Stage("link_extract", "pfd+nodes", "nodes+edges", links),
        Stage("combine", "nodes+edges", "graph", combine),
        Stage("validate", "graph", "graph+report", validate),
    ))
    transcript, (graph, report) = run_workflow(workflow, pfd)
    transcript.outcome = {"graph": graph_to_dict(graph), "validation": report.to_dict(),
                          "dropped_edges": dropped["n"], "flags": flags}
    return TopologyResult(graph, report, dropped["n"], flags, transcript)


# --- completion ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    rank: int
    type: str
    rationale: str = ""


@dataclass
class CompletionResult:
    masked_id: str
    candidates: list[Candidate]
    flags: list[str] = field(default_factory=list)
    transcript: Transcript = field(default_factory=Transcript)

    @property
    def types(self) -> list[str]:
        return [c.type for c in self.candidates]

    def to_dict(self) -> dict[str, Any]:
        return {
            "masked_id": self.masked_id,
            "candidates": [{"rank": c.rank, "type": c.type, "rationale": c.rationale} for c in self.candidates],
            "flags": self.flags,
        }


def parse_candidates(text: str) -> list[tuple[int, str, str]]:
    rows = []
    for line in extract_sections(text, ("candidates",))["candidates"]:
        rank, typ, why = split_fields(line, 3) if line.count("|") >= 2 else (*split_fields(line, 2), "")
        try:
            r = int(rank.rstrip("."))
        except ValueError:
            raise BlockError(f"candidate rank is not an integer: {rank!r}") from None
        rows.append((r, typ, why))
    return rows


def rank_candidates(rows: Sequence[tuple[int, str, str]], ontology: EquipmentOntology,
                    k_max: int = DEFAULT_K_MAX) -> tuple[list[Candidate], list[str]]:
    """Canonicalize, drop off-vocabulary types, keep each type's best rank, renumber 1..n."""
    flags = []
    best: dict[str, tuple[int, int, str]] = {}
    for order, (rank, typ, why) in enumerate(rows):
        canon = ontology.canonical(typ)
        if canon is None:
            flags.append(f"candidate type {typ!r} outside ontology dropped")
            continue
        key = (rank, order, why)
        if canon not in best or key < best[canon]:
            best[canon] = key
    ordered = sorted(best.items(), key=lambda kv: kv[1][:2])[:k_max]
    return [Candidate(i, t, v[2]) for i, (t, v) in enumerate(ordered, 1)], flags


def complete_graph(masked: MaskedGraph, client: ChatClient, ontology: EquipmentOntology | None = None,
                   k_max: int = DEFAULT_K_MAX, context: str = "", model: str = "") -> CompletionResult:
    ontology = ontology or EquipmentOntology()
    g = masked.graph
    node = g.node(masked.masked_id)
    if node is None or node.type != MASKED:
        raise GraphError(f"node {masked.masked_id} is not masked")
    ups = [f"{c.source} ({g.node(c.source).type})" for c in g.inlets(node.id) if g.node(c.source)]
    downs = [f"{c.target} ({g.node(c.target).type})" for c in g.outlets(node.id) if g.node(c.target)]
    prompt = (
        f"{_vocabulary(ontology)}\nReturn at most {k_max} candidates.\n"
        + (f"Process context: {context}\n" if context else "")
        + f"Masked unit: {node.id}; upstream: {', '.join(ups) or 'none'}; downstream: {', '.join(downs) or 'none'}\n\n"
        + serialize_graph(g)
    )
    transcript = Transcript()
    rows, err = _ask(agent("complete", model), prompt, client, parse_candidates, transcript)
    if rows is None:
        return CompletionResult(node.id, [], [f"candidate parse failed: {err}"], transcript)
    cands, flags = rank_candidates(rows, ontology, k_max)
    result = CompletionResult(node.id, cands, flags, transcript)
    transcript.outcome = result.to_dict()
    return result


# --- design / correct ------------------------------------------------------------------------


@dataclass(frozen=True)
class Issue:
    rule_id: str  # validator rule id, or "agent" for free-text findings
    targets: tuple[str, ...]
    message: str
    suggestion: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"rule_id": self.rule_id, "targets": list(self.targets), "message": self.message,
                "suggestion": self.suggestion}


@dataclass
class Critique:
    issues: list[Issue]
    verdict: str  # "accept" or "revise"
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"verdict": self.verdict, "issues": [i.to_dict() for i in self.issues], "flags": self.flags}

    def render(self) -> str:
        lines = [f"VERDICT: {self.verdict}"]
        for i in self.issues:
            lines.append(f"ISSUE [{i.rule_id}] {', '.join(i.targets) or '-'}: {i.message}"
                         + (f" -> {i.suggestion}" if i.suggestion else ""))
        return "\n".join(lines)


_ISSUE = re.compile(r"^\s*ISSUE:\s*(.*)$", re.IGNORECASE)
_VERDICT = re.compile(r"^\s*VERDICT:\s*(accept|revise)\b", re.IGNORECASE)


def parse_critique(text: str) -> tuple[list[Issue], str]:
    issues, verdict = [], None
    for line in text.splitlines():
        m = _VERDICT.match(line)
        if m:
            verdict = m.group(1).lower()
            continue
        m = _ISSUE.match(line)
        if m:
            parts = [p.strip() for p in m.group(1).split("|")]
            parts += [""] * (3 - len(parts))
            ids = tuple(t for t in re.split(r"[,\s]+", parts[0]) if t)
            issues.append(Issue("agent", ids, parts[1], " | ".join(parts[2:]).strip(" |")))
    if verdict is None:
        raise BlockError("no VERDICT line")
    return issues, verdict


def correct(graph: AbstractGraph, client: ChatClient, ontology: EquipmentOntology | None = None,
            extra_rules: Sequence[str] = (), transcript: Transcript | None = None,
            model: str = "") -> tuple[Critique, ValidationReport]:
    """Mechanical validation, then the correction agent; the validator has the final word."""
    report = check_graph(graph, ontology, extra_rules)
    mech = [Issue(v.rule_id, v.targets, v.message) for v in report.violations]
    checks = "\n".join(f"- [{v.rule_id}/{v.severity}] {v.message}" for v in report.violations) or "- none (all rules pass)"
    prompt = f"Rule-check results:\n{checks}\n\nProposed topology:\n{serialize_graph(graph)}"
    run = run_agent(agent("correct", model), prompt, client)
    if transcript is not None:
        transcript.record(run)
    flags = []
    try:
        extra, agent_verdict = parse_critique(run.output.text)
    except BlockError as exc:
        extra, agent_verdict = [], None
        flags.append(f"critique parse failed: {exc}")
    accept = report.compliant and agent_verdict in ("accept", None)
    return Critique(mech + extra, "accept" if accept else "revise", flags), report


@dataclass
class DesignState:
    t: int
    graph: AbstractGraph
    critique: Critique | None
    validation: ValidationReport

    def to_dict(self) -> dict[str, Any]:
        return {
            "t": self.t,
            "graph": graph_to_dict(self.graph),
            "critique": self.critique.to_dict() if self.critique else None,
            "validation": self.validation.to_dict(),
        }


@dataclass
class DesignResult:
    graph: AbstractGraph
    states: list[DesignState]
    success: bool
    flags: list[str]
    transcript: Transcript

    @property
    def outcome(self) -> dict[str, bool]:
        final = self.states[-1].validation if self.states else ValidationReport()
        return {"legal": final.legal, "compliant": final.compliant}


@dataclass(frozen=True)
class DesignTask:
    description: str
    extra_rules: tuple[str, ...] = ()
    difficulty: str = "standard"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DesignTask":
        if not isinstance(data.get("description"), str) or not data["description"].strip():
            raise ValueError("design task needs a nonempty 'description'")
        difficulty = data.get("difficulty", "standard")
        if difficulty not in ("simple", "standard", "hard"):
            raise ValueError(f"unknown difficulty {difficulty!r}")
        return cls(data["description"], tuple(data.get("extra_rules", ())), difficulty)


def load_design_task(path: str | Path) -> DesignTask:
    with open(path, encoding="utf-8") as fh:
        return DesignTask.from_dict(json.load(fh))


def design_loop(description: str, client: ChatClient, ontology: EquipmentOntology | None = None,
                extra_rules: Sequence[str] = (), max_iters: int = DEFAULT_MAX_ITERS,
                model: str = "") -> DesignResult:
    """Draft, critique and revise until the critique accepts or ``max_iters`` drafts exist.

    Each draft contributes one state, so the history never exceeds ``max_iters``.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    ontology = ontology or EquipmentOntology()
    designer = agent("design", model)
    transcript = Transcript()
    flags: list[str] = []

    def draft(prompt: str) -> AbstractGraph:
        g, err = _ask(designer, prompt, client, lambda text: parse_graph(extract_block(text, "graph")), transcript)
        if g is None:
            flags.append(f"design parse failed: {err}")
            return AbstractGraph((), ())
        return g

    rules = f"Additional required features: {', '.join(extra_rules)}.\n" if extra_rules else ""
    graph = draft(f"{_vocabulary(ontology)}\n{rules}\nProcess description:\n{description}")
    states: list[DesignState] = []
    success = False
    for t in range(max_iters):
        critique, report = correct(graph, client, ontology, extra_rules, transcript, model)
        states.append(DesignState(t, graph, critique, report))
        if critique.verdict == "accept":
            success = True
            break
        if t + 1 < max_iters:
            graph = draft(
                f"{_vocabulary(ontology)}\nRevise the design to resolve the critique.\n\n"
                f"Previous graph:\n{serialize_graph(graph)}\nCritique:\n{critique.render()}"
            )
    if not success:
        flags.append("non_converged")
    transcript.outcome = {"success": success, "iterations": len(states), "flags": flags,
                          "graph": graph_to_dict(graph)}
    return DesignResult(graph, states, success, flags, transcript)
