"""Knowledge cohort: multi-source augmentation and document ingestion into the stores."""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence

from .agents import agent
from .grammar import FINAL_MARKER, BlockError, extract_sections, split_fields
from .knowledge_store import (
    DEFAULT_T_AUTO,
    DEFAULT_T_REVIEW,
    LAYERS,
    Adjudication,
    Chunk,
    Embedder,
    EntityRecord,
    KnowledgeGraph,
    MergeDecision,
    MergeStats,
    ScoredChunk,
    StubEmbedder,
    Triple,
    VectorStore,
    add_subgraph,
    check_thresholds,
    chunk_document,
    entity_id,
    graph_query,
    merge_to_fixpoint,
)
from .llm import ChatClient, Message
from .metrics import string_similarity
from .orchestration import (
    AgentRun,
    AgentSpec,
    ChatGroupSpec,
    ConfigError,
    Stage,
    Transcript,
    WorkflowSpec,
    run_agent,
    run_chat_group,
    run_workflow,
)

log = logging.getLogger(__name__)


# --- web search interface ----------------------------------------------------


@dataclass(frozen=True)
class WebResult:
    title: str
    url: str
    snippet: str


class WebSearch(Protocol):
    def search(self, query: str, max_results: int = 5) -> list[WebResult]: ...


class NullWebSearch:
    def search(self, query: str, max_results: int = 5) -> list[WebResult]:
        return []


def _tokens(s: str) -> set[str]:
    return set(re.findall(r"[a-z0-9]+", s.lower()))


class FixtureWebSearch:
    """Canned results keyed by query; falls back to the best token overlap."""

    def __init__(self, records: Sequence[dict[str, Any]]):
        self._records = [
            (str(r["query"]), [WebResult(x["title"], x["url"], x["snippet"]) for x in r.get("results", [])])
            for r in records
        ]

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureWebSearch":
        with open(path, encoding="utf-8") as fh:
            return cls([json.loads(line) for line in fh if line.strip()])

    def search(self, query: str, max_results: int = 5) -> list[WebResult]:
        key = " ".join(query.lower().split())
        for q, results in self._records:
            if " ".join(q.lower().split()) == key:
                return results[:max_results]
        qt = _tokens(query)
        best, best_score = None, 0.0
        for q, results in self._records:
            t = _tokens(q)
            score = len(qt & t) / len(qt | t) if qt | t else 0.0
            if score > best_score:
                best, best_score = results, score
        return (best or [])[:max_results]


# --- stores ---------------------------------------------------------------------


@dataclass
class KnowledgeStores:
    vectors: VectorStore
    kg: KnowledgeGraph = field(default_factory=KnowledgeGraph)
    web: WebSearch = field(default_factory=NullWebSearch)

    @property
    def embedder(self) -> Embedder:
        return self.vectors.embedder

    @classmethod
    def empty(cls, embedder: Embedder | None = None, web: WebSearch | None = None) -> "KnowledgeStores":
        return cls(VectorStore(embedder or StubEmbedder()), KnowledgeGraph(), web or NullWebSearch())


# --- augmentation -------------------------------------------------------------

_STOP = frozenset(
    "a an and are as at be by can do does for from how in into is it its of on or should that the this to "
    "under use used using via what when where which who why will with".split()
)


def noun_phrases(text: str) -> list[str]:
    """Maximal runs of non-stopword tokens, in order of appearance."""
    phrases, cur = [], []
    for tok in re.findall(r"[A-Za-z0-9][A-Za-z0-9\-/]*", text):
        if tok.lower() in _STOP:
            if cur:
                phrases.append(" ".join(cur))
            cur = []
        else:
            cur.append(tok)
    if cur:
        phrases.append(" ".join(cur))
    seen = []
    for p in phrases:
        if p.lower() not in (s.lower() for s in seen):
            seen.append(p)
    return seen


@dataclass(frozen=True)
class Ablation:
    web: bool = True
    kb: bool = True
    kg: bool = True

    def enabled(self) -> list[str]:
        return [s for s in ("web", "kb", "kg") if getattr(self, s)]


@dataclass
class RetrievalBundle:
    k_web: list[WebResult] = field(default_factory=list)
    k_kb: list[ScoredChunk] = field(default_factory=list)
    k_kg: KnowledgeGraph = field(default_factory=KnowledgeGraph)
    query_forms: dict[str, Any] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def items(self) -> dict[str, str]:
        """Citation tag -> short description of every item in the bundle."""
        out = {}
        for i, r in enumerate(self.k_web, 1):
            out[f"web:{i}"] = f"{r.title} | {r.snippet} | {r.url}"
        for i, s in enumerate(self.k_kb, 1):
            out[f"kb:{i}"] = f"({s.score:.3f}) {s.chunk.id}: {s.chunk.text}"
        ents = self.k_kg.entities
        for i, t in enumerate(self.k_kg.triples, 1):
            sname = ents[t.subject].name if t.subject in ents else t.subject
            oname = ents[t.object].name if t.object in ents else t.object
            out[f"kg:{i}"] = f"{sname} --{t.predicate}--> {oname} [{t.layer}]"
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "k_web": [vars(r) for r in self.k_web],
            "k_kb": [{"chunk": s.chunk.id, "score": round(s.score, 6)} for s in self.k_kb],
            "k_kg": [list(t.key) for t in self.k_kg.triples],
            "query_forms": self.query_forms,
            "notes": self.notes,
        }


@dataclass
class Report:
    text: str
    citations: list[str]
    conflicts: list[str]
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "citations": self.citations, "conflicts": self.conflicts, "notes": self.notes}


@dataclass
class AugmentResult:
    report: Report
    bundle: RetrievalBundle
    transcript: Transcript


_CITE = re.compile(r"\[((?:web|kb|kg):\d+)\]")


def parse_report(text: str, bundle: RetrievalBundle) -> Report:
    body = text.replace(FINAL_MARKER, "").strip()
    known = bundle.items()
    cites, notes = [], []
    for tag in _CITE.findall(body):
        if tag in cites:
            continue
        if tag in known:
            cites.append(tag)
        else:
            notes.append(f"dropped unresolvable citation [{tag}]")
    conflicts = [ln.split(":", 1)[1].strip() for ln in body.splitlines() if ln.strip().upper().startswith("CONFLICT:")]
    return Report(body, cites, conflicts, notes)


def match_mentions(kg: KnowledgeGraph, mentions: Sequence[str], threshold: float = 0.8) -> list[str]:
    """Resolve free-text entity mentions to root entity ids by string similarity."""
    seeds = []
    for m in mentions:
        best, best_s = None, threshold
        for eid in kg.roots:
            rec = kg.entities[eid]
            s = max(string_similarity(m, n) for n in (rec.name, *rec.aliases))
            if s >= best_s and (best is None or s > best_s):
                best, best_s = eid, s
        if best is not None and best not in seeds:
            seeds.append(best)
    return seeds


def knowledge_augment(
    query: str,
    stores: KnowledgeStores,
    client: ChatClient,
    ablation: Ablation = Ablation(),
    kb_k: int = 8,
    kg_depth: int = 2,
    model: str = "",
) -> AugmentResult:
    """Gather web / document / graph evidence and synthesize a cited report."""
    streams = ablation.enabled()
    if not streams:
        raise ConfigError("at least one retrieval stream must be enabled")
    bundle = RetrievalBundle()
    lock = threading.Lock()
    # parallel streams finish in any order; collect per stream, assemble in fixed order afterwards
    forms: dict[str, Any] = {}
    failures: dict[str, list[str]] = {}
    for s in ("web", "kb", "kg"):
        if s not in streams:
            bundle.notes.append(f"{s} stream disabled (ablation)")

    phrases = noun_phrases(query)
    default_web = " ".join([query, *phrases[:4]]) if phrases else query

    def guarded(stream: str, fn):
        def tool(args: dict[str, str]) -> str:
            try:
                return fn(args)
            except Exception as exc:
                with lock:
                    failures.setdefault(stream, []).append(f"{stream} stream failed: {exc}")
                raise
        return tool

    def search_web(args: dict[str, str]) -> str:
        q = args.get("query") or default_web
        results = stores.web.search(q)
        with lock:
            forms["q_web"] = q
            bundle.k_web = list(results)
        return "\n".join(f"[web:{i}] {r.title} | {r.snippet} | {r.url}" for i, r in enumerate(results, 1)) or "no results"

    def search_kb(args: dict[str, str]) -> str:
        q = args.get("query") or query
        hits = stores.vectors.query(q, kb_k)
        with lock:
            forms["q_kb"] = q
            bundle.k_kb = hits
        return "\n".join(f"[kb:{i}] ({h.score:.3f}) {h.chunk.text}" for i, h in enumerate(hits, 1)) or "no passages"

    def search_kg(args: dict[str, str]) -> str:
        raw = args.get("entities")
        mentions = [m.strip() for m in re.split(r"[;,]", raw) if m.strip()] if raw else phrases
        seeds = match_mentions(stores.kg, mentions)
        sub = graph_query(stores.kg, seeds, kg_depth)
        with lock:
            forms["q_kg"] = {"mentions": mentions, "entities": seeds}
            bundle.k_kg = sub
        tmp = RetrievalBundle(k_kg=sub)
        return "\n".join(f"[{k}] {v}" for k, v in tmp.items().items()) or "no matching entities"

    tools = {
        "search_web": guarded("web", search_web),
        "search_kb": guarded("kb", search_kb),
        "search_kg": guarded("kg", search_kg),
    }
    members = tuple(agent(s, model) for s in streams) + (agent("report", model),)
    group = ChatGroupSpec(
        members, terminator="report", max_turns=len(members), parallel=frozenset(streams)
    )
    task = (
        f"{query}\n\nSuggested reformulations - web: {default_web!r}; documents: {query!r}; "
        f"graph entities: {'; '.join(phrases) or query!r}"
    )
    transcript, _ = run_chat_group(group, task, client, tools)
    bundle.query_forms = {k: forms[k] for k in ("q_web", "q_kb", "q_kg") if k in forms}
    bundle.notes += [n for s in ("web", "kb", "kg") for n in failures.get(s, [])]
    final = next((m for m in reversed(transcript.messages) if m.sender == "report" and m.role == "assistant"), None)
    report = parse_report(final.text if final else "", bundle)
    report.notes = bundle.notes + report.notes
    transcript.outcome = {"report": report.to_dict(), "bundle": bundle.to_dict()}
    return AugmentResult(report, bundle, transcript)


# --- extraction -----------------------------------------------------------------


@dataclass
class Extraction:
    kg: KnowledgeGraph
    dropped: int = 0
    flags: list[str] = field(default_factory=list)
    runs: list[AgentRun] = field(default_factory=list)


def parse_extraction(text: str, chunk_id: str, layers: Sequence[str] = LAYERS) -> tuple[KnowledgeGraph, int]:
    """Parse an ``@@entities/@@triples`` block into a local graph and a drop count."""
    sections = extract_sections(text, ("entities", "triples"))
    local_ids: dict[str, str] = {}
    entities: dict[str, EntityRecord] = {}
    for line in sections.get("entities", []):
        lid, name = split_fields(line, 2)
        try:
            gid = entity_id(name)
        except ValueError:
            continue
        local_ids[lid] = gid
        if gid in entities:
            prev = entities[gid]
            if name != prev.name and name not in prev.aliases:
                entities[gid] = EntityRecord(gid, prev.name, tuple(sorted({*prev.aliases, name})))
        else:
            entities[gid] = EntityRecord(gid, name)
    triples, dropped = [], 0
    for line in sections.get("triples", []):
        s, p, o, layer = split_fields(line, 4)
        if layer not in layers or s not in local_ids or o not in local_ids or not p:
            dropped += 1
            continue
        triples.append(Triple(local_ids[s], p, local_ids[o], layer, (chunk_id,)))
    return KnowledgeGraph(entities, triples), dropped


def extract_triples(chunk: Chunk, client: ChatClient, layers: Sequence[str] = LAYERS,
                    spec: AgentSpec | None = None) -> Extraction:
    if not chunk.text:
        raise ValueError("cannot extract from an empty chunk")
    spec = spec or agent("extract")
    prompt = f"Allowed layers: {', '.join(layers)}.\n\nPassage ({chunk.id}):\n{chunk.text}"
    run = run_agent(spec, prompt, client)
    runs = [run]
    try:
        kg, dropped = parse_extraction(run.output.text, chunk.id, layers)
        return Extraction(kg, dropped, [], runs)
    except BlockError as exc:
        retry = run_agent(spec, f"Your previous answer could not be parsed ({exc}). Answer again in the required format.",
                          client, history=[Message("user", prompt, sender="user"), *run.messages])
        runs.append(retry)
        try:
            kg, dropped = parse_extraction(retry.output.text, chunk.id, layers)
            return Extraction(kg, dropped, ["reprompted"], runs)
        except BlockError as exc2:
            return Extraction(KnowledgeGraph(), 0, [f"unparseable: {exc2}"], runs)


# --- merge adjudication -------------------------------------------------------------

_VERDICT = re.compile(r"^\s*(YES|NO)\b\s*[:\-\u2013,]?\s*(.*)", re.IGNORECASE | re.DOTALL)


def review_merge(decision: MergeDecision, kg: KnowledgeGraph, context_chunks: Sequence[str], client: ChatClient,
                 spec: AgentSpec | None = None, transcript: Transcript | None = None) -> Adjudication:
    spec = spec or agent("merge")
    a, b = kg.entities[decision.a], kg.entities[decision.b]
    context = "\n---\n".join(context_chunks) or "(no context available)"
    prompt = (
        f"Entity A: {a.name} (aliases: {', '.join(a.aliases) or 'none'})\n"
        f"Entity B: {b.name} (aliases: {', '.join(b.aliases) or 'none'})\n"
        f"Embedding similarity: {decision.similarity:.3f}\n\nContext:\n{context}"
    )
    run = run_agent(spec, prompt, client)
    if transcript is not None:
        transcript.record(run)
    m = _VERDICT.match(run.output.text)
    if m is None:
        return Adjudication(False, run.output.text.strip(), flagged=True)
    return Adjudication(m.group(1).upper() == "YES", m.group(2).strip())


def _context_for(kg: KnowledgeGraph, vectors: VectorStore, eid: str, limit: int = 3) -> list[str]:
    ids: list[str] = []
    for t in kg.triples:
        if eid in (t.subject, t.object):
            ids.extend(c for c in t.chunks if c not in ids)
    return [vectors.get(c).text for c in ids[:limit] if vectors.get(c) is not None]


# --- ingestion ------------------------------------------------------------------------


@dataclass(frozen=True)
class MergeConfig:
    t_auto: float = DEFAULT_T_AUTO
    t_review: float = DEFAULT_T_REVIEW
    target_chars: int = 2000
    overlap_chars: int = 200


@dataclass
class UpdateResult:
    kg_delta: KnowledgeGraph
    chunk_count: int
    merge_stats: MergeStats
    flags: list[str]
    transcript: Transcript

    def summary(self) -> dict[str, Any]:
        return {
            "chunks": self.chunk_count,
            "new_entities": len(self.kg_delta.entities),
            "new_triples": len(self.kg_delta.triples),
            "merge_stats": self.merge_stats.to_dict(),
            "flags": self.flags,
        }


def knowledge_update(
    document: str,
    stores: KnowledgeStores,
    client: ChatClient,
    merge_cfg: MergeConfig = MergeConfig(),
    doc_id: str = "doc",
    model: str = "",
) -> UpdateResult:
    """Chunk, embed and extract a document, then merge it into the stores.

    Chunks are extracted one after another so that scripted replies line up
    deterministically with chunk order. Extraction failures are flagged per
    chunk and never abort the document.
    """
    check_thresholds(merge_cfg.t_auto, merge_cfg.t_review)
    before = stores.kg
    flags: list[str] = []
    stats_box: dict[str, MergeStats] = {}
    extract_spec, merge_spec = agent("extract", model), agent("merge", model)

    def chunk_stage(doc: str, tr: Transcript) -> list[Chunk]:
        return chunk_document(doc, merge_cfg.target_chars, merge_cfg.overlap_chars, doc_id)

    def process_stage(chunks: list[Chunk], tr: Transcript) -> list[KnowledgeGraph]:
        locals_ = []
        for c in chunks:
            stores.vectors.add(c)
            ex = extract_triples(c, client, LAYERS, extract_spec)
            for r in ex.runs:
                tr.record(r)
            if ex.dropped:
                flags.append(f"{c.id}: dropped {ex.dropped} triple(s)")
            flags.extend(f"{c.id}: {f}" for f in ex.flags)
            locals_.append(ex.kg)
        return locals_

    def aggregate_stage(locals_: list[KnowledgeGraph], tr: Transcript) -> KnowledgeGraph:
        kg = stores.kg
        for local in locals_:
            kg = add_subgraph(kg, local)
        return kg

    def merge_stage(kg: KnowledgeGraph, tr: Transcript) -> KnowledgeGraph:
        def adjudicate(d: MergeDecision, g: KnowledgeGraph) -> Adjudication:
            ctx = _context_for(g, stores.vectors, d.a) + _context_for(g, stores.vectors, d.b)
            adj = review_merge(d, g, ctx, client, merge_spec, tr)
            if adj.flagged:
                flags.append(f"merge ({d.a}, {d.b}): unparseable adjudication")
            return adj

        merged, stats = merge_to_fixpoint(kg, merge_cfg.t_auto, merge_cfg.t_review, stores.embedder, adjudicate)
        stats_box["stats"] = stats
        return merged

    workflow = WorkflowSpec((
        Stage("chunk", "document", "chunks", chunk_stage),
        Stage("embed_extract", "chunks", "local_graphs", process_stage),
        Stage("aggregate", "local_graphs", "graph", aggregate_stage),
        Stage("merge", "graph", "graph", merge_stage),
    ))
    if not document:
        return UpdateResult(KnowledgeGraph(), 0, MergeStats(), [], Transcript())
    transcript, merged = run_workflow(workflow, document)
    stores.kg = merged
    old_keys = {t.key for t in before.triples}
    delta = KnowledgeGraph(
        {k: v for k, v in merged.entities.items() if k not in before.entities},
        [t for t in merged.triples if t.key not in old_keys],
    )
    n_chunks = len(chunk_document(document, merge_cfg.target_chars, merge_cfg.overlap_chars, doc_id))
    result = UpdateResult(delta, n_chunks, stats_box.get("stats", MergeStats()), flags, transcript)
    transcript.outcome = result.summary()
    return result
