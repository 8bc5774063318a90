"""In-process stores: document chunks with embeddings, and the triple knowledge graph.

Entity resolution follows a three-way rule on name-embedding similarity:
pairs above ``t_auto`` merge automatically, pairs in ``(t_review, t_auto]``
go to an adjudicator, and the rest stay distinct. Merges are applied with
union-find; the lexicographically smallest id of a group becomes its root.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import httpx
import numpy as np

from .llm import EndpointError

log = logging.getLogger(__name__)

LAYERS = ("Process", "Flowsheet Structure", "Reaction Mechanism", "Substance", "Constraints")

DEFAULT_T_AUTO = 0.95
DEFAULT_T_REVIEW = 0.85


# --- chunking ---------------------------------------------------------------


@dataclass(frozen=True)
class Chunk:
    id: str
    doc_id: str
    text: str
    start: int
    end: int


def chunk_document(text: str, target_chars: int = 2000, overlap_chars: int = 200, doc_id: str = "doc") -> list[Chunk]:
    """Character-budgeted chunks; a boundary snaps back to the last paragraph
    break found within the final quarter of the budget."""
    if not target_chars > overlap_chars >= 0:
        raise ValueError("need target_chars > overlap_chars >= 0")
    chunks: list[Chunk] = []
    n = len(text)
    start = 0
    while start < n:
        end = min(start + target_chars, n)
        if end < n:
            window_lo = end - target_chars // 4
            brk = text.rfind("\n\n", window_lo, end)
            if brk != -1 and brk + 2 - overlap_chars > start:
                end = brk + 2
        chunks.append(Chunk(f"{doc_id}#{len(chunks):04d}", doc_id, text[start:end], start, end))
        if end >= n:
            break
        start = end - overlap_chars
    return chunks


# --- embeddings -------------------------------------------------------------


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.values)

    @property
    def usable(self) -> bool:
        return any(v != 0.0 for v in self.values)

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> EmbeddingVector: ...


_WORD = re.compile(r"[a-z0-9]+")


class StubEmbedder:
    """Seeded feature hashing of character 3-grams of each lowercased word.

    ``aliases`` rewrites whole words before hashing (e.g. ``{"pt": "platinum"}``)
    so that fixtures can declare known synonyms.
    """

    def __init__(self, dim: int = 64, seed: int = 0, aliases: dict[str, str] | None = None):
        self.dim = dim
        self.seed = seed
        self.aliases = {k.lower(): v.lower() for k, v in (aliases or {}).items()}
        self._cache: dict[str, EmbeddingVector] = {}

    def _grams(self, text: str) -> list[str]:
        grams = []
        for word in _WORD.findall(text.lower()):
            word = self.aliases.get(word, word)
            padded = f"#{word}#"
            grams.extend(padded[i:i + 3] for i in range(len(padded) - 2))
        return grams

    def embed(self, text: str) -> EmbeddingVector:
        hit = self._cache.get(text)
        if hit is not None:
            return hit
        vec = [0.0] * self.dim
        for g in self._grams(text):
            h = hashlib.blake2b(f"{self.seed}:{g}".encode(), digest_size=8).digest()
            idx = int.from_bytes(h[:4], "little") % self.dim
            vec[idx] += 1.0 if h[4] & 1 else -1.0
        norm = math.sqrt(sum(v * v for v in vec))
        out = EmbeddingVector(tuple(v / norm for v in vec) if norm > 0 else tuple(vec))
        self._cache[text] = out
        return out


class RemoteEmbedder:
    """OpenAI-style ``POST {base_url}/embeddings`` provider."""

    def __init__(self, base_url: str, model: str, api_key: str | None = None, dim: int | None = None,
                 transport: httpx.BaseTransport | None = None):
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._http = httpx.Client(timeout=60.0, headers=headers, transport=transport)
        self.url = base_url.rstrip("/") + "/embeddings"
        self.model = model
        self.dim = dim or 0

    def embed(self, text: str) -> EmbeddingVector:
        if not text:
            return EmbeddingVector(tuple([0.0] * self.dim))
        try:
            resp = self._http.post(self.url, json={"model": self.model, "input": text})
        except httpx.TransportError as exc:
            raise EndpointError(f"embedding transport error: {exc}") from exc
        if resp.status_code >= 400:
            raise EndpointError(f"embedding HTTP {resp.status_code}", retriable=resp.status_code in (429, 500, 502, 503),
                                status=resp.status_code)
        values = tuple(float(v) for v in resp.json()["data"][0]["embedding"])
        if self.dim and len(values) != self.dim:
            raise EndpointError(f"embedding dimension {len(values)} != {self.dim}", retriable=False)
        self.dim = len(values)
        return EmbeddingVector(values)


def embed(provider: Embedder, text: str) -> EmbeddingVector:
    return provider.embed(text)


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    x, y = a.array(), b.array()
    nx_, ny = float(np.linalg.norm(x)), float(np.linalg.norm(y))
    if nx_ == 0.0 or ny == 0.0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return max(-1.0, min(1.0, float(x @ y) / (nx_ * ny)))


# --- vector store -----------------------------------------------------------


@dataclass(frozen=True)
class ScoredChunk:
    chunk: Chunk
    score: float


class VectorStore:
    """Linear-scan chunk store; upserts by chunk id."""

    def __init__(self, embedder: Embedder):
        self.embedder = embedder
        self._chunks: dict[str, Chunk] = {}
        self._vectors: dict[str, EmbeddingVector] = {}

    def __len__(self) -> int:
        return len(self._chunks)

    def __contains__(self, chunk_id: str) -> bool:
        return chunk_id in self._chunks

    def get(self, chunk_id: str) -> Chunk | None:
        return self._chunks.get(chunk_id)

    @property
    def chunks(self) -> list[Chunk]:
        return [self._chunks[k] for k in sorted(self._chunks)]

    def add(self, chunk: Chunk, vector: EmbeddingVector | None = None) -> None:
        vector = vector if vector is not None else self.embedder.embed(chunk.text)
        dims = {v.dim for v in self._vectors.values()}
        if dims and vector.dim not in dims:
            raise ValueError(f"embedding dimension {vector.dim} differs from store dimension {dims.pop()}")
        self._chunks[chunk.id] = chunk
        self._vectors[chunk.id] = vector

    def query(self, text: str, k: int = 8) -> list[ScoredChunk]:
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self._chunks:
            return []
        q = self.embedder.embed(text)
        if not q.usable:
            return []
        ids = sorted(self._chunks)
        mat = np.array([self._vectors[i].values for i in ids])
        norms = np.linalg.norm(mat, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            sims = (mat @ q.array()) / (norms * np.linalg.norm(q.array()))
        sims = np.where(norms > 0, sims, -np.inf)
        # ties: ascending id, since ids are already sorted and the sort is stable
        order = sorted(range(len(ids)), key=lambda j: -sims[j])
        return [ScoredChunk(self._chunks[ids[j]], float(min(1.0, sims[j]))) for j in order[:k] if np.isfinite(sims[j])]

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        ids = sorted(self._chunks)
        with open(directory / "chunks.jsonl", "w", encoding="utf-8") as fh:
            for i in ids:
                c = self._chunks[i]
                fh.write(json.dumps({"id": c.id, "doc_id": c.doc_id, "start": c.start, "end": c.end,
                                     "text": c.text}, ensure_ascii=False) + "\n")
        dim = self._vectors[ids[0]].dim if ids else self.embedder.dim
        with open(directory / "embeddings.bin", "wb") as fh:
            fh.write(struct.pack("<I", dim))
            for i in ids:
                fh.write(struct.pack(f"<{dim}f", *self._vectors[i].values))

    @classmethod
    def load(cls, directory: str | Path, embedder: Embedder) -> "VectorStore":
        directory = Path(directory)
        store = cls(embedder)
        with open(directory / "chunks.jsonl", encoding="utf-8") as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        raw = (directory / "embeddings.bin").read_bytes()
        (dim,) = struct.unpack_from("<I", raw, 0)
        if len(raw) != 4 + 4 * dim * len(rows):
            raise ValueError("embeddings.bin size does not match chunks.jsonl")
        for n, r in enumerate(rows):
            vals = struct.unpack_from(f"<{dim}f", raw, 4 + 4 * dim * n)
            store.add(Chunk(r["id"], r["doc_id"], r["text"], r["start"], r["end"]),
                      EmbeddingVector(tuple(float(v) for v in vals)))
        return store


# --- knowledge graph --------------------------------------------------------


def entity_id(name: str) -> str:
    """Stable id for an entity surface form."""
    words = _WORD.findall(name.lower())
    if not words:
        raise ValueError(f"entity name {name!r} has no alphanumeric content")
    return "_".join(words)


@dataclass(frozen=True)
class EntityRecord:
    id: str
    name: str
    aliases: tuple[str, ...] = ()
    canonical_of: str | None = None


@dataclass(frozen=True)
class Triple:
    subject: str
    predicate: str
    object: str
    layer: str
    chunks: tuple[str, ...] = ()

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.subject, self.predicate, self.object, self.layer)


@dataclass
class KnowledgeGraph:
    entities: dict[str, EntityRecord] = field(default_factory=dict)
    triples: list[Triple] = field(default_factory=list)
    notes: list[str] = field(default_factory=list, compare=False)

    def root(self, eid: str) -> str:
        rec = self.entities.get(eid)
        if rec is None or rec.canonical_of is None:
            return eid
        return rec.canonical_of

    @property
    def roots(self) -> list[str]:
        return sorted(i for i, e in self.entities.items() if e.canonical_of is None)

    def normalized(self) -> "KnowledgeGraph":
        """Copy with entities and triples in sorted order (for equality up to order)."""
        ents = {k: self.entities[k] for k in sorted(self.entities)}
        return KnowledgeGraph(ents, sorted(self.triples, key=lambda t: (t.key, t.chunks)))


def _merge_records(a: EntityRecord, b: EntityRecord) -> EntityRecord:
    name = min(a.name, b.name)
    aliases = sorted(({a.name, b.name} | set(a.aliases) | set(b.aliases)) - {name})
    roots = [r for r in (a.canonical_of, b.canonical_of) if r is not None]
    return EntityRecord(a.id, name, tuple(aliases), min(roots) if roots else None)


def _dedupe_triples(triples: Iterable[Triple]) -> list[Triple]:
    order: list[tuple] = []
    merged: dict[tuple, list[str]] = {}
    for t in triples:
        if t.key not in merged:
            order.append(t.key)
            merged[t.key] = []
        for c in t.chunks:
            if c not in merged[t.key]:
                merged[t.key].append(c)
    return [Triple(*k, chunks=tuple(merged[k])) for k in order]


def add_subgraph(kg: KnowledgeGraph, local: KnowledgeGraph) -> KnowledgeGraph:
    """Union of two graphs; exact-duplicate triples collapse and pool provenance."""
    entities = dict(kg.entities)
    for eid, rec in local.entities.items():
        entities[eid] = _merge_records(entities[eid], rec) if eid in entities else rec
    out = KnowledgeGraph(entities, _dedupe_triples([*kg.triples, *local.triples]))
    return _rewrite_to_roots(out)


def _rewrite_to_roots(kg: KnowledgeGraph) -> KnowledgeGraph:
    triples = [replace(t, subject=kg.root(t.subject), object=kg.root(t.object)) for t in kg.triples]
    return KnowledgeGraph(kg.entities, _dedupe_triples(triples), list(kg.notes))


def graph_query(kg: KnowledgeGraph, seeds: Iterable[str], depth: int = 2) -> KnowledgeGraph:
    """Entities within ``depth`` undirected triple hops of any seed, with induced triples."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    notes = []
    frontier = set()
    for s in seeds:
        if s not in kg.entities:
            notes.append(f"unknown seed entity {s!r} skipped")
            continue
        frontier.add(kg.root(s))
    adj: dict[str, set[str]] = {}
    for t in kg.triples:
        adj.setdefault(t.subject, set()).add(t.object)
        adj.setdefault(t.object, set()).add(t.subject)
    seen = set(frontier)
    for _ in range(depth):
        frontier = {v for u in frontier for v in adj.get(u, ()) if v not in seen}
        if not frontier:
            break
        seen |= frontier
    ents = {k: kg.entities[k] for k in sorted(seen) if k in kg.entities}
    triples = [t for t in kg.triples if t.subject in seen and t.object in seen] if depth > 0 else []
    return KnowledgeGraph(ents, triples, notes)


# --- entity resolution ------------------------------------------------------


class Verdict(str, Enum):
    AUTO_MERGE = "AutoMerge"
    REVIEW_MERGE = "ReviewMerge"
    DISTINCT = "Distinct"


def check_thresholds(t_auto: float, t_review: float) -> None:
    if not 0.0 <= t_review < t_auto <= 1.0:
        raise ValueError(f"thresholds must satisfy 0 <= t_review < t_auto <= 1, got {t_review}, {t_auto}")


def classify(s: float, t_auto: float = DEFAULT_T_AUTO, t_review: float = DEFAULT_T_REVIEW) -> Verdict:
    if s > t_auto:
        return Verdict.AUTO_MERGE
    if s > t_review:
        return Verdict.REVIEW_MERGE
    return Verdict.DISTINCT


@dataclass(frozen=True)
class Adjudication:
    merged: bool
    rationale: str
    flagged: bool = False


@dataclass
class MergeDecision:
    a: str
    b: str
    similarity: float
    verdict: Verdict
    adjudication: Adjudication | None = None


Adjudicator = Callable[[MergeDecision, KnowledgeGraph], Adjudication]


def resolve_entities(
    kg: KnowledgeGraph,
    t_auto: float = DEFAULT_T_AUTO,
    t_review: float = DEFAULT_T_REVIEW,
    embedder: Embedder | None = None,
) -> list[MergeDecision]:
    """Classify every unordered pair of root entities; Distinct pairs are omitted."""
    check_thresholds(t_auto, t_review)
    embedder = embedder or StubEmbedder()
    roots = [r for r in kg.roots if embedder.embed(kg.entities[r].name).usable]
    if len(roots) < 2:
        return []
    mat = np.array([embedder.embed(kg.entities[r].name).values for r in roots], dtype=np.float64)
    mat /= np.linalg.norm(mat, axis=1, keepdims=True)
    sims = np.clip(mat @ mat.T, 0.0, 1.0)
    out = []
    for i in range(len(roots)):
        for j in range(i + 1, len(roots)):
            s = float(sims[i, j])
            v = classify(s, t_auto, t_review)
            if v is not Verdict.DISTINCT:
                out.append(MergeDecision(roots[i], roots[j], s, v))
    return out


class _UnionFind:
    def __init__(self):
        self.parent: dict[str, str] = {}

    def find(self, x: str) -> str:
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: str, b: str) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        lo, hi = sorted((ra, rb))
        self.parent[hi] = lo
        return True


def apply_merges(
    kg: KnowledgeGraph,
    decisions: Sequence[MergeDecision],
    adjudicator: Adjudicator | None = None,
) -> KnowledgeGraph:
    """Union AutoMerge pairs and adjudicated ReviewMerge pairs.

    ReviewMerge decisions without an adjudication are sent to ``adjudicator``
    (the result is stored on the decision); with no adjudicator they stay
    unmerged and a note is added to the returned graph.
    """
    notes = list(kg.notes)
    uf = _UnionFind()
    for eid, rec in kg.entities.items():
        uf.find(eid)
        if rec.canonical_of is not None:
            uf.union(eid, rec.canonical_of)
    for d in decisions:
        if d.verdict is Verdict.REVIEW_MERGE:
            if d.adjudication is None:
                if adjudicator is None:
                    notes.append(f"review pending for ({d.a}, {d.b}): no adjudicator")
                    continue
                d.adjudication = adjudicator(d, kg)
            if not d.adjudication.merged:
                continue
        elif d.verdict is not Verdict.AUTO_MERGE:
            continue
        uf.union(d.a, d.b)

    groups: dict[str, list[str]] = {}
    for eid in sorted(kg.entities):
        groups.setdefault(uf.find(eid), []).append(eid)
    entities: dict[str, EntityRecord] = {}
    for root, members in groups.items():
        rrec = kg.entities[root]
        aliases = set(rrec.aliases)
        for m in members:
            if m == root:
                continue
            mrec = kg.entities[m]
            aliases |= {mrec.name, *mrec.aliases}
            entities[m] = replace(mrec, canonical_of=root)
        aliases.discard(rrec.name)
        entities[root] = replace(rrec, aliases=tuple(sorted(aliases)), canonical_of=None)
    entities = {k: entities[k] for k in sorted(entities)}
    return _rewrite_to_roots(KnowledgeGraph(entities, list(kg.triples), notes))


@dataclass
class MergeStats:
    auto_merged: int = 0
    review_merged: int = 0
    distinct_pairs: int = 0
    pending_review: int = 0

    def to_dict(self) -> dict[str, int]:
        return dict(vars(self))


def merge_to_fixpoint(
    kg: KnowledgeGraph,
    t_auto: float = DEFAULT_T_AUTO,
    t_review: float = DEFAULT_T_REVIEW,
    embedder: Embedder | None = None,
    adjudicator: Adjudicator | None = None,
    max_passes: int = 20,
) -> tuple[KnowledgeGraph, MergeStats]:
    """Resolve and apply until a pass merges nothing.

    A merge can change which pairs are roots, so resolution is repeated;
    each ReviewMerge pair is adjudicated at most once.
    """
    embedder = embedder or StubEmbedder()
    stats = MergeStats()
    adjudicated: dict[tuple[str, str], Adjudication] = {}
    for _ in range(max_passes):
        decisions = resolve_entities(kg, t_auto, t_review, embedder)
        n_roots = len([r for r in kg.roots if embedder.embed(kg.entities[r].name).usable])
        stats.distinct_pairs = n_roots * (n_roots - 1) // 2 - len(decisions)
        stats.pending_review = 0
        for d in decisions:
            if d.verdict is Verdict.REVIEW_MERGE:
                if (d.a, d.b) in adjudicated:
                    d.adjudication = adjudicated[(d.a, d.b)]
                elif adjudicator is not None:
                    d.adjudication = adjudicator(d, kg)
                    adjudicated[(d.a, d.b)] = d.adjudication
                else:
                    stats.pending_review += 1
        before = len(kg.roots)
        kg = apply_merges(kg, decisions, adjudicator=None)
        kg.notes = [n for n in kg.notes if not n.startswith("review pending")]
        if len(kg.roots) == before:
            break
        for d in decisions:
            if d.verdict is Verdict.AUTO_MERGE:
                stats.auto_merged += 1
            elif d.adjudication is not None and d.adjudication.merged:
                stats.review_merged += 1
    if stats.pending_review:
        kg.notes.append(f"{stats.pending_review} review pair(s) left unmerged: no adjudicator")
    return kg, stats


# --- persistence ------------------------------------------------------------


def save_kg(kg: KnowledgeGraph, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "entities.jsonl", "w", encoding="utf-8") as fh:
        for eid in sorted(kg.entities):
            e = kg.entities[eid]
            fh.write(json.dumps({"id": e.id, "name": e.name, "aliases": list(e.aliases),
                                 "canonical_of": e.canonical_of}, ensure_ascii=False) + "\n")
    with open(directory / "triples.jsonl", "w", encoding="utf-8") as fh:
        for t in kg.triples:
            fh.write(json.dumps({"subject": t.subject, "predicate": t.predicate, "object": t.object,
                                 "layer": t.layer, "chunks": list(t.chunks)}, ensure_ascii=False) + "\n")


def load_kg(directory: str | Path) -> KnowledgeGraph:
    directory = Path(directory)
    entities = {}
    with open(directory / "entities.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                r = json.loads(line)
                entities[r["id"]] = EntityRecord(r["id"], r["name"], tuple(r.get("aliases", ())), r.get("canonical_of"))
    triples = []
    with open(directory / "triples.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                r = json.loads(line)
                triples.append(Triple(r["subject"], r["predicate"], r["object"], r["layer"], tuple(r.get("chunks", ()))))
    return KnowledgeGraph(entities, triples)
