from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chemagents.knowledge_store import (
    LAYERS,
    Chunk,
    EmbeddingVector,
    EntityRecord,
    KnowledgeGraph,
    MergeDecision,
    StubEmbedder,
    Triple,
    Verdict,
    VectorStore,
    add_subgraph,
    apply_merges,
    chunk_document,
    classify,
    cosine_similarity,
    embed,
    entity_id,
    graph_query,
    load_kg,
    merge_to_fixpoint,
    resolve_entities,
    save_kg,
)


def kg_of(names: list[str], triples: list[tuple[str, str, str]] = ()) -> KnowledgeGraph:
    ents = {n: EntityRecord(n, n) for n in names}
    return KnowledgeGraph(ents, [Triple(s, p, o, "Substance", ("c0",)) for s, p, o in triples])


class TestChunking:
    def test_short(self):
        [c] = chunk_document("x" * 100)
        assert (c.start, c.end) == (0, 100)

    def test_empty(self):
        assert chunk_document("") == []

    def test_5000_chars(self):
        chunks = chunk_document("y" * 5000, 2000, 200)
        assert len(chunks) == 3
        assert chunks[1].start == chunks[0].end - 200
        assert chunks[-1].end == 5000

    def test_paragraph_snap(self):
        text = "a" * 1700 + "\n\n" + "b" * 2000
        chunks = chunk_document(text, 2000, 200)
        assert chunks[0].end == 1702

    def test_bad_config(self):
        with pytest.raises(ValueError):
            chunk_document("abc", 100, 100)

    @settings(max_examples=200, deadline=None)
    @given(st.text(alphabet="ab \n", max_size=3000), st.integers(20, 400), st.integers(0, 19))
    def test_cover_and_reassemble(self, text, target, overlap):
        chunks = chunk_document(text, target, overlap)
        if not text:
            assert chunks == []
            return
        rebuilt = chunks[0].text
        for prev, c in zip(chunks, chunks[1:]):
            assert c.start == prev.end - overlap
            rebuilt += c.text[overlap:]
        assert rebuilt == text
        for c in chunks:
            assert 0 <= c.start < c.end <= len(text) and c.text == text[c.start:c.end]


class TestEmbedding:
    def test_deterministic(self):
        assert StubEmbedder().embed("reactor") == StubEmbedder().embed("reactor")

    def test_dim_and_norm(self):
        v = embed(StubEmbedder(), "distillation column")
        assert v.dim == 64 and math.isclose(float(np.linalg.norm(v.array())), 1.0)

    def test_empty_unusable(self):
        v = StubEmbedder().embed("")
        assert not v.usable and all(x == 0.0 for x in v.values)

    def test_self_similarity(self):
        e = StubEmbedder()
        assert cosine_similarity(e.embed("x"), e.embed("x")) == pytest.approx(1.0)

    def test_aliases(self):
        e = StubEmbedder(aliases={"pt": "platinum"})
        assert cosine_similarity(e.embed("Pt catalyst"), e.embed("platinum catalyst")) == pytest.approx(1.0)


class TestCosine:
    def test_cases(self):
        v = EmbeddingVector((0.3, 0.4))
        assert cosine_similarity(v, v) == pytest.approx(1.0)
        assert cosine_similarity(EmbeddingVector((1.0, 0.0)), EmbeddingVector((0.0, 1.0))) == 0.0
        assert cosine_similarity(EmbeddingVector((1.0, 0.0)), EmbeddingVector((-1.0, 0.0))) == -1.0

    def test_errors(self):
        with pytest.raises(ValueError):
            cosine_similarity(EmbeddingVector((1.0,)), EmbeddingVector((1.0, 0.0)))
        with pytest.raises(ValueError):
            cosine_similarity(EmbeddingVector((0.0, 0.0)), EmbeddingVector((1.0, 0.0)))


class _FixedEmbedder:
    dim = 2

    def __init__(self, table):
        self.table = table

    def embed(self, text):
        return EmbeddingVector(self.table.get(text, (0.0, 0.0)))


class TestVectorStore:
    def store(self, texts):
        s = VectorStore(StubEmbedder())
        for i, t in enumerate(texts):
            s.add(Chunk(f"c{i}", "d", t, 0, len(t)))
        return s

    def test_exact_text_first(self):
        s = self.store(["isoprene from C5 cracking", "butadiene extraction", "ethylene oxide hydration"])
        hits = s.query("butadiene extraction", 8)
        assert hits[0].chunk.id == "c1" and hits[0].score == pytest.approx(1.0)
        assert len(hits) == 3

    def test_empty_store(self):
        assert VectorStore(StubEmbedder()).query("x") == []

    def test_ties_by_id(self):
        emb = _FixedEmbedder({"q": (1.0, 0.0), "t": (1.0, 1.0)})
        s = VectorStore(emb)
        for cid in ("z9", "a1", "m5"):
            s.add(Chunk(cid, "d", "t", 0, 1))
        assert [h.chunk.id for h in s.query("q", 3)] == ["a1", "m5", "z9"]

    def test_deterministic(self):
        s = self.store(["alpha beta", "beta gamma", "gamma delta"])
        assert s.query("beta", 2) == s.query("beta", 2)

    def test_dimension_constant(self):
        s = VectorStore(StubEmbedder())
        s.add(Chunk("a", "d", "x", 0, 1))
        with pytest.raises(ValueError):
            s.add(Chunk("b", "d", "y", 0, 1), EmbeddingVector((1.0,)))

    def test_persistence(self, tmp_path):
        s = self.store(["one two", "three four"])
        s.save(tmp_path)
        raw = (tmp_path / "embeddings.bin").read_bytes()
        assert int.from_bytes(raw[:4], "little") == 64 and len(raw) == 4 + 2 * 64 * 4
        loaded = VectorStore.load(tmp_path, StubEmbedder())
        assert [c.id for c in loaded.chunks] == ["c0", "c1"]
        assert [h.chunk.id for h in loaded.query("three four", 1)] == ["c1"]


class TestGraphQuery:
    def chain(self):
        return kg_of(["e1", "e2", "e3"], [("e1", "p", "e2"), ("e2", "q", "e3")])

    def test_depth_zero(self):
        sub = graph_query(self.chain(), ["e1"], 0)
        assert list(sub.entities) == ["e1"] and sub.triples == []

    def test_depth_one(self):
        sub = graph_query(self.chain(), ["e1"], 1)
        assert set(sub.entities) == {"e1", "e2"} and [t.key for t in sub.triples] == [("e1", "p", "e2", "Substance")]

    def test_whole_component(self):
        assert set(graph_query(self.chain(), ["e3"], 5).entities) == {"e1", "e2", "e3"}

    def test_unknown_seed(self):
        sub = graph_query(self.chain(), ["zz"], 2)
        assert sub.entities == {} and "zz" in sub.notes[0]


class TestAddSubgraph:
    def test_idempotent(self):
        kg = kg_of(["a", "b"], [("a", "p", "b")])
        assert add_subgraph(kg, kg) == kg

    def test_disjoint_sizes_add(self):
        a, b = kg_of(["a", "b"], [("a", "p", "b")]), kg_of(["c", "d"], [("c", "p", "d")])
        out = add_subgraph(a, b)
        assert len(out.entities) == 4 and len(out.triples) == 2

    def test_provenance_pooled(self):
        a = kg_of(["a", "b"], [("a", "p", "b")])
        b = KnowledgeGraph(dict(a.entities), [Triple("a", "p", "b", "Substance", ("c1",))])
        [t] = add_subgraph(a, b).triples
        assert t.chunks == ("c0", "c1")

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from("abcd"), st.sampled_from("pq"), st.sampled_from("abcd")), max_size=6),
           st.lists(st.tuples(st.sampled_from("abcd"), st.sampled_from("pq"), st.sampled_from("abcd")), max_size=6),
           st.lists(st.tuples(st.sampled_from("abcd"), st.sampled_from("pq"), st.sampled_from("abcd")), max_size=6))
    def test_associative_commutative(self, x, y, z):
        a, b, c = (kg_of(list("abcd"), t) for t in (x, y, z))
        key = lambda g: sorted((t.key, tuple(sorted(t.chunks))) for t in g.triples)  # noqa: E731
        assert key(add_subgraph(a, b)) == key(add_subgraph(b, a))
        assert key(add_subgraph(add_subgraph(a, b), c)) == key(add_subgraph(a, add_subgraph(b, c)))


class TestResolve:
    @pytest.mark.parametrize("s, verdict", [(0.97, Verdict.AUTO_MERGE), (0.90, Verdict.REVIEW_MERGE),
                                            (0.50, Verdict.DISTINCT), (0.95, Verdict.REVIEW_MERGE),
                                            (0.85, Verdict.DISTINCT)])
    def test_classify(self, s, verdict):
        assert classify(s) is verdict

    def test_threshold_order_enforced(self):
        with pytest.raises(ValueError):
            resolve_entities(KnowledgeGraph(), t_auto=0.8, t_review=0.9)

    def test_identical_names_automerge(self):
        kg = KnowledgeGraph({"a": EntityRecord("a", "Pt catalyst"), "b": EntityRecord("b", "platinum catalyst"),
                             "c": EntityRecord("c", "acetylene")}, [])
        decisions = resolve_entities(kg, embedder=StubEmbedder(aliases={"pt": "platinum"}))
        assert [(d.a, d.b, d.verdict) for d in decisions] == [("a", "b", Verdict.AUTO_MERGE)]


class TestApplyMerges:
    def test_no_decisions(self):
        kg = kg_of(["e1", "e2"], [("e1", "p", "e2")])
        assert apply_merges(kg, []) == kg

    def test_rewrite_to_root(self):
        kg = kg_of(["e1", "e2", "e3"], [("e2", "p", "e3")])
        out = apply_merges(kg, [MergeDecision("e2", "e1", 0.99, Verdict.AUTO_MERGE)])
        assert [t.key[:3] for t in out.triples] == [("e1", "p", "e3")]
        assert out.entities["e2"].canonical_of == "e1" and out.entities["e1"].canonical_of is None
        assert out.entities["e1"].aliases == ("e2",)

    def test_transitive_chain(self):
        kg = kg_of(["a", "b", "c"])
        out = apply_merges(kg, [MergeDecision("a", "b", 0.99, Verdict.AUTO_MERGE),
                                MergeDecision("b", "c", 0.99, Verdict.AUTO_MERGE)])
        assert out.roots == ["a"] and {out.root(x) for x in "abc"} == {"a"}

    def test_review_without_adjudicator(self):
        kg = kg_of(["a", "b"])
        out = apply_merges(kg, [MergeDecision("a", "b", 0.9, Verdict.REVIEW_MERGE)])
        assert out.roots == ["a", "b"] and "no adjudicator" in out.notes[0]

    def test_review_with_adjudicator(self):
        from chemagents.knowledge_store import Adjudication

        d = MergeDecision("a", "b", 0.9, Verdict.REVIEW_MERGE)
        out = apply_merges(kg_of(["a", "b"]), [d], lambda dec, kg: Adjudication(True, "same"))
        assert out.roots == ["a"] and d.adjudication.merged

    def test_conservation(self):
        kg = kg_of(["a", "b", "c"], [("a", "p", "c"), ("b", "p", "c"), ("b", "q", "a")])
        out = apply_merges(kg, [MergeDecision("a", "b", 0.99, Verdict.AUTO_MERGE)])
        assert len(out.triples) == 2
        assert {t.key[:3] for t in out.triples} == {("a", "p", "c"), ("a", "q", "a")}


NAMES = ["Pt catalyst", "platinum catalyst", "acetylene", "acetylenes", "formaldehyde", "butynediol",
         "1,4-butynediol", "hydrogen", "nickel", "Raney nickel", "water", "methanol"]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(NAMES), min_size=1, max_size=8, unique=True),
       st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7), st.sampled_from(LAYERS)), max_size=8))
def test_merge_idempotence(names, edges):
    emb = StubEmbedder(aliases={"pt": "platinum"})
    ents = {entity_id(n): EntityRecord(entity_id(n), n) for n in names}
    ids = list(ents)
    triples = [Triple(ids[s % len(ids)], "rel", ids[o % len(ids)], layer, ("c0",)) for s, o, layer in edges]
    kg = KnowledgeGraph(ents, triples)
    once, _ = merge_to_fixpoint(kg, embedder=emb)
    twice, stats = merge_to_fixpoint(once, embedder=emb)
    assert twice == once and stats.auto_merged == 0
    assert not any(d.verdict is Verdict.AUTO_MERGE for d in resolve_entities(once, embedder=emb))
    assert len(once.triples) <= len(kg.triples)
    assert all(t.subject in once.roots and t.object in once.roots for t in once.triples)


def test_kg_persistence(tmp_path):
    kg = apply_merges(kg_of(["a", "b", "c"], [("b", "p", "c")]), [MergeDecision("a", "b", 1.0, Verdict.AUTO_MERGE)])
    save_kg(kg, tmp_path)
    assert load_kg(tmp_path) == kg
    first = (tmp_path / "entities.jsonl").read_text().splitlines()[0]
    assert first.startswith('{"id": "a", "name": "a", "aliases": ["b"], "canonical_of": null}')
