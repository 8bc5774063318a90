from __future__ import annotations

import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chemagents.graph import Connection, build_graph, load_graph
from chemagents.metrics import (
    CaseMetrics,
    design_rates,
    entity_prf,
    graph_metrics,
    hit_at_k,
    judge_answer,
    load_qa,
    match_entities,
    parsing_scores,
    report_bundle,
    score_ratios,
    string_similarity,
    topk_accuracy,
)
from helpers import chain, compliant_line, scripted

NEAR_MISS = Path(__file__).parent / "data" / "near_miss"
WORDS = st.sampled_from(["reactor", "Reactor", "mixer", "pump", "pumps", "column", "feed", "feed tank", "abc", "abd"])


class TestSimilarity:
    @pytest.mark.parametrize("a, b, expected", [
        ("Reactor", "reactor", 1.0),
        ("abc", "abd", 2 / 3),
        ("abc", "xyz", 0.0),
        ("", "", 1.0),
        ("Off-gas  separator", "off gas separator", 1.0),
    ])
    def test_examples(self, a, b, expected):
        assert string_similarity(a, b) == pytest.approx(expected)

    @given(st.text(max_size=12), st.text(max_size=12))
    def test_symmetric_and_bounded(self, a, b):
        s = string_similarity(a, b)
        assert s == string_similarity(b, a) and 0.0 <= s <= 1.0


class TestMatching:
    def test_exact_case(self):
        m = match_entities(["a", "b", "c", "d"], ["a", "b", "e"], 1.0)
        assert m.n_match == 2 and m.unmatched_gt == [2] and m.unmatched_pred == [2, 3]

    def test_tie_order(self):
        # both gt items are equally similar to the single prediction; the lower gt index wins
        m = match_entities(["abc"], ["abd", "abe"], 0.5)
        assert m.pairs == [(0, 0, pytest.approx(2 / 3))]

    def test_tau_range(self):
        with pytest.raises(ValueError):
            match_entities([], [], 1.5)

    @settings(max_examples=300)
    @given(st.lists(WORDS, max_size=7), st.lists(WORDS, max_size=7), st.floats(0, 1))
    def test_one_to_one_above_tau(self, pred, gt, tau):
        m = match_entities(pred, gt, tau)
        assert len({g for g, _, _ in m.pairs}) == len({p for _, p, _ in m.pairs}) == m.n_match
        assert all(s >= tau for _, _, s in m.pairs)
        assert m.n_match + len(m.unmatched_gt) == len(gt)

    @settings(max_examples=300)
    @given(st.lists(WORDS, max_size=7), st.lists(WORDS, max_size=7), st.floats(0, 1), st.floats(0, 1))
    def test_tau_monotone(self, pred, gt, t1, t2):
        lo, hi = sorted((t1, t2))
        assert match_entities(pred, gt, hi).n_match <= match_entities(pred, gt, lo).n_match


class TestPRF:
    def test_example(self):
        r = entity_prf(["a", "b", "c", "d"], ["a", "b", "e"], 1.0)
        assert (round(r.accuracy, 4), round(r.recall, 4), round(r.f1, 4)) == (0.5, 0.6667, 0.5714)

    def test_perfect_and_disjoint(self):
        assert (entity_prf(["x", "y"], ["x", "y"]).f1, entity_prf(["x"], ["q"]).f1) == (1.0, 0.0)

    def test_empty_conventions(self):
        assert entity_prf([], []).flags == ["both_empty"]
        assert entity_prf([], ["a"]).accuracy == 0.0

    @settings(max_examples=300)
    @given(st.lists(WORDS, max_size=7), st.lists(WORDS, max_size=7), st.floats(0, 1))
    def test_f1_identity(self, pred, gt, tau):
        r = entity_prf(pred, gt, tau)
        assert 0 <= r.accuracy <= 1 and 0 <= r.recall <= 1
        if r.accuracy + r.recall > 0:
            assert r.f1 == pytest.approx(2 * r.accuracy * r.recall / (r.accuracy + r.recall), abs=1e-12)


PATH = [("A", "B"), ("B", "C"), ("C", "D")]
IDENTITY = {n: n for n in "ABCD"}


class TestGraphMetrics:
    def test_perfect_path(self):
        r = graph_metrics(PATH, PATH, IDENTITY)
        assert r.mec == 1.0 and r.coverage == 1.0
        # every gt edge has hop distance 1; mean pair distance over the path is 10/6
        assert r.mean_distance == pytest.approx(10 / 6) and r.med == pytest.approx(0.6)

    def test_broken_path(self):
        r = graph_metrics(PATH, [("A", "B"), ("C", "D")], IDENTITY)
        assert r.mec == pytest.approx(2 / 3) and r.coverage == pytest.approx(2 / 3)
        assert r.n_connected == 2

    def test_unmapped_endpoint(self):
        r = graph_metrics([("A", "B")], [("A", "B")], {"A": "A"})
        assert r.mec == 0.0 and r.med is None

    def test_undirected_reachability(self):
        assert graph_metrics([("A", "B")], [("B", "A")], {"A": "A", "B": "B"}).mec == 1.0

    def test_empty_gt(self):
        r = graph_metrics([], [("A", "B")], IDENTITY)
        assert r.mec is None and "empty_gt_edges" in r.flags

    def test_no_connected_pairs(self):
        r = graph_metrics([("A", "B")], [], {"A": "A", "B": "B"})
        assert r.mean_distance == 1.0 and "no_connected_mapped_pairs" in r.flags


class TestParsing:
    def test_perfect(self):
        s = parsing_scores(compliant_line(), compliant_line())
        assert (s.a_eq, s.r_eq, s.a_cn, s.r_cn) == (1.0, 1.0, 1.0, 1.0)

    def test_reversed_edge(self):
        g = chain("Feed", "Reactor", "Product")
        rev = build_graph(g.equipment, [g.connections[0], Connection("U3", "U2")])
        s = parsing_scores(rev, g)
        assert s.a_eq == 1.0 and s.a_cn == 0.5 and s.r_cn == 0.5

    def test_direction_sensitivity(self):
        g = compliant_line()
        flipped = build_graph(g.equipment, [Connection(c.target, c.source) for c in g.connections])
        base, rev = parsing_scores(g, g), parsing_scores(flipped, g)
        assert rev.a_cn < base.a_cn and rev.a_eq == base.a_eq

    def test_empty_denominators(self):
        s = parsing_scores(build_graph([], []), compliant_line())
        assert s.a_eq is None and "A_eq_undefined" in s.flags and s.r_eq == 0.0

    def test_near_miss_sweep(self):
        pred = load_graph(NEAR_MISS / "pred" / "ethynylation.json")
        gt = load_graph(NEAR_MISS / "gt" / "ethynylation.json")
        rows = [parsing_scores(pred, gt, t).to_dict() for t in (0.3, 0.5, 0.7, 0.9)]
        for key in ("A_eq", "R_eq", "A_cn", "R_cn"):
            vals = [r[key] for r in rows]
            assert all(x >= y for x, y in zip(vals, vals[1:])), key
        assert rows[0]["A_eq"] == 1.0 and rows[-1]["A_eq"] == pytest.approx(4 / 7)


class TestTopK:
    def test_examples(self):
        assert hit_at_k(["Reactor"], "Reactor", 1) == 1
        ranked = ["Mixer", "Pump", "Reactor"]
        assert (hit_at_k(ranked, "Reactor", 2), hit_at_k(ranked, "Reactor", 3)) == (0, 1)
        assert topk_accuracy([(["Reactor"], "Reactor"), (["Mixer"], "Reactor")], 1) == 0.5

    def test_errors(self):
        assert topk_accuracy([], 1) is None
        with pytest.raises(ValueError):
            hit_at_k([], "x", 0)

    @given(st.lists(st.sampled_from("ABCDEF"), unique=True, max_size=6), st.sampled_from("ABCDEF"))
    def test_nondecreasing_in_k(self, ranked, truth):
        hits = [hit_at_k(ranked, truth, k) for k in range(1, 8)]
        assert hits == sorted(hits)


class TestDesignRates:
    def test_all_illegal(self):
        r = design_rates([{"legal": False, "compliant": False}] * 3)
        assert (r.valid_rate, r.correct_rate) == (0.0, 0.0)

    def test_impossible_outcome(self):
        with pytest.raises(ValueError, match="impossible"):
            design_rates([{"legal": False, "compliant": True}])

    def test_counts(self):
        outcomes = [{"legal": True, "compliant": True}] * 19 + [{"legal": True, "compliant": False}] * 7 \
            + [{"legal": False, "compliant": False}] * 4
        r = design_rates(outcomes)
        assert (r.n_total, r.n_valid, r.n_correct) == (30, 26, 19)

    def test_empty(self):
        assert design_rates([]).flags == ["no_cases"]


class TestJudge:
    def test_exact(self):
        s = judge_answer("q", "a", "a", "Correctness", scripted(("judge", 1, "100: exact")))
        assert (s.score, s.rationale, s.flags) == (100, "exact", [])

    def test_non_integer(self):
        s = judge_answer("q", "a", "r", "Clarity", scripted(("judge", 1, "85.5")))
        assert s.score == 86 and "non_integer" in s.flags

    def test_out_of_range(self):
        s = judge_answer("q", "a", "r", "Clarity", scripted(("judge", 1, "140: great")))
        assert s.score == 100 and "out_of_range" in s.flags

    def test_unparseable_twice(self):
        s = judge_answer("q", "a", "r", "Completeness", scripted(("judge", 1, "hmm"), ("judge", 2, "no idea")))
        assert s.score is None and "unparseable_after_reprompt" in s.flags

    def test_unknown_dimension(self):
        with pytest.raises(ValueError):
            judge_answer("q", "a", "r", "Style", scripted())

    def test_rubric_in_prompt(self):
        client = scripted(("judge", 1, "70: fine"))
        judge_answer("What catalyst?", "Cu", "Copper bismuth", "Rationality", client)
        text = client.requests[0][2][-1].text
        assert "Dimension: Rationality" in text and "Copper bismuth" in text


class TestRatios:
    def test_example(self):
        r = score_ratios({"yield": 10, "purity": 0.9, "cost": 5}, {"yield": 12, "purity": 0.99, "cost": 4})
        assert r["r_eff"] == pytest.approx(1.32, abs=1e-12) and r["r_overall"] == pytest.approx(1.65, abs=1e-12)

    def test_identity(self):
        x = {"yield": 3.0, "purity": 0.5, "cost": 2.0}
        assert set(score_ratios(x, x).values()) == {1.0}

    def test_zero_denominator(self):
        r = score_ratios({"yield": 0.0, "purity": 0.5, "cost": 2.0}, {"yield": 1.0, "purity": 0.5, "cost": 2.0})
        assert "r_Y" not in r and "r_eff" not in r and "r_overall" not in r and r["r_C"] == 1.0


class TestReports:
    def test_single_case(self):
        rep = report_bundle("completion", [CaseMetrics("c1", "completion", {"A@1": 1.0})])
        assert rep["aggregate"] == {"A@1": 1.0} and rep["n_cases"] == 1

    def test_two_case_mean(self):
        rep = report_bundle("completion", [CaseMetrics("b", "completion", {"A@1": 0.0}),
                                           CaseMetrics("a", "completion", {"A@1": 1.0})])
        assert rep["aggregate"]["A@1"] == 0.5 and [c["id"] for c in rep["cases"]] == ["a", "b"]

    def test_absent_values_skipped(self):
        rep = report_bundle("parsing", [CaseMetrics("a", "parsing", {"A_eq": None}),
                                        CaseMetrics("b", "parsing", {"A_eq": 0.5})])
        assert rep["aggregate"]["A_eq"] == 0.5

    def test_errors(self):
        with pytest.raises(ValueError):
            report_bundle("parsing", [])
        with pytest.raises(ValueError, match="mixed"):
            report_bundle("parsing", [CaseMetrics("a", "design", {})])

    def test_load_qa(self, tmp_path):
        p = tmp_path / "qa.jsonl"
        p.write_text(json.dumps({"question": "q", "reference": "r", "category": "safety", "source": "x"}) + "\n\n",
                     encoding="utf-8")
        items = load_qa(p)
        assert items[0].category == "safety" and items[0].extra == {"source": "x"}
        p.write_text(json.dumps({"question": "q"}) + "\n", encoding="utf-8")
        with pytest.raises(ValueError, match=":1:"):
            load_qa(p)
