"""Evaluation metrics for extraction, parsing, completion, design, Q&A and optimization."""

from __future__ import annotations

import json
import math
import re
import statistics
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Hashable, Iterable, Sequence

import networkx as nx

from .graph import AbstractGraph
from .llm import ChatClient, Message, llm_complete

_PUNCT = re.compile(r"[^\w\s]")


def _normalize(s: str) -> str:
    return " ".join(_PUNCT.sub(" ", s.lower()).split())


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def string_similarity(a: str, b: str) -> float:
    """1 - edit distance / longer length, after case/punctuation/space normalization."""
    a, b = _normalize(a), _normalize(b)
    if not a and not b:
        return 1.0
    return 1.0 - levenshtein(a, b) / max(len(a), len(b))


# --- entity matching --------------------------------------------------------


@dataclass
class EntityMapping:
    pairs: list[tuple[int, int, float]]  # (gt index, pred index, similarity)
    unmatched_gt: list[int]
    unmatched_pred: list[int]
    tau: float

    @property
    def n_match(self) -> int:
        return len(self.pairs)

    def gt_to_pred(self) -> dict[int, int]:
        return {g: p for g, p, _ in self.pairs}


def match_entities(pred: Sequence[str], gt: Sequence[str], tau: float) -> EntityMapping:
    """Greedy one-to-one matching on similarity >= tau.

    Candidate pairs are taken by similarity descending, then gt index, then
    pred index, each accepted when both sides are still free.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    cands = []
    for gi, g in enumerate(gt):
        for pi, p in enumerate(pred):
            s = string_similarity(p, g)
            if s >= tau:
                cands.append((-s, gi, pi))
    cands.sort()
    used_g: set[int] = set()
    used_p: set[int] = set()
    pairs = []
    for neg, gi, pi in cands:
        if gi in used_g or pi in used_p:
            continue
        used_g.add(gi)
        used_p.add(pi)
        pairs.append((gi, pi, -neg))
    return EntityMapping(
        pairs,
        [i for i in range(len(gt)) if i not in used_g],
        [i for i in range(len(pred)) if i not in used_p],
        tau,
    )


@dataclass
class PRF:
    accuracy: float
    recall: float
    f1: float
    flags: list[str] = field(default_factory=list)


def _f1(a: float, r: float) -> float:
    return 2 * a * r / (a + r) if a + r > 0 else 0.0


def entity_prf(pred: Sequence[str], gt: Sequence[str], tau: float = 1.0) -> PRF:
    if not pred and not gt:
        return PRF(1.0, 1.0, 1.0, ["both_empty"])
    m = match_entities(pred, gt, tau).n_match
    a = m / len(pred) if pred else 0.0
    r = m / len(gt) if gt else 0.0
    return PRF(a, r, _f1(a, r))


# --- graph topology: MEC / MED ---------------------------------------------


@dataclass
class GraphMetricReport:
    mec: float | None
    med: float | None
    coverage: float | None
    n_gt_edges: int
    n_connected: int
    mean_distance: float
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"mec": self.mec, "med": self.med, "coverage": self.coverage}


def graph_metrics(
    gt_edges: Sequence[tuple[Hashable, Hashable]],
    pred_edges: Sequence[tuple[Hashable, Hashable]],
    mapping: dict[Hashable, Hashable],
    pred_nodes: Iterable[Hashable] = (),
) -> GraphMetricReport:
    """Mapping-based edge connectivity and distance.

    A ground-truth edge (u, v) counts as connected when both endpoints are
    mapped and M(v) is reachable from M(u) in the undirected predicted graph.
    Distances are hop counts, normalized by the mean distance over all
    connected pairs of mapped predicted nodes.
    """
    flags: list[str] = []
    pg = nx.Graph()
    pg.add_nodes_from(pred_nodes)
    pg.add_edges_from(pred_edges)
    pg.add_nodes_from(mapping.values())
    dist = dict(nx.all_pairs_shortest_path_length(pg))

    mapped = sorted(set(mapping.values()), key=repr)
    pair_d = [
        dist[a][b]
        for i, a in enumerate(mapped)
        for b in mapped[i + 1:]
        if b in dist.get(a, {})
    ]
    if pair_d:
        dbar = statistics.fmean(pair_d)
    else:
        dbar = 1.0
        flags.append("no_connected_mapped_pairs")

    conn_d = []
    for u, v in gt_edges:
        if u in mapping and v in mapping and mapping[v] in dist.get(mapping[u], {}):
            conn_d.append(dist[mapping[u]][mapping[v]])
    n_gt = len(gt_edges)
    if n_gt == 0:
        flags.append("empty_gt_edges")
        return GraphMetricReport(None, None, None, 0, 0, dbar, flags)
    mec = len(conn_d) / n_gt
    med = statistics.fmean(d / dbar for d in conn_d) if conn_d else None
    return GraphMetricReport(mec, med, len(conn_d) / n_gt, n_gt, len(conn_d), dbar, flags)


# --- parsing ----------------------------------------------------------------


@dataclass
class ParsingScores:
    a_eq: float | None
    r_eq: float | None
    a_cn: float | None
    r_cn: float | None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, float | None]:
        return {"A_eq": self.a_eq, "R_eq": self.r_eq, "A_cn": self.a_cn, "R_cn": self.r_cn}


def _node_text(n) -> str:
    return f"{n.type} {n.label}".strip()


def _ratio(num: int, den: int, name: str, flags: list[str]) -> float | None:
    if den == 0:
        flags.append(f"{name}_undefined")
        return None
    return num / den


def parsing_scores(pred: AbstractGraph, gt: AbstractGraph, tau: float = 0.5) -> ParsingScores:
    """Equipment and connection accuracy/recall; connections respect direction."""
    mapping = match_entities([_node_text(n) for n in pred.equipment], [_node_text(n) for n in gt.equipment], tau)
    g2p = {gt.equipment[g].id: pred.equipment[p].id for g, p in mapping.gt_to_pred().items()}
    want = Counter((g2p.get(c.source), g2p.get(c.target)) for c in gt.connections
                   if c.source in g2p and c.target in g2p)
    have = Counter((c.source, c.target) for c in pred.connections)
    cn_match = sum(min(n, have[k]) for k, n in want.items())
    flags: list[str] = []
    return ParsingScores(
        _ratio(mapping.n_match, len(pred.equipment), "A_eq", flags),
        _ratio(mapping.n_match, len(gt.equipment), "R_eq", flags),
        _ratio(cn_match, len(pred.connections), "A_cn", flags),
        _ratio(cn_match, len(gt.connections), "R_cn", flags),
        flags,
    )


# --- completion -------------------------------------------------------------


def hit_at_k(ranked_types: Sequence[str], truth: str, k: int) -> int:
    if k < 1:
        raise ValueError("K must be >= 1")
    return int(truth in list(ranked_types)[:k])


def topk_accuracy(cases: Sequence[tuple[Sequence[str], str]], k: int) -> float | None:
    """Mean of the indicator that the truth is among the top ``k`` candidates."""
    if k < 1:
        raise ValueError("K must be >= 1")
    if not cases:
        return None
    return statistics.fmean(hit_at_k(ranked, truth, k) for ranked, truth in cases)


# --- design -----------------------------------------------------------------


@dataclass
class DesignRates:
    n_total: int
    n_valid: int
    n_correct: int
    valid_rate: float
    correct_rate: float
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"n_total": self.n_total, "n_valid": self.n_valid, "n_correct": self.n_correct,
                "valid_rate": self.valid_rate, "correct_rate": self.correct_rate}


def design_rates(outcomes: Sequence[dict[str, bool]]) -> DesignRates:
    n_valid = n_correct = 0
    for i, o in enumerate(outcomes):
        legal, compliant = bool(o["legal"]), bool(o["compliant"])
        if compliant and not legal:
            raise ValueError(f"case {i}: compliant but illegal outcome is impossible")
        n_valid += legal
        n_correct += legal and compliant
    n = len(outcomes)
    if n == 0:
        return DesignRates(0, 0, 0, 0.0, 0.0, ["no_cases"])
    return DesignRates(n, n_valid, n_correct, n_valid / n, n_correct / n)


# --- judge ------------------------------------------------------------------

JUDGE_DIMENSIONS = ("Correctness", "Rationality", "Clarity", "Completeness")

_RUBRIC = {
    "Correctness": "factual and technical accuracy relative to the reference",
    "Rationality": "soundness of the engineering reasoning behind the answer",
    "Clarity": "how clearly and unambiguously the answer is expressed",
    "Completeness": "coverage of every point the reference makes",
}

_SCORE = re.compile(r"^\s*(?:score\s*[:=]?\s*)?(-?\d+(?:\.\d+)?)\s*(?:[:\-\u2013]\s*(.*))?", re.IGNORECASE | re.DOTALL)


@dataclass
class JudgeScore:
    dimension: str
    score: int | None
    rationale: str
    flags: list[str] = field(default_factory=list)


def _parse_score(text: str) -> tuple[float, str] | None:
    m = _SCORE.match(text)
    if m is None:
        return None
    return float(m.group(1)), (m.group(2) or "").strip()


def judge_answer(question: str, answer: str, reference: str, dimension: str, client: ChatClient,
                 agent_name: str = "judge", model: str | None = None) -> JudgeScore:
    if dimension not in JUDGE_DIMENSIONS:
        raise ValueError(f"unknown judge dimension {dimension!r}")
    from .agents import CATALOG

    prompt = (
        f"Dimension: {dimension} ({_RUBRIC[dimension]}).\n"
        f"Question:\n{question}\n\nReference answer:\n{reference}\n\nCandidate answer:\n{answer}\n"
    )
    convo = [Message("system", CATALOG["judge"].objective, sender=agent_name), Message("user", prompt)]
    flags: list[str] = []
    parsed = None
    for attempt in range(2):
        reply = llm_complete(client, convo, agent=agent_name, model=model)
        parsed = _parse_score(reply.text)
        if parsed is not None:
            break
        flags.append("unparseable" if attempt == 0 else "unparseable_after_reprompt")
        convo += [reply, Message("user", "Reply as '<integer 0-100>: <rationale>'.")]
    if parsed is None:
        return JudgeScore(dimension, None, "", flags)
    value, rationale = parsed
    if value != int(value):
        flags.append("non_integer")
    score = math.floor(value + 0.5)
    if not 0 <= score <= 100:
        flags.append("out_of_range")
        score = min(100, max(0, score))
    return JudgeScore(dimension, score, rationale, flags)


# --- parameter ratios -------------------------------------------------------


def score_ratios(init: dict[str, float], best: dict[str, float]) -> dict[str, float]:
    """Improvement ratios of yield, purity and cost; undefined ratios are omitted."""
    out: dict[str, float] = {}
    for key, metric in (("r_Y", "yield"), ("r_P", "purity"), ("r_C", "cost")):
        den = init.get(metric)
        num = best.get(metric)
        if den is not None and num is not None and den != 0 and math.isfinite(den) and math.isfinite(num):
            out[key] = num / den
    if "r_Y" in out and "r_P" in out:
        out["r_eff"] = out["r_Y"] * out["r_P"]
        if "r_C" in out and out["r_C"] != 0:
            out["r_overall"] = out["r_eff"] / out["r_C"]
    return out


# --- reports ----------------------------------------------------------------


@dataclass
class CaseMetrics:
    id: str
    task: str
    metrics: dict[str, float | None]


def report_bundle(task: str, cases: Sequence[CaseMetrics]) -> dict[str, Any]:
    """Aggregate per-case metrics (means, plus medians under ``median``)."""
    if not cases:
        raise ValueError("cannot build a report from zero cases")
    kinds = {c.task for c in cases}
    if kinds != {task}:
        raise ValueError(f"mixed task kinds in report: {sorted(kinds | {task})}")
    cases = sorted(cases, key=lambda c: c.id)
    names: list[str] = []
    for c in cases:
        names.extend(k for k in c.metrics if k not in names)
    agg: dict[str, float | None] = {}
    med: dict[str, float | None] = {}
    for k in names:
        vals = [c.metrics[k] for c in cases if c.metrics.get(k) is not None]
        agg[k] = statistics.fmean(vals) if vals else None
        med[k] = statistics.median(vals) if vals else None
    return {
        "task": task,
        "n_cases": len(cases),
        "aggregate": agg,
        "median": med,
        "cases": [{"id": c.id, **c.metrics} for c in cases],
    }


def write_report(report: dict[str, Any], path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


# --- ground-truth loaders ----------------------------------------------------


@dataclass
class QAItem:
    question: str
    reference: str
    category: str = ""
    difficulty: Any = None
    extra: dict[str, Any] = field(default_factory=dict)


def load_qa(path: str | Path) -> list[QAItem]:
    items = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            try:
                q, ref = row.pop("question"), row.pop("reference")
            except KeyError as exc:
                raise ValueError(f"{path}:{n}: missing field {exc}") from None
            items.append(QAItem(q, ref, row.pop("category", ""), row.pop("difficulty", None), row))
    return items
