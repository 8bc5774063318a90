"""Command-line entry point: ``chemagents <command> ...``.

Exit codes: 0 success, 1 usage or I/O error, 2 domain validation failure,
3 endpoint or simulator failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .demo import SCENARIOS
from .concept_cohort import PfdInput, complete_graph, design_loop, load_design_task, parse_topology
from .graph import MASKED, GraphError, MaskedGraph, graph_to_dict, load_graph, mask_node, serialize_graph
from .knowledge_cohort import Ablation, FixtureWebSearch, KnowledgeStores, MergeConfig, knowledge_augment, knowledge_update
from .knowledge_store import (
    DEFAULT_T_AUTO,
    DEFAULT_T_REVIEW,
    KnowledgeGraph,
    RemoteEmbedder,
    StubEmbedder,
    VectorStore,
    check_thresholds,
    load_kg,
    save_kg,
)
from .llm import ChatClient, EndpointError, RemoteClient, ScriptedClient, ScriptError
from .metrics import (
    CaseMetrics,
    design_rates,
    graph_metrics,
    hit_at_k,
    match_entities,
    parsing_scores,
    report_bundle,
    write_report,
)
from .orchestration import BridgeError, ConfigError, ToolAuthorizationError, ToolError, Transcript, WorkflowAbort
from .parameter_cohort import ScenarioError, SimulatorError, load_scenario, run_optimization

log = logging.getLogger("chemagents")

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_ENDPOINT = 0, 1, 2, 3


class UsageError(Exception):
    """Bad invocation or unreadable input (exit 1)."""


class DomainError(Exception):
    """Input read fine but failed domain validation (exit 2)."""


@dataclass
class RunConfig:
    mode: str = "scripted"
    script: str | None = None
    base_url: str | None = None
    model: str = ""
    api_key_env: str = "CEPRO_API_KEY"
    seed: int = 0
    t_auto: float = DEFAULT_T_AUTO
    t_review: float = DEFAULT_T_REVIEW
    tau: float = 0.5
    max_turns: int = 8
    max_iters: int = 7
    budget: int = 20
    store: str | None = None
    out: str = "out"
    extra: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if self.mode not in ("remote", "scripted"):
            raise UsageError(f"mode must be remote or scripted, got {self.mode!r}")
        try:
            check_thresholds(self.t_auto, self.t_review)
        except ValueError as exc:
            raise UsageError(str(exc)) from None


_ENV = {"base_url": "CEPRO_BASE_URL", "model": "CEPRO_MODEL", "mode": "CEPRO_MODE", "script": "CEPRO_SCRIPT"}
_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def resolve_config(args: argparse.Namespace, environ: dict[str, str] | None = None) -> RunConfig:
    """Merge settings with precedence: command-line flags, then environment, then ``--config`` file."""
    environ = dict(os.environ if environ is None else environ)
    values: dict[str, Any] = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(data) - set(_FIELDS))
        if unknown:
            raise UsageError(f"unknown config key {unknown[0]!r}")
        values.update(data)
    for name, var in _ENV.items():
        if environ.get(var):
            values[name] = environ[var]
    for name in _FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    cfg = RunConfig()
    for name, v in values.items():
        typ = type(getattr(cfg, name))
        try:
            setattr(cfg, name, typ(v) if typ in (int, float) and v is not None else v)
        except (TypeError, ValueError):
            raise UsageError(f"bad value for {name}: {v!r}") from None
    cfg.validate()
    return cfg


def make_client(cfg: RunConfig) -> ChatClient:
    if cfg.mode == "scripted":
        if not cfg.script:
            raise UsageError("scripted mode requires --script")
        if not Path(cfg.script).is_file():
            raise UsageError(f"script not found: {cfg.script}")
        return ScriptedClient.from_file(cfg.script)
    base = cfg.base_url or os.environ.get("CEPRO_BASE_URL")
    if not base:
        raise UsageError("remote mode requires --base-url or CEPRO_BASE_URL")
    return RemoteClient(base, cfg.model, os.environ.get(cfg.api_key_env))


# --- output helpers -------------------------------------------------------------------


def _out(cfg: RunConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _write_transcript(out: Path, transcript: Transcript, name: str = "transcript.json") -> None:
    (out / name).write_text(transcript.to_json(), encoding="utf-8")


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None


# --- stores ---------------------------------------------------------------------------------


def _embedder_from_meta(meta: dict[str, Any]):
    if meta.get("embedder", "stub") == "stub":
        return StubEmbedder(int(meta.get("dim", 64)), int(meta.get("seed", 0)), meta.get("aliases") or {})
    return RemoteEmbedder(meta["base_url"], meta["model"], os.environ.get("CEPRO_API_KEY"), meta.get("dim"))


def load_stores(directory: Path) -> tuple[KnowledgeStores, dict[str, Any]]:
    meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
    emb = _embedder_from_meta(meta)
    vectors = VectorStore.load(directory, emb) if (directory / "chunks.jsonl").exists() else VectorStore(emb)
    kg = load_kg(directory) if (directory / "entities.jsonl").exists() else KnowledgeGraph()
    return KnowledgeStores(vectors, kg), meta


def save_stores(stores: KnowledgeStores, meta: dict[str, Any], directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    _write_json(directory / "meta.json", meta)
    stores.vectors.save(directory)
    save_kg(stores.kg, directory)


def _parse_aliases(items: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in items or ():
        k, sep, v = item.partition("=")
        if not sep or not k or not v:
            raise UsageError(f"alias must look like word=replacement, got {item!r}")
        out[k] = v
    return out


# --- commands ---------------------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace, cfg: RunConfig) -> int:
    text = _read_text(args.document)
    if not cfg.store:
        raise UsageError("ingest needs --store")
    store_dir = Path(cfg.store)
    if (store_dir / "meta.json").exists():
        stores, meta = load_stores(store_dir)
    else:
        if args.embedder == "remote":
            base = cfg.base_url or os.environ.get("CEPRO_BASE_URL")
            if not base:
                raise UsageError("remote embedder needs --base-url or CEPRO_BASE_URL")
            meta = {"embedder": "remote", "base_url": base, "model": args.embed_model or cfg.model}
        else:
            meta = {"embedder": "stub", "dim": 64, "seed": cfg.seed, "aliases": _parse_aliases(args.alias)}
        stores = KnowledgeStores.empty(_embedder_from_meta(meta))
    client = make_client(cfg)
    doc_id = args.doc_id or Path(args.document).stem
    result = knowledge_update(text, stores, client, MergeConfig(cfg.t_auto, cfg.t_review), doc_id, cfg.model)
    if isinstance(stores.embedder, RemoteEmbedder):
        meta["dim"] = stores.embedder.dim
    save_stores(stores, meta, store_dir)
    out = _out(cfg)
    summary = result.summary()
    _write_json(out / "ingest.json", summary)
    _write_transcript(out, result.transcript)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_augment(args: argparse.Namespace, cfg: RunConfig) -> int:
    ablation = Ablation(web=not args.no_web, kb=not args.no_kb, kg=not args.no_kg)
    if not ablation.enabled():
        raise UsageError("all retrieval streams are disabled")
    web = FixtureWebSearch.from_file(args.web_fixture) if args.web_fixture else None
    if ablation.kb or ablation.kg:
        if not cfg.store or not (Path(cfg.store) / "meta.json").exists():
            raise DomainError(f"knowledge store not found: {cfg.store}")
        stores, _ = load_stores(Path(cfg.store))
    else:
        stores = KnowledgeStores.empty()
    if web is not None:
        stores.web = web
    client = make_client(cfg)
    result = knowledge_augment(args.query, stores, client, ablation, args.kb_k, args.kg_depth, cfg.model)
    if not args.web_fixture and ablation.web:
        result.report.notes.append("no web search adapter configured; web stream empty")
    out = _out(cfg)
    _write_json(out / "report.json", {**result.report.to_dict(), "bundle": result.bundle.to_dict()})
    _write_transcript(out, result.transcript)
    print("citations: " + (", ".join(result.report.citations) or "(none)"))
    return EXIT_OK


def cmd_parse(args: argparse.Namespace, cfg: RunConfig) -> int:
    try:
        pfd = PfdInput.load(args.pfd)
    except OSError as exc:
        raise UsageError(f"cannot read {args.pfd}: {exc}") from None
    result = parse_topology(pfd, make_client(cfg), model=cfg.model)
    out = _out(cfg)
    (out / "graph.json").write_text(serialize_graph(result.graph), encoding="utf-8")
    _write_json(out / "validation.json", {**result.report.to_dict(), "dropped_edges": result.dropped_edges,
                                          "flags": result.flags})
    _write_transcript(out, result.transcript)
    print(f"equipment={len(result.graph.equipment)} connections={len(result.graph.connections)} "
          f"dropped_edges={result.dropped_edges} legal={result.report.legal} compliant={result.report.compliant}")
    return EXIT_OK


def cmd_complete(args: argparse.Namespace, cfg: RunConfig) -> int:
    try:
        graph = load_graph(args.graph)
    except OSError as exc:
        raise UsageError(f"cannot read {args.graph}: {exc}") from None
    masked_ids = [n.id for n in graph.equipment if n.type == MASKED]
    if masked_ids:
        masked = MaskedGraph(graph, masked_ids[0], args.truth)
    else:
        masked = mask_node(graph, args.mask, seed=cfg.seed if args.mask is None else None)
    truth = args.truth or masked.truth_type
    result = complete_graph(masked, make_client(cfg), k_max=args.k_max, context=args.context or "", model=cfg.model)
    out = _out(cfg)
    payload = result.to_dict()
    if truth:
        payload["truth"] = truth
        payload["hits"] = {f"A@{k}": hit_at_k(result.types, truth, k) for k in (1, 3, 5)}
    _write_json(out / "candidates.json", payload)
    _write_transcript(out, result.transcript)
    print("candidates: " + (", ".join(result.types) or "(none)"))
    if truth:
        print(" ".join(f"{k}={v}" for k, v in payload["hits"].items()))
    return EXIT_OK


def cmd_design(args: argparse.Namespace, cfg: RunConfig) -> int:
    try:
        task = load_design_task(args.task)
    except OSError as exc:
        raise UsageError(f"cannot read {args.task}: {exc}") from None
    except (ValueError, json.JSONDecodeError) as exc:
        raise DomainError(f"invalid design task: {exc}") from None
    result = design_loop(task.description, make_client(cfg), extra_rules=task.extra_rules,
                         max_iters=cfg.max_iters, model=cfg.model)
    out = _out(cfg)
    (out / "design.json").write_text(serialize_graph(result.graph), encoding="utf-8")
    final = result.states[-1].validation
    _write_json(out / "validation.json", {**final.to_dict(), "success": result.success})
    with open(out / "history.jsonl", "w", encoding="utf-8") as fh:
        for s in result.states:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")
        fh.write(json.dumps({"final": True, "success": result.success, "iterations": len(result.states),
                             "graph": graph_to_dict(result.graph)}, ensure_ascii=False) + "\n")
    _write_transcript(out, result.transcript)
    print(f"iterations={len(result.states)} success={result.success} legal={final.legal} compliant={final.compliant}")
    return EXIT_OK if result.success else EXIT_DOMAIN


def cmd_optimize(args: argparse.Namespace, cfg: RunConfig) -> int:
    if cfg.budget < 1:
        raise UsageError("--budget must be >= 1")
    try:
        scenario = load_scenario(args.scenario)
    except OSError as exc:
        raise UsageError(f"cannot read {args.scenario}: {exc}") from None
    client = make_client(cfg) if args.agentic else None
    result = run_optimization(scenario, cfg.budget, cfg.seed, client, model=cfg.model)
    out = _out(cfg)
    (out / "history.jsonl").write_text(result.history.to_jsonl(), encoding="utf-8")
    _write_json(out / "best.json", {"params": result.best_params.to_dict(), "result": result.best_result.to_dict(),
                                    "t": result.history.best})
    _write_json(out / "ratios.json", result.ratios)
    _write_transcript(out, result.transcript)
    for k in ("r_Y", "r_P", "r_C", "r_eff", "r_overall"):
        print(f"{k}={result.ratios[k]:.6f}" if k in result.ratios else f"{k}=absent")
    return EXIT_OK


def _case_files(directory: str) -> dict[str, Path]:
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"not a directory: {directory}")
    return {p.stem: p for p in sorted(d.glob("*.json"))}


def _load_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DomainError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _parsing_case(pred: Path, gt: Path, tau: float) -> dict[str, float | None]:
    pg, gg = load_graph(pred), load_graph(gt)
    scores = parsing_scores(pg, gg, tau)
    m = match_entities([f"{n.type} {n.label}".strip() for n in pg.equipment],
                       [f"{n.type} {n.label}".strip() for n in gg.equipment], tau)
    mapping = {gg.equipment[g].id: pg.equipment[p].id for g, p in m.gt_to_pred().items()}
    topo = graph_metrics([(c.source, c.target) for c in gg.connections],
                         [(c.source, c.target) for c in pg.connections], mapping, pg.node_ids)
    return {**scores.to_dict(), "MEC": topo.mec, "MED": topo.med}


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    preds = _case_files(args.pred)
    gts = _case_files(args.gt) if args.gt else {}
    needs_gt = args.task in ("parsing", "completion")
    if needs_gt:
        orphans = sorted(set(preds) ^ set(gts))
        if orphans:
            print("orphan case ids: " + ", ".join(orphans), file=sys.stderr)
            return EXIT_DOMAIN
    cases: list[CaseMetrics] = []
    extra: dict[str, Any] = {}
    if args.task == "parsing":
        for cid in sorted(preds):
            cases.append(CaseMetrics(cid, "parsing", _parsing_case(preds[cid], gts[cid], cfg.tau)))
    elif args.task == "completion":
        for cid in sorted(preds):
            ranked = [c["type"] for c in _load_json(preds[cid]).get("candidates", [])]
            gt = _load_json(gts[cid])
            truth = gt.get("truth_type", gt.get("truth"))
            cases.append(CaseMetrics(cid, "completion", {f"A@{k}": float(hit_at_k(ranked, truth, k)) for k in (1, 3, 5)}))
    elif args.task == "design":
        outcomes = []
        for cid in sorted(preds):
            o = _load_json(preds[cid])
            outcomes.append({"legal": bool(o["legal"]), "compliant": bool(o["compliant"])})
            cases.append(CaseMetrics(cid, "design", {"valid": float(o["legal"]),
                                                     "correct": float(o["legal"] and o["compliant"])}))
        try:
            extra = design_rates(outcomes).to_dict()
        except ValueError as exc:
            raise DomainError(str(exc)) from None
    if not cases:
        raise DomainError("no cases found")
    report = report_bundle(args.task, cases)
    if extra:
        report["rates"] = extra
    if args.task == "parsing":
        report["tau"] = cfg.tau
    out = _out(cfg)
    write_report(report, out / "report.json")
    print(json.dumps(report["aggregate"], sort_keys=True))
    return EXIT_OK


def cmd_demo(args: argparse.Namespace, cfg: RunConfig) -> int:
    from .demo import run_scenario

    worst = EXIT_OK
    for step, expected, actual in run_scenario(args.scenario, cfg.out):
        print(f"[{step}] exit {actual} (expected {expected})")
        if actual != expected:
            worst = max(worst, actual, EXIT_DOMAIN)
    return worst


# --- parser ---------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration file")
    common.add_argument("--mode", choices=("remote", "scripted"), default=None)
    common.add_argument("--script", help="scripted replies (jsonl of {agent, turn, content})")
    common.add_argument("--base-url", dest="base_url")
    common.add_argument("--model")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--store", help="knowledge store directory")
    common.add_argument("--t-auto", dest="t_auto", type=float)
    common.add_argument("--t-review", dest="t_review", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="chemagents", description="Multi-agent chemical process development.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="add a plain-text document to the knowledge stores")
    p.add_argument("document")
    p.add_argument("--doc-id")
    p.add_argument("--embedder", choices=("stub", "remote"), default="stub")
    p.add_argument("--embed-model")
    p.add_argument("--alias", action="append", default=[], help="embedder word alias, e.g. pt=platinum")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("augment", parents=[common], help="answer a query from web, documents and graph")
    p.add_argument("query")
    p.add_argument("--no-web", action="store_true")
    p.add_argument("--no-kb", action="store_true")
    p.add_argument("--no-kg", action="store_true")
    p.add_argument("--web-fixture", help="canned web results (jsonl)")
    p.add_argument("--kb-k", type=int, default=8)
    p.add_argument("--kg-depth", type=int, default=2)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("parse", parents=[common], help="parse a PFD (image or text) into a graph")
    p.add_argument("pfd")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("complete", parents=[common], help="rank candidate types for a masked unit")
    p.add_argument("graph")
    p.add_argument("--mask", help="id of the unit to mask (default: seeded choice)")
    p.add_argument("--truth", help="true type, when the input is already masked")
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--context")
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("design", parents=[common], help="design a topology from a task file")
    p.add_argument("task")
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("optimize", parents=[common], help="optimize operating parameters of a scenario")
    p.add_argument("scenario")
    p.add_argument("--budget", type=int)
    p.add_argument("--agentic", action="store_true", help="use analyst/optimizer agents instead of the fallback")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("task", choices=("parsing", "completion", "design"))
    p.add_argument("--pred", required=True)
    p.add_argument("--gt")
    p.add_argument("--tau", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo", parents=[common], help="run a bundled scripted scenario")
    p.add_argument("scenario", choices=SCENARIOS)
    p.set_defaults(func=cmd_demo)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, WorkflowAbort):
        return _exit_code(exc.cause)
    if isinstance(exc, (EndpointError, ScriptError, SimulatorError)):
        return EXIT_ENDPOINT
    if isinstance(exc, (UsageError, OSError)):
        return EXIT_USAGE
    if isinstance(exc, (DomainError, ScenarioError, GraphError, ConfigError, BridgeError, ToolError,
                        ToolAuthorizationError, ValueError, KeyError)):
        return EXIT_DOMAIN
    raise exc


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except Exception as exc:
        code = _exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
