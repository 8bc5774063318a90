from __future__ import annotations

import json
import shutil
from pathlib import Path

import httpx
import pytest

from chemagents import cli
from chemagents.demo import SCENARIOS, run_scenario, scenario_dir
from chemagents.graph import serialize_graph
from chemagents.llm import RemoteClient
from helpers import chain, compliant_line, graph_block

NEAR_MISS = Path(__file__).parent / "data" / "near_miss"
QUERY = "What are the main production routes and market players for isoprene?"


def write_script(path: Path, *entries: tuple[str, int, str]) -> str:
    path.write_text("".join(json.dumps({"agent": a, "turn": t, "content": c}) + "\n" for a, t, c in entries),
                    encoding="utf-8")
    return str(path)


class TestConfig:
    def args(self, argv):
        return cli.build_parser().parse_args(argv)

    def test_precedence(self, tmp_path):
        conf = tmp_path / "run.json"
        conf.write_text(json.dumps({"model": "from-file", "seed": 5, "base_url": "http://file"}), encoding="utf-8")
        env = {"CEPRO_MODEL": "from-env", "CEPRO_BASE_URL": "http://env"}
        cfg = cli.resolve_config(self.args(["optimize", "s.json", "--config", str(conf), "--model", "from-flag"]), env)
        assert (cfg.model, cfg.base_url, cfg.seed) == ("from-flag", "http://env", 5)
        cfg = cli.resolve_config(self.args(["optimize", "s.json", "--config", str(conf)]), {})
        assert (cfg.model, cfg.base_url) == ("from-file", "http://file")

    def test_bad_config(self, tmp_path):
        conf = tmp_path / "run.json"
        conf.write_text(json.dumps({"colour": "red"}), encoding="utf-8")
        assert cli.main(["optimize", "x.json", "--config", str(conf)]) == 1

    def test_bad_thresholds(self):
        assert cli.main(["ingest", "x.txt", "--t-auto", "0.5", "--t-review", "0.9"]) == 1

    def test_unknown_command(self):
        assert cli.main(["frobnicate"]) == 1


class TestIngestAugment:
    def test_ingest_scenario(self, tmp_path, capsys):
        d = scenario_dir("ingest")
        code = cli.main(["ingest", str(d / "catalyst.txt"), "--store", str(tmp_path / "store"), "--alias", "pt=platinum",
                         "--mode", "scripted", "--script", str(d / "script.jsonl"), "--out", str(tmp_path)])
        assert code == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["chunks"] == 2 and summary["merge_stats"]["auto_merged"] >= 1
        assert {p.name for p in (tmp_path / "store").iterdir()} >= {"meta.json", "chunks.jsonl", "embeddings.bin",
                                                                     "entities.jsonl", "triples.jsonl"}

    def test_missing_document(self, tmp_path):
        assert cli.main(["ingest", str(tmp_path / "nope.txt"), "--store", str(tmp_path / "s")]) == 1

    def test_all_ablated(self, tmp_path):
        assert cli.main(["augment", "q", "--no-web", "--no-kb", "--no-kg", "--out", str(tmp_path)]) == 1

    def test_missing_store(self, tmp_path):
        d = scenario_dir("augment")
        code = cli.main(["augment", QUERY, "--store", str(tmp_path / "absent"), "--mode", "scripted",
                         "--script", str(d / "kb.jsonl"), "--no-web", "--no-kg", "--out", str(tmp_path)])
        assert code == 2

    def test_web_only_needs_no_store(self, tmp_path):
        d = scenario_dir("augment")
        code = cli.main(["augment", QUERY, "--no-kb", "--no-kg", "--web-fixture", str(d / "web_fixture.jsonl"),
                         "--mode", "scripted", "--script", str(d / "web.jsonl"), "--out", str(tmp_path)])
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert all(c.startswith("web:") for c in report["citations"])

    def test_remote_endpoint_down(self, tmp_path, monkeypatch):
        def refused(request):
            raise httpx.ConnectError("connection refused")

        class DownClient(RemoteClient):
            def __init__(self, base_url, model, api_key=None, **kw):
                super().__init__(base_url, model, api_key, transport=httpx.MockTransport(refused),
                                 sleep=lambda s: None)

        monkeypatch.setattr(cli, "RemoteClient", DownClient)
        doc = tmp_path / "doc.txt"
        doc.write_text("Nickel catalysts hydrogenate butynediol.", encoding="utf-8")
        code = cli.main(["ingest", str(doc), "--store", str(tmp_path / "s"), "--mode", "remote",
                         "--base-url", "http://127.0.0.1:9", "--out", str(tmp_path)])
        assert code == 3


class TestConcept:
    def test_parse_scenario(self, tmp_path, capsys):
        d = scenario_dir("parse")
        code = cli.main(["parse", str(d / "pfd.txt"), "--mode", "scripted", "--script", str(d / "script.jsonl"),
                         "--out", str(tmp_path)])
        assert code == 0 and "dropped_edges=1" in capsys.readouterr().out
        assert json.loads((tmp_path / "validation.json").read_text())["legal"] is True

    def test_parse_missing_file(self, tmp_path):
        assert cli.main(["parse", str(tmp_path / "nope.png"), "--out", str(tmp_path)]) == 1

    def test_complete_prints_hits(self, tmp_path, capsys):
        d = scenario_dir("complete")
        code = cli.main(["complete", str(d / "graph.json"), "--mask", "R0301", "--mode", "scripted",
                         "--script", str(d / "script.jsonl"), "--out", str(tmp_path)])
        assert code == 0 and "A@1=1" in capsys.readouterr().out

    def test_design_never_converges(self, tmp_path):
        task = tmp_path / "task.json"
        task.write_text(json.dumps({"description": "make product"}), encoding="utf-8")
        entries = []
        for t in (1, 2, 3):
            entries += [("design", t, graph_block(chain("Feed", "Mixer", "Product"))), ("correct", t, "VERDICT: accept")]
        script = write_script(tmp_path / "s.jsonl", *entries)
        code = cli.main(["design", str(task), "--max-iters", "3", "--mode", "scripted", "--script", script,
                         "--out", str(tmp_path / "o")])
        assert code == 2
        lines = (tmp_path / "o" / "history.jsonl").read_text().splitlines()
        assert len(lines) == 3 + 1 and json.loads(lines[-1])["success"] is False
        assert (tmp_path / "o" / "design.json").exists()

    def test_design_bad_task(self, tmp_path):
        task = tmp_path / "task.json"
        task.write_text(json.dumps({"description": ""}), encoding="utf-8")
        assert cli.main(["design", str(task), "--out", str(tmp_path)]) == 2

    def test_scripted_requires_script(self, tmp_path):
        d = scenario_dir("parse")
        assert cli.main(["parse", str(d / "pfd.txt"), "--mode", "scripted", "--out", str(tmp_path)]) == 1

    def test_exhausted_script_is_endpoint_failure(self, tmp_path):
        d = scenario_dir("parse")
        script = write_script(tmp_path / "s.jsonl", ("equip", 1, "@@graph\n{}\n@@end"))
        assert cli.main(["parse", str(d / "pfd.txt"), "--mode", "scripted", "--script", script,
                         "--out", str(tmp_path)]) == 3


class TestOptimize:
    def test_seed_42(self, tmp_path, capsys):
        code = cli.main(["optimize", str(scenario_dir("optimize") / "scenario.json"), "--budget", "20", "--seed", "42",
                         "--out", str(tmp_path)])
        assert code == 0 and "r_overall=9.914817" in capsys.readouterr().out
        assert len((tmp_path / "history.jsonl").read_text().splitlines()) == 11

    def test_budget_zero(self, tmp_path):
        assert cli.main(["optimize", str(scenario_dir("optimize") / "scenario.json"), "--budget", "0",
                         "--out", str(tmp_path)]) == 1

    def test_min_above_max(self, tmp_path):
        data = json.loads((scenario_dir("optimize") / "scenario.json").read_text())
        data["space"]["params"][0].update({"min": 500, "max": 300})
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(data), encoding="utf-8")
        assert cli.main(["optimize", str(p), "--out", str(tmp_path)]) == 2

    def test_adapter_unavailable(self, tmp_path):
        data = json.loads((scenario_dir("optimize") / "scenario.json").read_text())
        data["simulator"] = {"kind": "external"}
        p = tmp_path / "ext.json"
        p.write_text(json.dumps(data), encoding="utf-8")
        assert cli.main(["optimize", str(p), "--out", str(tmp_path)]) == 3


class TestEval:
    def graph_dirs(self, tmp_path, pred_graph, gt_graph, names=("c1",)):
        for side, g in (("pred", pred_graph), ("gt", gt_graph)):
            (tmp_path / side).mkdir(exist_ok=True)
            for n in names:
                (tmp_path / side / f"{n}.json").write_text(serialize_graph(g), encoding="utf-8")
        return str(tmp_path / "pred"), str(tmp_path / "gt")

    def test_identical_graphs(self, tmp_path):
        pred, gt = self.graph_dirs(tmp_path, compliant_line(), compliant_line())
        assert cli.main(["eval", "parsing", "--pred", pred, "--gt", gt, "--out", str(tmp_path / "o")]) == 0
        agg = json.loads((tmp_path / "o" / "report.json").read_text())["aggregate"]
        assert all(agg[k] == 1.0 for k in ("A_eq", "R_eq", "A_cn", "R_cn", "MEC"))

    def test_orphans(self, tmp_path, capsys):
        pred, gt = self.graph_dirs(tmp_path, compliant_line(), compliant_line())
        (tmp_path / "pred" / "extra.json").write_text(serialize_graph(compliant_line()), encoding="utf-8")
        assert cli.main(["eval", "parsing", "--pred", pred, "--gt", gt, "--out", str(tmp_path / "o")]) == 2
        assert "extra" in capsys.readouterr().err

    def test_near_miss_tau(self, tmp_path):
        aggs = {}
        for tau in ("0.3", "0.9"):
            out = tmp_path / tau
            code = cli.main(["eval", "parsing", "--pred", str(NEAR_MISS / "pred"), "--gt", str(NEAR_MISS / "gt"),
                             "--tau", tau, "--out", str(out)])
            assert code == 0
            aggs[tau] = json.loads((out / "report.json").read_text())["aggregate"]
        assert all(aggs["0.9"][k] <= aggs["0.3"][k] for k in ("A_eq", "R_eq", "A_cn", "R_cn"))
        assert aggs["0.9"]["A_eq"] < aggs["0.3"]["A_eq"]

    def test_completion(self, tmp_path):
        (tmp_path / "pred").mkdir()
        (tmp_path / "gt").mkdir()
        (tmp_path / "pred" / "a.json").write_text(json.dumps({"candidates": [{"rank": 1, "type": "Mixer"},
                                                                            {"rank": 2, "type": "Reactor"}]}))
        (tmp_path / "gt" / "a.json").write_text(json.dumps({"truth_type": "Reactor"}))
        assert cli.main(["eval", "completion", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt"),
                         "--out", str(tmp_path / "o")]) == 0
        agg = json.loads((tmp_path / "o" / "report.json").read_text())["aggregate"]
        assert (agg["A@1"], agg["A@3"]) == (0.0, 1.0)

    def test_design_impossible_outcome(self, tmp_path):
        (tmp_path / "pred").mkdir()
        (tmp_path / "pred" / "a.json").write_text(json.dumps({"legal": False, "compliant": True}))
        assert cli.main(["eval", "design", "--pred", str(tmp_path / "pred"), "--out", str(tmp_path / "o")]) == 2

    def test_not_a_directory(self, tmp_path):
        assert cli.main(["eval", "design", "--pred", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 1


@pytest.mark.parametrize("name", SCENARIOS)
def test_demo_scenarios(name, tmp_path):
    results = run_scenario(name, tmp_path / name)
    assert results and all(actual == expected for _, expected, actual in results)


def test_demo_command(tmp_path, capsys):
    assert cli.main(["demo", "optimize", "--out", str(tmp_path)]) == 0
    assert "[optimize] exit 0 (expected 0)" in capsys.readouterr().out
    shutil.rmtree(tmp_path)
