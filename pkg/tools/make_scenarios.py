"""Regenerate the bundled scripted scenarios under src/chemagents/scenarios/.

The scripts are data; this generator only exists so that the JSON escaping
of multi-line agent replies stays correct when a reply is edited.
"""

from __future__ import annotations

import itertools
import json
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1] / "src" / "chemagents" / "scenarios"


def write_script(path: Path, entries: list[tuple[str, int, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for agent, turn, content in entries:
            fh.write(json.dumps({"agent": agent, "turn": turn, "content": content}, ensure_ascii=False) + "\n")


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def graph_block(equipment, connections) -> str:
    eq = [{"id": i, "type": t, "label": l, "attrs": {}} for i, t, l in equipment]
    cn = [{"from": a, "to": b, "stream": s, "attrs": {}} for a, b, s in connections]
    return "@@graph\n" + json.dumps({"equipment": eq, "connections": cn}, indent=2) + "\n@@end"


# --- knowledge: ingest ------------------------------------------------------------

CATALYST_CHUNK_0 = """@@entities
e1 | Pt catalyst
e2 | 1,4-butynediol
e3 | 1,4-butenediol
e4 | 1,4-butanediol
e5 | hydrogen
e6 | fixed-bed hydrogenation reactor
e7 | recycle compressor
e8 | acetal by-products
@@triples
e2 | hydrogenated_to | e3 | Reaction Mechanism
e3 | hydrogenated_to | e4 | Reaction Mechanism
e1 | catalyzes_hydrogenation_of | e2 | Reaction Mechanism
e6 | contains | e1 | Flowsheet Structure
e7 | returns_to_reactor | e5 | Flowsheet Structure
e8 | favoured_by_high_temperature_in | e6 | Constraints
@@end"""

CATALYST_CHUNK_1 = """@@entities
e1 | platinum catalyst
e2 | sulfur compounds
e3 | zinc oxide guard bed
e4 | heavy oligomers
e5 | butanediol
e6 | distillation column
e7 | precious metal value
@@triples
e2 | poisons | e1 | Constraints
e3 | removes | e2 | Process
e4 | blocks_pores_of | e1 | Constraints
e6 | recovers | e5 | Process
e1 | has_recoverable | e7 | Economics
e1 | regenerated_by | e9 | Process
@@end"""


def make_ingest() -> None:
    d = ROOT / "ingest"
    write_script(d / "script.jsonl", [
        ("extract", 1, CATALYST_CHUNK_0),
        ("extract", 2, CATALYST_CHUNK_1),
        ("merge", 1, "YES: butanediol in the purification passage is the same 1,4-butanediol product named earlier"),
    ])
    write_json(d / "manifest.json", {"steps": [
        {"name": "ingest", "expect": 0,
         "args": ["ingest", "{dir}/catalyst.txt", "--store", "{out}/store", "--alias", "pt=platinum",
                  "--mode", "scripted", "--script", "{dir}/script.jsonl", "--out", "{out}"]},
    ]})


# --- knowledge: augment -----------------------------------------------------------

ISOPRENE_DOC = """Isoprene production routes

Most isoprene is recovered from the C5 fraction of naphtha steam cracking. The C5 cut is first heat-soaked to dimerize cyclopentadiene and then processed by extractive distillation with a polar solvent such as dimethylformamide or acetonitrile, which separates isoprene from close-boiling pentenes and pentanes. The availability of this route depends directly on the size of the liquid-feed crackers in a region.

Where cracker C5 is scarce, isoprene is synthesized. The isobutene-formaldehyde route first forms 4,4-dimethyl-1,3-dioxane in an acid-catalyzed Prins reaction and then cracks the dioxane over a phosphate catalyst to give isoprene, formaldehyde and water. A second synthetic option is the two-step dehydrogenation of isopentane. Both synthetic routes carry higher energy cost than extraction.

More than half of all isoprene is polymerized to cis-1,4-polyisoprene rubber, the synthetic analogue of natural rubber. Polymer-grade isoprene requires very low levels of cyclopentadiene and acetylenic impurities, so the final purification columns set the specification of the whole plant.
"""

ISOPRENE_EXTRACT = """@@entities
e1 | isoprene
e2 | C5 fraction
e3 | steam cracking
e4 | extractive distillation
e5 | isobutene
e6 | formaldehyde
e7 | 4,4-dimethyl-1,3-dioxane
e8 | isopentane
e9 | polyisoprene rubber
e10 | cyclopentadiene
@@triples
e3 | produces | e2 | Process
e4 | recovers_from_c5 | e1 | Process
e2 | contains | e1 | Substance
e5 | reacts_with | e6 | Reaction Mechanism
e5 | forms_intermediate | e7 | Reaction Mechanism
e7 | cracks_to | e1 | Reaction Mechanism
e8 | dehydrogenated_to | e1 | Reaction Mechanism
e1 | polymerized_to | e9 | Process
e10 | limited_impurity_in | e1 | Constraints
@@end"""

WEB_FIXTURE = [
    {"query": "isoprene production market players",
     "results": [
         {"title": "Isoprene market overview",
          "url": "https://example.org/isoprene-market",
          "snippet": "Asia dominates isoprene capacity, with SINOPEC as the dominant player, followed by other integrated refiners."},
         {"title": "Synthetic isoprene economics",
          "url": "https://example.org/isoprene-synthesis",
          "snippet": "Synthetic routes from isobutene compete with C5 extraction only where cracker output is small."},
     ]},
    {"query": "polyisoprene rubber demand",
     "results": [
         {"title": "Rubber demand",
          "url": "https://example.org/rubber",
          "snippet": "Polyisoprene rubber consumes most isoprene output."},
     ]},
]

QUERY = "What are the main production routes and market players for isoprene?"

WEB_TURNS = [
    "@@tool search_web\nquery: isoprene production market players\n@@end",
    "The web results name SINOPEC as the dominant isoprene producer [web:1] and note that synthetic routes "
    "compete only where cracker C5 is scarce [web:2].",
]
KB_TURNS = [
    "@@tool search_kb\nquery: isoprene production routes extraction synthesis\n@@end",
    "The document store describes extraction from the steam-cracker C5 fraction and the isobutene-formaldehyde "
    "route as the alternatives [kb:1].",
]
KG_TURNS = [
    "@@tool search_kg\nentities: isoprene; isobutene\n@@end",
    "The graph links isoprene to the steam-cracker C5 fraction [kg:1] and to extractive distillation [kg:2].",
]

REPORT_PARTS = {
    "web": "SINOPEC is the dominant market player [web:1].",
    "kb": "The main route is extractive distillation of the C5 fraction from steam cracking, with the "
          "isobutene-formaldehyde route as the synthetic alternative [kb:1].",
    "kg": "Isoprene sits in the C5 fraction produced by steam cracking [kg:1] and is recovered by extractive distillation [kg:2].",
}


def report_text(streams: tuple[str, ...]) -> str:
    lines = [REPORT_PARTS[s] for s in ("kb", "kg", "web") if s in streams]
    if "web" in streams and "kb" in streams:
        lines.append("CONFLICT: the web stream stresses synthetic capacity while the documents treat extraction as the default route.")
    return "\n".join(lines) + "\n<<FINAL>>"


def make_augment() -> None:
    d = ROOT / "augment"
    (d / "isoprene.txt").write_text(ISOPRENE_DOC, encoding="utf-8")
    with open(d / "web_fixture.jsonl", "w", encoding="utf-8") as fh:
        for rec in WEB_FIXTURE:
            fh.write(json.dumps(rec) + "\n")
    write_script(d / "ingest.jsonl", [("extract", 1, ISOPRENE_EXTRACT)])
    steps = [{"name": "ingest", "expect": 0,
              "args": ["ingest", "{dir}/isoprene.txt", "--store", "{out}/store", "--mode", "scripted",
                       "--script", "{dir}/ingest.jsonl", "--out", "{out}/ingest"]}]
    turns = {"web": WEB_TURNS, "kb": KB_TURNS, "kg": KG_TURNS}
    for n in (3, 2, 1):
        for combo in itertools.combinations(("web", "kb", "kg"), n):
            name = "_".join(combo)
            entries = [(s, i, t) for s in combo for i, t in enumerate(turns[s], 1)]
            entries.append(("report", 1, report_text(combo)))
            write_script(d / f"{name}.jsonl", entries)
            flags = [f"--no-{s}" for s in ("web", "kb", "kg") if s not in combo]
            steps.append({"name": f"augment_{name}", "expect": 0,
                          "args": ["augment", QUERY, "--store", "{out}/store", "--web-fixture", "{dir}/web_fixture.jsonl",
                                   *flags, "--mode", "scripted", "--script", f"{{dir}}/{name}.jsonl",
                                   "--out", f"{{out}}/{name}"]})
    write_json(d / "manifest.json", {"steps": steps})


# --- concept: parse and complete --------------------------------------------------

ETHYNYLATION = [
    ("F0201", "Feed", "Acetylene"),
    ("C0301", "Compressor", "Acetylene compressor"),
    ("F0202", "Feed", "Formaldehyde solution"),
    ("P0206", "Centrifugal pump", "Formaldehyde feed pump"),
    ("R0301", "Reactor", "Ethynylation reactor 1"),
    ("R0302", "Reactor", "Ethynylation reactor 2"),
    ("V0301", "Gas-Liquid Separator", "Off-gas separator"),
    ("P0213", "Centrifugal pump", "Butynediol product pump"),
    ("S0301", "Product", "Butynediol solution"),
    ("S0302", "Product", "Off-gas"),
]
ETHYNYLATION_LINKS = [
    ("F0201", "C0301", "S1"), ("C0301", "R0301", "S2"), ("F0202", "P0206", "S3"), ("P0206", "R0301", "S4"),
    ("R0301", "R0302", "S5"), ("R0302", "V0301", "S6"), ("V0301", "S0302", "S7"), ("V0301", "P0213", "S8"),
    ("P0213", "S0301", "S9"),
]

PFD_TEXT = """Ethynylation section of a 1,4-butanediol plant.
Acetylene (F0201) is compressed in the acetylene compressor C0301 and fed to the first ethynylation reactor R0301.
Aqueous formaldehyde (F0202) is pumped by the feed pump P0206 into R0301.
R0301 overflows into the second reactor R0302. The reactor effluent goes to the off-gas separator V0301.
Off-gas leaves V0301 to the flare header (S0302); the liquid is pumped by P0213 to butynediol storage (S0301).
A dashed line from P0213 to a sample point X9 is an instrument connection, not a process stream.
"""


def make_parse() -> None:
    d = ROOT / "parse"
    (d / "pfd.txt").write_text(PFD_TEXT, encoding="utf-8")
    links = ETHYNYLATION_LINKS + [("P0213", "X9", "sample")]
    write_script(d / "script.jsonl", [
        ("equip", 1, "Equipment found in the diagram:\n" + graph_block(ETHYNYLATION, [])),
        ("link", 1, graph_block(ETHYNYLATION, links)),
    ])
    write_json(d / "manifest.json", {"steps": [
        {"name": "parse", "expect": 0,
         "args": ["parse", "{dir}/pfd.txt", "--mode", "scripted", "--script", "{dir}/script.jsonl", "--out", "{out}"]},
    ]})


def make_complete() -> None:
    d = ROOT / "complete"
    graph = json.loads(graph_block(ETHYNYLATION, ETHYNYLATION_LINKS).split("\n", 1)[1].rsplit("\n", 1)[0])
    write_json(d / "graph.json", graph)
    write_script(d / "script.jsonl", [
        ("complete", 1, "@@candidates\n"
         "1 | Reactor | receives compressed acetylene and pumped formaldehyde and feeds a second reactor in series\n"
         "2 | Kettle HEX | a heated vessel could sit between the feed units and R0302\n"
         "3 | Fixed-bed reactor | catalytic ethynylation is sometimes run over a fixed bed\n"
         "4 | Mixer | two feeds join at this unit\n"
         "5 | reactor | duplicate of the first candidate\n"
         "@@end"),
    ])
    write_json(d / "manifest.json", {"steps": [
        {"name": "complete", "expect": 0,
         "args": ["complete", "{dir}/graph.json", "--mask", "R0301", "--mode", "scripted",
                  "--script", "{dir}/script.jsonl", "--out", "{out}"]},
    ]})


# --- concept: design ------------------------------------------------------------------

PDO_BASE = [
    ("F0201", "Feed", "Ethylene oxide"),
    ("F0202", "Feed", "Syngas"),
    ("M0201", "Mixer", "Feed mixer"),
    ("R0201", "Reactor", "Hydroformylation reactor"),
    ("C0202", "Compressor", "Recycle gas compressor"),
    ("T0201", "Distillation column", "Product column"),
    ("S0201", "Product", "1,3-Propanediol"),
    ("S0202", "Product", "Heavy ends"),
]
PDO_DRAFT = PDO_BASE + [("V0202", "Membrane Separator", "Gas separation")]
PDO_FINAL = PDO_BASE + [("V0202", "Gas-Liquid Separator", "Flash separator")]
PDO_COMMON_LINKS = [
    ("F0201", "M0201", "EO"), ("F0202", "M0201", "syngas"), ("M0201", "R0201", "mixed feed"),
    ("R0201", "V0202", "effluent"), ("V0202", "C0202", "gas"), ("V0202", "T0201", "liquid"),
    ("T0201", "S0201", "product"), ("T0201", "S0202", "bottoms"),
]
PDO_TASK = {
    "description": "Design a process producing 1,3-propanediol from ethylene oxide and syngas by hydroformylation. "
                   "Unreacted gas must be recovered and recycled, and the product purified by distillation.",
    "extra_rules": ["E1", "E2", "E3"],
    "difficulty": "standard",
}


def make_design() -> None:
    d = ROOT / "design"
    write_json(d / "task.json", PDO_TASK)
    write_script(d / "script.jsonl", [
        ("design", 1, "Initial flowsheet.\n" + graph_block(PDO_DRAFT, PDO_COMMON_LINKS)),
        ("correct", 1, "ISSUE: V0202 | Membrane Separator is not a vocabulary unit | use a Gas-Liquid Separator\n"
                       "ISSUE: C0202 | compressed gas is not returned to the process | recycle it into M0201\n"
                       "VERDICT: revise"),
        ("design", 2, "Revised flowsheet with a flash drum and the gas recycle closed.\n"
                      + graph_block(PDO_FINAL, PDO_COMMON_LINKS + [("C0202", "M0201", "recycle gas")])),
        ("correct", 2, "No further issues.\nVERDICT: accept"),
    ])
    write_json(d / "manifest.json", {"steps": [
        {"name": "design", "expect": 0,
         "args": ["design", "{dir}/task.json", "--mode", "scripted", "--script", "{dir}/script.jsonl", "--out", "{out}"]},
    ]})


# --- parameter: optimize ----------------------------------------------------------------

CANONICAL_SCENARIO = {
    "space": {"params": [
        {"name": "reactor_T", "unit": "K", "kind": "real", "min": 300, "max": 500, "initial": 350},
        {"name": "residence_time", "unit": "hr", "kind": "real", "min": 0.1, "max": 5.0, "initial": 1.0},
        {"name": "n_plates", "unit": "-", "kind": "integer", "min": 5, "max": 60, "initial": 20},
        {"name": "reflux_ratio", "unit": "-", "kind": "real", "min": 0.5, "max": 10, "initial": 2.0},
    ]},
    "objectives": [
        {"metric": "yield", "direction": "max", "weight": 1.0},
        {"metric": "purity", "direction": "max", "weight": 1.0},
        {"metric": "cost", "direction": "min", "weight": 1.0},
    ],
    "constraints": [],
    "simulator": {"kind": "surrogate", "model": "surrogate-v1"},
}


def make_optimize() -> None:
    d = ROOT / "optimize"
    write_json(d / "scenario.json", CANONICAL_SCENARIO)
    write_json(d / "manifest.json", {"steps": [
        {"name": "optimize", "expect": 0,
         "args": ["optimize", "{dir}/scenario.json", "--budget", "20", "--seed", "42", "--out", "{out}"]},
    ]})


if __name__ == "__main__":
    for d in ("ingest", "augment", "parse", "complete", "design", "optimize"):
        (ROOT / d).mkdir(parents=True, exist_ok=True)
    make_ingest()
    make_augment()
    make_parse()
    make_complete()
    make_design()
    make_optimize()
