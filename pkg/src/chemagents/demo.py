"""Bundled scripted scenarios, runnable offline through the command-line interface."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

SCENARIOS = ("ingest", "augment", "parse", "complete", "design", "optimize")


def scenario_dir(name: str) -> Path:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return Path(str(resources.files("chemagents") / "scenarios" / name))


def scenario_steps(name: str, out: str | Path) -> list[dict]:
    """Manifest steps with ``{dir}`` and ``{out}`` placeholders filled in."""
    d = scenario_dir(name)
    manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    subst = {"{dir}": str(d), "{out}": str(out)}
    steps = []
    for step in manifest["steps"]:
        args = []
        for a in step["args"]:
            for k, v in subst.items():
                a = a.replace(k, v)
            args.append(a)
        steps.append({**step, "args": args})
    return steps


def run_scenario(name: str, out: str | Path) -> list[tuple[str, int, int]]:
    """Run every step of a scenario; returns ``(step, expected, actual)`` exit codes."""
    from .cli import main

    Path(out).mkdir(parents=True, exist_ok=True)
    return [(s["name"], s["expect"], main(s["args"])) for s in scenario_steps(name, out)]
