"""Parameter cohort: scenario set-up, the surrogate flowsheet, and the simulate/analyze/optimize loop."""

from __future__ import annotations

import json
import logging
import math
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence

import numpy as np
from scipy.stats import qmc

from .agents import agent
from .grammar import BlockError, extract_json_block
from .graph import AbstractGraph, validate_topology
from .llm import ChatClient, Message
from .metrics import score_ratios
from .orchestration import ChatGroupSpec, Stage, Transcript, WorkflowSpec, run_agent, run_chat_group, run_workflow

log = logging.getLogger(__name__)

METRICS = ("yield", "purity", "cost")
DEFAULT_BUDGET = 20
STOP_EPS = 1e-3
STOP_WINDOW = 3


class ScenarioError(ValueError):
    """A scenario, parameter space or parameter vector violates its invariants."""


class SimulatorError(RuntimeError):
    """The simulator could not evaluate a point."""


# --- spaces ----------------------------------------------------------------------


@dataclass(frozen=True)
class Param:
    name: str
    min: float
    max: float
    initial: float
    unit: str = ""
    kind: str = "real"

    def __post_init__(self) -> None:
        if self.kind not in ("real", "integer"):
            raise ScenarioError(f"{self.name}: kind must be real or integer, got {self.kind!r}")
        if not self.min < self.max:
            raise ScenarioError(f"{self.name}: min {self.min} must be < max {self.max}")
        if not self.min <= self.initial <= self.max:
            raise ScenarioError(f"{self.name}: initial {self.initial} outside [{self.min}, {self.max}]")
        if self.kind == "integer" and float(self.initial) != int(self.initial):
            raise ScenarioError(f"{self.name}: integer parameter has non-integral initial {self.initial}")

    @property
    def span(self) -> float:
        return self.max - self.min

    def clamp(self, value: float) -> float:
        if self.kind == "integer":
            value = float(round(value))
        return float(min(self.max, max(self.min, value)))

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "unit": self.unit, "kind": self.kind,
                "min": self.min, "max": self.max, "initial": self.initial}


@dataclass(frozen=True)
class ParameterSpace:
    params: tuple[Param, ...]

    def __post_init__(self) -> None:
        if not self.params:
            raise ScenarioError("parameter space needs at least one parameter")
        names = [p.name for p in self.params]
        dup = next((n for n in names if names.count(n) > 1), None)
        if dup is not None:
            raise ScenarioError(f"duplicate parameter {dup}")

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def __getitem__(self, name: str) -> Param:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def initial(self) -> "ParameterVector":
        return ParameterVector({p.name: float(p.initial) for p in self.params})

    def check(self, vector: "ParameterVector") -> None:
        """Raise ScenarioError unless ``vector`` lies in the space (bounds and integrality)."""
        missing = [n for n in self.names if n not in vector.values]
        if missing:
            raise ScenarioError(f"missing parameter {missing[0]}")
        extra = [n for n in vector.values if n not in self.names]
        if extra:
            raise ScenarioError(f"unknown parameter {extra[0]}")
        for p in self.params:
            v = vector.values[p.name]
            if not math.isfinite(v) or not p.min <= v <= p.max:
                raise ScenarioError(f"{p.name}={v} outside [{p.min}, {p.max}]")
            if p.kind == "integer" and v != int(v):
                raise ScenarioError(f"{p.name}={v} is not integral")

    def contains(self, vector: "ParameterVector") -> bool:
        try:
            self.check(vector)
        except ScenarioError:
            return False
        return True

    def clamp(self, values: dict[str, float]) -> "ParameterVector":
        return ParameterVector({p.name: p.clamp(float(values[p.name])) for p in self.params})

    def to_dict(self) -> dict[str, Any]:
        return {"params": [p.to_dict() for p in self.params]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ParameterSpace":
        params = []
        for i, raw in enumerate(data.get("params", [])):
            try:
                params.append(Param(str(raw["name"]), float(raw["min"]), float(raw["max"]), float(raw["initial"]),
                                    str(raw.get("unit", "")), str(raw.get("kind", "real"))))
            except KeyError as exc:
                raise ScenarioError(f"params[{i}]: missing field {exc.args[0]!r}") from None
            except (TypeError, ValueError) as exc:
                if isinstance(exc, ScenarioError):
                    raise
                raise ScenarioError(f"params[{i}]: {exc}") from None
        return cls(tuple(params))


@dataclass(frozen=True)
class ParameterVector:
    values: dict[str, float]

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def to_dict(self) -> dict[str, float | int]:
        return {k: (int(v) if float(v).is_integer() else v) for k, v in self.values.items()}


def canonical_space() -> ParameterSpace:
    """The space the surrogate flowsheet is calibrated for."""
    return ParameterSpace((
        Param("reactor_T", 300.0, 500.0, 350.0, "K"),
        Param("residence_time", 0.1, 5.0, 1.0, "hr"),
        Param("n_plates", 5.0, 60.0, 20.0, "-", "integer"),
        Param("reflux_ratio", 0.5, 10.0, 2.0, "-"),
    ))


# --- scenarios ---------------------------------------------------------------------


@dataclass(frozen=True)
class Objective:
    metric: str
    direction: str
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise ScenarioError(f"unknown objective metric {self.metric!r}")
        if self.direction not in ("max", "min"):
            raise ScenarioError(f"objective direction must be max or min, got {self.direction!r}")
        if not self.weight > 0:
            raise ScenarioError(f"objective weight must be > 0, got {self.weight}")


@dataclass(frozen=True)
class Constraint:
    metric: str
    bound: float
    sense: str  # ">=" or "<="

    def satisfied(self, result: "SimulationResult") -> bool:
        v = result.metric(self.metric)
        return v >= self.bound if self.sense == ">=" else v <= self.bound


@dataclass(frozen=True)
class ScenarioConfig:
    space: ParameterSpace
    objectives: tuple[Objective, ...]
    constraints: tuple[Constraint, ...] = ()
    simulator: dict[str, Any] = field(default_factory=lambda: {"kind": "surrogate", "model": "surrogate-v1"})

    def __post_init__(self) -> None:
        if not self.objectives:
            raise ScenarioError("scenario needs at least one objective")
        if self.simulator.get("kind") not in ("surrogate", "external"):
            raise ScenarioError(f"unknown simulator kind {self.simulator.get('kind')!r}")
        for c in self.constraints:
            if c.metric not in METRICS or c.sense not in (">=", "<="):
                raise ScenarioError(f"invalid constraint {c}")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ScenarioError("scenario must be a JSON object")
        try:
            space = ParameterSpace.from_dict(data["space"])
            objectives = tuple(Objective(o["metric"], o["direction"], float(o.get("weight", 1.0)))
                               for o in data["objectives"])
            constraints = tuple(Constraint(c["metric"], float(c["bound"]), c.get("sense", ">="))
                                for c in data.get("constraints", []))
        except KeyError as exc:
            raise ScenarioError(f"scenario missing field {exc.args[0]!r}") from None
        except (TypeError, AttributeError) as exc:
            raise ScenarioError(f"malformed scenario: {exc}") from None
        simulator = dict(data.get("simulator") or {"kind": "surrogate", "model": "surrogate-v1"})
        return cls(space, objectives, constraints, simulator)

    def to_dict(self) -> dict[str, Any]:
        return {
            "space": self.space.to_dict(),
            "objectives": [vars(o) for o in self.objectives],
            "constraints": [vars(c) for c in self.constraints],
            "simulator": self.simulator,
        }


def canonical_scenario() -> ScenarioConfig:
    return ScenarioConfig(
        canonical_space(),
        (Objective("yield", "max"), Objective("purity", "max"), Objective("cost", "min")),
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return ScenarioConfig.from_dict(data)


def save_scenario(scenario: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2) + "\n", encoding="utf-8")


# --- simulation ------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationResult:
    yield_: float
    purity: float
    cost: float
    converged: bool = True
    diagnostics: dict[str, Any] = field(default_factory=dict, compare=False)

    def metric(self, name: str) -> float:
        return {"yield": self.yield_, "purity": self.purity, "cost": self.cost}[name]

    def to_dict(self) -> dict[str, Any]:
        # diagnostics (wall time etc.) stay out of persisted files
        return {"yield": self.yield_, "purity": self.purity, "cost": self.cost, "converged": self.converged}


F_IN = 100.0
A1, E1 = 1.0e6, 50000.0
A2, E2 = 5.0e8, 80000.0
R_GAS = 8.314
SURROGATE_PARAMS = ("reactor_T", "residence_time", "n_plates", "reflux_ratio")


def surrogate_flowsheet(p: ParameterVector | dict[str, float]) -> SimulationResult:
    """Closed-form reactor + column: series-parallel kinetics and an exponential recovery model.

    Higher temperature speeds conversion but favours the by-product; more
    plates and reflux sharpen the split at a cost. ``feed_stage`` and any
    other extra parameters are accepted and ignored.
    """
    values = p.values if isinstance(p, ParameterVector) else p
    missing = [n for n in SURROGATE_PARAMS if n not in values]
    if missing:
        raise ScenarioError(f"surrogate requires parameter {missing[0]}")
    T, tau = float(values["reactor_T"]), float(values["residence_time"])
    N, RR = float(values["n_plates"]), float(values["reflux_ratio"])
    k1 = A1 * math.exp(-E1 / (R_GAS * T))
    k2 = A2 * math.exp(-E2 / (R_GAS * T))
    X = 1.0 - math.exp(-(k1 + k2) * tau)
    S = k1 / (k1 + k2)
    f_b = F_IN * X * S
    f_c = F_IN * X * (1.0 - S)
    rho = RR / (1.0 + RR)
    rec = 1.0 - math.exp(-0.08 * N * rho)
    sigma = math.exp(-0.05 * N * rho)
    y = f_b * rec
    denom = y + f_c * sigma
    purity = y / denom if denom > 0 else 0.0
    cost = 0.02 * (T - 300.0) + 0.8 * RR + 0.05 * N + 2.0 * tau
    return SimulationResult(y, purity, cost, True,
                            {"conversion": X, "selectivity": S, "recovery": rec, "carryover": sigma})


def run_external(scenario: ScenarioConfig, p: ParameterVector, timeout: float = 600.0) -> SimulationResult:
    """Invoke ``simulator.command`` with scenario, params and result paths."""
    command = scenario.simulator.get("command")
    if not command:
        return SimulationResult(math.nan, math.nan, math.nan, False, {"error": "adapter_unavailable"})
    argv = [command] if isinstance(command, str) else list(command)
    with tempfile.TemporaryDirectory() as tmp:
        sp, pp, rp = (Path(tmp) / n for n in ("scenario.json", "params.json", "result.json"))
        save_scenario(scenario, sp)
        pp.write_text(json.dumps(p.to_dict()), encoding="utf-8")
        try:
            proc = subprocess.run([*argv, str(sp), str(pp), str(rp)], capture_output=True, text=True, timeout=timeout)
        except (FileNotFoundError, PermissionError):
            return SimulationResult(math.nan, math.nan, math.nan, False, {"error": "adapter_unavailable"})
        except subprocess.TimeoutExpired:
            return SimulationResult(math.nan, math.nan, math.nan, False, {"error": "adapter_timeout"})
        if proc.returncode != 0:
            return SimulationResult(math.nan, math.nan, math.nan, False,
                                    {"error": f"adapter exit {proc.returncode}", "stderr": proc.stderr[-500:]})
        try:
            r = json.loads(rp.read_text(encoding="utf-8"))
            result = SimulationResult(float(r["yield"]), float(r["purity"]), float(r["cost"]), bool(r["converged"]))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            return SimulationResult(math.nan, math.nan, math.nan, False, {"error": f"bad adapter result: {exc}"})
    if result.converged and not all(math.isfinite(x) for x in (result.yield_, result.purity, result.cost)):
        return SimulationResult(result.yield_, result.purity, result.cost, False, {"error": "non-finite metrics"})
    return result


def simulate(scenario: ScenarioConfig, p: ParameterVector) -> SimulationResult:
    scenario.space.check(p)
    start = time.perf_counter()
    if scenario.simulator.get("kind") == "surrogate":
        r = surrogate_flowsheet(p)
    else:
        r = run_external(scenario, p)
    diag = dict(r.diagnostics, wall_time_s=time.perf_counter() - start)
    return SimulationResult(r.yield_, r.purity, r.cost, r.converged, diag)


# --- history ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Directive:
    param: str
    direction: str  # increase | decrease | hold
    magnitude: str = ""

    @property
    def sign(self) -> int:
        return {"increase": 1, "decrease": -1}.get(self.direction, 0)


@dataclass(frozen=True)
class Feedback:
    assessment: str
    directives: tuple[Directive, ...]
    stop: bool
    improved: bool = False
    flags: tuple[str, ...] = ()

    def direction(self, name: str) -> int:
        return next((d.sign for d in self.directives if d.param == name), 0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "assessment": self.assessment,
            "directives": [{"param": d.param, "direction": d.direction, "magnitude": d.magnitude}
                           for d in self.directives],
            "stop": self.stop,
        }


@dataclass(frozen=True)
class Iteration:
    t: int
    params: ParameterVector
    result: SimulationResult
    score: float
    feedback: Feedback | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"t": self.t, "params": self.params.to_dict(), "result": self.result.to_dict(),
                "feedback": self.feedback.to_dict() if self.feedback else None}


class OptimizationHistory:
    """Append-only record; ``best`` indexes the highest composite score seen (earliest on ties)."""

    def __init__(self) -> None:
        self._items: list[Iteration] = []
        self.best: int = -1

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> Iteration:
        return self._items[i]

    @property
    def iterations(self) -> tuple[Iteration, ...]:
        return tuple(self._items)

    def append(self, it: Iteration) -> None:
        if it.t != len(self._items):
            raise ValueError(f"iteration t={it.t} out of sequence (expected {len(self._items)})")
        self._items.append(it)
        if self.best < 0 or it.score > self._items[self.best].score:
            self.best = it.t

    def attach_feedback(self, fb: Feedback) -> None:
        last = self._items[-1]
        if last.feedback is not None:
            raise ValueError("feedback already recorded for the last iteration")
        self._items[-1] = Iteration(last.t, last.params, last.result, last.score, fb)

    def best_scores(self) -> list[float]:
        out, cur = [], -math.inf
        for it in self._items:
            cur = max(cur, it.score)
            out.append(cur)
        return out

    def to_jsonl(self) -> str:
        return "".join(json.dumps(it.to_dict(), sort_keys=False) + "\n" for it in self._items)


def composite_score(result: SimulationResult, initial: SimulationResult, scenario: ScenarioConfig) -> float:
    """Weighted sum of metrics normalized by their initial values (inverted for min-direction)."""
    if not result.converged:
        return -math.inf
    total = 0.0
    for o in scenario.objectives:
        v, v0 = result.metric(o.metric), initial.metric(o.metric)
        if o.direction == "max":
            total += o.weight * (v / v0 if v0 else v)
        else:
            total += o.weight * ((v0 / v if v else math.inf) if v0 else -v)
    if any(not c.satisfied(result) for c in scenario.constraints):
        return -math.inf
    return total


# --- analysis ---------------------------------------------------------------------------


def _relative_gains(history: OptimizationHistory) -> list[float]:
    b = history.best_scores()
    return [(b[i] - b[i - 1]) / abs(b[i - 1]) if math.isfinite(b[i - 1]) and b[i - 1] else math.inf
            for i in range(1, len(b))]


def rule_analyze(history: OptimizationHistory, scenario: ScenarioConfig, budget: int | None = None,
                 eps: float = STOP_EPS, window: int = STOP_WINDOW) -> Feedback:
    """Stop on a stalled best-so-far or spent budget; steer each coordinate by the last move's outcome.

    A move that improved the best keeps its direction per coordinate; a move
    that did not is reversed. Coordinates that did not move keep the
    previous directive.
    """
    if not len(history):
        raise ValueError("history is empty")
    t = len(history) - 1
    last = history[t]
    prev_fb = history[t - 1].feedback if t > 0 else None
    improved = t > 0 and history.best == t
    gains = _relative_gains(history)
    stalled = len(gains) >= window and all(g < eps for g in gains[-window:])
    spent = budget is not None and len(history) >= budget
    directives = []
    if t > 0:
        ref = history[max(range(t), key=lambda i: (history[i].score, -i))]
        for p in scenario.space.params:
            delta = int(np.sign(last.params[p.name] - ref.params[p.name]))
            keep = prev_fb.direction(p.name) if prev_fb else 0
            sign = (delta if improved else -delta) if delta else keep
            directives.append(Directive(p.name, {1: "increase", -1: "decrease"}.get(sign, "hold")))
    else:
        directives = [Directive(p.name, "hold") for p in scenario.space.params]
    if stalled:
        msg = f"best composite gained < {eps:g} for {window} iterations"
    elif spent:
        msg = "budget exhausted"
    else:
        msg = f"composite {last.score:.6g}; best {history[history.best].score:.6g} at t={history.best}"
    return Feedback(msg, tuple(directives), stalled or spent, improved)


class Analyst(Protocol):
    def __call__(self, history: OptimizationHistory, scenario: ScenarioConfig, budget: int | None) -> Feedback: ...


def history_table(history: OptimizationHistory, scenario: ScenarioConfig) -> str:
    names = scenario.space.names
    lines = ["t | " + " | ".join(names) + " | yield | purity | cost | composite"]
    for it in history.iterations:
        vals = " | ".join(f"{it.params[n]:.6g}" for n in names)
        r = it.result
        lines.append(f"{it.t} | {vals} | {r.yield_:.6g} | {r.purity:.6g} | {r.cost:.6g} | {it.score:.6g}")
    return "\n".join(lines)


def parse_feedback(text: str, scenario: ScenarioConfig) -> Feedback:
    data = extract_json_block(text, "feedback")
    if not isinstance(data, dict):
        raise BlockError("@@feedback must hold a JSON object")
    directives = []
    for d in data.get("directives", []):
        if d.get("param") not in scenario.space.names:
            raise BlockError(f"directive names unknown parameter {d.get('param')!r}")
        if d.get("direction") not in ("increase", "decrease", "hold"):
            raise BlockError(f"bad direction {d.get('direction')!r}")
        directives.append(Directive(d["param"], d["direction"], str(d.get("magnitude", ""))))
    return Feedback(str(data.get("assessment", "")), tuple(directives), bool(data.get("stop", False)))


class ModelAnalyst:
    """Analyst agent fed the history table; parse failures fall back to the rule analyst."""

    def __init__(self, client: ChatClient, transcript: Transcript, model: str = ""):
        self.client, self.transcript, self.spec = client, transcript, agent("analyst", model)

    def __call__(self, history: OptimizationHistory, scenario: ScenarioConfig, budget: int | None) -> Feedback:
        rule = rule_analyze(history, scenario, budget)
        run = run_agent(self.spec, f"Optimization history:\n{history_table(history, scenario)}", self.client)
        self.transcript.record(run)
        try:
            fb = parse_feedback(run.output.text, scenario)
        except BlockError as exc:
            return Feedback(rule.assessment, rule.directives, rule.stop, rule.improved,
                            (f"analyst fallback: {exc}",))
        spent = budget is not None and len(history) >= budget
        return Feedback(fb.assessment, fb.directives, fb.stop or spent, rule.improved)


def analyze(history: OptimizationHistory, scenario: ScenarioConfig, analyst: Analyst | None = None,
            budget: int | None = None) -> Feedback:
    return (analyst or rule_analyze)(history, scenario, budget)


# --- optimization ----------------------------------------------------------------------------


class Strategy(Protocol):
    def propose(self, p: ParameterVector, feedback: Feedback, space: ParameterSpace,
                rng: np.random.Generator) -> tuple[dict[str, float], list[str]]: ...


class FallbackOptimizer:
    """Half global Latin-hypercube samples, half directed coordinate steps from the best point.

    Steps start at 10% of each range and shrink by 0.7 after a coordinate
    step that fails to improve. With every directive on hold there is nothing
    to follow, so a global sample is drawn.
    """

    def __init__(self, space: ParameterSpace, budget: int, rng: np.random.Generator,
                 step: float = 0.1, anneal: float = 0.7, p_global: float = 0.5):
        self.step, self.anneal, self.p_global = step, anneal, p_global
        self._samples = qmc.LatinHypercube(d=len(space.params), seed=rng).random(max(budget, 1))
        self._next = 0
        self._last_kind: str | None = None

    def propose(self, p: ParameterVector, feedback: Feedback, space: ParameterSpace,
                rng: np.random.Generator) -> tuple[dict[str, float], list[str]]:
        if self._last_kind == "coordinate" and not feedback.improved:
            self.step *= self.anneal
        signs = [feedback.direction(q.name) for q in space.params]
        if rng.random() < self.p_global or not any(signs):
            row = self._samples[self._next % len(self._samples)]
            self._next += 1
            self._last_kind = "global"
            return {q.name: q.min + float(u) * q.span for q, u in zip(space.params, row)}, []
        self._last_kind = "coordinate"
        return {q.name: p[q.name] + s * self.step * q.span for q, s in zip(space.params, signs)}, []


class ModelOptimizer:
    """Optimizer agent proposing the next point; unusable proposals defer to ``fallback``."""

    def __init__(self, client: ChatClient, transcript: Transcript, fallback: Strategy, model: str = ""):
        self.client, self.transcript, self.fallback = client, transcript, fallback
        self.spec = agent("optimizer", model)

    def propose(self, p: ParameterVector, feedback: Feedback, space: ParameterSpace,
                rng: np.random.Generator) -> tuple[dict[str, float], list[str]]:
        prompt = (f"Space: {json.dumps(space.to_dict())}\nCurrent best: {json.dumps(p.to_dict())}\n"
                  f"Feedback: {json.dumps(feedback.to_dict())}")
        run = run_agent(self.spec, prompt, self.client)
        self.transcript.record(run)
        try:
            data = extract_json_block(run.output.text, "params")
            if not isinstance(data, dict):
                raise BlockError("@@params must hold a JSON object")
            out = dict(p.values)
            for k, v in data.items():
                if k not in out:
                    raise BlockError(f"unknown parameter {k!r}")
                out[k] = float(v)
            return out, []
        except (BlockError, TypeError, ValueError) as exc:
            values, flags = self.fallback.propose(p, feedback, space, rng)
            return values, [*flags, f"optimizer fallback: {exc}"]


def optimize_step(p: ParameterVector, feedback: Feedback, space: ParameterSpace, strategy: Strategy,
                  rng: np.random.Generator) -> tuple[ParameterVector, list[str]]:
    space.check(p)
    values, flags = strategy.propose(p, feedback, space, rng)
    return space.clamp(values), flags


@dataclass
class OptimizationResult:
    history: OptimizationHistory
    best_params: ParameterVector
    best_result: SimulationResult
    ratios: dict[str, float]
    flags: list[str]
    transcript: Transcript

    def summary(self) -> dict[str, Any]:
        best = self.history[self.history.best]
        return {"iterations": len(self.history), "best_t": best.t, "best_score": best.score,
                "best_params": self.best_params.to_dict(), "best_result": self.best_result.to_dict(),
                "ratios": self.ratios, "flags": self.flags}


def run_optimization(scenario: ScenarioConfig, budget: int = DEFAULT_BUDGET, seed: int = 0,
                     client: ChatClient | None = None, transcript: Transcript | None = None,
                     model: str = "") -> OptimizationResult:
    """Closed loop from the initial point: simulate, analyze, stop or step, up to ``budget`` evaluations.

    With a client the analyst and optimizer are agents (each falling back to
    the algorithmic rule on unusable output); without one both are algorithmic.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    transcript = transcript if transcript is not None else Transcript()
    rng = np.random.default_rng(seed)
    fallback = FallbackOptimizer(scenario.space, budget, rng)
    if client is not None:
        analyst: Analyst = ModelAnalyst(client, transcript, model)
        strategy: Strategy = ModelOptimizer(client, transcript, fallback, model)
    else:
        analyst, strategy = rule_analyze, fallback
    flags: list[str] = []
    history = OptimizationHistory()
    p = scenario.space.initial()
    r0 = simulate(scenario, p)
    if not r0.converged:
        raise SimulatorError(f"initial point failed: {r0.diagnostics.get('error', 'not converged')}")
    history.append(Iteration(0, p, r0, composite_score(r0, r0, scenario)))
    while True:
        fb = analyze(history, scenario, analyst, budget)
        history.attach_feedback(fb)
        flags.extend(f"t={len(history) - 1}: {f}" for f in fb.flags)
        if fb.stop or len(history) >= budget:
            break
        best_p = history[history.best].params
        p, step_flags = optimize_step(best_p, fb, scenario.space, strategy, rng)
        flags.extend(f"t={len(history)}: {f}" for f in step_flags)
        r = simulate(scenario, p)
        if not r.converged:
            flags.append(f"t={len(history)}: simulation failed ({r.diagnostics.get('error', 'not converged')})")
        history.append(Iteration(len(history), p, r, composite_score(r, r0, scenario)))
    best = history[history.best]
    ratios = score_ratios(r0.to_dict(), best.result.to_dict())
    transcript.outcome = {"iterations": len(history), "best_t": best.t, "ratios": ratios}
    return OptimizationResult(history, best.params, best.result, ratios, flags, transcript)


# --- strategy group ------------------------------------------------------------------------------


def parse_config(text: str) -> ScenarioConfig:
    try:
        data = extract_json_block(text, "config")
    except BlockError:
        raise
    if not isinstance(data, dict):
        raise BlockError("@@config must hold a JSON object")
    return ScenarioConfig.from_dict(data)


def strategy_init(graph: AbstractGraph, requirements: str, client: ChatClient,
                  model: str = "", max_turns: int = 8) -> tuple[ScenarioConfig, Transcript]:
    """Four-expert discussion ending in a machine-readable scenario from the initializer."""
    if not validate_topology(graph).legal:
        raise ScenarioError("strategy set-up needs a legal process graph")
    members = tuple(agent(r, model) for r in ("sentinel", "chemist", "inspector", "initialize"))
    group = ChatGroupSpec(members, terminator="initialize", max_turns=max_turns)
    units = ", ".join(f"{n.id} ({n.type})" for n in graph.equipment)
    transcript, _ = run_chat_group(group, f"Process units: {units}\nRequirements: {requirements}", client)
    final = next(m for m in reversed(transcript.messages) if m.sender == "initialize" and m.role == "assistant")
    try:
        config = parse_config(final.text)
    except BlockError as exc:
        history = [Message("user", f"Requirements: {requirements}", sender="user"), final]
        retry = run_agent(members[3], f"Your configuration could not be parsed ({exc}). Emit the @@config block again.",
                          client, history=history)
        transcript.record(retry)
        try:
            config = parse_config(retry.output.text)
        except BlockError as exc2:
            raise ScenarioError(f"unparseable scenario configuration: {exc2}") from exc2
    transcript.outcome = {"config": config.to_dict()}
    return config, transcript


def parameter_cohort(graph: AbstractGraph, requirements: str, client: ChatClient, budget: int = DEFAULT_BUDGET,
                     seed: int = 0, model: str = "", agentic_loop: bool = False) -> OptimizationResult:
    """Strategy group, then the optimization workflow on the scenario it produced."""
    config, transcript = strategy_init(graph, requirements, client, model)
    box: dict[str, OptimizationResult] = {}

    def optimize(scenario: ScenarioConfig, tr: Transcript) -> dict[str, Any]:
        res = run_optimization(scenario, budget, seed, client if agentic_loop else None, tr, model)
        box["result"] = res
        return res.summary()

    workflow = WorkflowSpec((Stage("optimize", "scenario", "summary", optimize),))
    transcript, summary = run_workflow(workflow, config, transcript)
    transcript.outcome = summary
    result = box["result"]
    result.transcript = transcript
    return result
