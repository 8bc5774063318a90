"""Agents, chat groups, workflows and cohorts over a pluggable chat client.

An agent is a model identifier, an objective (system prompt) and a set of
tools it may call. A chat group lets several agents talk round-robin until
a terminator agent signs off; a workflow threads one payload through typed
stages; a cohort runs a group and hands one field of its outcome to a
workflow.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from .grammar import FINAL_MARKER, find_tool_directive, message_payload
from .llm import ChatClient, Message, llm_complete

log = logging.getLogger(__name__)

Tool = Callable[[dict[str, str]], str]


class ConfigError(ValueError):
    """An agent, group, workflow or cohort is mis-specified."""


class ToolError(RuntimeError):
    """An agent kept calling a tool that does not exist."""


class ToolAuthorizationError(RuntimeError):
    """An agent called a registered tool outside its own tool list."""


class BridgeError(KeyError):
    """The chat-group outcome lacks the field the workflow needs."""


class WorkflowAbort(RuntimeError):
    def __init__(self, stage: str, transcript: "Transcript", cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.transcript = transcript
        self.cause = cause


@dataclass(frozen=True)
class AgentSpec:
    name: str
    model: str = ""
    objective: str = ""
    tools: tuple[str, ...] = ()


@dataclass
class ToolCall:
    agent: str
    tool: str
    arguments: dict[str, str]
    result: str

    def to_dict(self) -> dict[str, Any]:
        return {"agent": self.agent, "tool": self.tool, "arguments": self.arguments, "result": self.result}


@dataclass
class AgentRun:
    output: Message
    tool_calls: list[ToolCall]
    messages: list[Message]
    truncated: bool = False


@dataclass
class Transcript:
    messages: list[Message] = field(default_factory=list)
    tool_calls: list[ToolCall] = field(default_factory=list)
    stages: list[dict[str, Any]] = field(default_factory=list)
    outcome: Any = None
    flags: list[str] = field(default_factory=list)

    def add(self, msg: Message) -> Message:
        msg.turn = (self.messages[-1].turn + 1) if self.messages else 1
        self.messages.append(msg)
        return msg

    def record(self, run: AgentRun) -> None:
        for m in run.messages:
            self.add(m)
        self.tool_calls.extend(run.tool_calls)
        if run.truncated:
            self.flags.append(f"truncated:{run.output.sender}")

    def extend(self, other: "Transcript") -> None:
        for m in other.messages:
            self.add(m)
        self.tool_calls.extend(other.tool_calls)
        self.stages.extend(other.stages)
        self.flags.extend(other.flags)

    @property
    def usage(self) -> dict[str, int]:
        return {
            "model_calls": sum(1 for m in self.messages if m.role == "assistant"),
            "tool_calls": len(self.tool_calls),
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "messages": [m.to_dict() for m in self.messages],
            "tool_calls": [c.to_dict() for c in self.tool_calls],
            "stages": self.stages,
            "outcome": self.outcome,
            "flags": self.flags,
            "usage": self.usage,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False, default=_jsonable) + "\n"


def _jsonable(obj: Any) -> Any:
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if isinstance(obj, (set, frozenset, tuple)):
        return list(obj)
    return repr(obj)


def run_agent(
    agent: AgentSpec,
    input: Any,
    client: ChatClient,
    tools: Mapping[str, Tool] | None = None,
    max_tool_rounds: int = 4,
    history: Sequence[Message] = (),
) -> AgentRun:
    """Run one agent until it answers without a tool directive.

    A directive naming an unregistered tool is answered with an error message
    once; a second such directive is fatal. The round limit returns the last
    reply flagged as truncated.
    """
    if max_tool_rounds < 0:
        raise ConfigError("max_tool_rounds must be >= 0")
    tools = tools or {}
    convo = [Message("system", agent.objective, sender=agent.name), *history, Message("user", input, sender="user")]
    produced: list[Message] = []
    calls: list[ToolCall] = []
    rounds = 0
    strikes = 0
    while True:
        reply = llm_complete(client, convo, agent=agent.name, model=agent.model or None)
        produced.append(reply)
        convo.append(reply)
        directive = find_tool_directive(reply.text)
        if directive is None:
            return AgentRun(reply, calls, produced)
        if rounds >= max_tool_rounds:
            return AgentRun(reply, calls, produced, truncated=True)
        name = directive.name
        if name not in tools:
            strikes += 1
            if strikes > 1:
                raise ToolError(f"{agent.name} repeatedly called unknown tool {name!r}")
            result = f"error: unknown tool {name!r}; available: {', '.join(agent.tools) or 'none'}"
        elif name not in agent.tools:
            raise ToolAuthorizationError(f"{agent.name} is not authorized to call {name!r}")
        else:
            try:
                result = tools[name](directive.arguments)
            except Exception as exc:  # tool failures are reported back to the agent
                log.warning("tool %s failed: %s", name, exc)
                result = f"error: {exc}"
            calls.append(ToolCall(agent.name, name, directive.arguments, result))
        tool_msg = Message("tool", f"[{name}]\n{result}", sender=agent.name)
        produced.append(tool_msg)
        convo.append(tool_msg)
        rounds += 1


# --- chat groups ------------------------------------------------------------


@dataclass(frozen=True)
class ChatGroupSpec:
    agents: tuple[AgentSpec, ...]
    terminator: str
    max_turns: int = 8
    channels: tuple[frozenset[str], ...] | None = None
    # agents in one contiguous run of this set see the same context snapshot
    # and may be executed concurrently
    parallel: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        names = [a.name for a in self.agents]
        if len(set(names)) != len(names):
            raise ConfigError("agent names must be unique within a group")
        if self.terminator not in names:
            raise ConfigError(f"terminator {self.terminator!r} is not a group member")
        for ch in self.channels or ():
            if not set(ch) <= set(names):
                raise ConfigError(f"channel {sorted(ch)} names non-members")
        if self.max_turns < 1:
            raise ConfigError("max_turns must be >= 1")

    def peers(self, name: str) -> set[str]:
        if self.channels is None:
            return {a.name for a in self.agents}
        out = {name}
        for ch in self.channels:
            if name in ch:
                out |= ch
        return out


def _render_history(group: ChatGroupSpec, agent: AgentSpec, messages: Sequence[Message]) -> list[Message]:
    peers = group.peers(agent.name)
    out = []
    for m in messages:
        if m.sender != "user" and m.sender not in peers:
            continue
        if m.role == "assistant" and m.sender == agent.name:
            out.append(Message("assistant", m.content, sender=m.sender))
        else:
            out.append(Message("user", f"{m.sender}: {m.text}", sender=m.sender))
    return out


def run_chat_group(
    group: ChatGroupSpec,
    task: str,
    client: ChatClient,
    tools: Mapping[str, Tool] | None = None,
    max_tool_rounds: int = 4,
) -> tuple[Transcript, dict[str, Any]]:
    """Round-robin session; ends when the terminator emits the final marker."""
    transcript = Transcript()
    transcript.add(Message("user", task, sender="user"))
    agents = list(group.agents)
    spoken = 0
    last_terminal: Message | None = None
    terminated = False

    def prompt_for(a: AgentSpec) -> str:
        return f"Task: {task}\nYou are {a.name}; contribute your part of the discussion."

    i = 0
    while spoken < group.max_turns and not terminated:
        pos = i % len(agents)
        block = [agents[pos]]
        if agents[pos].name in group.parallel:
            while pos + len(block) < len(agents) and agents[pos + len(block)].name in group.parallel:
                block.append(agents[pos + len(block)])
        block = block[: group.max_turns - spoken]
        context = list(transcript.messages[1:])
        if len(block) > 1:
            with ThreadPoolExecutor(max_workers=len(block)) as pool:
                futures = [
                    pool.submit(run_agent, a, prompt_for(a), client, tools, max_tool_rounds,
                                _render_history(group, a, context))
                    for a in block
                ]
                runs = [f.result() for f in futures]
        else:
            a = block[0]
            runs = [run_agent(a, prompt_for(a), client, tools, max_tool_rounds,
                              _render_history(group, a, context))]
        for a, run in zip(block, runs):
            transcript.record(run)
            spoken += 1
            if a.name == group.terminator:
                last_terminal = run.output
                if FINAL_MARKER in run.output.text:
                    terminated = True
                    break
        i += len(block)

    if not terminated:
        transcript.flags.append("non_terminated")
    outcome = message_payload(last_terminal.text) if last_terminal is not None else {}
    transcript.outcome = outcome
    return transcript, outcome


# --- workflows --------------------------------------------------------------


@dataclass(frozen=True)
class Stage:
    name: str
    in_kind: str
    out_kind: str
    run: Callable[[Any, Transcript], Any]


@dataclass(frozen=True)
class WorkflowSpec:
    stages: tuple[Stage, ...] = ()

    def __post_init__(self) -> None:
        for a, b in zip(self.stages, self.stages[1:]):
            if a.out_kind != b.in_kind:
                raise ConfigError(
                    f"stage {b.name!r} expects {b.in_kind!r} but {a.name!r} produces {a.out_kind!r}"
                )

    @property
    def in_kind(self) -> str | None:
        return self.stages[0].in_kind if self.stages else None


def run_workflow(workflow: WorkflowSpec, input: Any, transcript: Transcript | None = None) -> tuple[Transcript, Any]:
    transcript = transcript if transcript is not None else Transcript()
    payload = input
    for stage in workflow.stages:
        try:
            payload = stage.run(payload, transcript)
        except Exception as exc:
            transcript.stages.append({"stage": stage.name, "in": stage.in_kind, "out": stage.out_kind, "status": "failed"})
            raise WorkflowAbort(stage.name, transcript, exc) from exc
        transcript.stages.append({"stage": stage.name, "in": stage.in_kind, "out": stage.out_kind, "status": "ok"})
    return transcript, payload


# --- cohorts ----------------------------------------------------------------


@dataclass(frozen=True)
class CohortSpec:
    group: ChatGroupSpec
    workflow: WorkflowSpec
    bridge: str


def run_cohort(
    cohort: CohortSpec,
    objective: str,
    client: ChatClient,
    tools: Mapping[str, Tool] | None = None,
) -> tuple[Transcript, Any]:
    transcript, outcome = run_chat_group(cohort.group, objective, client, tools)
    if cohort.bridge not in outcome:
        raise BridgeError(cohort.bridge)
    transcript, result = run_workflow(cohort.workflow, outcome[cohort.bridge], transcript)
    transcript.outcome = result if _is_plain(result) else transcript.outcome
    return transcript, result


def _is_plain(obj: Any) -> bool:
    try:
        json.dumps(obj)
    except TypeError:
        return False
    return True
