"""Parsing of the fenced ``@@name ... @@end`` blocks agents emit in plain text."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any

FINAL_MARKER = "<<FINAL>>"


class BlockError(ValueError):
    """The expected fenced block is missing or malformed."""


@dataclass(frozen=True)
class ToolDirective:
    name: str
    arguments: dict[str, str]


_TOOL_RE = re.compile(r"^@@tool[ \t]+(\S+)[ \t]*$", re.MULTILINE)


def find_tool_directive(text: str) -> ToolDirective | None:
    """Return the first ``@@tool`` directive in ``text``, if any.

    Arguments are ``key: value`` lines up to ``@@end``; an unterminated block
    runs to the end of the text.
    """
    m = _TOOL_RE.search(text)
    if m is None:
        return None
    args: dict[str, str] = {}
    for line in text[m.end():].splitlines():
        s = line.strip()
        if s == "@@end":
            break
        if not s:
            continue
        key, sep, value = s.partition(":")
        if sep:
            args[key.strip()] = value.strip()
    return ToolDirective(m.group(1), args)


def format_tool_directive(name: str, arguments: dict[str, str]) -> str:
    lines = [f"@@tool {name}"] + [f"{k}: {v}" for k, v in arguments.items()] + ["@@end"]
    return "\n".join(lines)


def extract_sections(text: str, names: tuple[str, ...]) -> dict[str, list[str]]:
    """Split a ``@@a ... @@b ... @@end`` run into per-section line lists.

    Only the first occurrence of the first section name starts the run.
    """
    first = re.search(rf"^@@{re.escape(names[0])}[ \t]*$", text, re.MULTILINE)
    if first is None:
        raise BlockError(f"no @@{names[0]} block found")
    sections: dict[str, list[str]] = {names[0]: []}
    current = names[0]
    closed = False
    for line in text[first.end():].splitlines():
        s = line.strip()
        if s == "@@end":
            closed = True
            break
        if s.startswith("@@") and s[2:] in names:
            current = s[2:]
            sections.setdefault(current, [])
            continue
        if s:
            sections[current].append(s)
    if not closed:
        raise BlockError(f"@@{names[0]} block is not closed by @@end")
    return sections


def extract_block(text: str, name: str) -> str:
    """Raw body of the first ``@@name`` block."""
    m = re.search(rf"^@@{re.escape(name)}[ \t]*$", text, re.MULTILINE)
    if m is None:
        raise BlockError(f"no @@{name} block found")
    end = re.search(r"^[ \t]*@@end[ \t]*$", text[m.end():], re.MULTILINE)
    if end is None:
        raise BlockError(f"@@{name} block is not closed by @@end")
    return text[m.end(): m.end() + end.start()].strip("\n")


def extract_json_block(text: str, name: str) -> Any:
    body = extract_block(text, name)
    try:
        return json.loads(body)
    except json.JSONDecodeError as exc:
        raise BlockError(f"@@{name} block is not valid JSON: line {exc.lineno}: {exc.msg}") from exc


def split_fields(line: str, n: int) -> list[str]:
    """Split a ``a | b | c`` line into exactly ``n`` fields (last absorbs extras)."""
    parts = [p.strip() for p in line.split("|", n - 1)]
    if len(parts) != n:
        raise BlockError(f"expected {n} '|'-separated fields: {line!r}")
    return parts


def message_payload(text: str) -> dict[str, Any]:
    """Interpret an agent's final message as a payload object.

    The terminal marker is stripped; a JSON object (whole text or the outermost
    braces) becomes the payload, otherwise the text is wrapped as ``{"text": ...}``.
    """
    body = text.replace(FINAL_MARKER, "").strip()
    for candidate in (body, body[body.find("{"): body.rfind("}") + 1] if "{" in body else ""):
        if not candidate:
            continue
        try:
            obj = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return {"text": body}
