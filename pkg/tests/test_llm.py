from __future__ import annotations

import json

import httpx
import pytest

from chemagents.llm import EndpointError, Message, RemoteClient, ScriptedClient, ScriptError, llm_complete
from helpers import scripted


def ok(content: str = "hello") -> httpx.Response:
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": content}}],
                                     "usage": {"prompt_tokens": 5, "completion_tokens": 2}})


def client_for(handler, **kw) -> tuple[RemoteClient, list[float]]:
    sleeps: list[float] = []
    c = RemoteClient("http://llm.test/v1", "m1", "secret", transport=httpx.MockTransport(handler),
                     sleep=sleeps.append, **kw)
    return c, sleeps


class TestScripted:
    def test_single_reply(self):
        c = scripted(("planner", 1, "ok"))
        assert llm_complete(c, [Message("user", "hi")], agent="planner").content == "ok"

    def test_exhausted_names_agent_and_turn(self):
        c = scripted(("planner", 1, "ok"))
        c.complete([], agent="planner")
        with pytest.raises(ScriptError, match="planner turn 2"):
            c.complete([], agent="planner")

    def test_turns_are_per_agent(self):
        c = scripted(("a", 1, "a1"), ("b", 1, "b1"), ("a", 2, "a2"))
        assert [c.complete([], agent=n) for n in ("a", "b", "a")] == ["a1", "b1", "a2"]

    def test_from_file(self, tmp_path):
        p = tmp_path / "s.jsonl"
        p.write_text(json.dumps({"agent": "x", "turn": 1, "content": "y"}) + "\n\n", encoding="utf-8")
        assert ScriptedClient.from_file(p).complete([], agent="x") == "y"

    def test_from_file_bad_line(self, tmp_path):
        p = tmp_path / "s.jsonl"
        p.write_text("{not json\n", encoding="utf-8")
        with pytest.raises(ScriptError, match=":1:"):
            ScriptedClient.from_file(p)


class TestRemote:
    def test_wire_format(self):
        seen = {}

        def handler(req: httpx.Request) -> httpx.Response:
            seen["url"] = str(req.url)
            seen["auth"] = req.headers.get("authorization")
            seen["body"] = json.loads(req.content)
            return ok()

        c, _ = client_for(handler)
        msgs = [Message("system", "be brief"), Message("tool", "[t]\nresult"),
                Message("user", [{"type": "text", "text": "look"},
                                 {"type": "image", "data": "AAAA", "media_type": "image/png"}])]
        assert c.complete(msgs, agent="a", temperature=0.2) == "hello"
        assert seen["url"] == "http://llm.test/v1/chat/completions"
        assert seen["auth"] == "Bearer secret"
        body = seen["body"]
        assert body["model"] == "m1" and body["temperature"] == 0.2
        assert [m["role"] for m in body["messages"]] == ["system", "user", "user"]
        assert body["messages"][2]["content"][1] == {"type": "image", "data": "AAAA", "media_type": "image/png"}
        assert c.usage["prompt_tokens"] == 5 and c.usage["calls"] == 1

    def test_429_then_200_retries_once(self):
        codes = iter([429, 200])

        def handler(req):
            code = next(codes)
            return ok() if code == 200 else httpx.Response(code)

        c, sleeps = client_for(handler)
        assert c.complete([Message("user", "x")], agent="a") == "hello"
        assert c.usage["retries"] == 1 and sleeps == [1.0]

    def test_exponential_backoff_then_failure(self):
        c, sleeps = client_for(lambda req: httpx.Response(503))
        with pytest.raises(EndpointError) as err:
            c.complete([Message("user", "x")], agent="a")
        assert err.value.retriable and err.value.status == 503
        assert sleeps == [1.0, 2.0, 4.0] and c.usage["retries"] == 3

    def test_transport_error_retried(self):
        calls = {"n": 0}

        def handler(req):
            calls["n"] += 1
            if calls["n"] == 1:
                raise httpx.ConnectError("refused")
            return ok("back")

        c, _ = client_for(handler)
        assert c.complete([Message("user", "x")], agent="a") == "back"

    def test_400_not_retried(self):
        c, sleeps = client_for(lambda req: httpx.Response(400, text="bad"))
        with pytest.raises(EndpointError) as err:
            c.complete([Message("user", "x")], agent="a")
        assert not err.value.retriable and sleeps == []

    def test_malformed_response(self):
        c, _ = client_for(lambda req: httpx.Response(200, json={"nope": 1}))
        with pytest.raises(EndpointError, match="malformed"):
            c.complete([Message("user", "x")], agent="a")

    def test_from_env(self, monkeypatch):
        monkeypatch.setenv("CEPRO_BASE_URL", "http://e.test")
        monkeypatch.setenv("CEPRO_MODEL", "m-env")
        c = RemoteClient.from_env()
        assert c.base_url == "http://e.test" and c.model == "m-env"
        monkeypatch.delenv("CEPRO_BASE_URL")
        with pytest.raises(EndpointError):
            RemoteClient.from_env()
