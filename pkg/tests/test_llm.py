import json

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from agentcf.errors import BackendHTTPError, ConfigError, GatewayError, ReplayMiss
from agentcf.llm import (
    DEFAULT_ROUTES,
    ChatRequest,
    Gateway,
    HTTPBackend,
    Message,
    ReplayStore,
    Source,
    TaskKind,
    cache_key,
    route_model,
)


def echo(req):
    return req.messages[-1].content


def test_script_echo():
    gw = Gateway("script", responder=echo)
    resp = gw.complete(ChatRequest.single("hello there", TaskKind.SELECTION))
    assert resp.text == "hello there"
    assert resp.source is Source.SCRIPT


def test_record_then_replay(tmp_path):
    path = tmp_path / "replay.jsonl"
    rec = Gateway("record", store=ReplayStore(path), responder=lambda r: "answer é \n")
    req = ChatRequest.single("prompt", TaskKind.REFLECTION)
    first = rec.complete(req)
    assert first.source is Source.SCRIPT
    replay = Gateway("replay", store=ReplayStore(path))
    again = replay.complete(ChatRequest.single("prompt", TaskKind.REFLECTION))
    assert again.text == first.text
    assert again.source is Source.CACHE
    assert again.digest == first.digest


def test_replay_miss_carries_digest():
    gw = Gateway("replay")
    req = ChatRequest.single("never seen", TaskKind.SELECTION)
    with pytest.raises(ReplayMiss) as info:
        gw.complete(req)
    assert info.value.digest == gw.digest(req)


def test_route_model():
    table = {TaskKind.SELECTION: "m1", TaskKind.REFLECTION: "m2"}
    assert route_model(TaskKind.SELECTION, table) == "m1"
    with pytest.raises(ConfigError):
        route_model(TaskKind.AUXILIARY, table)
    assert DEFAULT_ROUTES[TaskKind.SELECTION] != DEFAULT_ROUTES[TaskKind.REFLECTION]


def test_gateway_config_problems():
    with pytest.raises(ConfigError):
        Gateway("script")
    with pytest.raises(ConfigError):
        Gateway("bogus")
    with pytest.raises(ConfigError):
        Gateway("script", responder=echo, routes={"selection": "m"})


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest([], TaskKind.SELECTION)
    with pytest.raises(ValueError):
        ChatRequest([Message("robot", "x")], TaskKind.SELECTION)
    assert ChatRequest.single("x", "selection").max_tokens == 512
    assert ChatRequest.single("x", "reflection").max_tokens == 1024


def test_cache_key_ignores_meta_but_not_bytes():
    a = ChatRequest.single("p", TaskKind.SELECTION, meta={"template": "x"})
    b = ChatRequest.single("p", TaskKind.SELECTION)
    assert cache_key("m", a) == cache_key("m", b)
    assert cache_key("m", a) != cache_key("m2", a)
    assert cache_key("m", a) != cache_key("m", ChatRequest.single("p ", TaskKind.SELECTION))
    assert cache_key("m", a) != cache_key("m", ChatRequest.single("p", TaskKind.SELECTION, temperature=0.5))


@given(st.lists(st.text(min_size=1), min_size=2, max_size=20, unique=True))
def test_cache_key_no_collisions(prompts):
    keys = {cache_key("m", ChatRequest.single(p, TaskKind.SELECTION)) for p in prompts}
    assert len(keys) == len(prompts)
    assert all(len(k) == 64 for k in keys)


def test_store_rejects_unknown_format(tmp_path):
    path = tmp_path / "r.jsonl"
    path.write_text(json.dumps({"format": 9, "digest": "x", "response": "y"}) + "\n")
    with pytest.raises(GatewayError):
        ReplayStore(path)


def test_map_preserves_order():
    gw = Gateway("script", responder=echo)
    reqs = [ChatRequest.single(f"p{k}", TaskKind.INFERENCE) for k in range(12)]
    assert [r.text for r in gw.map(reqs, jobs=4)] == [f"p{k}" for k in range(12)]


# HTTP backend


def _backend(statuses, monkeypatch, max_retries=3):
    monkeypatch.setenv("TEST_KEY", "secret")
    seen = []

    def handler(request):
        seen.append(request)
        status = statuses[min(len(seen) - 1, len(statuses) - 1)]
        if status == 200:
            return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}], "usage": {"t": 1}})
        return httpx.Response(status, text=f"status {status}")

    backend = HTTPBackend("http://llm.test/v1/chat", api_key_env="TEST_KEY", max_retries=max_retries,
                          transport=httpx.MockTransport(handler), sleep=lambda s: None)
    return backend, seen


@pytest.mark.parametrize("status", [429, 500, 503])
def test_http_retries_transient(status, monkeypatch):
    backend, seen = _backend([status, status, 200], monkeypatch)
    text, usage = backend("m", ChatRequest.single("hi", TaskKind.SELECTION))
    assert text == "ok" and usage == {"t": 1}
    assert len(seen) == 3
    body = json.loads(seen[0].content)
    assert body["model"] == "m" and body["messages"] == [{"role": "system", "content": "hi"}]
    assert seen[0].headers["authorization"] == "Bearer secret"


@pytest.mark.parametrize("status", [400, 401, 404])
def test_http_no_retry_on_client_error(status, monkeypatch):
    backend, seen = _backend([status], monkeypatch)
    with pytest.raises(BackendHTTPError) as info:
        backend("m", ChatRequest.single("hi", TaskKind.SELECTION))
    assert len(seen) == 1
    assert info.value.status == status and "status" in info.value.body


def test_http_gives_up_after_bounded_retries(monkeypatch):
    backend, seen = _backend([502], monkeypatch, max_retries=3)
    with pytest.raises(BackendHTTPError):
        backend("m", ChatRequest.single("hi", TaskKind.SELECTION))
    assert len(seen) == 4


def test_http_requires_key(monkeypatch):
    monkeypatch.delenv("MISSING_KEY", raising=False)
    backend = HTTPBackend("http://llm.test", api_key_env="MISSING_KEY")
    with pytest.raises(ConfigError):
        backend("m", ChatRequest.single("hi", TaskKind.SELECTION))


def test_record_mode_persists_live_response(tmp_path, monkeypatch):
    backend, seen = _backend([200], monkeypatch)
    gw = Gateway("record", store=ReplayStore(tmp_path / "s.jsonl"), backend=backend)
    req = ChatRequest.single("hi", TaskKind.SELECTION)
    assert gw.complete(req).source is Source.LIVE
    assert gw.complete(req).source is Source.CACHE
    assert len(seen) == 1
    assert len(ReplayStore(tmp_path / "s.jsonl")) == 1
