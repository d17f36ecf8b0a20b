"""Chat clients: request identity, cache behavior, HTTP retry policy."""

import hashlib

import pytest
import requests

from stratinv.chat import (
    TOKEN_ENV,
    CachingChatClient,
    ChatClient,
    ChatTurnRequest,
    HttpChatClient,
)
from stratinv.errors import ServiceError


def req(content="hello", **kw):
    return ChatTurnRequest(messages=(("user", content),), **kw)


def test_canonical_json_and_digest():
    r = ChatTurnRequest(
        messages=(("system", "be brief"), ("user", "hi")),
        temperature=0.5,
        seed=7,
        model="m1",
    )
    doc = (
        '{"messages":[{"content":"be brief","role":"system"},'
        '{"content":"hi","role":"user"}],"model":"m1","seed":7,'
        '"temperature":0.5}'
    )
    assert r.canonical_json() == doc
    assert r.digest() == hashlib.sha256(doc.encode()).hexdigest()
    assert r.text() == "be brief\nhi"


def test_digest_tracks_every_field():
    base = req()
    assert req().digest() == base.digest()
    assert req("other").digest() != base.digest()
    assert req(temperature=1.0).digest() != base.digest()
    assert req(seed=1).digest() != base.digest()
    assert req(model="x").digest() != base.digest()


class CountingClient(ChatClient):
    def __init__(self):
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        return f"completion #{self.calls}"


def test_cache_returns_first_completion_forever(tmp_path):
    inner = CountingClient()
    client = CachingChatClient(inner, tmp_path / "cache")
    first = client.complete(req())
    second = client.complete(req())
    assert first == second == "completion #1"
    assert inner.calls == 1
    assert (client.hits, client.misses) == (1, 1)
    files = list((tmp_path / "cache").iterdir())
    assert [f.name for f in files] == [f"{req().digest()}.txt"]


def test_cache_separates_requests(tmp_path):
    client = CachingChatClient(CountingClient(), tmp_path)
    a = client.complete(req("a"))
    b = client.complete(req("b"))
    assert a != b
    assert client.misses == 2 and client.hits == 0


def test_cache_survives_reopen(tmp_path):
    CachingChatClient(CountingClient(), tmp_path).complete(req())
    reopened = CachingChatClient(CountingClient(), tmp_path)
    assert reopened.complete(req()) == "completion #1"
    assert reopened.inner.calls == 0


class FakeResponse:
    def __init__(self, status_code, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload
        self.text = text

    def json(self):
        if self._payload is None:
            raise ValueError("not json")
        return self._payload


def ok(content="fine"):
    return FakeResponse(200, {"choices": [{"message": {"content": content}}]})


class FakeSession:
    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers})
        out = self.outcomes.pop(0)
        if isinstance(out, Exception):
            raise out
        return out


def http_client(outcomes, **kw):
    session = FakeSession(outcomes)
    kw.setdefault("backoff", 0.0)
    return HttpChatClient("http://unit.test/v1/", session=session, **kw), session


def test_http_success_shape(monkeypatch):
    monkeypatch.delenv(TOKEN_ENV, raising=False)
    client, session = http_client([ok("answer")])
    assert client.complete(req("q", seed=3)) == "answer"
    call = session.calls[0]
    assert call["url"] == "http://unit.test/v1/chat/completions"
    assert call["json"]["seed"] == 3
    assert call["json"]["messages"] == [{"role": "user", "content": "q"}]
    assert "Authorization" not in call["headers"]


def test_http_omits_seed_when_unset(monkeypatch):
    monkeypatch.delenv(TOKEN_ENV, raising=False)
    client, session = http_client([ok()])
    client.complete(req())
    assert "seed" not in session.calls[0]["json"]


def test_http_bearer_token_from_env(monkeypatch):
    monkeypatch.setenv(TOKEN_ENV, "sekrit")
    client, session = http_client([ok()])
    client.complete(req())
    assert session.calls[0]["headers"]["Authorization"] == "Bearer sekrit"


@pytest.mark.parametrize(
    "first",
    [
        FakeResponse(500, text="boom"),
        FakeResponse(429, text="slow down"),
        requests.ConnectionError("refused"),
    ],
)
def test_http_retries_transient_failures(first):
    client, session = http_client([first, ok("recovered")])
    assert client.complete(req()) == "recovered"
    assert len(session.calls) == 2


def test_http_client_error_fails_fast():
    client, session = http_client([FakeResponse(404, text="nope")])
    with pytest.raises(ServiceError, match="HTTP 404"):
        client.complete(req())
    assert len(session.calls) == 1


def test_http_gives_up_after_retries():
    client, session = http_client(
        [FakeResponse(500)] * 3, max_retries=2
    )
    with pytest.raises(ServiceError, match="giving up after 3 attempts"):
        client.complete(req())
    assert len(session.calls) == 3


def test_http_malformed_payload():
    client, _ = http_client([FakeResponse(200, {"choices": []})])
    with pytest.raises(ServiceError, match="malformed completion"):
        client.complete(req())
