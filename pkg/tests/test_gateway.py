import itertools
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from metaharvest.gateway import (
    AuthError,
    ChatRequest,
    ConfigError,
    EmbeddingVector,
    Gateway,
    HashEmbedder,
    HTTPBackend,
    MockBackend,
    ProviderResponseError,
    RateLimitError,
    TokenBucket,
    TransientError,
    live_gateway,
    mock_gateway,
    prompt_hash,
)
from metaharvest.store import Store


def req(text="hello", **kw):
    return ChatRequest(model="m", messages=(("user", text),), **kw)


def test_chat_request_validation():
    with pytest.raises(ValueError):
        ChatRequest(model="m", messages=())
    with pytest.raises(ValueError):
        ChatRequest(model="m", messages=(("assistant", "x"),))
    with pytest.raises(ValueError):
        ChatRequest(model="m", messages=(("user", "x"),), temperature=-1)
    with pytest.raises(ValueError):
        ChatRequest(model="m", messages=(("user", "x"),), max_tokens=0)


def test_mock_table_lookup():
    r = req("What is the title?")
    gw = mock_gateway(table={prompt_hash(r.messages): "X"})
    assert gw.complete(r) == "X"
    with pytest.raises(ProviderResponseError):
        gw.complete(req("something else"))


def test_mock_table_before_responder():
    r = req("a")
    gw = mock_gateway(table={r.prompt_hash: "from table"}, responder=lambda q: "from responder")
    assert gw.complete(r) == "from table"
    assert gw.complete(req("b")) == "from responder"


class Scripted:
    """Backend that raises the scripted errors in order, then answers."""

    endpoint = "scripted://"

    def __init__(self, *errors):
        self.errors = list(errors)
        self.calls = 0

    def chat(self, r):
        self.calls += 1
        if self.errors:
            raise self.errors.pop(0)
        return "ok"

    def embed(self, text, model):
        return [1.0, 0.0]


def test_retry_after_rate_limit():
    sleeps = []
    backend = Scripted(RateLimitError("429"))
    gw = Gateway(backend, sleep=sleeps.append, backoff=0.5)
    assert gw.complete(req()) == "ok"
    assert backend.calls == 2
    assert sleeps == [0.5]


def test_exponential_backoff_then_give_up():
    sleeps = []
    backend = Scripted(*[TransientError("503")] * 10)
    gw = Gateway(backend, sleep=sleeps.append, backoff=1.0, max_retries=3)
    with pytest.raises(TransientError):
        gw.complete(req())
    assert sleeps == [1.0, 2.0, 4.0]
    assert backend.calls == 4


def test_auth_error_not_retried():
    sleeps = []
    backend = Scripted(AuthError("401"))
    gw = Gateway(backend, sleep=sleeps.append)
    with pytest.raises(AuthError):
        gw.complete(req())
    assert backend.calls == 1 and sleeps == []


def test_cache_hit_means_no_network(tmp_path):
    store = Store(tmp_path)
    backend = MockBackend(responder=lambda r: "answer")
    gw = Gateway(backend, store=store, model="mock")
    first = gw.complete_entry(req())
    assert not first.cached and backend.calls == 1
    # a fresh gateway on the same store is served from disk
    backend2 = MockBackend(responder=lambda r: "different")
    gw2 = Gateway(backend2, store=store, model="mock")
    second = gw2.complete_entry(req())
    assert second.cached and second.text == "answer" and second.created_at == first.created_at
    assert backend2.calls == 0 and gw2.network_calls == 0 and gw2.cache_hits == 1


def test_cache_key_ignores_task_but_not_model_or_temperature():
    gw = mock_gateway()
    base = req()
    assert gw.cache_key(base) == gw.cache_key(req(task="extract"))
    assert gw.cache_key(base) != gw.cache_key(req(temperature=0.7))
    assert gw.cache_key(base) != gw.cache_key(ChatRequest(model="other", messages=base.messages))


def test_in_memory_cache_without_store():
    backend = MockBackend(responder=lambda r: "x")
    gw = Gateway(backend)
    gw.complete(req())
    gw.complete(req())
    assert backend.calls == 1 and gw.cache_hits == 1


def test_embed_deterministic_and_unit():
    gw = mock_gateway()
    a = gw.embed("oak distribution in Europe")
    b = mock_gateway().embed("oak distribution in Europe")
    assert a.values == b.values
    assert len(a) == 256
    assert np.linalg.norm(a.as_array()) == pytest.approx(1.0, abs=1e-12)


def test_embed_no_collisions_over_100_strings():
    emb = HashEmbedder()
    texts = [f"dataset number {i} about {w}" for i, w in zip(range(100), itertools.cycle(["oaks", "birds", "tides"]))]
    vecs = np.array([emb(t) for t in texts])
    sims = vecs @ vecs.T
    off = sims[~np.eye(len(texts), dtype=bool)]
    assert off.max() < 1 - 1e-6


def test_embed_similar_texts_closer():
    emb = HashEmbedder()
    a, b, c = (np.array(emb(t)) for t in ["camera trap images of mammals", "camera trap images of mammals p2", "sea floor sediment"])
    assert a @ b > a @ c


def test_embed_empty_text_rejected():
    with pytest.raises(ValueError):
        mock_gateway().embed("   ")


def test_embedding_vector_finite():
    with pytest.raises(ValueError):
        EmbeddingVector((1.0, float("nan")), "m")


def test_token_bucket_waits():
    now = [0.0]
    sleeps = []

    def sleep(s):
        sleeps.append(s)
        now[0] += s

    bucket = TokenBucket(60, burst=2, clock=lambda: now[0], sleep=sleep)
    for _ in range(4):
        bucket.acquire()
    assert sum(sleeps) == pytest.approx(2.0)


def test_live_gateway_config_precedence():
    with pytest.raises(ConfigError, match="METAHARVEST_LLM_API_KEY"):
        live_gateway(env={"METAHARVEST_LLM_BASE_URL": "http://x"})
    with pytest.raises(ConfigError, match="METAHARVEST_LLM_BASE_URL"):
        live_gateway(env={"METAHARVEST_LLM_API_KEY": "k"})
    env = {"METAHARVEST_LLM_BASE_URL": "http://env", "METAHARVEST_LLM_API_KEY": "k", "METAHARVEST_LLM_MODEL": "env-model"}
    gw = live_gateway(env=env, manifest={"model": "manifest-model", "embed_model": "manifest-embed"})
    assert gw.model == "env-model" and gw.embed_model == "manifest-embed" and gw.endpoint == "http://env"
    assert live_gateway(env=env, model="arg-model").model == "arg-model"


# --------------------------------------------------------------------------
# HTTP backend against a local OpenAI-style server


class FakeProvider(BaseHTTPRequestHandler):
    script: list = []
    seen: list = []

    def log_message(self, *args):
        pass

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        FakeProvider.seen.append((self.path, self.headers.get("Authorization"), body))
        status = FakeProvider.script.pop(0) if FakeProvider.script else 200
        if status != 200:
            self.send_response(status)
            self.end_headers()
            return
        if self.path.endswith("/embeddings"):
            payload = {"data": [{"embedding": [0.6, 0.8]}]}
        elif body["messages"][-1]["content"] == "broken":
            payload = {"unexpected": True}
        else:
            payload = {"choices": [{"message": {"content": "echo: " + body["messages"][-1]["content"]}}]}
        data = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


@pytest.fixture
def provider():
    FakeProvider.script, FakeProvider.seen = [], []
    srv = ThreadingHTTPServer(("127.0.0.1", 0), FakeProvider)
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    yield f"http://127.0.0.1:{srv.server_address[1]}/v1"
    srv.shutdown()


def test_http_chat_and_embed(provider):
    gw = Gateway(HTTPBackend(provider, "secret"), model="m", sleep=lambda s: None)
    assert gw.complete(req("hi")) == "echo: hi"
    path, auth, body = FakeProvider.seen[0]
    assert path == "/v1/chat/completions" and auth == "Bearer secret"
    assert body["temperature"] == 0.0 and body["messages"] == [{"role": "user", "content": "hi"}]
    vec = gw.embed("text", "emb")
    assert vec.values == (0.6, 0.8) and vec.model == "emb"


def test_http_429_then_200(provider):
    FakeProvider.script = [429]
    backend = HTTPBackend(provider, "k")
    gw = Gateway(backend, model="m", sleep=lambda s: None)
    assert gw.complete(req("x")) == "echo: x"
    assert backend.calls == 2


def test_http_401_no_retry(provider):
    FakeProvider.script = [401, 200]
    backend = HTTPBackend(provider, "bad")
    gw = Gateway(backend, model="m", sleep=lambda s: None)
    with pytest.raises(AuthError):
        gw.complete(req("x"))
    assert backend.calls == 1


def test_http_malformed_response(provider):
    gw = Gateway(HTTPBackend(provider, "k"), model="m", sleep=lambda s: None)
    with pytest.raises(ProviderResponseError):
        gw.complete(req("broken"))
