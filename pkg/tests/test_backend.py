from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from toolsim.backend import (
    DEFAULT_TEMPERATURE,
    BackendConfig,
    CompletionRequest,
    ConfigError,
    FixtureFormatError,
    FixtureMissError,
    LiveBackend,
    ProviderBinding,
    ProviderRejectedError,
    RecordingBackend,
    RetriesExhaustedError,
    RetryPolicy,
    Role,
    Sampling,
    ScriptedBackend,
    TransientProviderError,
    UnboundRoleError,
    CallbackBackend,
    load_fixtures,
    normalize_prompt,
    open_backend,
    prompt_digest,
    truncate_at_stop,
)


def fixture_file(tmp_path, entries):
    path = tmp_path / "fx.json"
    path.write_text(json.dumps(entries), encoding="utf-8")
    return path


def entry(role, prompt, response):
    return {"role": role.value, "prompt_digest": prompt_digest(role, prompt), "response": response}


def test_scripted_applies_stop_markers(tmp_path):
    prompt = "Question: holidays in Japan?"
    text = 'Thought: t\nAction: getHolidays\nAction Input: {"country": "Japan"}\nObservation: fake'
    backend = ScriptedBackend.from_file(fixture_file(tmp_path, [entry(Role.ASSISTANT_AGENT, prompt, text)]))
    out = backend.complete(CompletionRequest.for_role(Role.ASSISTANT_AGENT, prompt, stop_markers=("Observation:",)))
    assert out == 'Thought: t\nAction: getHolidays\nAction Input: {"country": "Japan"}\n'


def test_scripted_miss_names_role_and_digest(tmp_path):
    backend = ScriptedBackend.from_file(fixture_file(tmp_path, []))
    with pytest.raises(FixtureMissError) as info:
        backend.complete(CompletionRequest.for_role(Role.JUDGE, "unknown"))
    assert info.value.role is Role.JUDGE
    assert info.value.digest == prompt_digest(Role.JUDGE, "unknown")


def test_fixture_keys_ignore_trailing_whitespace(tmp_path):
    backend = ScriptedBackend.from_file(fixture_file(tmp_path, [entry(Role.USER_AGENT, "a\nb", "ok")]))
    assert backend.complete(CompletionRequest.for_role(Role.USER_AGENT, "a  \nb\n\n")) == "ok"
    assert normalize_prompt("x \n y\t\n") == "x\n y"


def test_fixture_keys_separate_roles(tmp_path):
    backend = ScriptedBackend.from_file(fixture_file(tmp_path, [entry(Role.USER_AGENT, "p", "user")]))
    with pytest.raises(FixtureMissError):
        backend.complete(CompletionRequest.for_role(Role.JUDGE, "p"))


def test_empty_fixture_file_loads_as_empty(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("", encoding="utf-8")
    assert load_fixtures(path) == {}
    assert len(ScriptedBackend.from_file(path)) == 0


@pytest.mark.parametrize(
    "content",
    ["{not json", '{"role": "judge"}', '[{"role": "nobody", "prompt_digest": "x", "response": "y"}]', '[{"role": "judge"}]'],
)
def test_malformed_fixture_files(tmp_path, content):
    path = tmp_path / "bad.json"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(FixtureFormatError):
        load_fixtures(path)


def test_truncate_cuts_at_earliest_marker():
    assert truncate_at_stop("a STOP b END c", ("END", "STOP")) == "a "
    assert truncate_at_stop("no markers", ("X",)) == "no markers"


def test_request_validation():
    with pytest.raises(ValueError):
        CompletionRequest(Role.JUDGE, "")
    with pytest.raises(ValueError):
        Sampling(temperature=3.0)
    with pytest.raises(ValueError):
        CompletionRequest(Role.JUDGE, "p", stop_markers=("",))
    assert CompletionRequest.for_role(Role.USER_AGENT, "p").sampling.temperature == DEFAULT_TEMPERATURE[Role.USER_AGENT]


def test_recording_round_trips_through_scripted(tmp_path):
    recorder = RecordingBackend(CallbackBackend(lambda r: r.prompt.upper()))
    for prompt in ("one", "two"):
        recorder.complete(CompletionRequest.for_role(Role.EXECUTOR_AGENT, prompt))
    path = tmp_path / "rec.json"
    recorder.dump(path)
    replay = ScriptedBackend.from_file(path)
    assert replay.complete(CompletionRequest.for_role(Role.EXECUTOR_AGENT, "two")) == "TWO"


# --- live backend --------------------------------------------------------


def config(**kw):
    binding = ProviderBinding("http://provider.invalid/v1/chat/completions", "model-x", "TOOLSIM_TEST_KEY")
    return BackendConfig({r: binding for r in Role}, **kw)


class FlakyTransport:
    def __init__(self, failures):
        self.failures = failures
        self.calls = 0

    def __call__(self, binding, payload, api_key):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransientProviderError("HTTP 503")
        return "answer Observation: leaked"


def test_retry_succeeds_on_third_attempt_with_backoff():
    transport, sleeps = FlakyTransport(2), []
    backend = LiveBackend(config(retry=RetryPolicy(3, 500)), transport, sleeps.append, env={"TOOLSIM_TEST_KEY": "k"})
    out = backend.complete(CompletionRequest.for_role(Role.ASSISTANT_AGENT, "p", stop_markers=("Observation:",)))
    assert out == "answer "
    assert transport.calls == 3
    assert sleeps == [0.5, 1.0]


def test_retry_exhaustion():
    transport = FlakyTransport(5)
    backend = LiveBackend(config(retry=RetryPolicy(3, 0)), transport, lambda s: None, env={"TOOLSIM_TEST_KEY": "k"})
    with pytest.raises(RetriesExhaustedError) as info:
        backend.complete(CompletionRequest.for_role(Role.JUDGE, "p"))
    assert info.value.attempts == 3 and transport.calls == 3


def test_rejection_is_not_retried():
    calls = []

    def transport(binding, payload, key):
        calls.append(1)
        raise ProviderRejectedError(401, "bad key")

    backend = LiveBackend(config(), transport, lambda s: None, env={"TOOLSIM_TEST_KEY": "k"})
    with pytest.raises(ProviderRejectedError):
        backend.complete(CompletionRequest.for_role(Role.JUDGE, "p"))
    assert len(calls) == 1


def test_missing_credential_variable():
    backend = LiveBackend(config(), FlakyTransport(0), env={})
    with pytest.raises(ConfigError, match="TOOLSIM_TEST_KEY"):
        backend.complete(CompletionRequest.for_role(Role.JUDGE, "p"))


def test_unbound_role():
    binding = ProviderBinding("http://x.invalid", "m")
    backend = LiveBackend(BackendConfig({Role.JUDGE: binding}), FlakyTransport(0), env={})
    with pytest.raises(UnboundRoleError):
        backend.complete(CompletionRequest.for_role(Role.USER_AGENT, "p"))


def test_concurrency_limit_is_respected():
    lock, state = threading.Lock(), {"active": 0, "peak": 0}

    def transport(binding, payload, key):
        with lock:
            state["active"] += 1
            state["peak"] = max(state["peak"], state["active"])
        time.sleep(0.02)
        with lock:
            state["active"] -= 1
        return "ok"

    backend = LiveBackend(config(concurrency_limit=2), transport, env={"TOOLSIM_TEST_KEY": "k"})
    threads = [
        threading.Thread(target=backend.complete, args=(CompletionRequest.for_role(Role.JUDGE, f"p{i}"),))
        for i in range(8)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert state["peak"] == 2


def test_config_from_dict_default_binding_and_errors():
    cfg = BackendConfig.from_dict(
        {"bindings": {"default": {"endpoint": "http://a", "model": "m"}, "judge": {"endpoint": "http://b", "model": "j"}}}
    )
    assert cfg.binding(Role.JUDGE).model == "j"
    assert cfg.binding(Role.USER_AGENT).model == "m"
    with pytest.raises(ConfigError):
        BackendConfig.from_dict({"bindings": {"critic": {"endpoint": "http://a", "model": "m"}}})
    with pytest.raises(ConfigError):
        BackendConfig.from_dict({})


def test_open_backend_selectors(tmp_path):
    with pytest.raises(ConfigError):
        open_backend("scripted")
    with pytest.raises(ConfigError):
        open_backend(f"scripted:{tmp_path / 'missing.json'}")
    with pytest.raises(ConfigError):
        open_backend("carrier-pigeon:x")


class _StubLLM(BaseHTTPRequestHandler):
    seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        _StubLLM.seen.append((self.headers.get("Authorization"), body))
        if body["messages"][0]["content"] == "reject":
            self.send_response(400)
            self.end_headers()
            self.wfile.write(b"bad request")
            return
        payload = json.dumps({"choices": [{"message": {"content": "Thought: hi\nObservation: x"}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


def test_live_backend_against_local_stub_server(tmp_path, monkeypatch):
    monkeypatch.setenv("TOOLSIM_STUB_KEY", "secret")
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubLLM)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        url = f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
        path = tmp_path / "live.json"
        path.write_text(json.dumps({"bindings": {"default": {"endpoint": url, "model": "stub", "credential_env": "TOOLSIM_STUB_KEY"}}}))
        backend = open_backend(f"live:{path}")
        out = backend.complete(CompletionRequest.for_role(Role.ASSISTANT_AGENT, "hello", stop_markers=("Observation:",)))
        assert out == "Thought: hi\n"
        auth, body = _StubLLM.seen[-1]
        assert auth == "Bearer secret"
        assert body["model"] == "stub" and body["stop"] == ["Observation:"] and body["temperature"] == 0.0
        with pytest.raises(ProviderRejectedError):
            backend.complete(CompletionRequest.for_role(Role.JUDGE, "reject"))
    finally:
        server.shutdown()
        server.server_close()
