import json
import threading

import pytest

from evalmine.errors import AuthError, MockExhausted, ReplayMismatch, TransportError
from evalmine.gateway import (
    BatchResult,
    CallableBackend,
    GatewayConfig,
    HttpBackend,
    LlmGateway,
    MockBackend,
    PromptTemplate,
    Transcript,
    TranscriptRecorder,
    WireFormat,
    mock_gateway,
)

from conftest import make_gateway


def replay_gateway(entries):
    transcript = Transcript()
    for prompt, response in entries:
        transcript.append(prompt, response)
    return mock_gateway(transcript)


def test_mock_replays_recorded_response():
    gw = replay_gateway([("P", "true")])
    assert gw.complete("P") == "true"


def test_mock_exhausted_on_second_call():
    gw = replay_gateway([("P", "true")])
    gw.complete("P")
    with pytest.raises(MockExhausted):
        gw.complete("P")


def test_mock_rejects_mismatched_prompt():
    gw = replay_gateway([("P", "true")])
    with pytest.raises(ReplayMismatch):
        gw.complete("Q")


def test_live_backend_missing_key_is_auth_error(monkeypatch):
    monkeypatch.delenv("EVALMINE_TEST_KEY", raising=False)
    config = GatewayConfig(base_url="http://localhost:1/v1", model_id="m",
                           api_key_env="EVALMINE_TEST_KEY")
    gw = LlmGateway(HttpBackend(config), config, sleep=lambda _: None)
    with pytest.raises(AuthError):
        gw.complete("hello")


def test_empty_prompt_rejected():
    gw = replay_gateway([("P", "x")])
    with pytest.raises(ValueError):
        gw.complete("")


def test_trailing_newline_stripped_only():
    gw = replay_gateway([("P", "  body \n")])
    assert gw.complete("P") == "  body "


def test_batch_aligned_with_prompts():
    gw = replay_gateway([("a", "1"), ("b", "2"), ("c", "3")])
    result = gw.complete_batch(["a", "b", "c"])
    assert result.responses == ["1", "2", "3"]
    assert result.ok


def test_batch_empty_rejected():
    gw = replay_gateway([("a", "1")])
    with pytest.raises(ValueError):
        gw.complete_batch([])


def test_batch_partial_failure_reported():
    def responder(prompt):
        if prompt == "bad":
            raise TransportError("boom")
        return "ok"

    gw = make_gateway(responder)
    result = gw.complete_batch(["good", "bad"])
    assert result.responses == ["ok", None]
    assert len(result.errors) == 1
    assert result.errors[0].index == 1
    assert "boom" in result.errors[0].error


def test_retries_transient_until_success():
    attempts = []

    def responder(prompt):
        attempts.append(prompt)
        if len(attempts) < 3:
            raise TransportError("flaky", transient=True)
        return "done"

    gw = make_gateway(responder, retry_limit=3)
    assert gw.complete("p") == "done"
    assert len(attempts) == 3


def test_retry_limit_exhausted():
    def responder(prompt):
        raise TransportError("down", transient=True)

    gw = make_gateway(responder, retry_limit=2)
    with pytest.raises(TransportError):
        gw.complete("p")


def test_non_transient_not_retried():
    attempts = []

    def responder(prompt):
        attempts.append(1)
        raise TransportError("bad request", transient=False)

    gw = make_gateway(responder, retry_limit=5)
    with pytest.raises(TransportError):
        gw.complete("p")
    assert len(attempts) == 1


def test_bounded_concurrency_under_batch():
    lock = threading.Lock()
    state = {"now": 0, "peak": 0}
    gate = threading.Event()

    def responder(prompt):
        with lock:
            state["now"] += 1
            state["peak"] = max(state["peak"], state["now"])
        gate.wait(0.05)
        with lock:
            state["now"] -= 1
        return "ok"

    gw = make_gateway(responder, max_in_flight=3, serial=False)
    result = gw.complete_batch([f"p{i}" for i in range(12)])
    assert result.ok
    assert state["peak"] <= 3


def test_record_then_replay_round_trip(tmp_path):
    recorder = TranscriptRecorder(CallableBackend(lambda p: f"echo:{p}"))
    config = GatewayConfig(base_url="mock://", model_id="m", max_in_flight=1)
    live = LlmGateway(recorder, config, sleep=lambda _: None)
    outputs = [live.complete(p) for p in ["one", "two", "three", "four", "five"]]
    path = tmp_path / "session.jsonl"
    recorder.save(path)

    replay = mock_gateway(Transcript.load(path))
    assert [replay.complete(p) for p in ["one", "two", "three", "four", "five"]] == outputs


def test_empty_transcript_replay_errors(tmp_path):
    recorder = TranscriptRecorder(CallableBackend(lambda p: "x"))
    path = tmp_path / "empty.jsonl"
    recorder.save(path)
    replay = mock_gateway(Transcript.load(path))
    with pytest.raises(MockExhausted):
        replay.complete("anything")


def test_transcript_file_is_line_delimited_with_hashes(tmp_path):
    transcript = Transcript()
    transcript.append("p1", "r1")
    transcript.append("p2", "r2")
    path = tmp_path / "t.jsonl"
    transcript.save(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2
    for line in lines:
        row = json.loads(line)
        assert set(row) == {"prompt_sha256", "prompt", "response"}


def test_template_render_and_checksum():
    template = PromptTemplate.from_text("t", "Hello <<<name>>>, rate <<<thing>>>.")
    assert template.placeholders == {"name", "thing"}
    assert len(template.checksum) == 64
    rendered = template.render(name="world", thing="{braces} % $")
    assert rendered == "Hello world, rate {braces} % $."


def test_template_missing_binding_rejected():
    template = PromptTemplate.from_text("t", "Hi <<<a>>>")
    with pytest.raises(KeyError):
        template.render()
    with pytest.raises(KeyError):
        template.render(a="x", b="y")


def test_shipped_templates_have_fixed_placeholders():
    assert PromptTemplate.load("leaderboard").placeholders == {"table_latex"}
    assert PromptTemplate.load("extraction").placeholders == {"target_model", "table_latex"}
    assert PromptTemplate.load("augmentation").placeholders == {
        "records", "table_latex", "context"}


def test_wire_format_payload_and_response():
    wire = WireFormat()
    payload = wire.build_payload("model-x", "hi")
    assert payload["model"] == "model-x"
    assert payload["messages"] == [{"role": "user", "content": "hi"}]
    assert payload["temperature"] == 0.0
    body = {"choices": [{"message": {"content": "out"}}]}
    assert wire.extract_text(body) == "out"


def test_wire_format_plain_style(tmp_path):
    path = tmp_path / "wire.json"
    path.write_text(json.dumps({
        "model_key": "engine", "prompt_key": "prompt", "prompt_style": "plain",
        "response_path": ["text"], "static_fields": {}}), encoding="utf-8")
    wire = WireFormat.from_file(path)
    assert wire.build_payload("e", "p") == {"engine": "e", "prompt": "p"}
    assert wire.extract_text({"text": "r"}) == "r"


def test_config_validation():
    with pytest.raises(Exception):
        GatewayConfig(base_url="x", model_id="m", max_in_flight=0)
    with pytest.raises(Exception):
        GatewayConfig(base_url="x", model_id="m", decoding="sampling")
