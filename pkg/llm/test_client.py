import json
from types import SimpleNamespace
from typing import List

import httpx
import openai
import pytest
import requests

from llm.client import (
    CHARS_PER_TOKEN,
    CompletionRequest,
    FixtureMissing,
    HttpCompletionService,
    IdentityMockService,
    OpenAICompletionService,
    RateLimited,
    RecordingService,
    ScriptedMockService,
    ServiceError,
    ServiceSettings,
    Timeout,
    build_service,
    call_with_retry,
)
from llm.prompts import render_prompt2


def _request(prompt: str = "hello", request_id: str = "page_0001/p000#prompt2") -> CompletionRequest:
    return CompletionRequest(prompt=prompt, model_id="test-model", request_id=request_id)


class FakeResponse:
    def __init__(self, status_code: int, payload=None, text: str = ""):
        self.status_code = status_code
        self._payload = payload
        self.text = text

    def json(self):
        if self._payload is None:
            raise ValueError("no json")
        return self._payload


class FakeSession:
    """응답(또는 예외)을 순서대로 돌려주는 requests.Session 대역"""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.payloads: List[dict] = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.payloads.append(json)
        outcome = self.outcomes.pop(0) if len(self.outcomes) > 1 else self.outcomes[0]
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


class SleepRecorder:
    def __init__(self):
        self.delays: List[float] = []

    def __call__(self, seconds: float) -> None:
        self.delays.append(seconds)


def test_temperature_is_fixed_at_zero():
    with pytest.raises(ValueError):
        CompletionRequest(prompt="x", temperature=0.7, model_id="m", request_id="r")
    with pytest.raises(ValueError):
        CompletionRequest(prompt="", model_id="m", request_id="r")


def test_identity_mock_echoes_input_text():
    service = IdentityMockService()
    assert service.complete(_request(render_prompt2("abc"))) == "abc"
    assert service.complete(_request("no slot")) == ""
    assert service.calls == 2 and service.successes == 2


def test_scripted_mock_lookup(tmp_path):
    path = tmp_path / "fixtures.json"
    path.write_text(json.dumps({"page_0001/p000#prompt2": "đã sửa"}), encoding="utf-8")
    service = ScriptedMockService.from_file(path)
    assert service.complete(_request()) == "đã sửa"
    with pytest.raises(FixtureMissing):
        service.complete(_request(request_id="page_0001/p001#prompt1"))
    assert service.calls == 2 and service.successes == 1


def test_http_service_retries_rate_limit_then_succeeds():
    session = FakeSession([FakeResponse(429), FakeResponse(200, {"text": "xin chào"})])
    sleep = SleepRecorder()
    service = HttpCompletionService("http://llm.local/complete", session=session, sleep=sleep)
    assert service.complete(_request()) == "xin chào"
    assert sleep.delays == [0.5]
    assert session.payloads[0] == {
        "model_id": "test-model",
        "prompt": "hello",
        "temperature": 0.0,
        "max_output": 4000,
        "request_id": "page_0001/p000#prompt2",
    }


def test_http_service_gives_up_after_five_attempts():
    session = FakeSession([requests.exceptions.ConnectionError("refused")])
    sleep = SleepRecorder()
    service = HttpCompletionService("http://llm.local/complete", session=session, sleep=sleep)
    with pytest.raises(ServiceError):
        service.complete(_request())
    assert len(session.payloads) == 5
    assert sleep.delays == [0.5, 1.0, 2.0, 4.0]
    assert service.calls == 1 and service.successes == 0


def test_http_service_timeout_and_server_errors_are_retryable():
    session = FakeSession([requests.exceptions.Timeout("slow"), FakeResponse(503), FakeResponse(200, {"text": "ok"})])
    sleep = SleepRecorder()
    service = HttpCompletionService("http://llm.local/complete", session=session, sleep=sleep)
    assert service.complete(_request()) == "ok"
    assert sleep.delays == [0.5, 1.0]


@pytest.mark.parametrize(
    "response",
    [FakeResponse(400, text="bad request"), FakeResponse(200, None), FakeResponse(200, {"answer": "x"})],
)
def test_http_client_errors_are_not_retried(response):
    session = FakeSession([response])
    sleep = SleepRecorder()
    service = HttpCompletionService("http://llm.local/complete", session=session, sleep=sleep)
    with pytest.raises(ServiceError) as excinfo:
        service.complete(_request())
    assert excinfo.value.retryable is False
    assert len(session.payloads) == 1 and sleep.delays == []


def test_call_with_retry_surfaces_last_error():
    attempts = []

    def always_limited():
        attempts.append(1)
        raise RateLimited("429")

    sleep = SleepRecorder()
    with pytest.raises(RateLimited):
        call_with_retry(always_limited, max_attempts=3, backoff=1.0, sleep=sleep)
    assert len(attempts) == 3
    assert sleep.delays == [1.0, 2.0]


def _fake_openai(create):
    return SimpleNamespace(chat=SimpleNamespace(completions=SimpleNamespace(create=create)))


def test_openai_service_returns_message_content():
    seen = {}

    def create(**kwargs):
        seen.update(kwargs)
        return SimpleNamespace(choices=[SimpleNamespace(message=SimpleNamespace(content="kết quả"))])

    service = OpenAICompletionService("sk-test", client=_fake_openai(create), sleep=SleepRecorder())
    assert service.complete(_request()) == "kết quả"
    assert seen["model"] == "test-model"
    assert seen["temperature"] == 0.0
    assert seen["messages"] == [{"role": "user", "content": "hello"}]
    # 글자 수 한도 4000 → 토큰 한도
    assert seen["max_tokens"] == 4000 // CHARS_PER_TOKEN


def test_openai_token_budget_is_at_least_one():
    seen = {}

    def create(**kwargs):
        seen.update(kwargs)
        return SimpleNamespace(choices=[SimpleNamespace(message=SimpleNamespace(content="ok"))])

    service = OpenAICompletionService("sk-test", client=_fake_openai(create), sleep=SleepRecorder())
    req = CompletionRequest(prompt="hello", model_id="test-model", request_id="r", max_output_chars=1)
    assert service.complete(req) == "ok"
    assert seen["max_tokens"] == 1


def test_openai_timeout_is_retried():
    calls = []

    def create(**kwargs):
        calls.append(1)
        if len(calls) == 1:
            raise openai.APITimeoutError(request=httpx.Request("POST", "https://api.openai.com/v1/chat/completions"))
        return SimpleNamespace(choices=[SimpleNamespace(message=SimpleNamespace(content="ok"))])

    sleep = SleepRecorder()
    service = OpenAICompletionService("sk-test", client=_fake_openai(create), sleep=sleep)
    assert service.complete(_request()) == "ok"
    assert sleep.delays == [0.5]


def test_recording_service_saves_sorted_fixtures(tmp_path):
    recorder = RecordingService(IdentityMockService())
    recorder.complete(_request(render_prompt2("b"), request_id="page_0002/p000#prompt2"))
    recorder.complete(_request(render_prompt2("a"), request_id="page_0001/p000#prompt2"))
    path = tmp_path / "out" / "fixtures.json"
    recorder.save(path)

    saved = json.loads(path.read_text(encoding="utf-8"))
    assert list(saved) == ["page_0001/p000#prompt2", "page_0002/p000#prompt2"]
    assert ScriptedMockService.from_file(path).complete(_request(request_id="page_0002/p000#prompt2")) == "b"


def test_build_service_modes(tmp_path):
    assert isinstance(build_service(ServiceSettings(mode="identity")), IdentityMockService)

    fixtures = tmp_path / "f.json"
    fixtures.write_text("{}", encoding="utf-8")
    assert isinstance(build_service(ServiceSettings(mode="mock", fixtures_path=str(fixtures))), ScriptedMockService)

    http = build_service(ServiceSettings(endpoint="http://llm.local/complete", api_key="k"))
    assert isinstance(http, HttpCompletionService) and http.is_live
    assert isinstance(build_service(ServiceSettings(api_key="sk-test")), OpenAICompletionService)


def test_build_service_without_credentials():
    with pytest.raises(ServiceError) as excinfo:
        build_service(ServiceSettings())
    assert excinfo.value.retryable is False
    with pytest.raises(ServiceError):
        build_service(ServiceSettings(mode="mock"))


def test_api_key_is_not_dumped():
    settings = ServiceSettings(api_key="secret")
    assert "api_key" not in settings.model_dump()
    assert "secret" not in repr(settings)
    assert issubclass(Timeout, ServiceError)
