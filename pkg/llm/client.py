#!/usr/bin/env python3
"""
LLM completion 서비스
- HTTP 엔드포인트 ({model_id, prompt, temperature, max_output} → {text})
- OpenAI chat completions
- 녹화된 fixture 로 응답하는 mock / 입력을 그대로 돌려주는 identity mock
모든 서비스는 호출 수를 집계하고 동시 요청 수를 제한한다.
"""

import json
import logging
import threading
import time
from pathlib import Path
from typing import Callable, Dict, Literal, Optional, TypeVar, Union

import openai
import requests
from openai import OpenAI
from pydantic import BaseModel, ConfigDict, Field, field_validator

from llm.prompts import extract_input_text

logger = logging.getLogger(__name__)

T = TypeVar("T")

# 베트남어 (발음 구별 기호) 기준 토큰당 글자 수 하한
CHARS_PER_TOKEN = 2


class ServiceError(RuntimeError):
    def __init__(self, message: str, retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


class Timeout(ServiceError):
    pass


class RateLimited(ServiceError):
    pass


class FixtureMissing(LookupError):
    """scripted mock 에 request_id 에 해당하는 fixture 가 없음"""


class CompletionRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    prompt: str = Field(min_length=1)
    temperature: float = 0.0
    max_output_chars: int = Field(default=4000, gt=0)
    model_id: str
    request_id: str

    @field_validator("temperature")
    @classmethod
    def _zero_temperature(cls, value: float) -> float:
        if value != 0.0:
            raise ValueError("temperature 는 0 으로 고정입니다")
        return value


class ServiceSettings(BaseModel):
    """LLM 호출 설정 (api_key 는 덤프/지문에서 제외)"""

    model_config = ConfigDict(frozen=True)

    mode: Literal["live", "mock", "identity"] = "live"
    endpoint: Optional[str] = None
    api_key: Optional[str] = Field(default=None, exclude=True, repr=False)
    model_id: str = "gpt-4o-mini"
    fixtures_path: Optional[str] = None
    timeout: float = Field(default=60.0, gt=0)
    max_attempts: int = Field(default=5, ge=1, le=5)
    backoff: float = Field(default=0.5, ge=0)
    max_in_flight: int = Field(default=8, ge=1)
    max_output_chars: int = Field(default=4000, gt=0)


def call_with_retry(
    call: Callable[[], T],
    max_attempts: int = 5,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> T:
    """
    재시도 가능한 ServiceError 를 지수 backoff 로 재시도

    Args:
        call: 실제 호출
        max_attempts: 최대 시도 횟수 (첫 시도 포함)
        backoff: 첫 대기 시간 (초), 이후 2배씩 증가
        sleep: 대기 함수 (테스트에서 교체)

    Returns:
        call 의 반환값
    """
    last_error: Optional[ServiceError] = None
    for attempt in range(1, max_attempts + 1):
        try:
            return call()
        except ServiceError as e:
            if not e.retryable:
                raise
            last_error = e
            if attempt < max_attempts:
                delay = backoff * 2 ** (attempt - 1)
                logger.warning("LLM 호출 실패 (%d/%d), %.2fs 후 재시도: %s", attempt, max_attempts, delay, e)
                sleep(delay)
    assert last_error is not None
    raise last_error


class CompletionService:
    """호출 수 집계 + 동시 요청 제한 (스레드 안전)"""

    is_live = False

    def __init__(self, max_in_flight: int = 8):
        self._lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self.calls = 0
        self.successes = 0

    def complete(self, req: CompletionRequest) -> str:
        with self._lock:
            self.calls += 1
        with self._slots:
            answer = self._complete(req)
        with self._lock:
            self.successes += 1
        return answer

    def _complete(self, req: CompletionRequest) -> str:
        raise NotImplementedError


class HttpCompletionService(CompletionService):
    is_live = True

    def __init__(
        self,
        endpoint: str,
        api_key: Optional[str] = None,
        timeout: float = 60.0,
        max_attempts: int = 5,
        backoff: float = 0.5,
        max_in_flight: int = 8,
        session: Optional[requests.Session] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__(max_in_flight)
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.session = session or requests.Session()
        self._sleep = sleep

    def _post(self, req: CompletionRequest) -> str:
        payload = {
            "model_id": req.model_id,
            "prompt": req.prompt,
            "temperature": req.temperature,
            "max_output": req.max_output_chars,
            "request_id": req.request_id,
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self.session.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
        except requests.exceptions.Timeout as e:
            raise Timeout(f"LLM 응답 시간 초과: {e}") from e
        except requests.exceptions.RequestException as e:
            raise ServiceError(f"LLM 엔드포인트 연결 실패: {e}") from e

        if resp.status_code == 429:
            raise RateLimited("LLM 요청 한도 초과 (429)")
        if resp.status_code >= 500:
            raise ServiceError(f"LLM 서버 오류 ({resp.status_code})")
        if resp.status_code >= 400:
            raise ServiceError(f"LLM 요청 거부 ({resp.status_code}): {resp.text[:200]}", retryable=False)

        try:
            text = resp.json()["text"]
        except (ValueError, KeyError, TypeError) as e:
            raise ServiceError(f"LLM 응답 형식 오류: {e}", retryable=False) from e
        if not isinstance(text, str):
            raise ServiceError("LLM 응답의 text 가 문자열이 아닙니다", retryable=False)
        return text

    def _complete(self, req: CompletionRequest) -> str:
        return call_with_retry(lambda: self._post(req), self.max_attempts, self.backoff, self._sleep)


class OpenAICompletionService(CompletionService):
    """OpenAI chat completions (LLM_ENDPOINT 없이 OPENAI_API_KEY 만 있을 때)"""

    is_live = True

    def __init__(
        self,
        api_key: str,
        timeout: float = 60.0,
        max_attempts: int = 5,
        backoff: float = 0.5,
        max_in_flight: int = 8,
        client: Optional[OpenAI] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__(max_in_flight)
        # 재시도는 call_with_retry 가 담당
        self.client = client or OpenAI(api_key=api_key, timeout=timeout, max_retries=0)
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._sleep = sleep

    def _chat(self, req: CompletionRequest) -> str:
        try:
            response = self.client.chat.completions.create(
                model=req.model_id,
                messages=[{"role": "user", "content": req.prompt}],
                max_tokens=max(1, req.max_output_chars // CHARS_PER_TOKEN),
                temperature=req.temperature,
            )
        except openai.APITimeoutError as e:
            raise Timeout(f"OpenAI 응답 시간 초과: {e}") from e
        except openai.RateLimitError as e:
            raise RateLimited(f"OpenAI 요청 한도 초과: {e}") from e
        except openai.APIConnectionError as e:
            raise ServiceError(f"OpenAI 연결 실패: {e}") from e
        except openai.APIStatusError as e:
            raise ServiceError(f"OpenAI 오류 ({e.status_code}): {e}", retryable=e.status_code >= 500) from e
        return response.choices[0].message.content or ""

    def _complete(self, req: CompletionRequest) -> str:
        return call_with_retry(lambda: self._chat(req), self.max_attempts, self.backoff, self._sleep)


class ScriptedMockService(CompletionService):
    def __init__(self, fixtures: Dict[str, str], max_in_flight: int = 8):
        super().__init__(max_in_flight)
        self.fixtures = dict(fixtures)

    @classmethod
    def from_file(cls, path: Union[str, Path], max_in_flight: int = 8) -> "ScriptedMockService":
        with open(path, "r", encoding="utf-8") as f:
            return cls(json.load(f), max_in_flight=max_in_flight)

    def _complete(self, req: CompletionRequest) -> str:
        try:
            return self.fixtures[req.request_id]
        except KeyError:
            raise FixtureMissing(f"fixture 가 없습니다: {req.request_id}") from None


class IdentityMockService(CompletionService):
    """프롬프트의 <input-text> 내용을 그대로 돌려줌"""

    def _complete(self, req: CompletionRequest) -> str:
        return extract_input_text(req.prompt) or ""


class RecordingService(CompletionService):
    """live 서비스 응답을 fixture 파일로 녹화 (mock-record)"""

    def __init__(self, inner: CompletionService, max_in_flight: int = 8):
        super().__init__(max_in_flight)
        self.inner = inner
        self.is_live = inner.is_live
        self.recorded: Dict[str, str] = {}

    def _complete(self, req: CompletionRequest) -> str:
        answer = self.inner.complete(req)
        with self._lock:
            self.recorded[req.request_id] = answer
        return answer

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(dict(sorted(self.recorded.items())), f, ensure_ascii=False, indent=2)


def build_service(settings: ServiceSettings) -> CompletionService:
    """
    설정에 맞는 completion 서비스 생성

    live 모드: LLM_ENDPOINT 가 있으면 HTTP, 없고 API key 만 있으면 OpenAI
    """
    if settings.mode == "identity":
        return IdentityMockService(settings.max_in_flight)
    if settings.mode == "mock":
        if not settings.fixtures_path:
            raise ServiceError("mock 모드에는 fixture 파일이 필요합니다", retryable=False)
        return ScriptedMockService.from_file(settings.fixtures_path, settings.max_in_flight)

    if settings.endpoint:
        return HttpCompletionService(
            settings.endpoint,
            api_key=settings.api_key,
            timeout=settings.timeout,
            max_attempts=settings.max_attempts,
            backoff=settings.backoff,
            max_in_flight=settings.max_in_flight,
        )
    if settings.api_key:
        return OpenAICompletionService(
            settings.api_key,
            timeout=settings.timeout,
            max_attempts=settings.max_attempts,
            backoff=settings.backoff,
            max_in_flight=settings.max_in_flight,
        )
    raise ServiceError("LLM_ENDPOINT 또는 LLM_API_KEY 가 설정되어 있지 않습니다", retryable=False)
