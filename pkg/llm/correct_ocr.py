#!/usr/bin/env python3
"""
LLM 기반 OCR 문단 보정
- Partial 문단: 로컬 참조와 함께 Prompt 1 → 태그 unwrap → 환각 trim
- Dangling 문단: 주변 문맥과 함께 Prompt 2 → 태그 unwrap → gate (조건을 못 넘으면 원문 유지)
- Intact 문단: LLM 을 부르지 않고 그대로 통과
"""

import logging
import re
from enum import Enum
from typing import Dict, List, Literal, NamedTuple, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from llm.client import CompletionRequest, CompletionService, ServiceError
from llm.prompts import PromptError, render_prompt1, render_prompt2, render_reference
from ocr.noise_filter import MatchStatus, Paragraph
from rag.query_reference import MatchCandidate, similarity

logger = logging.getLogger(__name__)

_TAG = re.compile(r"</?[A-Za-z][\w.:-]*(?:\s[^<>]*)?/?>")
_WRAPPED = re.compile(r"^\s*<([A-Za-z][\w.:-]*)(?:\s[^<>]*)?>(.*)</\1\s*>\s*$", re.DOTALL)
_WHITESPACE = re.compile(r"\s+")


class CorrectionStatus(str, Enum):
    INTACT = "Intact"
    CORRECTED_WITH_REFERENCE = "CorrectedWithReference"
    MINOR_CORRECTED = "MinorCorrected"
    REJECTED_KEPT_ORIGINAL = "RejectedKeptOriginal"


def word_count(text: str) -> int:
    return len(text.split())


class CorrectionResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    paragraph_id: str
    original: str
    llm_raw: Optional[str] = None
    final_text: str
    status: CorrectionStatus
    trim_similarity: Optional[float] = Field(default=None, ge=0, le=1)
    diagnostic: Optional[str] = None

    @model_validator(mode="after")
    def _status_contract(self) -> "CorrectionResult":
        if self.status == CorrectionStatus.INTACT:
            if self.final_text != self.original or self.llm_raw is not None:
                raise ValueError("Intact 결과는 원문 그대로이고 llm_raw 가 없어야 합니다")
        elif self.status == CorrectionStatus.REJECTED_KEPT_ORIGINAL:
            if self.final_text != self.original:
                raise ValueError("RejectedKeptOriginal 결과는 원문을 유지해야 합니다")
        elif self.status == CorrectionStatus.CORRECTED_WITH_REFERENCE:
            if abs(word_count(self.final_text) - word_count(self.original)) > 1:
                raise ValueError("참조 보정 결과의 단어 수는 원문 ±1 이어야 합니다")
        return self


class GatePolicy(BaseModel):
    """
    최소 맞춤법 보정 채택 조건

    길이 허용치는 max(max_length_delta, max_length_ratio × 원문 길이) 이고,
    단어 수가 같아야 한다는 조건은 끌 수 없다.
    """

    model_config = ConfigDict(frozen=True)

    min_similarity: float = Field(default=0.80, ge=0, le=1)
    max_length_delta: int = Field(default=3, ge=0)
    max_length_ratio: float = Field(default=0.05, ge=0, le=1)
    require_equal_word_count: Literal[True] = True

    def allowed_length_delta(self, original: str) -> float:
        return max(float(self.max_length_delta), self.max_length_ratio * len(original))


class GateDecision(NamedTuple):
    accepted: bool
    answer: str
    similarity: float
    length_delta: int
    word_delta: int
    reason: str


def unwrap_xml_tags(answer: str) -> str:
    """
    LLM 답변을 감싼 XML 태그 제거

    바깥을 통째로 감싼 태그 쌍은 안쪽 텍스트만 남을 때까지 벗기고,
    짝이 안 맞는 나머지 태그는 지운다. 태그가 없는 답변은 그대로 돌려준다.
    """
    if not _TAG.search(answer):
        return answer

    text = answer
    while True:
        match = _WRAPPED.match(text)
        if not match:
            break
        text = match.group(2)
    text = _TAG.sub(" ", text)
    return _WHITESPACE.sub(" ", text).strip()


def _trim_lengths(n: int, m: int) -> List[int]:
    return sorted({min(length, m) for length in (n - 1, n, n + 1) if length >= 1}, reverse=True)


def trim_hallucination(original: str, answer: str) -> Tuple[str, float]:
    """
    원문 단어 수 ±1 길이의 윈도우를 답변 위에서 밀며 원문과 가장 비슷한 구간만 남김

    Args:
        original: OCR 원문 문단
        answer: 태그를 벗긴 LLM 답변

    Returns:
        (trimmed, best_similarity) - 동점이면 긴 윈도우, 그다음 앞쪽 윈도우
    """
    orig_words = original.split()
    if not orig_words:
        raise ValueError("빈 원문은 trim 할 수 없습니다")
    ans_words = answer.split()
    if not ans_words:
        return "", 0.0

    target = " ".join(orig_words)
    best_text, best_score = "", -1.0
    for length in _trim_lengths(len(orig_words), len(ans_words)):
        for start in range(len(ans_words) - length + 1):
            candidate = " ".join(ans_words[start:start + length])
            score = similarity(target, candidate)
            if score > best_score:
                best_text, best_score = candidate, score
    return best_text, best_score


def gate_minor_correction(original: str, answer: str, policy: Optional[GatePolicy] = None) -> GateDecision:
    """유사도 / 길이 차 / 단어 수 세 조건을 모두 넘을 때만 채택"""
    policy = policy or GatePolicy()
    sim = similarity(original, answer)
    length_delta = abs(len(answer) - len(original))
    word_delta = word_count(answer) - word_count(original)

    reasons = []
    if sim < policy.min_similarity:
        reasons.append(f"similarity {sim:.3f} < {policy.min_similarity}")
    if length_delta > policy.allowed_length_delta(original):
        reasons.append(f"length delta {length_delta} > {policy.allowed_length_delta(original):g}")
    if word_delta != 0:
        reasons.append(f"word count changed by {word_delta:+d}")

    return GateDecision(
        accepted=not reasons,
        answer=answer,
        similarity=sim,
        length_delta=length_delta,
        word_delta=word_delta,
        reason="; ".join(reasons) or "accepted",
    )


def intact_result(paragraph: Paragraph) -> CorrectionResult:
    """완벽히 일치한 문단은 LLM 없이 그대로"""
    return CorrectionResult(
        paragraph_id=paragraph.paragraph_id,
        original=paragraph.text,
        final_text=paragraph.text,
        status=CorrectionStatus.INTACT,
    )


def request_id_for(paragraph_id: str, prompt_name: str) -> str:
    return f"{paragraph_id}#{prompt_name}"


class ParagraphCorrector:
    """문단 상태에 따라 Prompt 1 / Prompt 2 경로를 고르는 보정기"""

    def __init__(
        self,
        service: CompletionService,
        policy: Optional[GatePolicy] = None,
        model_id: str = "gpt-4o-mini",
        max_output_chars: int = 4000,
        reference_format: str = "text",
        templates: Optional[Dict[str, str]] = None,
    ):
        self.service = service
        self.policy = policy or GatePolicy()
        self.model_id = model_id
        self.max_output_chars = max_output_chars
        self.reference_format = reference_format
        self.templates = templates

    def _rejected(self, paragraph: Paragraph, diagnostic: str, llm_raw: Optional[str] = None) -> CorrectionResult:
        logger.info("원문 유지 %s: %s", paragraph.paragraph_id, diagnostic)
        return CorrectionResult(
            paragraph_id=paragraph.paragraph_id,
            original=paragraph.text,
            llm_raw=llm_raw,
            final_text=paragraph.text,
            status=CorrectionStatus.REJECTED_KEPT_ORIGINAL,
            diagnostic=diagnostic,
        )

    def _ask(self, paragraph: Paragraph, prompt: str, prompt_name: str) -> str:
        req = CompletionRequest(
            prompt=prompt,
            temperature=0.0,
            max_output_chars=self.max_output_chars,
            model_id=self.model_id,
            request_id=request_id_for(paragraph.paragraph_id, prompt_name),
        )
        return self.service.complete(req)

    def _with_reference(self, paragraph: Paragraph, match: Optional[MatchCandidate]) -> CorrectionResult:
        if match is None:
            raise ValueError(f"Partial 문단에 참조 영역이 없습니다: {paragraph.paragraph_id}")
        try:
            prompt = render_prompt1(
                render_reference(match.padded_text, self.reference_format), paragraph.text, self.templates
            )
        except PromptError as e:
            return self._rejected(paragraph, f"prompt error: {e}")
        try:
            raw = self._ask(paragraph, prompt, "prompt1")
        except ServiceError as e:
            logger.warning("LLM 호출 실패로 원문 유지: %s (%s)", paragraph.paragraph_id, e)
            return self._rejected(paragraph, f"service error: {e}")

        answer = unwrap_xml_tags(raw).strip()
        if not answer:
            return self._rejected(paragraph, "empty answer", raw)
        trimmed, score = trim_hallucination(paragraph.text, answer)
        if abs(word_count(trimmed) - paragraph.word_count) > 1:
            return self._rejected(paragraph, f"trimmed answer has {word_count(trimmed)} words", raw)

        return CorrectionResult(
            paragraph_id=paragraph.paragraph_id,
            original=paragraph.text,
            llm_raw=raw,
            final_text=trimmed,
            status=CorrectionStatus.CORRECTED_WITH_REFERENCE,
            trim_similarity=min(1.0, max(0.0, score)),
        )

    def _minor(self, paragraph: Paragraph, nearby: str) -> CorrectionResult:
        try:
            prompt = render_prompt2(paragraph.text, nearby, self.templates)
        except PromptError as e:
            return self._rejected(paragraph, f"prompt error: {e}")
        try:
            raw = self._ask(paragraph, prompt, "prompt2")
        except ServiceError as e:
            logger.warning("LLM 호출 실패로 원문 유지: %s (%s)", paragraph.paragraph_id, e)
            return self._rejected(paragraph, f"service error: {e}")

        decision = gate_minor_correction(paragraph.text, unwrap_xml_tags(raw).strip(), self.policy)
        if not decision.accepted:
            return self._rejected(paragraph, f"gate rejected: {decision.reason}", raw)
        return CorrectionResult(
            paragraph_id=paragraph.paragraph_id,
            original=paragraph.text,
            llm_raw=raw,
            final_text=decision.answer,
            status=CorrectionStatus.MINOR_CORRECTED,
        )

    def correct(
        self,
        paragraph: Paragraph,
        match: Optional[MatchCandidate] = None,
        nearby: str = "",
    ) -> CorrectionResult:
        """
        문단 하나를 보정

        Args:
            paragraph: classify_match 를 거친 문단
            match: Partial 문단의 참조 영역
            nearby: 같은 페이지의 앞뒤 문단 텍스트 (Prompt 2 문맥)

        Returns:
            CorrectionResult (서비스 오류는 RejectedKeptOriginal 로 대체)
        """
        if paragraph.status == MatchStatus.UNMATCHED:
            raise ValueError(f"분류되지 않은 문단입니다: {paragraph.paragraph_id}")
        if paragraph.status == MatchStatus.INTACT:
            return intact_result(paragraph)
        if paragraph.status == MatchStatus.PARTIAL:
            return self._with_reference(paragraph, match)
        return self._minor(paragraph, nearby)


def correct_paragraph(
    paragraph: Paragraph,
    match: Optional[MatchCandidate],
    nearby: str,
    policy: GatePolicy,
    service: CompletionService,
    **kwargs,
) -> CorrectionResult:
    return ParagraphCorrector(service, policy, **kwargs).correct(paragraph, match, nearby)


def nearby_context(paragraphs: List[Paragraph], index: int) -> str:
    """같은 페이지의 바로 앞/뒤 문단 텍스트"""
    parts = []
    if index > 0:
        parts.append(paragraphs[index - 1].text)
    if index + 1 < len(paragraphs):
        parts.append(paragraphs[index + 1].text)
    return "\n".join(parts)
