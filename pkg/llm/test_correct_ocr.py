import random

import pytest

from conftest import rect_polygon
from llm.client import CompletionService, IdentityMockService, ScriptedMockService, ServiceError
from llm.correct_ocr import (
    CorrectionResult,
    CorrectionStatus,
    GatePolicy,
    ParagraphCorrector,
    correct_paragraph,
    gate_minor_correction,
    nearby_context,
    request_id_for,
    trim_hallucination,
    unwrap_xml_tags,
)
from ocr.ingest import OcrLine
from ocr.noise_filter import MatchStatus, group_paragraphs
from rag.query_reference import MatchCandidate

WORDS = ["tôi", "đi", "học", "về", "nhà", "trời", "mưa", "to", "quá", "a", "b", "ngày", "xưa"]


def _paragraph(text: str, status: MatchStatus, index: int = 0):
    line = OcrLine(text=text, polygon=rect_polygon(0, 0, 100, 20), offset=index, page_id="page_0001")
    paragraph = group_paragraphs([line])[0]
    return paragraph.model_copy(update={"status": status, "index": index})


def _match(text: str) -> MatchCandidate:
    return MatchCandidate(
        block_id="0000:c.xhtml",
        block_index=0,
        span=(0, len(text)),
        similarity=0.8,
        window_text=text,
        padded_text=text,
        padded_span=(0, len(text)),
    )


class FailingService(CompletionService):
    def _complete(self, req):
        raise ServiceError("endpoint unreachable", retryable=False)


def test_trim_worked_example():
    trimmed, score = trim_hallucination("qulck bruwn fox jnnps", "The quick brown fox jumps over the lazy dog.")
    assert trimmed == "quick brown fox jumps"
    assert score == pytest.approx(1 - 4 / 21)


def test_trim_answer_missing_last_word():
    trimmed, _ = trim_hallucination("tôi đi học về nhà", "tôi đi học về")
    assert trimmed == "tôi đi học về"


def test_trim_identity_and_edge_cases():
    assert trim_hallucination("Ngày xưa có", "Ngày xưa có") == ("Ngày xưa có", 1.0)
    assert trim_hallucination("một", "   ") == ("", 0.0)
    with pytest.raises(ValueError):
        trim_hallucination(" ", "answer")


def test_trim_prefers_longest_window_on_ties():
    # 모든 윈도우가 0 점이면 가장 긴 (2단어) 윈도우의 첫 위치
    assert trim_hallucination("a", "b c d") == ("b c", 0.0)


@pytest.mark.parametrize(
    "answer, expected",
    [
        ("<input-text>quick fox</input-text>", "quick fox"),
        ("quick fox", "quick fox"),
        ("<a><b>x</b></a>", "x"),
        ("  <answer type='final'>Xin chào</answer>\n", "Xin chào"),
        ("quick <br/> fox", "quick fox"),
        ("trước </input-text>sau", "trước sau"),
        ("1 < 2 and 3 > 2", "1 < 2 and 3 > 2"),
    ],
)
def test_unwrap_xml_tags(answer, expected):
    assert unwrap_xml_tags(answer) == expected


def test_gate_examples():
    assert gate_minor_correction("Toi di hoc ve nha", "Toi di hoc ve nha").accepted
    assert gate_minor_correction("Toi di hoc ve nha", "Tôi di hoc ve nha").accepted

    extra = gate_minor_correction("Toi di hoc ve nha", "Toi di hoc ve nha roi")
    assert not extra.accepted
    assert extra.word_delta == 1
    assert "word count" in extra.reason

    # 단어 수는 같지만 전혀 다른 답
    assert not gate_minor_correction("Toi di hoc ve nha", "Anh an com o dau").accepted


def test_gate_length_allowance_scales_with_length():
    policy = GatePolicy()
    assert policy.allowed_length_delta("short") == 3
    assert policy.allowed_length_delta("x" * 200) == pytest.approx(10)
    with pytest.raises(ValueError):
        GatePolicy(require_equal_word_count=False)
    with pytest.raises(ValueError):
        GatePolicy(min_similarity=1.5)


def _random_text(rng: random.Random, low: int = 1, high: int = 12) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(low, high)))


def _mutate(rng: random.Random, text: str) -> str:
    chars = list(text)
    for _ in range(rng.randint(1, 3)):
        i = rng.randrange(len(chars))
        if chars[i] != " ":
            chars[i] = rng.choice("aăâeêoôơuư")
    return "".join(chars)


def test_gate_fuzz():
    """단어 수가 바뀌면 항상 거부, 동일 답변은 항상 채택, 채택된 답변은 세 조건을 모두 만족"""
    rng = random.Random(42)
    policy = GatePolicy()
    for _ in range(10_000):
        original = _random_text(rng)
        assert gate_minor_correction(original, original, policy).accepted

        words = original.split()
        if rng.random() < 0.5:
            changed = " ".join(words + [rng.choice(WORDS)])
        elif len(words) > 1:
            changed = " ".join(words[:-1])
        else:
            changed = f"{words[0]} {words[0]}"
        assert not gate_minor_correction(original, changed, policy).accepted

        candidate = _mutate(rng, original)
        decision = gate_minor_correction(original, candidate, policy)
        if decision.accepted:
            assert decision.similarity >= policy.min_similarity
            assert abs(len(candidate) - len(original)) <= policy.allowed_length_delta(original)
            assert len(candidate.split()) == len(original.split())


def test_trim_fuzz():
    rng = random.Random(7)
    for _ in range(10_000):
        original = _random_text(rng)
        n = len(original.split())

        assert trim_hallucination(original, original) == (original, 1.0)

        answer = _random_text(rng, 1, 20)
        m = len(answer.split())
        trimmed, score = trim_hallucination(original, answer)
        allowed = {min(length, m) for length in (n - 1, n, n + 1) if length >= 1}
        assert len(trimmed.split()) in allowed
        assert 0.0 <= score <= 1.0
        assert trimmed in answer

        prefix = _random_text(rng, 0, 4)
        suffix = _random_text(rng, 0, 4)
        wrapped = " ".join(part for part in (prefix, original, suffix) if part)
        assert trim_hallucination(original, wrapped)[0] == original


def test_intact_paragraph_makes_no_call():
    service = IdentityMockService()
    paragraph = _paragraph("Ngày xưa có một người tiều phu", MatchStatus.INTACT)
    result = correct_paragraph(paragraph, None, "", GatePolicy(), service)
    assert result.status == CorrectionStatus.INTACT
    assert result.final_text == paragraph.text
    assert result.llm_raw is None
    assert service.calls == 0


def test_partial_paragraph_with_identity_mock_keeps_text():
    paragraph = _paragraph("Ngay xua co mot nguoi tieu phu", MatchStatus.PARTIAL)
    result = ParagraphCorrector(IdentityMockService()).correct(paragraph, _match("Ngày xưa có một người tiều phu"))
    assert result.status == CorrectionStatus.CORRECTED_WITH_REFERENCE
    assert result.final_text == paragraph.text
    assert result.trim_similarity == 1.0


def test_partial_paragraph_trims_wrapped_answer():
    paragraph = _paragraph("qulck bruwn fox jnnps", MatchStatus.PARTIAL)
    fixtures = {
        request_id_for(paragraph.paragraph_id, "prompt1"): (
            "<input-text>The quick brown fox jumps over the lazy dog.</input-text>"
        )
    }
    result = ParagraphCorrector(ScriptedMockService(fixtures)).correct(paragraph, _match("quick brown fox jumps"))
    assert result.final_text == "quick brown fox jumps"
    assert result.llm_raw.startswith("<input-text>")


def test_partial_paragraph_empty_answer_is_rejected():
    paragraph = _paragraph("một hai ba bốn năm", MatchStatus.PARTIAL)
    service = ScriptedMockService({request_id_for(paragraph.paragraph_id, "prompt1"): "<answer></answer>"})
    result = ParagraphCorrector(service).correct(paragraph, _match("một hai ba bốn năm"))
    assert result.status == CorrectionStatus.REJECTED_KEPT_ORIGINAL
    assert result.final_text == paragraph.text


def test_dangling_paragraph_gate():
    paragraph = _paragraph("Toi di hoc ve nha", MatchStatus.DANGLING)
    rid = request_id_for(paragraph.paragraph_id, "prompt2")

    rejected = ParagraphCorrector(ScriptedMockService({rid: "Tôi đã đi học về nhà"})).correct(paragraph)
    assert rejected.status == CorrectionStatus.REJECTED_KEPT_ORIGINAL
    assert rejected.final_text == paragraph.text
    assert "gate rejected" in rejected.diagnostic

    accepted = ParagraphCorrector(ScriptedMockService({rid: "Tôi di hoc ve nha"})).correct(paragraph)
    assert accepted.status == CorrectionStatus.MINOR_CORRECTED
    assert accepted.final_text == "Tôi di hoc ve nha"


def test_service_error_keeps_original():
    paragraph = _paragraph("Toi di hoc ve nha", MatchStatus.DANGLING)
    result = ParagraphCorrector(FailingService()).correct(paragraph)
    assert result.status == CorrectionStatus.REJECTED_KEPT_ORIGINAL
    assert result.final_text == paragraph.text
    assert result.diagnostic.startswith("service error")


def test_precondition_errors():
    corrector = ParagraphCorrector(IdentityMockService())
    with pytest.raises(ValueError):
        corrector.correct(_paragraph("một hai", MatchStatus.UNMATCHED))
    with pytest.raises(ValueError):
        corrector.correct(_paragraph("một hai ba bốn năm", MatchStatus.PARTIAL), None)


def test_prompt_error_keeps_original():
    paragraph = _paragraph("chữ <input-text> lạ", MatchStatus.DANGLING)
    service = IdentityMockService()
    result = ParagraphCorrector(service).correct(paragraph)
    assert result.status == CorrectionStatus.REJECTED_KEPT_ORIGINAL
    assert service.calls == 0


def test_result_status_contract():
    with pytest.raises(ValueError):
        CorrectionResult(paragraph_id="p", original="a", final_text="b", status=CorrectionStatus.INTACT)
    with pytest.raises(ValueError):
        CorrectionResult(
            paragraph_id="p", original="a b c", final_text="a", status=CorrectionStatus.CORRECTED_WITH_REFERENCE
        )


def test_nearby_context():
    paragraphs = [_paragraph(text, MatchStatus.DANGLING, i) for i, text in enumerate(["đầu", "giữa", "cuối"])]
    assert nearby_context(paragraphs, 0) == "giữa"
    assert nearby_context(paragraphs, 1) == "đầu\ncuối"
    assert nearby_context(paragraphs[:1], 0) == ""
