"""
OCR 평가 지표
NED, CER, WER, BLEU, 단어 단위 precision / recall / F1 과 페이지별 + macro 집계
"""

import math
from collections import Counter
from typing import Iterable, List, Sequence, Tuple

import Levenshtein
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from rag.build_corpus import normalize_text

BLEU_MAX_ORDER = 4
SCORE_FIELDS = ["ned", "cer", "wer", "bleu", "precision", "recall", "f1"]


class EmptyCorpus(ValueError):
    pass


class PageScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    page_id: str
    ned: float = Field(ge=0, le=1)
    cer: float = Field(ge=0)
    wer: float = Field(ge=0)
    bleu: float = Field(ge=0, le=1)
    precision: float = Field(ge=0, le=1)
    recall: float = Field(ge=0, le=1)
    f1: float = Field(ge=0, le=1)
    # 참조가 비어 있는데 예측이 있는 페이지 (CER/WER 분모를 1 로 둠)
    degenerate: bool = False

    @model_validator(mode="after")
    def _f1_is_harmonic_mean(self) -> "PageScore":
        if self.precision + self.recall == 0 and self.f1 != 0:
            raise ValueError("precision + recall == 0 이면 f1 은 0 이어야 합니다")
        return self


class CorpusReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    per_page: Tuple[PageScore, ...]
    macro: PageScore
    page_count: int = Field(ge=1)


def edit_distance(a: Sequence, b: Sequence) -> int:
    """삽입/삭제/치환 비용 1 의 Levenshtein 거리 (문자열 또는 단어 리스트)"""
    return Levenshtein.distance(a, b)


def ned(pred: str, ref: str) -> float:
    longest = max(len(pred), len(ref))
    if longest == 0:
        return 0.0
    return edit_distance(pred, ref) / longest


def _error_rate(pred: Sequence, ref: Sequence) -> float:
    if not ref:
        return float(len(pred))
    return edit_distance(pred, ref) / len(ref)


def cer(pred: str, ref: str) -> float:
    """edit_distance / 참조 길이 (참조가 비면 |pred| / 1)"""
    return _error_rate(pred, ref)


def wer(pred: str, ref: str) -> float:
    return _error_rate(pred.split(), ref.split())


def _ngrams(words: List[str], n: int) -> Counter:
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def bleu(pred: str, ref: str) -> float:
    """
    문장 단위 BLEU

    예측에 n-gram 이 있는 차수(최대 4)만 균등 가중치로 쓰고, smoothing 은 하지 않는다
    (clip 된 precision 이 하나라도 0 이면 0).
    """
    pred_words, ref_words = pred.split(), ref.split()
    if not pred_words:
        return 1.0 if not ref_words else 0.0

    orders = range(1, min(BLEU_MAX_ORDER, len(pred_words)) + 1)
    log_precision = 0.0
    for n in orders:
        pred_counts = _ngrams(pred_words, n)
        ref_counts = _ngrams(ref_words, n)
        clipped = sum(min(count, ref_counts[gram]) for gram, count in pred_counts.items())
        if clipped == 0:
            return 0.0
        log_precision += math.log(clipped / sum(pred_counts.values()))

    brevity = 1.0
    if len(pred_words) < len(ref_words):
        brevity = math.exp(1 - len(ref_words) / len(pred_words))
    return min(1.0, brevity * math.exp(log_precision / len(orders)))


def word_prf(pred: str, ref: str) -> Tuple[float, float, float]:
    """단어 multiset 교집합 기반 precision / recall / F1"""
    pred_counts, ref_counts = Counter(pred.split()), Counter(ref.split())
    if not pred_counts and not ref_counts:
        return 1.0, 1.0, 1.0

    overlap = sum((pred_counts & ref_counts).values())
    precision = overlap / sum(pred_counts.values()) if pred_counts else 0.0
    recall = overlap / sum(ref_counts.values()) if ref_counts else 0.0
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def score_page(page_id: str, pred: str, ref: str) -> PageScore:
    pred, ref = normalize_text(pred), normalize_text(ref)
    precision, recall, f1 = word_prf(pred, ref)
    return PageScore(
        page_id=page_id,
        ned=ned(pred, ref),
        cer=cer(pred, ref),
        wer=wer(pred, ref),
        bleu=bleu(pred, ref),
        precision=precision,
        recall=recall,
        f1=f1,
        degenerate=not ref and bool(pred),
    )


def score_corpus(pairs: Iterable[Tuple[str, str, str]]) -> CorpusReport:
    """
    페이지별 점수 + macro 평균

    Args:
        pairs: (page_id, pred, ref) 목록

    Returns:
        page_id 순서로 정렬된 CorpusReport
    """
    pairs = sorted(pairs, key=lambda pair: pair[0])
    if not pairs:
        raise EmptyCorpus("평가할 페이지가 없습니다")
    page_ids = [pair[0] for pair in pairs]
    if len(set(page_ids)) != len(page_ids):
        raise ValueError("page_id 가 중복되었습니다")

    per_page = tuple(score_page(*pair) for pair in pairs)
    df = pd.DataFrame([score.model_dump() for score in per_page])
    means = df[SCORE_FIELDS].mean()
    macro = PageScore(
        page_id="macro",
        degenerate=bool(df["degenerate"].any()),
        **{name: float(means[name]) for name in SCORE_FIELDS},
    )
    return CorpusReport(per_page=per_page, macro=macro, page_count=len(per_page))
