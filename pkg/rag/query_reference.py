#!/usr/bin/env python3
"""
참조 영역 탐색 스크립트
OCR 문단(query)과 가장 비슷한 epub 코퍼스의 텍스트 윈도우를 Levenshtein 유사도로 찾고,
찾은 윈도우에 앞뒤 padding 을 붙여 LLM 보정용 로컬 참조로 돌려준다.
"""

import logging
from typing import Iterator, List, Optional, Tuple

import Levenshtein
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ocr.noise_filter import MatchStatus, Paragraph
from rag.build_corpus import ReferenceCorpus, normalize_text

logger = logging.getLogger(__name__)

INTACT_THRESHOLD = 0.995
SHORT_LEN_WORDS = 4

# (similarity, block_index, start, end)
_Scored = Tuple[float, int, int, int]


class EmptyQuery(ValueError):
    pass


class SearchConfig(BaseModel):
    """
    윈도우 탐색 설정

    adaptive_block 이 켜져 있으면 윈도우 길이는 query 길이이고 block_size 는 쓰지 않는다.
    코퍼스 전체가 exact_search_max_chars 이하이면 모든 윈도우를 stride 1 로 전수 탐색한다.
    """

    model_config = ConfigDict(frozen=True)

    block_size: int = Field(default=800, gt=0)
    stride: Optional[int] = Field(default=None, gt=0)
    found_threshold: float = Field(default=0.60, ge=0, le=1)
    pad: int = Field(default=200, ge=0)
    adaptive_block: bool = True
    refine_top_k: int = Field(default=3, ge=1)
    exact_search_max_chars: int = Field(default=2000, ge=0)

    @model_validator(mode="after")
    def _stride_within_block(self) -> "SearchConfig":
        if not self.adaptive_block and self.stride is not None and self.stride > self.block_size:
            raise ValueError(f"stride({self.stride}) 는 block_size({self.block_size}) 이하여야 합니다")
        return self

    def window_length(self, query: str) -> int:
        return len(query) if self.adaptive_block else self.block_size

    def window_stride(self, window: int) -> int:
        return min(self.stride or max(1, window // 2), window)

    def window_lengths(self, window: int) -> range:
        return range(max(1, window - self.pad), window + self.pad + 1)


class MatchCandidate(BaseModel):
    model_config = ConfigDict(frozen=True)

    block_id: str
    block_index: int = Field(ge=0)
    span: Tuple[int, int]
    similarity: float = Field(ge=0, le=1)
    window_text: str
    padded_text: str
    padded_span: Tuple[int, int]


def similarity(a: str, b: str) -> float:
    """1 − levenshtein(a, b) / max(|a|, |b|), 둘 다 비어 있으면 1.0"""
    if not a and not b:
        return 1.0
    return 1.0 - Levenshtein.distance(a, b) / max(len(a), len(b))


def _better(a: _Scored, b: Optional[_Scored]) -> bool:
    # 동점이면 앞 블록, 낮은 시작 위치, 짧은 윈도우 순
    if b is None or a[0] > b[0]:
        return True
    if a[0] < b[0]:
        return False
    return (a[1], a[2], a[3] - a[2]) < (b[1], b[2], b[3] - b[2])


def _spans(text_len: int, length: int) -> Iterator[Tuple[int, int]]:
    if text_len < length:
        yield 0, text_len
        return
    for start in range(text_len - length + 1):
        yield start, start + length


def _exhaustive_scan(query: str, corpus: ReferenceCorpus, lengths: range) -> Optional[_Scored]:
    best: Optional[_Scored] = None
    for bi, block in enumerate(corpus.blocks):
        text = block.text
        clamped_done = False
        for length in lengths:
            if len(text) < length:
                # 블록보다 긴 길이는 모두 같은 (블록 전체) 윈도우
                if clamped_done:
                    continue
                clamped_done = True
            for start, end in _spans(len(text), length):
                scored = (similarity(query, text[start:end]), bi, start, end)
                if _better(scored, best):
                    best = scored
    return best


def _coarse_windows(text_len: int, window: int, stride: int) -> List[Tuple[int, int]]:
    starts = list(range(0, max(text_len - window, 0) + 1, stride))
    spans = [(s, min(s + window, text_len)) for s in starts]
    last_end = spans[-1][1]
    if last_end < text_len:
        # 마지막 stride 뒤에 남는 꼬리 윈도우 (더 짧음)
        spans.append((starts[-1] + stride, text_len))
    return spans


def _refine(query: str, text: str, bi: int, seed: _Scored, window: int, stride: int, lengths: range) -> _Scored:
    best = seed
    n = len(text)
    length = min(window, n)

    # 1) 시작 위치를 stride 1 로 이동
    lo = max(0, seed[2] - stride)
    hi = min(n - length, seed[2] + stride)
    for start in range(lo, hi + 1):
        scored = (similarity(query, text[start:start + length]), bi, start, start + length)
        if _better(scored, best):
            best = scored

    # 2) 찾은 시작 위치에서 길이를 stride 1 로 조정
    start = best[2]
    for length in lengths:
        end = start + length
        if end > n:
            break
        scored = (similarity(query, text[start:end]), bi, start, end)
        if _better(scored, best):
            best = scored
    return best


def _two_phase_scan(query: str, corpus: ReferenceCorpus, cfg: SearchConfig) -> Optional[_Scored]:
    window = cfg.window_length(query)
    stride = cfg.window_stride(window)

    coarse: List[_Scored] = []
    for bi, block in enumerate(corpus.blocks):
        text = block.text
        for start, end in _coarse_windows(len(text), window, stride):
            coarse.append((similarity(query, text[start:end]), bi, start, end))
    if not coarse:
        return None

    coarse.sort(key=lambda s: (-s[0], s[1], s[2], s[3] - s[2]))
    best: Optional[_Scored] = None
    for seed in coarse[: cfg.refine_top_k]:
        text = corpus.blocks[seed[1]].text
        refined = _refine(query, text, seed[1], seed, window, stride, cfg.window_lengths(window))
        if _better(refined, best):
            best = refined
    return best


def best_window(query: str, corpus: ReferenceCorpus, cfg: SearchConfig) -> Optional[MatchCandidate]:
    """
    임계값과 무관하게 가장 비슷한 윈도우를 찾음

    Args:
        query: OCR 문단 텍스트 (NFC + 공백 정규화 후 탐색)
        corpus: 참조 코퍼스
        cfg: 탐색 설정

    Returns:
        padding 을 붙인 MatchCandidate (코퍼스가 비어 있으면 None)
    """
    query = normalize_text(query)
    if not query:
        raise EmptyQuery("빈 query 로는 참조 영역을 찾을 수 없습니다")

    if corpus.total_chars <= cfg.exact_search_max_chars:
        window = cfg.window_length(query)
        scored = _exhaustive_scan(query, corpus, cfg.window_lengths(window))
    else:
        scored = _two_phase_scan(query, corpus, cfg)
    if scored is None:
        return None

    score, bi, start, end = scored
    block = corpus.blocks[bi]
    pad_start = max(0, start - cfg.pad)
    pad_end = min(len(block.text), end + cfg.pad)
    return MatchCandidate(
        block_id=block.block_id,
        block_index=bi,
        span=(start, end),
        similarity=min(1.0, max(0.0, score)),
        window_text=block.text[start:end],
        padded_text=block.text[pad_start:pad_end],
        padded_span=(pad_start, pad_end),
    )


def locate(query: str, corpus: ReferenceCorpus, cfg: SearchConfig) -> Optional[MatchCandidate]:
    """가장 좋은 윈도우가 found_threshold 이상이면 Found(MatchCandidate), 아니면 None(NotFound)"""
    candidate = best_window(query, corpus, cfg)
    if candidate is None or candidate.similarity < cfg.found_threshold:
        return None
    return candidate


def classify_match(
    paragraph: Paragraph,
    result: Optional[MatchCandidate],
    intact_threshold: float = INTACT_THRESHOLD,
    short_len: int = SHORT_LEN_WORDS,
) -> Paragraph:
    """
    탐색 결과로 문단 상태를 결정

    Intact: 거의 완벽히 일치 / Partial: 불완전 일치 (참조로 LLM 보정) /
    Dangling: 못 찾았거나 짧은 문단 (참조 없이 최소 맞춤법 보정)
    """
    if paragraph.status != MatchStatus.UNMATCHED:
        raise ValueError(f"이미 분류된 문단입니다: {paragraph.paragraph_id} ({paragraph.status.value})")

    similarity_value = result.similarity if result is not None else None
    if result is None or paragraph.word_count <= short_len:
        status = MatchStatus.DANGLING
    elif result.similarity >= intact_threshold:
        status = MatchStatus.INTACT
    else:
        status = MatchStatus.PARTIAL
    return paragraph.model_copy(update={"status": status, "similarity": similarity_value})
