#!/usr/bin/env python3
"""
휴리스틱 노이즈 필터
워터마크/도장처럼 크게 기울어진 라인과 그림 영역 안의 텍스트를 제거하고,
남은 라인을 offset 순서 + 세로 간격으로 문단으로 묶는다.
"""

import json
import logging
from enum import Enum
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from shapely.geometry import box

from ocr.ingest import (
    BBox,
    DegeneratePolygon,
    OcrLine,
    OcrPage,
    SchemaViolation,
    line_bbox,
    line_skew_angle,
)
from rag.build_corpus import normalize_text

logger = logging.getLogger(__name__)


class PageMismatch(ValueError):
    pass


class FilterConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(default=15.0, gt=0, le=90)
    figure_overlap_min: float = Field(default=0.5, ge=0, le=1)
    figure_min_confidence: float = Field(default=0.0, ge=0, le=1)
    para_gap_factor: float = Field(default=1.5, gt=0)


class FigureRegion(BaseModel):
    """외부 figure detector 결과 (이 프로젝트에서는 읽기만 한다)"""

    model_config = ConfigDict(frozen=True)

    page_id: str
    bbox: Tuple[float, float, float, float]
    confidence: float = Field(ge=0, le=1)
    label: str = "figure"

    @field_validator("bbox")
    @classmethod
    def _positive_area(cls, value: Tuple[float, float, float, float]) -> Tuple[float, float, float, float]:
        x0, y0, x1, y1 = value
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"면적이 0 인 figure bbox: {value}")
        return value


class MatchStatus(str, Enum):
    UNMATCHED = "Unmatched"
    INTACT = "Intact"
    PARTIAL = "Partial"
    DANGLING = "Dangling"


class Paragraph(BaseModel):
    model_config = ConfigDict(frozen=True)

    page_id: str
    index: int = Field(ge=0)
    lines: Tuple[OcrLine, ...] = Field(min_length=1)
    text: str
    bbox: BBox
    status: MatchStatus = MatchStatus.UNMATCHED
    similarity: Optional[float] = Field(default=None, ge=0, le=1)

    @property
    def paragraph_id(self) -> str:
        return f"{self.page_id}/p{self.index:03d}"

    @property
    def word_count(self) -> int:
        return len(self.text.split())


class FilterReport(NamedTuple):
    raw_chars: int
    kept_chars: int


class PageFilterResult(NamedTuple):
    page_id: str
    kept: List[OcrLine]
    skewed: List[OcrLine]
    in_figure: List[OcrLine]
    paragraphs: List[Paragraph]
    report: FilterReport


def remove_skewed_lines(lines: Sequence[OcrLine], cfg: FilterConfig) -> Tuple[List[OcrLine], List[OcrLine]]:
    """
    기울기 β 가 alpha 를 넘는 라인(워터마크, 도장)을 제거

    Args:
        lines: 입력 라인
        cfg: 필터 설정

    Returns:
        (kept, removed) - 각 리스트 안의 순서는 입력 순서 유지
    """
    kept: List[OcrLine] = []
    removed: List[OcrLine] = []
    for line in lines:
        try:
            beta = line_skew_angle(line)
        except DegeneratePolygon as e:
            logger.warning("degenerate polygon 을 노이즈로 분류: page=%s %s", line.page_id, e)
            removed.append(line)
            continue
        (kept if beta <= cfg.alpha else removed).append(line)
    return kept, removed


def _in_figure(bb: BBox, figures: Sequence[FigureRegion], overlap_min: float) -> bool:
    if bb.area == 0:
        # 면적 0 인 라인은 figure 안에 완전히 들어있을 때만 제거
        return any(
            f.bbox[0] <= bb.min_x and f.bbox[1] <= bb.min_y and bb.max_x <= f.bbox[2] and bb.max_y <= f.bbox[3]
            for f in figures
        )
    line_box = box(*bb)
    for figure in figures:
        overlap = line_box.intersection(box(*figure.bbox)).area
        if overlap / bb.area >= overlap_min:
            return True
    return False


def remove_figure_text(
    lines: Sequence[OcrLine],
    figures: Sequence[FigureRegion],
    cfg: FilterConfig,
) -> Tuple[List[OcrLine], List[OcrLine]]:
    """그림 bbox 와 figure_overlap_min 이상 겹치는 라인을 제거"""
    page_ids = {line.page_id for line in lines}
    for figure in figures:
        if page_ids and figure.page_id not in page_ids:
            raise PageMismatch(f"다른 페이지의 figure 입니다: {figure.page_id} (라인: {sorted(page_ids)})")

    usable = [f for f in figures if f.confidence >= cfg.figure_min_confidence]
    if not usable:
        return list(lines), []

    kept: List[OcrLine] = []
    removed: List[OcrLine] = []
    for line in lines:
        (removed if _in_figure(line_bbox(line), usable, cfg.figure_overlap_min) else kept).append(line)
    return kept, removed


def _make_paragraph(page_id: str, index: int, lines: List[OcrLine]) -> Paragraph:
    bbox = line_bbox(lines[0])
    for line in lines[1:]:
        bbox = bbox.union(line_bbox(line))
    text = normalize_text(" ".join(line.text for line in lines))
    return Paragraph(page_id=page_id, index=index, lines=tuple(lines), text=text, bbox=bbox)


def group_paragraphs(lines: Sequence[OcrLine], cfg: Optional[FilterConfig] = None) -> List[Paragraph]:
    """
    offset 순서로 정렬한 라인을 문단으로 묶음

    연속한 두 라인의 세로 간격이 para_gap_factor × (라인 높이 중앙값) 을 넘으면 문단을 나눈다.

    Args:
        lines: 필터를 통과한 라인 (offset 중복 없음)
        cfg: para_gap_factor 를 가진 필터 설정

    Returns:
        offset 순서의 문단 리스트
    """
    cfg = cfg or FilterConfig()
    ordered = sorted(lines, key=lambda line: line.offset)
    if not ordered:
        return []

    boxes = [line_bbox(line) for line in ordered]
    median_height = float(np.median([bb.height for bb in boxes]))
    max_gap = cfg.para_gap_factor * median_height

    groups: List[List[OcrLine]] = [[ordered[0]]]
    for prev_box, cur_box, line in zip(boxes, boxes[1:], ordered[1:]):
        gap = cur_box.min_y - prev_box.max_y
        if gap > max_gap:
            groups.append([line])
        else:
            groups[-1].append(line)

    page_id = ordered[0].page_id
    return [_make_paragraph(page_id, i, group) for i, group in enumerate(groups)]


def _visible_chars(text: str) -> int:
    return sum(1 for ch in text if not ch.isspace())


def filter_report(page_raw: OcrPage, kept_lines: Sequence[OcrLine]) -> FilterReport:
    """필터 전/후 글자 수 (공백 제외)"""
    raw_chars = sum(_visible_chars(line.text) for line in page_raw.lines)
    kept_chars = sum(_visible_chars(line.text) for line in kept_lines)
    return FilterReport(raw_chars=raw_chars, kept_chars=kept_chars)


def filter_page(
    page: OcrPage,
    figures: Sequence[FigureRegion],
    cfg: FilterConfig,
) -> PageFilterResult:
    """기울기 필터 → figure 필터 → 문단 묶기를 한 번에 수행"""
    kept, skewed = remove_skewed_lines(page.lines, cfg)
    kept, in_figure = remove_figure_text(kept, figures, cfg)
    paragraphs = group_paragraphs(kept, cfg)
    return PageFilterResult(
        page_id=page.page_id,
        kept=kept,
        skewed=skewed,
        in_figure=in_figure,
        paragraphs=paragraphs,
        report=filter_report(page, kept),
    )


def load_detections(path: Optional[Union[str, Path]]) -> Dict[str, List[FigureRegion]]:
    """
    figure detection 파일 로드

    포맷: {"<page_id>": [{"bbox": [x0, y0, x1, y1], "confidence": 0.9, "label": "figure"}, ...]}
    파일이 없으면 빈 dict (figure 필터를 건너뜀)
    """
    if path is None or not Path(path).exists():
        return {}

    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)

    detections: Dict[str, List[FigureRegion]] = {}
    try:
        for page_id, regions in payload.items():
            detections[page_id] = [
                FigureRegion.model_validate({**region, "page_id": page_id}) for region in regions
            ]
    except (AttributeError, TypeError, ValidationError) as e:
        raise SchemaViolation(f"figure detection 파일 형식 오류: {path}: {e}") from e
    return detections
