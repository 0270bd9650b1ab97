#!/usr/bin/env python3
"""
OCR 페이지 입력 모듈
엔진 중립적인 Normalized OCR Page(JSON) 파일을 읽어 라인 단위 타입으로 변환하고,
라인 polygon 의 기울기(β)와 bounding box 를 계산
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_core import PydanticCustomError

logger = logging.getLogger(__name__)

# polygon 이 페이지 경계를 넘어가도 허용하는 여유 (px)
PAGE_OVERHANG_PX = 2.0

Point = Tuple[float, float]


class OcrInputError(ValueError):
    """OCR 페이지 입력 오류의 공통 부모"""


class MalformedInput(OcrInputError):
    pass


class SchemaViolation(OcrInputError):
    pass


class DuplicateOffset(OcrInputError):
    pass


class DegeneratePolygon(ValueError):
    """top-left 와 top-right 가 같은 점이라 기울기를 정의할 수 없음"""


class BBox(NamedTuple):
    min_x: float
    min_y: float
    max_x: float
    max_y: float

    @property
    def width(self) -> float:
        return self.max_x - self.min_x

    @property
    def height(self) -> float:
        return self.max_y - self.min_y

    @property
    def area(self) -> float:
        return self.width * self.height

    def union(self, other: "BBox") -> "BBox":
        return BBox(
            min(self.min_x, other.min_x),
            min(self.min_y, other.min_y),
            max(self.max_x, other.max_x),
            max(self.max_y, other.max_y),
        )


class OcrLine(BaseModel):
    """OCR 엔진이 내보낸 한 줄 (TL, TR, BR, BL 순서의 polygon + reading-order offset)"""

    model_config = ConfigDict(frozen=True)

    text: str
    polygon: Tuple[Point, Point, Point, Point]
    offset: int = Field(ge=0)
    page_id: str = ""

    @field_validator("text")
    @classmethod
    def _text_not_blank(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("빈 텍스트 라인")
        return value

    @field_validator("polygon")
    @classmethod
    def _finite_non_negative(cls, value: Tuple[Point, ...]) -> Tuple[Point, ...]:
        for x, y in value:
            if not (math.isfinite(x) and math.isfinite(y)) or x < 0 or y < 0:
                raise ValueError(f"잘못된 polygon 좌표: ({x}, {y})")
        return value


class OcrPage(BaseModel):
    model_config = ConfigDict(frozen=True)

    page_id: str = Field(min_length=1)
    width: float = Field(gt=0)
    height: float = Field(gt=0)
    lines: Tuple[OcrLine, ...] = ()

    @model_validator(mode="before")
    @classmethod
    def _attach_page_id(cls, data: Any) -> Any:
        # 파일 포맷의 라인에는 page_id 가 없으므로 페이지 값을 내려준다
        if isinstance(data, dict) and isinstance(data.get("lines"), list):
            page_id = data.get("page_id", "")
            data = {
                **data,
                "lines": [
                    {**line, "page_id": page_id} if isinstance(line, dict) else line
                    for line in data["lines"]
                ],
            }
        return data

    @field_validator("lines")
    @classmethod
    def _sorted_unique_offsets(cls, value: Tuple[OcrLine, ...]) -> Tuple[OcrLine, ...]:
        ordered = tuple(sorted(value, key=lambda line: line.offset))
        for prev, cur in zip(ordered, ordered[1:]):
            if prev.offset == cur.offset:
                raise PydanticCustomError(
                    "duplicate_offset",
                    "중복된 offset: {offset}",
                    {"offset": cur.offset},
                )
        return ordered

    @model_validator(mode="after")
    def _lines_inside_page(self) -> "OcrPage":
        max_x = self.width + PAGE_OVERHANG_PX
        max_y = self.height + PAGE_OVERHANG_PX
        for line in self.lines:
            for x, y in line.polygon:
                if x > max_x or y > max_y:
                    raise ValueError(
                        f"라인 polygon 이 페이지 밖에 있음: offset={line.offset} ({x}, {y})"
                    )
        return self


def parse_page(data: Union[bytes, str]) -> OcrPage:
    """
    Normalized OCR Page 파일 내용을 OcrPage 로 변환

    Args:
        data: 페이지 파일 내용 (UTF-8 JSON)

    Returns:
        offset 오름차순으로 정렬된 라인을 가진 OcrPage
    """
    try:
        text = data.decode("utf-8") if isinstance(data, bytes) else data
        payload = json.loads(text)
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedInput(f"페이지 파일을 해석할 수 없습니다: {e}") from e

    if not isinstance(payload, dict):
        raise SchemaViolation("페이지 파일 최상위는 객체여야 합니다")

    try:
        return OcrPage.model_validate(payload)
    except ValidationError as e:
        if any(err["type"] == "duplicate_offset" for err in e.errors()):
            raise DuplicateOffset(str(e)) from e
        raise SchemaViolation(str(e)) from e


def serialize_page(page: OcrPage) -> bytes:
    """parse_page 의 역변환"""
    payload = {
        "page_id": page.page_id,
        "width": page.width,
        "height": page.height,
        "lines": [
            {
                "text": line.text,
                "polygon": [[x, y] for x, y in line.polygon],
                "offset": line.offset,
            }
            for line in page.lines
        ],
    }
    return json.dumps(payload, ensure_ascii=False, indent=2).encode("utf-8")


def load_page_file(path: Union[str, Path]) -> OcrPage:
    return parse_page(Path(path).read_bytes())


def line_skew_angle(line: OcrLine) -> float:
    """
    라인의 기울기 β (도 단위, [0, 90])

    top edge (top-left → top-right) 벡터와 수평축 사이 각도의 절댓값.
    좌/우 기울기는 구분하지 않는다.
    """
    (x0, y0), (x1, y1) = line.polygon[0], line.polygon[1]
    dx, dy = x1 - x0, y1 - y0
    if dx == 0 and dy == 0:
        raise DegeneratePolygon(f"top edge 길이가 0 입니다 (offset={line.offset})")
    return math.degrees(math.atan2(abs(dy), abs(dx)))


def line_bbox(line: OcrLine) -> BBox:
    points = np.asarray(line.polygon, dtype=float)
    min_x, min_y = points.min(axis=0)
    max_x, max_y = points.max(axis=0)
    return BBox(float(min_x), float(min_y), float(max_x), float(max_y))


def _adi_points(polygon: Any) -> List[List[float]]:
    # ADI 는 버전에 따라 [x1, y1, ..., x4, y4] 또는 [{"x":..,"y":..}, ...] 형태
    if polygon and isinstance(polygon[0], dict):
        flat = [coord for point in polygon for coord in (point.get("x"), point.get("y"))]
    else:
        flat = list(polygon or [])
    if len(flat) != 8:
        raise SchemaViolation(f"ADI polygon 은 4개의 점이어야 합니다: {polygon}")
    return [[max(0.0, float(flat[i])), max(0.0, float(flat[i + 1]))] for i in range(0, 8, 2)]


def from_adi_page(adi_page: Dict[str, Any], page_id: Optional[str] = None) -> Dict[str, Any]:
    """
    Azure Document Intelligence 스타일 page 결과를 Normalized OCR Page 로 매핑

    pages[i].width/height → width/height
    lines[j].content      → text
    lines[j].polygon      → polygon (4 points)
    lines[j].spans[0].offset → offset

    Args:
        adi_page: ADI analyzeResult.pages 의 원소 하나
        page_id: 지정하지 않으면 pageNumber 로 만든다

    Returns:
        parse_page 가 받을 수 있는 dict
    """
    lines = []
    for line in adi_page.get("lines", []):
        content = line.get("content", "")
        if not content.strip():
            continue
        spans = line.get("spans") or [{}]
        lines.append(
            {
                "text": content,
                "polygon": _adi_points(line.get("polygon")),
                "offset": spans[0].get("offset"),
            }
        )

    return {
        "page_id": page_id or f"page_{int(adi_page.get('pageNumber', 0)):04d}",
        "width": adi_page.get("width"),
        "height": adi_page.get("height"),
        "lines": lines,
    }
