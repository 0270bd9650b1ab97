"""
페이지 라벨(pseudo page2page label) 저장/로드
라벨 파일은 임시 파일에 쓴 뒤 rename 해서, 중간에 죽은 실행이 잘린 파일을 남기지 않는다.
"""

import json
import logging
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field

from llm.correct_ocr import CorrectionResult, CorrectionStatus
from ocr.noise_filter import MatchStatus, Paragraph

logger = logging.getLogger(__name__)

LABEL_SUFFIX = ".label"
TEMP_SUFFIX = ".tmp"


class LabelParagraph(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: int = Field(ge=0)
    final_text: str
    original_text: str
    status: CorrectionStatus
    match_status: MatchStatus
    bbox: Tuple[float, float, float, float]
    match_similarity: Optional[float] = None
    trim_similarity: Optional[float] = None
    diagnostic: Optional[str] = None


class Provenance(BaseModel):
    model_config = ConfigDict(frozen=True)

    config_fingerprint: str
    model_id: str
    config: Dict[str, Any]
    source_file: str
    source_modified_at: str


class PageLabel(BaseModel):
    model_config = ConfigDict(frozen=True)

    page_id: str
    paragraphs: Tuple[LabelParagraph, ...] = ()
    raw_chars: int = Field(ge=0)
    kept_chars: int = Field(ge=0)
    provenance: Provenance

    @property
    def text(self) -> str:
        return "\n".join(p.final_text for p in self.paragraphs)


def label_paragraph(paragraph: Paragraph, result: CorrectionResult) -> LabelParagraph:
    return LabelParagraph(
        index=paragraph.index,
        final_text=result.final_text,
        original_text=result.original,
        status=result.status,
        match_status=paragraph.status,
        bbox=tuple(paragraph.bbox),
        match_similarity=paragraph.similarity,
        trim_similarity=result.trim_similarity,
        diagnostic=result.diagnostic,
    )


def source_timestamp(path: Union[str, Path]) -> str:
    """원본 페이지 파일의 수정 시각 (UTC ISO 8601)"""
    mtime = Path(path).stat().st_mtime
    return datetime.fromtimestamp(mtime, tz=timezone.utc).isoformat()


def label_path(pages_dir: Union[str, Path], page_id: str) -> Path:
    return Path(pages_dir) / f"{page_id}{LABEL_SUFFIX}"


def write_label(label: PageLabel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = json.dumps(label.model_dump(mode="json"), ensure_ascii=False, indent=2) + "\n"

    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=TEMP_SUFFIX)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    return path


def read_label(path: Union[str, Path]) -> PageLabel:
    with open(path, "r", encoding="utf-8") as f:
        return PageLabel.model_validate(json.load(f))


def load_valid_label(path: Union[str, Path], fingerprint: str) -> Optional[PageLabel]:
    """같은 설정으로 만든 유효한 라벨이면 반환, 아니면 None (다시 처리)"""
    path = Path(path)
    if not path.exists():
        return None
    try:
        label = read_label(path)
    except Exception as e:
        logger.warning("유효하지 않은 라벨을 다시 만듭니다 (%s): %s", path.name, e)
        return None
    if label.provenance.config_fingerprint != fingerprint:
        logger.info("설정이 바뀐 라벨을 다시 만듭니다: %s", path.name)
        return None
    return label


def sweep_stale_temps(directory: Union[str, Path]) -> int:
    """이전 실행이 남긴 임시 파일 삭제"""
    directory = Path(directory)
    if not directory.is_dir():
        return 0
    removed = 0
    for tmp in directory.glob(f".*{TEMP_SUFFIX}"):
        tmp.unlink(missing_ok=True)
        removed += 1
    return removed
