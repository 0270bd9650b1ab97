#!/usr/bin/env python3
"""
참조 코퍼스 구축 스크립트
epub 을 spine 순서대로 읽어 content document 별 정규화된 평문 블록을 만들고,
재실행 시 추출을 건너뛸 수 있도록 JSON 캐시로 저장
"""

import json
import logging
import re
import unicodedata
import zipfile
from pathlib import Path
from typing import List, Optional, Tuple, Union

import ebooklib
from bs4 import BeautifulSoup
from bs4.element import CData, Comment, Declaration, Doctype, ProcessingInstruction
from ebooklib import epub
from pydantic import BaseModel, ConfigDict, Field, field_validator

logger = logging.getLogger(__name__)

# 텍스트가 아닌 메타데이터/스크립트 영역
DROP_TAGS = ["head", "title", "meta", "link", "script", "style", "noscript", "template", "svg", "nav"]

# 블록 경계 (블록이 바뀌면 공백 하나로 구분, 인라인 태그는 구분자 없음)
BLOCK_TAGS = [
    "p", "div", "section", "article", "aside", "header", "footer",
    "h1", "h2", "h3", "h4", "h5", "h6",
    "ul", "ol", "li", "dl", "dt", "dd",
    "blockquote", "pre", "figure", "figcaption",
    "table", "caption", "tr", "td", "th",
]

_WHITESPACE = re.compile(r"\s+")


class EpubError(ValueError):
    """epub 입력 오류의 공통 부모"""


class NotAnEpub(EpubError):
    pass


class CorruptArchive(EpubError):
    pass


class NoTextContent(EpubError):
    pass


def normalize_text(s: str) -> str:
    """
    문자셋 표준화: NFC 합성 + 공백 연속을 한 칸으로 + 양끝 공백 제거

    조합형/완성형으로 다르게 인코딩된 같은 발음 구별 기호 문자열이 하나의 표현이 된다.
    """
    return _WHITESPACE.sub(" ", unicodedata.normalize("NFC", s)).strip()


class ReferenceBlock(BaseModel):
    model_config = ConfigDict(frozen=True)

    block_id: str
    text: str

    @field_validator("text")
    @classmethod
    def _normalized(cls, value: str) -> str:
        if not value:
            raise ValueError("빈 블록")
        if normalize_text(value) != value:
            raise ValueError("정규화되지 않은 블록 텍스트")
        return value


class ReferenceCorpus(BaseModel):
    """spine 순서의 블록 리스트 (생성 후 읽기 전용)"""

    model_config = ConfigDict(frozen=True)

    blocks: Tuple[ReferenceBlock, ...] = Field(min_length=1)
    source: str = ""

    @property
    def total_chars(self) -> int:
        return sum(len(block.text) for block in self.blocks)


def _document_text(html: Union[bytes, str]) -> str:
    soup = BeautifulSoup(html, "html.parser")
    for tag in soup.find_all(DROP_TAGS):
        tag.decompose()
    for br in soup.find_all("br"):
        br.replace_with(" ")

    root = soup.body or soup
    pieces: List[str] = []
    owner = None
    for string in root.find_all(string=True):
        if isinstance(string, (Comment, CData, Declaration, Doctype, ProcessingInstruction)):
            continue
        block = string.find_parent(BLOCK_TAGS)
        if pieces and block is not owner:
            pieces.append(" ")
        owner = block
        pieces.append(str(string))
    return normalize_text("".join(pieces))


def _check_container(path: Path) -> None:
    if not path.is_file() or not zipfile.is_zipfile(path):
        raise NotAnEpub(f"zip 컨테이너가 아닙니다: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            if "META-INF/container.xml" not in zf.namelist():
                raise NotAnEpub(f"META-INF/container.xml 이 없습니다: {path}")
            bad = zf.testzip()
    except zipfile.BadZipFile as e:
        raise CorruptArchive(f"손상된 zip: {path}: {e}") from e
    if bad is not None:
        raise CorruptArchive(f"손상된 항목 {bad}: {path}")


def _spine_documents(book: epub.EpubBook) -> List[epub.EpubItem]:
    documents = []
    for entry in book.spine:
        idref = entry[0] if isinstance(entry, tuple) else entry
        item = book.get_item_with_id(idref)
        if item is not None and item.get_type() == ebooklib.ITEM_DOCUMENT:
            documents.append(item)

    if not documents:
        # spine 이 비어 있으면 파일 이름 순서로 대체
        documents = sorted(book.get_items_of_type(ebooklib.ITEM_DOCUMENT), key=lambda item: item.get_name())
    return documents


def extract_epub(path: Union[str, Path]) -> ReferenceCorpus:
    """
    epub 을 참조 코퍼스로 변환

    Args:
        path: .epub 파일 경로

    Returns:
        content document 하나당 블록 하나인 ReferenceCorpus
    """
    path = Path(path)
    _check_container(path)

    try:
        book = epub.read_epub(str(path), options={"ignore_ncx": True})
    except Exception as e:
        raise CorruptArchive(f"epub 을 읽을 수 없습니다: {path}: {e}") from e

    blocks = []
    for index, item in enumerate(_spine_documents(book)):
        text = _document_text(item.get_content())
        if not text:
            logger.debug("텍스트 없는 문서 건너뜀: %s", item.get_name())
            continue
        blocks.append(ReferenceBlock(block_id=f"{index:04d}:{item.get_name()}", text=text))

    if not blocks:
        raise NoTextContent(f"텍스트가 있는 문서가 없습니다: {path}")

    logger.info("epub 추출 완료: %s (%d 블록)", path.name, len(blocks))
    return ReferenceCorpus(blocks=tuple(blocks), source=path.name)


def save_corpus_cache(corpus: ReferenceCorpus, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(corpus.model_dump(), f, ensure_ascii=False, indent=2)


def load_corpus_cache(path: Union[str, Path]) -> Optional[ReferenceCorpus]:
    """캐시가 없거나 깨져 있으면 None"""
    path = Path(path)
    if not path.exists():
        return None
    try:
        with open(path, "r", encoding="utf-8") as f:
            return ReferenceCorpus.model_validate(json.load(f))
    except Exception as e:
        logger.warning("코퍼스 캐시를 무시합니다 (%s): %s", path, e)
        return None
