"""
공용 테스트 fixture
합성 OCR 페이지 / 최소 epub / 책 디렉터리를 만든다.
"""

import json
import math
import unicodedata
import zipfile
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import hypothesis
import pytest

hypothesis.settings.register_profile("fast", max_examples=20, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=100, deadline=None)
hypothesis.settings.load_profile("ci")

PAGE_WIDTH = 2000
LINE_HEIGHT = 20
LINE_GAP = 5
PARAGRAPH_GAP = 40
CHAR_WIDTH = 8


def rect_polygon(x0: float, y0: float, x1: float, y1: float) -> List[List[float]]:
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]


def skewed_polygon(x0: float, y0: float, width: float, height: float, angle: float) -> List[List[float]]:
    """top-left 기준으로 angle(도) 만큼 아래로 기울어진 polygon"""
    dx = width * math.cos(math.radians(angle))
    dy = width * math.sin(math.radians(angle))
    return [[x0, y0], [x0 + dx, y0 + dy], [x0 + dx, y0 + dy + height], [x0, y0 + height]]


def line_dict(text: str, polygon: List[List[float]], offset: int) -> Dict:
    return {"text": text, "polygon": polygon, "offset": offset}


def page_dict(page_id: str, paragraphs: Sequence[Sequence[str]], extra_lines: Sequence[Dict] = ()) -> Dict:
    """
    문단(라인 텍스트 리스트)들을 세로로 배치한 Normalized OCR Page

    문단 안 라인 간격은 LINE_GAP, 문단 사이 간격은 PARAGRAPH_GAP 이라
    para_gap_factor 1.5 기준으로 문단이 그대로 복원된다.
    """
    lines = []
    y = 10.0
    offset = 0
    for p_index, paragraph in enumerate(paragraphs):
        if p_index:
            y += PARAGRAPH_GAP - LINE_GAP
        for text in paragraph:
            x1 = 10 + min(len(text) * CHAR_WIDTH, PAGE_WIDTH - 20)
            lines.append(line_dict(text, rect_polygon(10, y, x1, y + LINE_HEIGHT), offset))
            offset += len(text) + 1
            y += LINE_HEIGHT + LINE_GAP
    for extra in extra_lines:
        lines.append({**extra, "offset": offset})
        offset += len(extra["text"]) + 1
    height = max(y + 10, 200.0)
    return {"page_id": page_id, "width": PAGE_WIDTH, "height": height, "lines": lines}


def write_epub(path: Path, chapters: Sequence[Sequence[str]]) -> Path:
    """
    최소 EPUB 2 컨테이너 (chapters[i] = 해당 문서의 <p> 문단 리스트)
    """
    manifest = []
    spine = []
    documents = {}
    for i, paragraphs in enumerate(chapters):
        name = f"chap{i + 1:02d}.xhtml"
        manifest.append(f'<item id="c{i + 1}" href="{name}" media-type="application/xhtml+xml"/>')
        spine.append(f'<itemref idref="c{i + 1}"/>')
        body = "".join(f"<p>{p}</p>" for p in paragraphs)
        documents[name] = (
            '<?xml version="1.0" encoding="utf-8"?>\n'
            '<html xmlns="http://www.w3.org/1999/xhtml"><head><title>t</title></head>'
            f"<body>{body}</body></html>"
        )

    opf = (
        '<?xml version="1.0" encoding="utf-8"?>\n'
        '<package xmlns="http://www.idpf.org/2007/opf" version="2.0" unique-identifier="bookid">'
        '<metadata xmlns:dc="http://purl.org/dc/elements/1.1/">'
        '<dc:identifier id="bookid">test-book</dc:identifier><dc:title>Test</dc:title><dc:language>vi</dc:language>'
        "</metadata>"
        f"<manifest>{''.join(manifest)}</manifest>"
        f"<spine>{''.join(spine)}</spine>"
        "</package>"
    )
    container = (
        '<?xml version="1.0"?>\n'
        '<container version="1.0" xmlns="urn:oasis:names:tc:opendocument:xmlns:container">'
        '<rootfiles><rootfile full-path="OEBPS/content.opf" media-type="application/oebps-package+xml"/></rootfiles>'
        "</container>"
    )

    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr(zipfile.ZipInfo("mimetype"), "application/epub+zip", compress_type=zipfile.ZIP_STORED)
        zf.writestr("META-INF/container.xml", container, compress_type=zipfile.ZIP_DEFLATED)
        zf.writestr("OEBPS/content.opf", opf, compress_type=zipfile.ZIP_DEFLATED)
        for name, html in documents.items():
            zf.writestr(f"OEBPS/{name}", html, compress_type=zipfile.ZIP_DEFLATED)
    return path


def write_book(
    book_dir: Path,
    pages: Sequence[Sequence[Sequence[str]]],
    chapters: Optional[Sequence[Sequence[str]]] = None,
    detections: Optional[Dict] = None,
) -> Path:
    """pages[i] = i 번째 페이지의 문단들. chapters 가 있으면 book.epub 도 만든다."""
    book_dir.mkdir(parents=True, exist_ok=True)
    for i, paragraphs in enumerate(pages, start=1):
        page_id = f"page_{i:04d}"
        payload = page_dict(page_id, paragraphs)
        (book_dir / f"{page_id}.json").write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")
    if chapters is not None:
        write_epub(book_dir / "book.epub", chapters)
    if detections is not None:
        (book_dir / "detections.json").write_text(json.dumps(detections), encoding="utf-8")
    return book_dir


SENTENCES = [
    "Ngày xưa có một người tiều phu nghèo sống ở bìa rừng",
    "Mỗi sáng anh vác rìu vào rừng đốn củi đem ra chợ bán",
    "Một hôm trời đổ mưa to và anh phải trú trong hang đá",
    "Trong hang có một ông lão râu tóc bạc phơ ngồi đánh cờ",
    "Ông lão mời anh ngồi xuống uống một chén trà nóng",
    "Chén trà thơm đến nỗi anh quên cả đường về nhà",
    "Đến khi mưa tạnh anh chào ông lão rồi đi ra cửa hang",
    "Cán rìu trong tay anh đã mục nát từ lúc nào không biết",
    "Về tới làng anh không còn nhận ra ai trong xóm cũ",
    "Người ta kể rằng một ngày trong hang bằng trăm năm ngoài đời",
    "Già làng nghe chuyện liền lắc đầu mà thở dài",
    "Từ đó không ai dám vào hang đá ấy thêm lần nào nữa",
    "Câu chuyện được truyền lại cho con cháu đến tận bây giờ",
    "Trẻ con trong làng vẫn hay hỏi về ông lão đánh cờ",
    "Bà nội thường kể chuyện ấy vào những đêm mùa đông",
    "Ngọn đèn dầu lay lắt soi bóng cả nhà quây quần",
    "Mấy đứa nhỏ nghe xong thì ngủ say lúc nào không hay",
    "Sáng hôm sau chúng lại rủ nhau ra bìa rừng chơi",
    "Nhưng chẳng đứa nào dám bước qua con suối nhỏ",
    "Bên kia suối là khu rừng già rậm rạp và âm u",
]


def strip_marks(text: str, words: int = 3) -> str:
    """앞 words 단어의 발음 구별 기호를 지운 OCR 흉내 텍스트"""
    tokens = text.split()
    plain = []
    for token in tokens[:words]:
        decomposed = unicodedata.normalize("NFD", token.replace("đ", "d").replace("Đ", "D"))
        plain.append("".join(ch for ch in decomposed if not unicodedata.combining(ch)))
    return " ".join(plain + tokens[words:])


def synthetic_book(pages: int = 10, with_headings: bool = True, perfect: bool = False):
    """
    (OCR 페이지 문단들, epub 챕터들)

    페이지 i: [머리글(짧은 문단, Dangling)], 정확한 문장(Intact), 기호가 빠진 문장(Partial)
    """
    ocr_pages = []
    chapters = []
    for i in range(pages):
        first, second = SENTENCES[(2 * i) % len(SENTENCES)], SENTENCES[(2 * i + 1) % len(SENTENCES)]
        paragraphs = [[first], [second if perfect else strip_marks(second)]]
        if with_headings and not perfect:
            paragraphs.insert(0, [f"Trang {i + 1}"])
        ocr_pages.append(paragraphs)
        chapters.append([first, second])
    return ocr_pages, chapters


def tree_bytes(root: Path) -> Dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture
def page_factory():
    return page_dict


@pytest.fixture
def epub_factory(tmp_path):
    def make(chapters: Sequence[Sequence[str]], name: str = "book.epub") -> Path:
        return write_epub(tmp_path / name, chapters)

    return make


@pytest.fixture
def book_factory(tmp_path):
    def make(name: str, pages, chapters=None, detections=None) -> Path:
        return write_book(tmp_path / "books" / name, pages, chapters, detections)

    return make


@pytest.fixture(autouse=True)
def _no_llm_credentials(monkeypatch):
    """테스트는 항상 오프라인"""
    for key in ("LLM_ENDPOINT", "LLM_API_KEY", "LLM_MODEL", "OPENAI_API_KEY", "OPENAI_MODEL"):
        monkeypatch.delenv(key, raising=False)
