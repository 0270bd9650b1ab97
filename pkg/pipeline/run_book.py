#!/usr/bin/env python3
"""
책 단위 파이프라인 실행
OCR 페이지 → 노이즈 필터 → 문단 → 참조 영역 탐색 → LLM 보정 → 페이지 라벨

출력 구조:
    <out>/<book_id>/pages/<page_id>.label
    <out>/<book_id>/report/summary.json, filter_chars.csv
    <out>/<book_id>/cache/corpus.json
"""

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from llm.client import CompletionService, ServiceError, build_service
from llm.correct_ocr import CorrectionStatus, ParagraphCorrector, intact_result, nearby_context
from ocr.ingest import OcrPage, load_page_file
from ocr.noise_filter import FigureRegion, FilterReport, MatchStatus, filter_page, load_detections
from pipeline.config import PipelineConfig, config_fingerprint, effective_config
from pipeline.evaluate import emit_filter_plot_data
from pipeline.labels import (
    PageLabel,
    Provenance,
    label_paragraph,
    label_path,
    load_valid_label,
    source_timestamp,
    sweep_stale_temps,
    write_label,
)
from rag.build_corpus import ReferenceCorpus, extract_epub, load_corpus_cache, save_corpus_cache
from rag.query_reference import MatchCandidate, best_window, classify_match, locate

logger = logging.getLogger(__name__)

EPUB_NAME = "book.epub"
DETECTIONS_NAME = "detections.json"


class MissingInput(ValueError):
    pass


class ServiceUnavailable(ServiceError):
    def __init__(self, message: str):
        super().__init__(message, retryable=False)


class BookJob(BaseModel):
    model_config = ConfigDict(frozen=True)

    book_id: str = Field(min_length=1)
    ocr_dir: Path
    epub_path: Optional[Path] = None
    detections_path: Optional[Path] = None
    output_dir: Path
    config: PipelineConfig = PipelineConfig()
    force: bool = False

    @classmethod
    def from_book_dir(
        cls,
        book_dir: Union[str, Path],
        output_dir: Union[str, Path],
        config: Optional[PipelineConfig] = None,
        epub_path: Optional[Union[str, Path]] = None,
        detections_path: Optional[Union[str, Path]] = None,
        force: bool = False,
    ) -> "BookJob":
        """
        책 디렉터리에서 작업 생성

        페이지는 book_dir 또는 book_dir/ocr 아래의 <page_id>.json,
        --epub / --detections 를 주지 않으면 book_dir 안의 book.epub / detections.json 을 쓴다.
        """
        book_dir = Path(book_dir)
        if not book_dir.is_dir():
            raise MissingInput(f"책 디렉터리가 없습니다: {book_dir}")
        ocr_dir = book_dir / "ocr" if (book_dir / "ocr").is_dir() else book_dir

        if epub_path is None and (book_dir / EPUB_NAME).is_file():
            epub_path = book_dir / EPUB_NAME
        if detections_path is None and (book_dir / DETECTIONS_NAME).is_file():
            detections_path = book_dir / DETECTIONS_NAME

        return cls(
            book_id=book_dir.resolve().name,
            ocr_dir=ocr_dir,
            epub_path=Path(epub_path) if epub_path else None,
            detections_path=Path(detections_path) if detections_path else None,
            output_dir=Path(output_dir),
            config=config or PipelineConfig(),
            force=force,
        )

    @property
    def book_out(self) -> Path:
        return self.output_dir / self.book_id

    @property
    def pages_dir(self) -> Path:
        return self.book_out / "pages"

    @property
    def report_dir(self) -> Path:
        return self.book_out / "report"

    @property
    def cache_dir(self) -> Path:
        return self.book_out / "cache"


class BookSummary(BaseModel):
    """summary.json 내용 (실행마다 달라지는 값은 파일에 넣지 않음)"""

    book_id: str
    config_fingerprint: str
    pages_done: int = 0
    paragraphs: Dict[str, int]
    match: Dict[str, int]
    chars_raw: int = 0
    chars_kept: int = 0
    pages_processed: int = Field(default=0, exclude=True)
    pages_skipped: int = Field(default=0, exclude=True)
    service_calls: int = Field(default=0, exclude=True)

    @property
    def total_paragraphs(self) -> int:
        return sum(self.paragraphs.values())


class LocateStats(NamedTuple):
    similarities: List[float]
    found: int
    not_found: int
    histogram: Tuple[np.ndarray, np.ndarray]


def discover_pages(ocr_dir: Union[str, Path]) -> List[Path]:
    ocr_dir = Path(ocr_dir)
    if not ocr_dir.is_dir():
        raise MissingInput(f"OCR 디렉터리가 없습니다: {ocr_dir}")
    pages = sorted(p for p in ocr_dir.glob("*.json") if p.name != DETECTIONS_NAME)
    if not pages:
        raise MissingInput(f"OCR 페이지 파일이 없습니다: {ocr_dir}")
    return pages


def load_reference(job: BookJob) -> Optional[ReferenceCorpus]:
    """epub 을 코퍼스로 (책당 한 번, 캐시 사용). epub 이 없으면 None"""
    if job.epub_path is None:
        return None
    if not job.epub_path.is_file():
        raise MissingInput(f"epub 파일이 없습니다: {job.epub_path}")

    cache_path = job.cache_dir / "corpus.json"
    if cache_path.exists() and cache_path.stat().st_mtime >= job.epub_path.stat().st_mtime:
        cached = load_corpus_cache(cache_path)
        if cached is not None and cached.source == job.epub_path.name:
            logger.debug("코퍼스 캐시 사용: %s", cache_path)
            return cached

    corpus = extract_epub(job.epub_path)
    save_corpus_cache(corpus, cache_path)
    return corpus


class BookRunner:
    """한 권의 책을 처리 (코퍼스/figure 결과는 모든 페이지가 읽기 전용으로 공유)"""

    def __init__(self, job: BookJob, service: Optional[CompletionService] = None):
        self.job = job
        self.config = job.config
        self.fingerprint = config_fingerprint(self.config)
        self._service = service
        self._service_lock = threading.Lock()
        self.corpus: Optional[ReferenceCorpus] = None
        self.detections: Dict[str, List[FigureRegion]] = {}

    @property
    def service(self) -> CompletionService:
        with self._service_lock:
            if self._service is None:
                self._service = build_service(self.config.service)
            return self._service

    def prepare(self) -> None:
        pages_dir = self.job.pages_dir
        removed = sweep_stale_temps(pages_dir)
        if removed:
            logger.info("이전 실행의 임시 파일 %d 개 삭제", removed)
        self.corpus = load_reference(self.job)
        self.detections = load_detections(self.job.detections_path)

    def _locate(self, text: str) -> Optional[MatchCandidate]:
        if self.corpus is None:
            return None
        return locate(text, self.corpus, self.config.search)

    def corrector(self) -> ParagraphCorrector:
        return ParagraphCorrector(
            self.service,
            self.config.gate,
            model_id=self.config.service.model_id,
            max_output_chars=self.config.service.max_output_chars,
            reference_format=self.config.reference_format,
        )

    def build_label(self, page: OcrPage, source: Path) -> PageLabel:
        """페이지 하나를 필터 → 탐색 → 보정해서 라벨로 만듦"""
        result = filter_page(page, self.detections.get(page.page_id, []), self.config.filter)

        matches: List[Optional[MatchCandidate]] = []
        classified = []
        for paragraph in result.paragraphs:
            match = self._locate(paragraph.text)
            matches.append(match)
            classified.append(
                classify_match(paragraph, match, self.config.intact_threshold, self.config.short_len)
            )

        # 모든 문단이 Intact 면 서비스를 만들지 않는다
        corrector: Optional[ParagraphCorrector] = None
        paragraphs = []
        for i, (paragraph, match) in enumerate(zip(classified, matches)):
            if paragraph.status == MatchStatus.INTACT:
                correction = intact_result(paragraph)
            else:
                if corrector is None:
                    corrector = self.corrector()
                correction = corrector.correct(paragraph, match, nearby_context(classified, i))
            paragraphs.append(label_paragraph(paragraph, correction))

        return PageLabel(
            page_id=page.page_id,
            paragraphs=tuple(paragraphs),
            raw_chars=result.report.raw_chars,
            kept_chars=result.report.kept_chars,
            provenance=Provenance(
                config_fingerprint=self.fingerprint,
                model_id=self.config.service.model_id,
                config=effective_config(self.config),
                source_file=source.name,
                source_modified_at=source_timestamp(source),
            ),
        )

    def process_page(self, source: Path) -> Tuple[PageLabel, bool, Optional[Path]]:
        """(label, skipped, 이번 실행에서 쓴 파일)"""
        page = load_page_file(source)
        path = label_path(self.job.pages_dir, page.page_id)
        if not self.job.force:
            existing = load_valid_label(path, self.fingerprint)
            if existing is not None:
                return existing, True, None
        label = self.build_label(page, source)
        write_label(label, path)
        return label, False, path

    def run(self) -> BookSummary:
        """
        책 전체 실행

        Returns:
            BookSummary (report/summary.json, report/filter_chars.csv 도 저장)
        """
        sources = discover_pages(self.job.ocr_dir)
        self.prepare()
        print(f"📚 {self.job.book_id}: {len(sources)} 페이지 (epub: {'있음' if self.corpus else '없음'})")

        labels: Dict[str, PageLabel] = {}
        written: List[Path] = []
        skipped = 0
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            futures = {pool.submit(self.process_page, source): source for source in sources}
            for future in tqdm(as_completed(futures), total=len(futures), desc=f"{self.job.book_id} 페이지"):
                label, was_skipped, path = future.result()
                if label.page_id in labels:
                    raise MissingInput(f"page_id 가 중복되었습니다: {label.page_id} ({futures[future].name})")
                labels[label.page_id] = label
                skipped += was_skipped
                if path is not None:
                    written.append(path)

        service = self._service
        if service is not None and service.is_live and service.calls > 0 and service.successes == 0:
            # 서비스가 전혀 응답하지 않은 실행의 라벨은 재개 시 다시 만들도록 지운다
            for path in written:
                path.unlink(missing_ok=True)
            raise ServiceUnavailable(f"LLM 서비스가 한 번도 응답하지 않았습니다 ({service.calls} 회 호출)")

        summary = self.summarize(labels, skipped)
        self.write_reports(summary, labels)
        print(f"✅ {self.job.book_id} 완료: {summary.pages_done} 페이지 (건너뜀 {skipped}), 문단 {summary.total_paragraphs}")
        print(f"📊 상태별 문단 수: {summary.paragraphs}")
        return summary

    def summarize(self, labels: Dict[str, PageLabel], skipped: int) -> BookSummary:
        paragraphs = {status.value: 0 for status in CorrectionStatus}
        match = {status.value: 0 for status in MatchStatus if status != MatchStatus.UNMATCHED}
        for label in labels.values():
            for p in label.paragraphs:
                paragraphs[p.status.value] += 1
                match[p.match_status.value] += 1
        return BookSummary(
            book_id=self.job.book_id,
            config_fingerprint=self.fingerprint,
            pages_done=len(labels),
            paragraphs=paragraphs,
            match=match,
            chars_raw=sum(label.raw_chars for label in labels.values()),
            chars_kept=sum(label.kept_chars for label in labels.values()),
            pages_processed=len(labels) - skipped,
            pages_skipped=skipped,
            service_calls=self._service.calls if self._service is not None else 0,
        )

    def write_reports(self, summary: BookSummary, labels: Dict[str, PageLabel]) -> None:
        report_dir = self.job.report_dir
        report_dir.mkdir(parents=True, exist_ok=True)
        with open(report_dir / "summary.json", "w", encoding="utf-8") as f:
            json.dump(summary.model_dump(), f, ensure_ascii=False, indent=2)
            f.write("\n")
        reports = {
            page_id: FilterReport(label.raw_chars, label.kept_chars) for page_id, label in sorted(labels.items())
        }
        emit_filter_plot_data(reports, report_dir / "filter_chars.csv")


def run_book(job: BookJob, service: Optional[CompletionService] = None) -> BookSummary:
    return BookRunner(job, service).run()


def filter_book(job: BookJob) -> Dict[str, FilterReport]:
    """필터만 실행해서 페이지별 글자 수를 filter_chars.csv 로 저장"""
    detections = load_detections(job.detections_path)
    reports: Dict[str, FilterReport] = {}
    for source in tqdm(discover_pages(job.ocr_dir), desc=f"{job.book_id} 필터"):
        page = load_page_file(source)
        result = filter_page(page, detections.get(page.page_id, []), job.config.filter)
        reports[page.page_id] = result.report
    emit_filter_plot_data(reports, job.report_dir / "filter_chars.csv")
    return reports


def locate_book(job: BookJob, bins: int = 10) -> LocateStats:
    """
    참조 영역 탐색만 실행 (LLM 호출 없음)

    Returns:
        문단별 최고 유사도, Found/NotFound 수, [0, 1] 구간 히스토그램
    """
    corpus = load_reference(job)
    if corpus is None:
        raise MissingInput("locate 에는 epub 이 필요합니다")
    detections = load_detections(job.detections_path)

    similarities: List[float] = []
    for source in tqdm(discover_pages(job.ocr_dir), desc=f"{job.book_id} 탐색"):
        page = load_page_file(source)
        result = filter_page(page, detections.get(page.page_id, []), job.config.filter)
        for paragraph in result.paragraphs:
            candidate = best_window(paragraph.text, corpus, job.config.search)
            similarities.append(candidate.similarity if candidate is not None else 0.0)

    found = sum(1 for s in similarities if s >= job.config.search.found_threshold)
    histogram = np.histogram(np.asarray(similarities, dtype=float), bins=bins, range=(0.0, 1.0))
    return LocateStats(similarities, found, len(similarities) - found, histogram)
