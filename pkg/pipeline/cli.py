#!/usr/bin/env python3
"""
OCR 보정 파이프라인 CLI

    python -m pipeline.cli run --book-dir data/book01 --out output
    python -m pipeline.cli filter --book-dir data/book01 --out output
    python -m pipeline.cli locate --book-dir data/book01 --out output
    python -m pipeline.cli evaluate --pred output/book01/pages --ref data/book01/gt --out output/book01/eval
    python -m pipeline.cli mock-record --book-dir data/book01 --out output --fixtures-out fixtures.json

종료 코드: 0 성공, 2 설정 오류, 3 입력 오류, 4 LLM 서비스 오류
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from dotenv import load_dotenv

from evaluation.metrics import SCORE_FIELDS, EmptyCorpus
from llm.client import FixtureMissing, RecordingService, ServiceError, build_service
from ocr.ingest import OcrInputError
from ocr.noise_filter import PageMismatch
from pipeline.config import ConfigInvalid, PipelineConfig, load_config
from pipeline.evaluate import PageSetMismatch, evaluate
from pipeline.run_book import BookJob, BookRunner, MissingInput, filter_book, locate_book
from rag.build_corpus import EpubError

BASE_DIR = Path(__file__).resolve().parent.parent

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_SERVICE = 4

INPUT_ERRORS = (
    MissingInput,
    OcrInputError,
    PageMismatch,
    EpubError,
    PageSetMismatch,
    EmptyCorpus,
    FixtureMissing,
    FileNotFoundError,
)


def _add_book_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="KEY=VALUE 설정 파일")
    parser.add_argument("--book-dir", required=True, help="OCR 페이지(<page_id>.json) 가 있는 책 디렉터리")
    parser.add_argument("--epub", help="참조 epub (기본: <book-dir>/book.epub)")
    parser.add_argument("--detections", help="figure detection 파일 (기본: <book-dir>/detections.json)")
    parser.add_argument("--out", default="output", help="출력 루트 디렉터리")
    parser.add_argument("--alpha", type=float, help="기울기 필터 임계각 (도)")
    parser.add_argument("--threshold", type=float, help="참조 영역 Found 유사도 임계값")
    parser.add_argument("--workers", type=int, help="페이지 병렬 처리 수")
    parser.add_argument("--force", action="store_true", help="이미 있는 라벨도 다시 만듦")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ocr-correct", description="epub 참조 기반 OCR 보정 파이프라인")
    parser.add_argument("--verbose", action="store_true", help="DEBUG 로그 출력")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="전체 파이프라인 실행")
    _add_book_args(run)
    mock = run.add_mutually_exclusive_group()
    mock.add_argument("--mock", metavar="FIXTURES", help="녹화된 fixture 로 응답하는 mock LLM")
    mock.add_argument("--identity-mock", action="store_true", help="입력을 그대로 돌려주는 mock LLM")

    filt = sub.add_parser("filter", help="노이즈 필터만 실행 (글자 수 CSV)")
    _add_book_args(filt)

    loc = sub.add_parser("locate", help="참조 영역 탐색만 실행 (유사도 히스토그램)")
    _add_book_args(loc)
    loc.add_argument("--bins", type=int, default=10)

    ev = sub.add_parser("evaluate", help="예측 페이지와 정답 페이지 비교")
    ev.add_argument("--pred", required=True, help="예측 페이지 디렉터리 (.label / .txt)")
    ev.add_argument("--ref", required=True, help="정답 페이지 디렉터리 (.label / .txt)")
    ev.add_argument("--intersect", action="store_true", help="공통 page_id 만 평가")
    ev.add_argument("--out", help="리포트 저장 디렉터리")

    rec = sub.add_parser("mock-record", help="live LLM 응답을 fixture 파일로 녹화")
    _add_book_args(rec)
    rec.add_argument("--fixtures-out", required=True, help="저장할 fixture JSON")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {
        "ALPHA": args.alpha,
        "FOUND_THRESHOLD": args.threshold,
        "WORKERS": args.workers,
    }
    if getattr(args, "mock", None):
        overrides.update(MODE="mock", FIXTURES_PATH=args.mock)
    elif getattr(args, "identity_mock", False):
        overrides["MODE"] = "identity"
    return overrides


def _config(args: argparse.Namespace) -> PipelineConfig:
    return load_config(args.config, overrides=_overrides(args))


def _job(args: argparse.Namespace, config: PipelineConfig) -> BookJob:
    return BookJob.from_book_dir(
        args.book_dir,
        args.out,
        config=config,
        epub_path=args.epub,
        detections_path=args.detections,
        force=args.force,
    )


def cmd_run(args: argparse.Namespace) -> int:
    job = _job(args, _config(args))
    BookRunner(job).run()
    return EXIT_OK


def cmd_filter(args: argparse.Namespace) -> int:
    job = _job(args, _config(args))
    reports = filter_book(job)
    raw = sum(r.raw_chars for r in reports.values())
    kept = sum(r.kept_chars for r in reports.values())
    print(f"✅ 필터 완료: {len(reports)} 페이지, 글자 수 {raw} → {kept}")
    print(f"📊 {job.report_dir / 'filter_chars.csv'}")
    return EXIT_OK


def cmd_locate(args: argparse.Namespace) -> int:
    job = _job(args, _config(args))
    stats = locate_book(job, bins=args.bins)
    counts, edges = stats.histogram
    print(f"🔎 문단 {len(stats.similarities)} 개: Found {stats.found} / NotFound {stats.not_found}")
    scale = max(1, int(counts.max()) if len(counts) else 1)
    for count, lo, hi in zip(counts, edges, edges[1:]):
        bar = "█" * int(round(30 * count / scale))
        print(f"  {lo:.1f}-{hi:.1f} | {bar} {int(count)}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    report = evaluate(args.pred, args.ref, intersect=args.intersect, out_dir=args.out)
    print(f"📊 {report.page_count} 페이지 macro 평균")
    for name in SCORE_FIELDS:
        print(f"  {name:>9}: {getattr(report.macro, name):.4f}")
    if args.out:
        print(f"✅ 리포트 저장: {args.out}")
    return EXIT_OK


def cmd_mock_record(args: argparse.Namespace) -> int:
    config = _config(args)
    recorder = RecordingService(build_service(config.service), max_in_flight=config.service.max_in_flight)
    job = _job(args, config)
    try:
        BookRunner(job, recorder).run()
    finally:
        recorder.save(args.fixtures_out)
    print(f"✅ fixture {len(recorder.recorded)} 개 저장: {args.fixtures_out}")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "run": cmd_run,
    "filter": cmd_filter,
    "locate": cmd_locate,
    "evaluate": cmd_evaluate,
    "mock-record": cmd_mock_record,
}


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv(BASE_DIR / ".env")
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        return COMMANDS[args.command](args)
    except ConfigInvalid as e:
        print(f"❌ 설정 오류: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except INPUT_ERRORS as e:
        print(f"❌ 입력 오류: {e}", file=sys.stderr)
        return EXIT_INPUT
    except ServiceError as e:
        print(f"❌ LLM 서비스 오류: {e}", file=sys.stderr)
        return EXIT_SERVICE


if __name__ == "__main__":
    sys.exit(main())
