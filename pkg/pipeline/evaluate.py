"""
라벨 평가 + 필터 그래프용 데이터
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Union

import pandas as pd

from evaluation.metrics import CorpusReport, score_corpus
from evaluation.report import write_report
from ocr.noise_filter import FilterReport
from pipeline.labels import LABEL_SUFFIX, read_label

logger = logging.getLogger(__name__)

PAGE_SUFFIXES = (LABEL_SUFFIX, ".txt")


class PageSetMismatch(ValueError):
    pass


def read_page_texts(directory: Union[str, Path]) -> Dict[str, str]:
    """디렉터리의 .label / .txt 페이지를 {page_id: text} 로 읽음"""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"페이지 디렉터리가 없습니다: {directory}")

    texts: Dict[str, str] = {}
    for path in sorted(directory.iterdir()):
        if path.suffix not in PAGE_SUFFIXES or path.name.startswith("."):
            continue
        if path.stem in texts:
            raise PageSetMismatch(f"같은 page_id 의 파일이 둘 이상입니다: {path.stem}")
        if path.suffix == LABEL_SUFFIX:
            texts[path.stem] = read_label(path).text
        else:
            texts[path.stem] = path.read_text(encoding="utf-8")
    return texts


def evaluate(
    pred_dir: Union[str, Path],
    ref_dir: Union[str, Path],
    intersect: bool = False,
    out_dir: Optional[Union[str, Path]] = None,
) -> CorpusReport:
    """
    예측 페이지와 정답 페이지를 page_id 로 짝지어 평가

    Args:
        pred_dir: 예측 페이지 디렉터리 (.label 또는 .txt)
        ref_dir: 정답 페이지 디렉터리
        intersect: True 면 공통 page_id 만 평가
        out_dir: 주어지면 리포트 파일을 저장

    Returns:
        CorpusReport
    """
    preds = read_page_texts(pred_dir)
    refs = read_page_texts(ref_dir)

    if set(preds) != set(refs):
        only_pred = sorted(set(preds) - set(refs))
        only_ref = sorted(set(refs) - set(preds))
        if not intersect:
            raise PageSetMismatch(f"page_id 가 다릅니다 (예측에만: {only_pred[:5]}, 정답에만: {only_ref[:5]})")
        logger.info("공통 페이지만 평가합니다 (제외: %d)", len(only_pred) + len(only_ref))

    common = sorted(set(preds) & set(refs))
    report = score_corpus((page_id, preds[page_id], refs[page_id]) for page_id in common)
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def filter_plot_frame(reports: Dict[str, FilterReport]) -> pd.DataFrame:
    df = pd.DataFrame(
        [{"page_id": page_id, "raw_chars": r.raw_chars, "kept_chars": r.kept_chars} for page_id, r in reports.items()],
        columns=["page_id", "raw_chars", "kept_chars"],
    )
    return df.sort_values(["raw_chars", "page_id"], ascending=[False, True], ignore_index=True)


def emit_filter_plot_data(reports: Dict[str, FilterReport], path: Union[str, Path]) -> pd.DataFrame:
    """페이지별 (raw_chars, kept_chars) 를 raw 크기 내림차순 CSV 로 저장"""
    df = filter_plot_frame(reports)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, encoding="utf-8")
    return df
