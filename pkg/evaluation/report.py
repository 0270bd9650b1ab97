"""
평가 리포트 저장
scores.csv (페이지별 + macro), scores.jsonl (페이지당 한 레코드 + macro 레코드), scores.txt (표)
"""

import json
from pathlib import Path
from typing import Dict, Union

import pandas as pd

from evaluation.metrics import SCORE_FIELDS, CorpusReport


def report_frame(report: CorpusReport) -> pd.DataFrame:
    rows = [score.model_dump() for score in report.per_page]
    rows.append(report.macro.model_dump())
    df = pd.DataFrame(rows, columns=["page_id", *SCORE_FIELDS, "degenerate"])
    df.insert(1, "scope", ["page"] * len(report.per_page) + ["macro"])
    return df


def write_report(report: CorpusReport, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """
    리포트 파일 세 개를 out_dir 에 저장

    Returns:
        {"csv": ..., "jsonl": ..., "txt": ...} 경로
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    df = report_frame(report)

    paths = {
        "csv": out_dir / "scores.csv",
        "jsonl": out_dir / "scores.jsonl",
        "txt": out_dir / "scores.txt",
    }
    df.to_csv(paths["csv"], index=False, encoding="utf-8")

    with open(paths["jsonl"], "w", encoding="utf-8") as f:
        for record in df.to_dict(orient="records"):
            f.write(json.dumps(record, ensure_ascii=False) + "\n")

    table = df.to_string(index=False, float_format=lambda v: f"{v:.4f}")
    with open(paths["txt"], "w", encoding="utf-8") as f:
        f.write(f"OCR 평가 결과 ({report.page_count} 페이지, macro = 페이지별 평균)\n\n")
        f.write(table + "\n")
    return paths
