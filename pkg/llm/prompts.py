"""
LLM 프롬프트 템플릿
Prompt 1: 참조(epub) 기반 OCR 보정 / Prompt 2: 참조 없는 최소 맞춤법 보정
템플릿 원문은 prompt_templates.json 한 파일에서 버전 관리한다.
"""

import html
import json
import re
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, Optional

TEMPLATE_PATH = Path(__file__).with_name("prompt_templates.json")

INPUT_OPEN, INPUT_CLOSE = "<input-text>", "</input-text>"
CONTENT_OPEN, CONTENT_CLOSE = "<content>", "</content>"

_INPUT_SLOT = re.compile(re.escape(INPUT_OPEN) + r"(.*?)" + re.escape(INPUT_CLOSE), re.DOTALL)


class PromptError(ValueError):
    pass


class EmptySlot(PromptError):
    pass


class DelimiterCollision(PromptError):
    pass


@lru_cache(maxsize=4)
def load_templates(path: Path = TEMPLATE_PATH) -> Dict[str, str]:
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    return {
        "version": str(raw.get("version", "")),
        "prompt1": "\n".join(raw["prompt1"]),
        "prompt2": "\n".join(raw["prompt2"]),
    }


def _require(value: str, slot: str) -> None:
    if not value or not value.strip():
        raise EmptySlot(f"'{slot}' 슬롯이 비어 있습니다")


def _guard(value: str, slot: str, delimiters: Iterable[str]) -> None:
    # 구분자를 그대로 넣으면 프롬프트 구조가 깨지므로 주입하지 않고 거부
    for delimiter in delimiters:
        if delimiter in value:
            raise DelimiterCollision(f"'{slot}' 슬롯에 구분자 {delimiter} 가 포함되어 있습니다")


def render_reference(text: str, reference_format: str = "text") -> str:
    """{reference_html} 슬롯 값: 정규화된 평문 또는 최소 태그(<p>) 조각"""
    if reference_format == "html":
        return f"<p>{html.escape(text, quote=False)}</p>"
    return text


def render_prompt1(reference: str, paragraph: str, templates: Optional[Dict[str, str]] = None) -> str:
    _require(reference, "reference_html")
    _require(paragraph, "paragraph")
    _guard(reference, "reference_html", (INPUT_OPEN, INPUT_CLOSE))
    _guard(paragraph, "paragraph", (INPUT_OPEN, INPUT_CLOSE))
    templates = templates or load_templates()
    return templates["prompt1"].format_map({"reference_html": reference, "paragraph": paragraph})


def render_prompt2(text: str, nearby: str = "", templates: Optional[Dict[str, str]] = None) -> str:
    """nearby 는 비어 있어도 된다 (빈 <content></content> 블록)"""
    _require(text, "text")
    _guard(text, "text", (INPUT_OPEN, INPUT_CLOSE, CONTENT_OPEN, CONTENT_CLOSE))
    _guard(nearby, "nearby", (INPUT_OPEN, INPUT_CLOSE, CONTENT_OPEN, CONTENT_CLOSE))
    templates = templates or load_templates()
    return templates["prompt2"].format_map({"text": text, "nearby": nearby})


def extract_input_text(prompt: str) -> Optional[str]:
    match = _INPUT_SLOT.search(prompt)
    return match.group(1) if match else None
