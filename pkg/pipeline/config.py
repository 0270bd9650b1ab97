"""
파이프라인 설정
KEY=VALUE 설정 파일(dotenv 문법) + 환경변수(LLM_ENDPOINT / LLM_API_KEY / LLM_MODEL) + CLI 옵션을
기본값 < 파일 < 환경변수 < CLI 순서로 합쳐 PipelineConfig 를 만든다.
"""

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Tuple, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from llm.client import ServiceSettings
from llm.correct_ocr import GatePolicy
from ocr.noise_filter import FilterConfig
from rag.query_reference import INTACT_THRESHOLD, SHORT_LEN_WORDS, SearchConfig

# 설정 키 → (섹션, 필드). 섹션이 None 이면 PipelineConfig 최상위 필드
CONFIG_KEYS: Dict[str, Tuple[Optional[str], str]] = {
    "ALPHA": ("filter", "alpha"),
    "FIGURE_OVERLAP_MIN": ("filter", "figure_overlap_min"),
    "FIGURE_MIN_CONFIDENCE": ("filter", "figure_min_confidence"),
    "PARA_GAP_FACTOR": ("filter", "para_gap_factor"),
    "BLOCK_SIZE": ("search", "block_size"),
    "STRIDE": ("search", "stride"),
    "FOUND_THRESHOLD": ("search", "found_threshold"),
    "PAD": ("search", "pad"),
    "ADAPTIVE_BLOCK": ("search", "adaptive_block"),
    "REFINE_TOP_K": ("search", "refine_top_k"),
    "EXACT_SEARCH_MAX_CHARS": ("search", "exact_search_max_chars"),
    "INTACT_THRESHOLD": (None, "intact_threshold"),
    "SHORT_LEN": (None, "short_len"),
    "REFERENCE_FORMAT": (None, "reference_format"),
    "MIN_SIMILARITY": ("gate", "min_similarity"),
    "MAX_LENGTH_DELTA": ("gate", "max_length_delta"),
    "MAX_LENGTH_RATIO": ("gate", "max_length_ratio"),
    "MODEL_ID": ("service", "model_id"),
    "MAX_OUTPUT_CHARS": ("service", "max_output_chars"),
    "TIMEOUT": ("service", "timeout"),
    "MAX_ATTEMPTS": ("service", "max_attempts"),
    "BACKOFF": ("service", "backoff"),
    "MAX_IN_FLIGHT": ("service", "max_in_flight"),
    "WORKERS": (None, "workers"),
}

# CLI 에서만 지정하는 키
OVERRIDE_ONLY_KEYS: Dict[str, Tuple[Optional[str], str]] = {
    "MODE": ("service", "mode"),
    "FIXTURES_PATH": ("service", "fixtures_path"),
}


class ConfigInvalid(ValueError):
    pass


class PipelineConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    filter: FilterConfig = FilterConfig()
    search: SearchConfig = SearchConfig()
    gate: GatePolicy = GatePolicy()
    service: ServiceSettings = ServiceSettings()
    intact_threshold: float = Field(default=INTACT_THRESHOLD, ge=0, le=1)
    short_len: int = Field(default=SHORT_LEN_WORDS, ge=0)
    reference_format: Literal["text", "html"] = "text"
    # 작업자 수는 출력에 영향을 주지 않으므로 지문에서 제외
    workers: int = Field(default=1, ge=1, exclude=True)


def _assign(tree: Dict[str, Any], key: str, value: Any, allowed: Mapping[str, Tuple[Optional[str], str]]) -> None:
    if key not in allowed:
        raise ConfigInvalid(f"알 수 없는 설정 키: {key}")
    section, field = allowed[key]
    target = tree if section is None else tree.setdefault(section, {})
    target[field] = value


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid(f"설정 파일이 없습니다: {path}")
    return {key.upper(): value for key, value in dotenv_values(path).items() if value not in (None, "")}


def load_config(
    path: Optional[Union[str, Path]] = None,
    env: Optional[Mapping[str, str]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> PipelineConfig:
    """
    설정 파일 + 환경변수 + CLI 옵션을 합친 PipelineConfig

    Args:
        path: KEY=VALUE 설정 파일 (없으면 기본값만)
        env: 환경변수 (기본 os.environ)
        overrides: CLI 옵션 {KEY: value}, None 값은 무시

    Returns:
        검증된 PipelineConfig (실패하면 ConfigInvalid)
    """
    env = os.environ if env is None else env
    tree: Dict[str, Any] = {}

    if path is not None:
        for key, value in read_config_file(path).items():
            _assign(tree, key, value, CONFIG_KEYS)

    endpoint = env.get("LLM_ENDPOINT")
    api_key = env.get("LLM_API_KEY") or env.get("OPENAI_API_KEY")
    model_id = env.get("LLM_MODEL") or env.get("OPENAI_MODEL")
    service = tree.setdefault("service", {})
    if endpoint:
        service["endpoint"] = endpoint
    if api_key:
        service["api_key"] = api_key
    if model_id:
        service["model_id"] = model_id

    for key, value in (overrides or {}).items():
        if value is not None:
            _assign(tree, key.upper(), value, {**CONFIG_KEYS, **OVERRIDE_ONLY_KEYS})

    try:
        return PipelineConfig.model_validate(tree)
    except ValidationError as e:
        raise ConfigInvalid(f"설정 값이 올바르지 않습니다: {e}") from e


def effective_config(config: PipelineConfig) -> Dict[str, Any]:
    """PageLabel provenance 에 넣는 설정 덤프 (API key 제외)"""
    return config.model_dump(mode="json")


def config_fingerprint(config: PipelineConfig) -> str:
    canonical = json.dumps(effective_config(config), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
