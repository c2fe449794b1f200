"""구조화된 로깅 설정"""
import logging
import sys
from typing import Optional, TextIO

import structlog

from app.config import get_settings


def setup_logging(level: Optional[str] = None, stream: TextIO = sys.stderr) -> None:
    """structlog 설정

    Args:
        level: 로그 레벨 (미지정 시 설정값 사용)
        stream: 출력 스트림 (CLI 표 출력과 섞이지 않도록 기본 stderr)
    """
    settings = get_settings()
    level_name = (level or settings.log_level).lower()

    # 로그 레벨 설정
    log_level = getattr(logging, level_name.upper(), logging.INFO)

    # structlog 설정
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.StackInfoRenderer(),
            structlog.dev.set_exc_info,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.dev.ConsoleRenderer() if level_name == "debug"
            else structlog.processors.JSONRenderer(),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(log_level),
        context_class=dict,
        logger_factory=structlog.PrintLoggerFactory(file=stream),
        cache_logger_on_first_use=True,
    )

    # 기본 로깅 설정
    logging.basicConfig(
        format="%(message)s",
        stream=stream,
        level=log_level,
    )


def get_logger(name: str = __name__) -> structlog.BoundLogger:
    """로거 인스턴스 반환"""
    return structlog.get_logger(name)
