"""실행 결과 스토어

HTTP 로 요청된 적응 실행 결과를 인메모리 캐시에 보관
- run_id → 설정, 단계 기록, 검증 결과
- TTL 만료 및 최대 크기 초과 시 오래된 항목부터 제거
"""
from __future__ import annotations

import time
import uuid
from dataclasses import dataclass, field
from typing import Optional

from app.config import get_settings
from app.core.models import ConvergenceRecord, RunConfig
from app.utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class RunEntry:
    """저장된 실행"""
    run_id: str
    config: RunConfig
    records: list[ConvergenceRecord] = field(default_factory=list)
    status: str = "completed"  # completed | failed
    error: Optional[str] = None
    failed_stage: Optional[str] = None
    checks: list[dict] = field(default_factory=list)
    stopped_reason: Optional[str] = None
    created_at: float = field(default_factory=time.time)


class RunStore:
    """실행 결과 인메모리 스토어 (TTL + 크기 제한)"""

    def __init__(self, ttl: Optional[float] = None, max_size: Optional[int] = None):
        settings = get_settings()
        self._ttl = settings.run_cache_ttl if ttl is None else ttl
        self._max_size = settings.run_cache_size if max_size is None else max_size
        self._entries: dict[str, RunEntry] = {}

    def __len__(self) -> int:
        self._evict_expired()
        return len(self._entries)

    # ===== 조회 =====

    def get(self, run_id: str) -> Optional[RunEntry]:
        """
        run_id 로 조회

        Returns:
            RunEntry 또는 None (없거나 만료)
        """
        entry = self._entries.get(run_id)
        if entry is None:
            return None
        if self._is_expired(entry):
            self._entries.pop(run_id, None)
            logger.debug("Run expired", run_id=run_id)
            return None
        return entry

    # ===== 저장 =====

    def add(
        self,
        config: RunConfig,
        records: list[ConvergenceRecord],
        *,
        status: str = "completed",
        error: Optional[str] = None,
        failed_stage: Optional[str] = None,
        checks: Optional[list[dict]] = None,
        stopped_reason: Optional[str] = None,
    ) -> RunEntry:
        """새 실행 저장 후 항목 반환"""
        self._evict_expired()
        while len(self._entries) >= self._max_size:
            oldest = min(self._entries.values(), key=lambda e: e.created_at)
            self._entries.pop(oldest.run_id)
            logger.debug("Run evicted", run_id=oldest.run_id)

        entry = RunEntry(
            run_id=uuid.uuid4().hex,
            config=config,
            records=list(records),
            status=status,
            error=error,
            failed_stage=failed_stage,
            checks=checks or [],
            stopped_reason=stopped_reason,
        )
        self._entries[entry.run_id] = entry
        logger.info("Run stored", run_id=entry.run_id, status=status, steps=len(entry.records))
        return entry

    def clear(self) -> None:
        self._entries.clear()

    # ===== 내부 =====

    def _is_expired(self, entry: RunEntry) -> bool:
        return time.time() - entry.created_at > self._ttl

    def _evict_expired(self) -> None:
        for run_id in [r for r, e in self._entries.items() if self._is_expired(e)]:
            self._entries.pop(run_id, None)


# ===== 싱글톤 인스턴스 =====

_store_instance: Optional[RunStore] = None


def get_run_store() -> RunStore:
    """RunStore 싱글톤 인스턴스 반환"""
    global _store_instance
    if _store_instance is None:
        _store_instance = RunStore()
    return _store_instance
