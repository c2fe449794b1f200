"""적응 실행 API

- 기본 문제 목록
- 적응 실행 요청 (동기 실행 후 결과 저장)
- 실행 결과 / convergence.csv 조회
"""
from typing import Optional

from fastapi import APIRouter, HTTPException
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.config import get_settings
from app.core.driver import run_adaptive
from app.core.errors import DriverError
from app.core.models import ConvergenceRecord, RunConfig
from app.core.problems import BUILTIN_PROBLEMS
from app.core.store import RunEntry, get_run_store
from app.utils.files import convergence_csv_text
from app.utils.logger import get_logger

router = APIRouter()
logger = get_logger(__name__)


# ===== Request Models =====

class RunRequest(RunConfig):
    """
    HTTP 실행 요청

    서버 파일 시스템을 건드리는 항목 (output_dir, 문제 파일 경로) 은 받지 않습니다.
    """
    model_config = ConfigDict(extra="forbid")

    @field_validator("output_dir")
    @classmethod
    def _reject_output_dir(cls, value: Optional[str]) -> Optional[str]:
        if value is not None:
            raise ValueError("output_dir is not accepted over HTTP")
        return value


# ===== Response Models =====

class ProblemList(BaseModel):
    """기본 문제 목록"""
    problems: list[str]


class CheckRow(BaseModel):
    """검증 표 한 행"""
    name: str
    value: float
    threshold: float
    passed: bool


class RunResponse(BaseModel):
    """실행 결과"""
    run_id: str
    status: str = Field(..., description="completed | failed")
    config: RunConfig
    records: list[ConvergenceRecord]
    error: Optional[str] = None
    failed_stage: Optional[str] = None
    checks: list[CheckRow] = Field(default_factory=list)
    stopped_reason: Optional[str] = Field(None, description="steps | no-marked | max-dofs")


def _to_response(entry: RunEntry) -> RunResponse:
    return RunResponse(
        run_id=entry.run_id,
        status=entry.status,
        config=entry.config,
        records=entry.records,
        error=entry.error,
        failed_stage=entry.failed_stage,
        checks=[CheckRow(**c) for c in entry.checks],
        stopped_reason=entry.stopped_reason,
    )


def _get_entry(run_id: str) -> RunEntry:
    entry = get_run_store().get(run_id)
    if entry is None:
        raise HTTPException(status_code=404, detail=f"Run '{run_id}' not found")
    return entry


# ===== API Endpoints =====

@router.get("/problems", response_model=ProblemList)
async def list_problems():
    """기본 문제 id 목록"""
    return ProblemList(problems=list(BUILTIN_PROBLEMS))


@router.post("/runs", response_model=RunResponse, status_code=201)
def create_run(request: RunRequest):
    """
    적응 실행

    계산이 끝날 때까지 블로킹하므로 스레드풀에서 실행됩니다.
    기본 문제만 허용하고 steps / max_dofs 는 설정 상한으로 제한하며, 파일은 쓰지 않습니다.
    수치 단계 실패는 status=failed 와 부분 기록으로 저장합니다.
    """
    settings = get_settings()
    if request.problem not in BUILTIN_PROBLEMS:
        raise HTTPException(
            status_code=400,
            detail=f"Unknown problem '{request.problem}', expected one of {', '.join(BUILTIN_PROBLEMS)}",
        )
    if request.steps > settings.api_max_steps:
        raise HTTPException(
            status_code=400,
            detail=f"steps = {request.steps} exceeds the limit of {settings.api_max_steps}",
        )

    max_dofs = min(request.max_dofs or settings.api_max_dofs, settings.api_max_dofs)
    config = RunConfig(**request.model_dump(exclude={"max_dofs"}), max_dofs=max_dofs)

    store = get_run_store()
    try:
        result = run_adaptive(config)
    except DriverError as e:
        logger.warning("Run failed", stage=e.stage, step=e.step, error=str(e.cause))
        entry = store.add(
            config, e.records, status="failed", error=str(e.cause), failed_stage=e.stage
        )
        return _to_response(entry)

    checks = [
        {"name": c.name, "value": c.value, "threshold": c.threshold, "passed": c.passed}
        for c in result.checks
    ]
    entry = store.add(config, result.records, checks=checks, stopped_reason=result.stopped_reason)
    return _to_response(entry)


@router.get("/runs/{run_id}", response_model=RunResponse)
async def get_run(run_id: str):
    """저장된 실행 조회"""
    return _to_response(_get_entry(run_id))


@router.get("/runs/{run_id}/convergence.csv", response_class=PlainTextResponse)
async def get_convergence_csv(run_id: str):
    """convergence.csv 형식으로 조회"""
    entry = _get_entry(run_id)
    return PlainTextResponse(
        convergence_csv_text(entry.records, entry.config.timing),
        media_type="text/csv",
    )
