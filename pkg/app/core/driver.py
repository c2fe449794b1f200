"""적응 세분 드라이버

한 단계: 풀이 → 후처리 → 추정 → 기록 → 표시 → 세분

출력 (output_dir 지정 시):
- convergence.csv (매 단계 갱신, 실패 시에도 부분 기록 보존)
- mesh_NNN.svg, estimate_NNN.csv, mesh_NNN.vtu (선택)
- convergence.svg
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from app.config import get_settings
from app.core.errors import DriverError, HdgError
from app.core.estimator import ErrorEstimate
from app.core.hybrid import NumericalFlux, check_conservation
from app.core.linalg import cholesky_certificate, symmetry_defect
from app.core.mesh import refine
from app.core.models import ConvergenceRecord, RunConfig, Stabilization
from app.core.postprocess import (
    ConformingPotential,
    EquilibratedFlux,
    potential_jump,
    verify_equilibration,
)
from app.core.problems import BUILTIN_PROBLEMS, ProblemSpec, builtin_problem, load_problem_file
from app.core.scheme_factory import HdgScheme, get_scheme_factory
from app.utils.files import (
    step_name,
    write_convergence_csv,
    write_convergence_svg,
    write_estimate_csv,
    write_mesh_svg,
    write_mesh_vtu,
)
from app.utils.logger import get_logger

logger = get_logger(__name__)


# ===== 표시 =====

def mark(estimate: ErrorEstimate | np.ndarray, theta: float) -> np.ndarray:
    """
    Dörfler 표시

    η_K² 내림차순 (동률은 요소 번호 순) 으로 누적해
    Σ_marked η_K² >= θ Σ η_K² 를 만족하는 최소 접두부를 반환합니다.

    Args:
        estimate: ErrorEstimate 또는 η_K² 배열
        theta: 0 < θ <= 1

    Returns:
        표시된 요소 번호 (오름차순), 전부 0 이면 빈 배열
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    squared = estimate.local_squared if isinstance(estimate, ErrorEstimate) else np.asarray(estimate, dtype=float)
    if squared.size == 0:
        return np.zeros(0, dtype=np.int64)

    order = np.lexsort((np.arange(len(squared)), -squared))
    cumulative = np.cumsum(squared[order])
    total = cumulative[-1]
    if total <= 0:
        return np.zeros(0, dtype=np.int64)
    count = int(np.argmax(cumulative >= theta * total)) + 1
    return np.sort(order[:count])


def resolve_problem(problem: str) -> ProblemSpec:
    """기본 문제 id 또는 JSON 파일 경로"""
    if problem in BUILTIN_PROBLEMS:
        return builtin_problem(problem)
    if problem.endswith(".json") or Path(problem).is_file():
        return load_problem_file(problem)
    return builtin_problem(problem)


# ===== 검증 =====

@dataclass(frozen=True)
class CheckResult:
    """검증 표 한 행"""
    name: str
    value: float
    threshold: float
    passed: bool


@dataclass
class StepState:
    """한 단계의 계산 결과"""
    problem: ProblemSpec
    solution: Any
    flux: NumericalFlux
    equilibrated: EquilibratedFlux
    potential: ConformingPotential
    estimate: ErrorEstimate
    error: Optional[float] = None


def _check(name: str, value: float, threshold: float) -> CheckResult:
    return CheckResult(name, float(value), float(threshold), bool(value <= threshold))


def verify_step(scheme: HdgScheme, state: StepState) -> list[CheckResult]:
    """
    한 단계 결과의 불변식 검사

    이산 잔차, 국소 보존, facet flux 도약, 평형 조건, H(div) 적합성, potential 연속성,
    skeleton 행렬 대칭/SPD, 상계 (정확해가 있을 때), single-facet 의 off-facet jump
    """
    settings = get_settings()
    sol = state.solution
    rows = [_check("discrete residual", scheme.residual(sol), 1e-8)]

    conservation = check_conservation(state.flux, sol.load, sol.mesh)
    rows.append(_check("local conservation", conservation.max_relative_residual, 1e-10))
    rows.append(_check("numerical flux jump", conservation.max_facet_jump, 1e-10))

    report = verify_equilibration(state.equilibrated)
    rows.append(_check("flux divergence", report.max_divergence, 1e-8))
    rows.append(_check("flux normal trace", report.max_trace, 1e-8))
    rows.append(_check("flux H(div) jump", report.normal_jump, 1e-9))
    rows.append(_check("potential continuity", potential_jump(state.potential), 1e-10))

    if sol.skeleton is not None:
        matrix = sol.skeleton.matrix
        rows.append(_check("skeleton symmetry", symmetry_defect(matrix), settings.symmetry_tol))
        spd = cholesky_certificate(matrix)
        rows.append(CheckResult("skeleton SPD", 0.0 if spd else 1.0, 0.0, spd))

    if state.error is not None:
        eta = state.estimate.eta
        slack = 1e-6 * max(eta, state.error)
        rows.append(_check("upper bound error - eta", state.error - eta, slack))

    if getattr(sol, "stabilization", None) == Stabilization.SINGLE_FACET:
        rows.append(_check("off-facet jump", float(state.estimate.off_facet_jump.max(initial=0.0)), 0.0))

    return rows


def format_checks(rows: list[CheckResult]) -> str:
    """pass/fail 표 문자열"""
    width = max(len(r.name) for r in rows) if rows else 10
    lines = [f"{'check':<{width}}  {'value':>12}  {'threshold':>12}  result"]
    for r in rows:
        lines.append(
            f"{r.name:<{width}}  {r.value:>12.3e}  {r.threshold:>12.3e}  {'pass' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines)


# ===== 적응 루프 =====

# 종료 사유
STOP_STEPS = "steps"
STOP_NO_MARKED = "no-marked"
STOP_MAX_DOFS = "max-dofs"


@dataclass
class AdaptiveResult:
    """적응 실행 결과"""
    config: RunConfig
    records: list[ConvergenceRecord] = field(default_factory=list)
    final: Optional[StepState] = None
    checks: list[CheckResult] = field(default_factory=list)
    stopped_reason: str = STOP_STEPS

    @property
    def verified(self) -> bool:
        return all(c.passed for c in self.checks)


def _compute_step(scheme: HdgScheme, problem: ProblemSpec, config: RunConfig, stage: list[str]) -> StepState:
    stage[0] = "solve"
    sol = scheme.solve(problem)

    stage[0] = "postprocess"
    flux = scheme.numerical_flux(sol)
    equilibrated = scheme.equilibrated_flux(sol, flux)
    potential = scheme.potential(sol)

    stage[0] = "estimate"
    estimate = scheme.estimate(sol, equilibrated, potential)
    error = None
    if problem.exact is not None:
        error = scheme.true_error(sol, config.error_quadrature_degree)
    return StepState(problem, sol, flux, equilibrated, potential, estimate, error)


def _write_step_outputs(out: Path, step: int, config: RunConfig, state: StepState, marked=None) -> None:
    mesh = state.problem.mesh
    eta_k = np.sqrt(state.estimate.local_squared)
    write_mesh_svg(out / step_name("mesh", step, "svg"), mesh, values=eta_k, marked=marked)
    if config.write_estimates:
        write_estimate_csv(out / step_name("estimate", step, "csv"), state.estimate)
    if config.write_vtu:
        write_mesh_vtu(
            out / step_name("mesh", step, "vtu"),
            mesh,
            {"a": mesh.coefficient, "eta": eta_k, "jump": state.estimate.jump},
        )


def run_adaptive(
    config: RunConfig,
    problem: Optional[ProblemSpec] = None,
    on_step: Optional[Callable[[ConvergenceRecord], None]] = None,
) -> AdaptiveResult:
    """
    적응 세분 실행

    Flow:
        1. 문제 / 스킴 준비
        2. 단계마다 풀이 → 후처리 → 추정 → 기록
        3. 마지막 단계가 아니면 표시 → 세분 (max_dofs 초과 예상 시 중단)
        4. verify 설정 시 마지막 메쉬에서 불변식 검사

    Args:
        config: 실행 설정
        problem: 문제 (기본 config.problem 으로 해석)
        on_step: 단계 기록 콜백

    Raises:
        DriverError: 단계 실패 (stage, step, 부분 기록 포함)
    """
    result = AdaptiveResult(config=config)
    out = Path(config.output_dir) if config.output_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    stage = ["setup"]
    step = 0
    try:
        if problem is None:
            problem = resolve_problem(config.problem)
        scheme = get_scheme_factory().get_scheme(config)

        logger.info(
            "Adaptive run started",
            scheme=config.scheme.value,
            k=config.k,
            problem=problem.name,
            marking=config.marking,
            steps=config.steps,
        )

        while True:
            started = time.perf_counter()
            state = _compute_step(scheme, problem, config, stage)
            total, skeleton = scheme.dof_counts(problem.mesh)
            estimate = state.estimate
            record = ConvergenceRecord(
                step=step,
                n_elements=problem.mesh.n_elements,
                ndof_total=total,
                ndof_skeleton=skeleton,
                error=state.error,
                eta=estimate.eta,
                eta_cf=estimate.eta_cf_total,
                eta_nc=estimate.eta_nc_total,
                eta_jump=estimate.jump_total,
                effectivity=estimate.eta / state.error if state.error else None,
                seconds=time.perf_counter() - started,
            )
            result.records.append(record)
            result.final = state
            logger.info(
                "Adaptive step",
                step=step,
                n_elements=record.n_elements,
                ndof_total=total,
                eta=record.eta,
                error=record.error,
            )
            if on_step is not None:
                on_step(record)

            last = step + 1 >= config.steps
            marked = None
            if not last:
                stage[0] = "mark"
                if config.uniform_marking:
                    marked = np.arange(problem.mesh.n_elements)
                else:
                    marked = mark(estimate, config.theta)

            if out is not None:
                stage[0] = "output"
                _write_step_outputs(out, step, config, state, marked)
                write_convergence_csv(out / "convergence.csv", result.records, config.timing)

            if last:
                break
            if len(marked) == 0:
                logger.info("No elements marked, stopping", step=step)
                result.stopped_reason = STOP_NO_MARKED
                break

            stage[0] = "refine"
            mesh = refine(problem.mesh, marked)
            if config.max_dofs is not None and scheme.dof_counts(mesh)[0] > config.max_dofs:
                logger.info("DOF budget reached", step=step, max_dofs=config.max_dofs)
                result.stopped_reason = STOP_MAX_DOFS
                break
            problem = problem.with_mesh(mesh)
            step += 1

        if config.verify and result.final is not None:
            stage[0] = "verify"
            result.checks = verify_step(scheme, result.final)
            failed = [c.name for c in result.checks if not c.passed]
            if failed:
                logger.warning("Verification failed", checks=failed)

        if out is not None:
            write_convergence_svg(out / "convergence.svg", result.records)

    except (HdgError, ArithmeticError, ValueError, np.linalg.LinAlgError) as e:
        logger.error("Adaptive run failed", stage=stage[0], step=step, error=str(e))
        if out is not None and result.records:
            write_convergence_csv(out / "convergence.csv", result.records, config.timing)
        raise DriverError(stage[0], step, e, result.records) from e

    logger.info("Adaptive run finished", steps=len(result.records), stopped_reason=result.stopped_reason)
    return result


def adaptive_loop(config: RunConfig, problem: Optional[ProblemSpec] = None) -> list[ConvergenceRecord]:
    """적응 실행 후 단계 기록 목록 반환"""
    return run_adaptive(config, problem).records
