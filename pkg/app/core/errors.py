"""수치 커널 예외 정의

각 예외는 진단에 필요한 값을 속성으로 보관합니다.
"""
from typing import Any, Optional


class HdgError(Exception):
    """모든 도메인 예외의 기반 클래스"""


# ===== Mesh =====

class MeshError(HdgError, ValueError):
    """잘못된 메쉬 입력"""


class DegenerateElementError(MeshError):
    """면적이 0인 삼각형"""

    def __init__(self, element: int, area: float):
        self.element = element
        self.area = area
        super().__init__(f"Degenerate triangle {element} (signed area {area:.3e})")


class NonConformingMeshError(MeshError):
    """한 삼각형의 변 내부에 다른 삼각형의 꼭짓점이 놓인 경우"""

    def __init__(self, pair: tuple[int, int], vertex: int):
        self.pair = pair
        self.vertex = vertex
        super().__init__(
            f"Hanging vertex {vertex}: triangle {pair[0]} edge contains a vertex of triangle {pair[1]}"
        )


# ===== Quadrature / basis =====

class QuadratureError(HdgError, ValueError):
    """지원하지 않는 적분 차수"""

    def __init__(self, requested: int, maximum: int):
        self.requested = requested
        self.maximum = maximum
        super().__init__(f"Quadrature degree {requested} exceeds supported maximum {maximum}")


class BasisError(HdgError):
    """기저 구성 검증 실패"""


# ===== Linear algebra =====

class SingularMatrixError(HdgError, ArithmeticError):
    """피벗 붕괴 (수치적으로 특이한 행렬)"""

    def __init__(self, pivot: int, value: float, element: Optional[int] = None):
        self.pivot = pivot
        self.value = value
        self.element = element
        where = f" on element {element}" if element is not None else ""
        super().__init__(f"Singular matrix{where}: pivot {pivot} = {value:.3e}")

    def on_element(self, element: int) -> "SingularMatrixError":
        """요소 번호를 붙인 복사본 반환"""
        return SingularMatrixError(self.pivot, self.value, element=element)


class AssemblyError(HdgError):
    """조립 단계 불일치 (차원, 대칭성)"""


class SolverError(HdgError, ArithmeticError):
    """희소 솔버 실패"""

    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (relative residual {residual:.3e})")


# ===== Schemes / estimator =====

class StabilizationError(HdgError, ValueError):
    """안정화 파라미터가 적정성 조건을 위반"""

    def __init__(self, message: str, required_bound: Optional[float] = None):
        self.required_bound = required_bound
        super().__init__(message)


class EstimatorError(HdgError, ValueError):
    """추정자 입력 불일치 (출처, 차수)"""


class ProblemError(HdgError, ValueError):
    """알 수 없는 문제 id 또는 잘못된 문제 파일"""


# ===== Driver =====

class DriverError(HdgError):
    """적응 루프 단계 실패 (부분 기록 보존)"""

    def __init__(self, stage: str, step: int, cause: BaseException, records: list[Any]):
        self.stage = stage
        self.step = step
        self.cause = cause
        self.records = records
        super().__init__(f"Stage '{stage}' failed at step {step}: {cause}")
