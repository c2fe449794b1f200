"""공통 데이터 모델"""
import re
from enum import Enum
from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from app.config import get_settings


class SchemeType(str, Enum):
    """HDG 스킴"""
    PRIMAL = "primal"
    MIXED = "mixed"


class Stabilization(str, Enum):
    """안정화 파라미터 선택"""
    LEMMA = "lemma"  # α = aγ/|F| Σ|F'|²/|K| (primal)
    SCALED_PENALTY = "paper10k2"  # α = 10k²a/|F| (primal)
    UNIFORM = "uniform"  # α = a (mixed)
    SINGLE_FACET = "single-facet"  # α = a on F*_K only (mixed)


PRIMAL_STABILIZATIONS = (Stabilization.LEMMA, Stabilization.SCALED_PENALTY)
MIXED_STABILIZATIONS = (Stabilization.UNIFORM, Stabilization.SINGLE_FACET)

MARKING_PATTERN = re.compile(r"^(uniform|dorfler:(?P<theta>[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?))$")


def gamma_threshold(k: int) -> float:
    """γ 하한 k(k+1)/2 (2D)"""
    return k * (k + 1) / 2.0


class RunConfig(BaseModel):
    """적응 실행 설정"""
    scheme: SchemeType
    k: int = Field(ge=0)
    delta: int = Field(default=0, ge=0, le=1)
    gamma: Optional[float] = None
    stabilization: Optional[Stabilization] = None
    facet_choice: Literal["newest", "longest"] = "newest"
    problem: str = "lshape2d"
    marking: str = "dorfler:0.5"
    steps: int = Field(default=10, ge=1)
    max_dofs: Optional[int] = Field(default=None, ge=1)
    output_dir: Optional[str] = None

    # 출력 / 검증
    verify: bool = False
    write_estimates: bool = True
    write_vtu: bool = False
    timing: bool = False

    # 적분 차수 재정의
    error_quadrature_degree: Optional[int] = Field(default=None, ge=1)

    @field_validator("marking")
    @classmethod
    def _check_marking(cls, value: str) -> str:
        match = MARKING_PATTERN.match(value)
        if not match:
            raise ValueError(f"Marking must be 'uniform' or 'dorfler:THETA', got '{value}'")
        theta = match.group("theta")
        if theta is not None and not 0.0 < float(theta) <= 1.0:
            raise ValueError(f"Dorfler parameter must lie in (0, 1], got {theta}")
        return value

    @model_validator(mode="after")
    def _check_scheme(self) -> "RunConfig":
        if self.scheme == SchemeType.PRIMAL:
            if self.k < 1:
                raise ValueError("Primal HDG needs k >= 1")
            if self.stabilization is None:
                self.stabilization = Stabilization.SCALED_PENALTY
            if self.stabilization not in PRIMAL_STABILIZATIONS:
                raise ValueError(f"Stabilization '{self.stabilization.value}' is not available for the primal scheme")
            if self.stabilization == Stabilization.LEMMA:
                threshold = gamma_threshold(self.k)
                if self.gamma is None:
                    self.gamma = get_settings().lemma_gamma_factor * threshold
                if self.gamma <= threshold:
                    raise ValueError(f"gamma must exceed k(k+1)/2 = {threshold}, got {self.gamma}")
        else:
            if self.delta != 0:
                raise ValueError("The mixed scheme has no reduced (delta = 1) variant")
            if self.stabilization is None:
                self.stabilization = Stabilization.UNIFORM
            if self.stabilization not in MIXED_STABILIZATIONS:
                raise ValueError(f"Stabilization '{self.stabilization.value}' is not available for the mixed scheme")
        return self

    @property
    def theta(self) -> float:
        """Dörfler 비율 (uniform 이면 1)"""
        match = MARKING_PATTERN.match(self.marking)
        theta = match.group("theta") if match else None
        return 1.0 if theta is None else float(theta)

    @property
    def uniform_marking(self) -> bool:
        return self.marking == "uniform"


class ConvergenceRecord(BaseModel):
    """적응 단계 기록 (convergence.csv 한 행)"""
    step: int
    n_elements: int
    ndof_total: int
    ndof_skeleton: int
    error: Optional[float] = None
    eta: float
    eta_cf: float
    eta_nc: float
    eta_jump: float
    effectivity: Optional[float] = None
    seconds: Optional[float] = None
