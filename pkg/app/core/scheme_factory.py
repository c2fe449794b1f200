"""HDG 스킴 팩토리

RunConfig 로부터 스킴 구현을 생성하고 캐싱
- primal: PrimalScheme (k >= 1, δ ∈ {0, 1}, lemma | paper10k2)
- mixed: MixedScheme (k >= 0, uniform | single-facet)
"""
from __future__ import annotations

from typing import Any, Optional, Protocol, Type

from app.core.basis import dim_p
from app.core.estimator import ErrorEstimate, estimate_mixed, estimate_primal, true_error
from app.core.hybrid import NumericalFlux
from app.core.mesh import Mesh
from app.core.models import RunConfig, SchemeType, Stabilization
from app.core.postprocess import (
    ConformingPotential,
    EquilibratedFlux,
    equilibrated_flux_mixed,
    equilibrated_flux_primal,
    potential_mixed,
    potential_primal,
)
from app.core.problems import ProblemSpec
from app.schemes.mixed import (
    mixed_residual,
    numerical_flux_mixed,
    solve_mixed,
    solve_mixed_monolithic,
)
from app.schemes.primal import (
    numerical_flux_primal,
    primal_residual,
    solve_primal,
    solve_primal_monolithic,
)
from app.utils.logger import get_logger

logger = get_logger(__name__)


class HdgScheme(Protocol):
    """HDG 스킴 프로토콜"""

    scheme_type: SchemeType
    k: int

    def solve(self, problem: ProblemSpec) -> Any:
        """정적 축약 풀이"""
        ...

    def solve_monolithic(self, problem: ProblemSpec) -> Any:
        """축약 없는 풀이 (검증용)"""
        ...

    def residual(self, sol: Any) -> float:
        """이산 방정식 상대 잔차"""
        ...

    def numerical_flux(self, sol: Any) -> NumericalFlux:
        ...

    def equilibrated_flux(self, sol: Any, flux: Optional[NumericalFlux] = None) -> EquilibratedFlux:
        ...

    def potential(self, sol: Any) -> ConformingPotential:
        ...

    def estimate(self, sol: Any, flux: EquilibratedFlux, potential: ConformingPotential) -> ErrorEstimate:
        ...

    def true_error(self, sol: Any, degree: Optional[int] = None) -> float:
        ...

    def dof_counts(self, mesh: Mesh) -> tuple[int, int]:
        """(전체 DOF, skeleton DOF)"""
        ...


class PrimalScheme:
    """Primal HDG"""

    scheme_type = SchemeType.PRIMAL

    def __init__(
        self,
        k: int,
        delta: int = 0,
        gamma: Optional[float] = None,
        stabilization: Stabilization = Stabilization.SCALED_PENALTY,
    ):
        self.k = k
        self.delta = delta
        self.gamma = gamma
        self.stabilization = Stabilization(stabilization)

    def solve(self, problem: ProblemSpec):
        return solve_primal(problem, self.k, self.delta, self.gamma, self.stabilization)

    def solve_monolithic(self, problem: ProblemSpec):
        return solve_primal_monolithic(problem, self.k, self.delta, self.gamma, self.stabilization)

    def residual(self, sol) -> float:
        return primal_residual(sol)

    def numerical_flux(self, sol) -> NumericalFlux:
        return numerical_flux_primal(sol)

    def equilibrated_flux(self, sol, flux: Optional[NumericalFlux] = None) -> EquilibratedFlux:
        return equilibrated_flux_primal(sol, flux)

    def potential(self, sol) -> ConformingPotential:
        return potential_primal(sol)

    def estimate(self, sol, flux: EquilibratedFlux, potential: ConformingPotential) -> ErrorEstimate:
        return estimate_primal(sol, flux, potential)

    def true_error(self, sol, degree: Optional[int] = None) -> float:
        return true_error(sol, degree)

    def dof_counts(self, mesh: Mesh) -> tuple[int, int]:
        skeleton = len(mesh.interior_facets) * (self.k - self.delta + 1)
        return mesh.n_elements * dim_p(self.k) + skeleton, skeleton


class MixedScheme:
    """Mixed HDG (LDG-H)"""

    scheme_type = SchemeType.MIXED

    def __init__(
        self,
        k: int,
        stabilization: Stabilization = Stabilization.UNIFORM,
        facet_choice: str = "newest",
    ):
        self.k = k
        self.stabilization = Stabilization(stabilization)
        self.facet_choice = facet_choice

    def solve(self, problem: ProblemSpec):
        return solve_mixed(problem, self.k, self.stabilization, self.facet_choice)

    def solve_monolithic(self, problem: ProblemSpec):
        return solve_mixed_monolithic(problem, self.k, self.stabilization, self.facet_choice)

    def residual(self, sol) -> float:
        return mixed_residual(sol)

    def numerical_flux(self, sol) -> NumericalFlux:
        return numerical_flux_mixed(sol)

    def equilibrated_flux(self, sol, flux: Optional[NumericalFlux] = None) -> EquilibratedFlux:
        return equilibrated_flux_mixed(sol, flux)

    def potential(self, sol) -> ConformingPotential:
        return potential_mixed(sol)

    def estimate(self, sol, flux: EquilibratedFlux, potential: ConformingPotential) -> ErrorEstimate:
        return estimate_mixed(sol, flux, potential)

    def true_error(self, sol, degree: Optional[int] = None) -> float:
        return true_error(sol, degree)

    def dof_counts(self, mesh: Mesh) -> tuple[int, int]:
        skeleton = len(mesh.interior_facets) * (self.k + 1)
        return 3 * mesh.n_elements * dim_p(self.k) + skeleton, skeleton


SCHEMES: dict[SchemeType, Type[HdgScheme]] = {
    SchemeType.PRIMAL: PrimalScheme,
    SchemeType.MIXED: MixedScheme,
}


class SchemeFactory:
    """스킴 팩토리

    같은 파라미터 조합의 스킴 인스턴스를 재사용합니다.
    """

    def __init__(self):
        # (scheme, k, delta, gamma, stabilization, facet_choice) -> HdgScheme
        self._cache: dict[tuple, HdgScheme] = {}

    def get_scheme(self, config: RunConfig) -> HdgScheme:
        """
        설정에 맞는 스킴 반환

        Args:
            config: 검증된 실행 설정

        Returns:
            HdgScheme 구현
        """
        key = (
            config.scheme,
            config.k,
            config.delta,
            config.gamma,
            config.stabilization,
            config.facet_choice,
        )
        cached = self._cache.get(key)
        if cached is not None:
            return cached

        scheme = self._create_scheme(config)
        self._cache[key] = scheme
        logger.debug(
            "Scheme created",
            scheme=config.scheme.value,
            k=config.k,
            stabilization=config.stabilization.value,
        )
        return scheme

    def _create_scheme(self, config: RunConfig) -> HdgScheme:
        scheme_class = SCHEMES.get(config.scheme)
        if scheme_class is None:
            raise ValueError(f"Unsupported scheme: {config.scheme}")
        if config.scheme == SchemeType.PRIMAL:
            return scheme_class(config.k, config.delta, config.gamma, config.stabilization)
        return scheme_class(config.k, config.stabilization, config.facet_choice)

    def clear_cache(self) -> None:
        """전체 캐시 클리어"""
        self._cache.clear()


# ===== 싱글톤 인스턴스 =====

_factory_instance: Optional[SchemeFactory] = None


def get_scheme_factory() -> SchemeFactory:
    """SchemeFactory 싱글톤 인스턴스 반환"""
    global _factory_instance
    if _factory_instance is None:
        _factory_instance = SchemeFactory()
    return _factory_instance
