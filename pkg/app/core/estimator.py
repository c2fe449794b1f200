"""a posteriori 오차 추정

요소별 지표
- primal: η_CF = ‖a^{-1/2}(σ* - a∇u_h)‖ + (h/π) a^{-1/2} ‖f - Π_{k-1} f‖
          η_NC = ‖a^{1/2}∇(u_h - u*)‖
          jump = Σ_F α ‖P_M u_h - û_h‖²_F
- mixed:  η_CF = ‖a^{-1/2}(σ* - σ_h)‖ + (h/π) a^{-1/2} ‖f - Π_k f‖
          η_NC = ‖a^{-1/2}(σ_h - a∇u*)‖
          jump = h_K Σ_F α ‖u_h - û_h‖²_F

η² = Σ (η_CF² + η_NC²), η_HDG² = η² + Σ jump
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from app.config import get_settings
from app.core.basis import CellBasis, ElementMap, cell_table, dim_p, embed_vector, project_cells
from app.core.errors import EstimatorError
from app.core.hybrid import ElementTables
from app.core.mesh import GEOMETRY_TOL, Mesh
from app.core.models import SchemeType, Stabilization
from app.core.postprocess import ConformingPotential, EquilibratedFlux
from app.core.quadrature import Domain, quadrature_rule
from app.utils.logger import get_logger

logger = get_logger(__name__)

ScalarField = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class ErrorEstimate:
    """요소별 지표와 합계 (생성 후 불변)"""
    scheme: SchemeType
    eta_cf: np.ndarray  # (nt,)
    eta_nc: np.ndarray  # (nt,)
    osc: np.ndarray  # (nt,) a^{-1/2} h_K ‖f - Π_m f‖_K
    jump: np.ndarray  # (nt,) 제곱량
    off_facet_jump: np.ndarray  # (nt,) F*_K 이외 facet 의 jump (제곱량)
    coefficient: np.ndarray  # (nt,) a|_K

    @property
    def n_elements(self) -> int:
        return len(self.eta_cf)

    @property
    def local_squared(self) -> np.ndarray:
        """η_K² = η_CF,K² + η_NC,K²"""
        return self.eta_cf**2 + self.eta_nc**2

    @property
    def eta(self) -> float:
        return float(np.sqrt(self.local_squared.sum()))

    @property
    def eta_hdg(self) -> float:
        return float(np.sqrt(self.local_squared.sum() + self.jump.sum()))

    @property
    def eta_cf_total(self) -> float:
        return float(np.sqrt((self.eta_cf**2).sum()))

    @property
    def eta_nc_total(self) -> float:
        return float(np.sqrt((self.eta_nc**2).sum()))

    @property
    def jump_total(self) -> float:
        return float(np.sqrt(self.jump.sum()))

    @property
    def jump_ratio(self) -> float:
        """√Σjump / η (η = 0 이면 0)"""
        eta = self.eta
        return self.jump_total / eta if eta > 0 else 0.0


# ===== 데이터 진동 =====

def data_residual(f: ScalarField, m: int, maps: ElementMap, degree: Optional[int] = None) -> np.ndarray:
    """
    ‖f - Π_m f‖_K (요소별)

    Args:
        degree: 적분 차수 (기본 2m + oscillation_quadrature_excess)
    """
    if degree is None:
        degree = 2 * m + get_settings().oscillation_quadrature_excess
    projected = project_cells(f, m, maps, degree=degree)
    table = cell_table(m, degree)
    x = maps.to_physical(table.points)
    fx = np.asarray(f(x.reshape(-1, 2)), dtype=float).reshape(x.shape[:-1])
    fx = fx - np.einsum("ni,qi->nq", projected, table.values) * maps.scale[:, None]
    return np.sqrt(2.0 * maps.area * (table.weights[None, :] * fx**2).sum(axis=1))


def oscillation(f: ScalarField, mesh: Mesh, m: int, a: Optional[np.ndarray] = None) -> np.ndarray:
    """
    osc_m(f, K) = a^{-1/2} h_K ‖f - Π_m f‖_K

    Args:
        f: 하중
        mesh: 메쉬
        m: 다항식 차수
        a: 요소별 계수 (기본 mesh.coefficient)
    """
    a = mesh.coefficient if a is None else np.asarray(a, dtype=float)
    residual = data_residual(f, m, ElementMap.from_mesh(mesh))
    return mesh.diameters * residual / np.sqrt(a)


# ===== 추정자 =====

def _check_provenance(
    scheme: SchemeType,
    sol,
    flux: EquilibratedFlux,
    potential: ConformingPotential,
    flux_degree: int,
    potential_degree: int,
) -> None:
    if flux.provenance != scheme or flux.scheme_degree != sol.k or flux.degree != flux_degree:
        raise EstimatorError(
            f"Equilibrated flux from {flux.provenance.value} k={flux.scheme_degree} "
            f"cannot be used with a {scheme.value} k={sol.k} solution"
        )
    if flux.mesh is not sol.mesh or potential.mesh is not sol.mesh:
        raise EstimatorError("Reconstructions were built on a different mesh")
    if potential.degree != potential_degree:
        raise EstimatorError(
            f"Potential has degree {potential.degree}, expected {potential_degree}"
        )


def _stiffness_norm(tables: ElementTables, coefficients: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """‖w^{1/2}∇v‖_K (v 계수 → 요소별)"""
    grads = np.einsum("nqia,ni->nqa", tables.gradients, coefficients)
    return np.sqrt(weight * np.einsum("nq,nqa,nqa->n", tables.weights, grads, grads))


def estimate_primal(
    sol,
    flux: EquilibratedFlux,
    potential: ConformingPotential,
    f: Optional[ScalarField] = None,
) -> ErrorEstimate:
    """
    Primal 추정자

    Args:
        sol: PrimalSolution
        flux: equilibrated_flux_primal(sol)
        potential: potential_primal(sol)
        f: 하중 (기본 sol.problem.load)

    Raises:
        EstimatorError: 다른 스킴/차수/메쉬에서 만든 재구성
    """
    from app.schemes.primal import primal_trace_defect

    _check_provenance(SchemeType.PRIMAL, sol, flux, potential, sol.k, sol.k)
    mesh = sol.mesh
    k = sol.k
    a = mesh.coefficient
    f = sol.problem.load if f is None else f
    maps = ElementMap.from_mesh(mesh)

    tables = ElementTables.build(mesh, k, sol.facet_degree)
    dim = dim_p(k)
    grad_u = np.einsum("nqia,ni->nqa", tables.gradients, sol.u)
    # a∇u_h ∈ P_{k-1}² 의 P_k² 계수 (정확)
    target = a[:, None, None] * np.einsum("nq,nqa,nqi->nai", tables.weights, grad_u, tables.values)
    flux_part = np.linalg.norm(flux.coefficients - target.reshape(-1, 2 * dim), axis=1) / np.sqrt(a)

    residual = data_residual(f, k - 1, maps)
    eta_cf = flux_part + mesh.diameters / np.pi * residual / np.sqrt(a)
    eta_nc = _stiffness_norm(tables, sol.u - potential.coefficients, a)

    defect = primal_trace_defect(sol, tables)
    jump = np.einsum("nj,njm->n", sol.alpha, defect**2)

    estimate = ErrorEstimate(
        scheme=SchemeType.PRIMAL,
        eta_cf=eta_cf,
        eta_nc=eta_nc,
        osc=mesh.diameters * residual / np.sqrt(a),
        jump=jump,
        off_facet_jump=jump.copy(),
        coefficient=np.asarray(a).copy(),
    )
    logger.debug("Primal estimate", eta=estimate.eta, eta_hdg=estimate.eta_hdg)
    return estimate


def estimate_mixed(
    sol,
    flux: EquilibratedFlux,
    potential: ConformingPotential,
    f: Optional[ScalarField] = None,
) -> ErrorEstimate:
    """
    Mixed 추정자

    off_facet_jump 는 F*_K 를 제외한 facet 의 jump 이며 single-facet 안정화에서는 정확히 0 입니다.

    Raises:
        EstimatorError: 다른 스킴/차수/메쉬에서 만든 재구성
    """
    from app.schemes.mixed import mixed_trace_defect

    _check_provenance(SchemeType.MIXED, sol, flux, potential, sol.k + 1, sol.k + 1)
    mesh = sol.mesh
    k = sol.k
    a = mesh.coefficient
    f = sol.problem.load if f is None else f
    maps = ElementMap.from_mesh(mesh)
    degree = k + 1

    sigma = embed_vector(sol.sigma, degree)
    flux_part = np.linalg.norm(flux.coefficients - sigma, axis=1) / np.sqrt(a)
    residual = data_residual(f, k, maps)
    eta_cf = flux_part + mesh.diameters / np.pi * residual / np.sqrt(a)

    tables = ElementTables.build(mesh, degree, degree)
    dim = dim_p(degree)
    sigma_q = np.einsum("nqi,nci->nqc", tables.values, sigma.reshape(-1, 2, dim))
    grad_star = np.einsum("nqia,ni->nqa", tables.gradients, potential.coefficients)
    diff = sigma_q - a[:, None, None] * grad_star
    eta_nc = np.sqrt(np.einsum("nq,nqa,nqa->n", tables.weights, diff, diff) / a)

    defect = mixed_trace_defect(sol)
    weighted = mesh.diameters[:, None] * sol.alpha * (defect**2).sum(axis=2)
    jump = weighted.sum(axis=1)
    off_facet = np.ones_like(weighted, dtype=bool)
    chosen = sol.chosen_facet
    has_choice = chosen >= 0
    off_facet[np.flatnonzero(has_choice), chosen[has_choice]] = False
    off_facet_jump = np.where(off_facet, weighted, 0.0).sum(axis=1)

    estimate = ErrorEstimate(
        scheme=SchemeType.MIXED,
        eta_cf=eta_cf,
        eta_nc=eta_nc,
        osc=mesh.diameters * residual / np.sqrt(a),
        jump=jump,
        off_facet_jump=off_facet_jump,
        coefficient=np.asarray(a).copy(),
    )
    if sol.stabilization == Stabilization.UNIFORM:
        logger.debug("Mixed jump ratio", ratio=estimate.jump_ratio)
    logger.debug("Mixed estimate", eta=estimate.eta, eta_hdg=estimate.eta_hdg)
    return estimate


# ===== 참오차 =====

@lru_cache(maxsize=None)
def _graded_rule(vertex: int, degree: int, levels: int) -> tuple[np.ndarray, np.ndarray]:
    """
    기준 삼각형 로컬 꼭짓점 쪽으로 기하 분할한 합성 규칙

    각 단계에서 꼭짓점에 붙은 절반 크기 삼각형만 다시 분할합니다.

    Returns:
        (points (n, 2), weights (n,)) 가중치 합 1/2
    """
    from app.core.basis import REF_VERTICES

    rule = quadrature_rule(Domain.TRIANGLE, degree)
    corner = REF_VERTICES[vertex]
    b = REF_VERTICES[(vertex + 1) % 3]
    c = REF_VERTICES[(vertex + 2) % 3]

    pieces: list[np.ndarray] = []
    for _ in range(levels):
        mb = 0.5 * (corner + b)
        mc = 0.5 * (corner + c)
        pieces.append(np.array([mb, b, c]))
        pieces.append(np.array([mb, c, mc]))
        b, c = mb, mc
    pieces.append(np.array([corner, b, c]))

    points, weights = [], []
    for tri in pieces:
        J = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
        det = abs(np.linalg.det(J))
        points.append(tri[0][None, :] + rule.points @ J.T)
        weights.append(rule.weights * det)
    return np.concatenate(points), np.concatenate(weights)


def _singular_elements(mesh: Mesh, singular_points) -> dict[int, int]:
    """특이점에 닿는 요소 → 해당 로컬 꼭짓점"""
    touched: dict[int, int] = {}
    corners = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
    for point in singular_points:
        distance = np.linalg.norm(corners - np.asarray(point)[None, None, :], axis=2)
        hit = distance <= GEOMETRY_TOL * mesh.diameters[:, None]
        for K, local in zip(*np.nonzero(hit)):
            touched.setdefault(int(K), int(local))
    return touched


def true_error(sol, degree: Optional[int] = None) -> float:
    """
    정확해 대비 에너지 (반)노름 오차

    - primal: (Σ ‖a^{1/2}(∇u - ∇u_h)‖²_K)^{1/2}
    - mixed:  (Σ ‖a^{1/2}∇u - a^{-1/2}σ_h‖²_K)^{1/2}

    특이점에 닿는 요소는 꼭짓점 쪽 기하 분할 규칙을 추가로 사용합니다.

    Args:
        sol: PrimalSolution 또는 MixedSolution
        degree: 적분 차수 (기본 error_quadrature_degree)

    Raises:
        EstimatorError: 정확해가 없는 문제
    """
    settings = get_settings()
    exact = sol.problem.exact
    if exact is None:
        raise EstimatorError(f"Problem '{sol.problem.name}' has no exact solution")
    degree = settings.error_quadrature_degree if degree is None else degree
    mesh = sol.mesh
    maps = ElementMap.from_mesh(mesh)
    mixed = hasattr(sol, "sigma")

    def squared(elements: np.ndarray, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
        sub = maps[elements]
        x = sub.to_physical(points)
        grad_exact = np.asarray(exact.gradient(x.reshape(-1, 2)), dtype=float).reshape(x.shape)
        a = mesh.coefficient[elements][:, None, None]
        basis = CellBasis(sol.k)
        if mixed:
            phi = basis.values(points)
            dim = dim_p(sol.k)
            sigma = np.einsum("qi,nci->nqc", phi, sol.sigma[elements].reshape(-1, 2, dim))
            sigma = sigma * sub.scale[:, None, None]
            diff = (a * grad_exact - sigma) / np.sqrt(a)
        else:
            grads = sub.physical_gradients(basis.gradients(points))
            grad_h = np.einsum("nqia,ni->nqa", grads, sol.u[elements])
            diff = np.sqrt(a) * (grad_exact - grad_h)
        return 2.0 * sub.area * np.einsum("q,nqa,nqa->n", weights, diff, diff)

    touched = _singular_elements(mesh, exact.singular_points)
    regular = np.array([K for K in range(mesh.n_elements) if K not in touched], dtype=np.int64)
    total = 0.0
    if len(regular):
        rule = quadrature_rule(Domain.TRIANGLE, degree)
        total += float(squared(regular, rule.points, rule.weights).sum())
    for K, local in sorted(touched.items()):
        points, weights = _graded_rule(local, degree, settings.singular_subdivision_levels)
        total += float(squared(np.array([K]), points, weights).sum())
    return float(np.sqrt(total))
