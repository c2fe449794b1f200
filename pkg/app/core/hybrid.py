"""HDG 공통 기반

- ElementTables: 모든 요소의 물리 적분점 값/기울기/trace 를 한 번에 계산 (einsum 배치)
- LocalSystem: 요소 블록 (x = 요소 미지수, λ = 로컬 facet trace)
- 정적 축약 / 복원, 축약 없는 전체 풀이 (검증용)
- NumericalFlux 와 국소 보존 검사

λ 로컬 번호는 (로컬 facet j, facet 모드 m) → j·nm + m,
전역 skeleton 번호는 facet f 의 모드 m → f·nm + m 입니다.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from app.config import get_settings
from app.core.basis import (
    ElementMap,
    cell_table,
    dim_p,
    facet_table,
    project_cells,
    project_facet,
    reference_facet_points,
    trace_table,
)
from app.core.errors import AssemblyError, SingularMatrixError
from app.core.linalg import (
    ElementContribution,
    SparseSpd,
    assemble_condensed,
    dense_solve,
    monolithic_solve,
    sparse_spd_solve,
)
from app.core.mesh import Mesh
from app.core.problems import ProblemSpec
from app.utils.logger import get_logger

logger = get_logger(__name__)


# ===== 요소 테이블 =====

@dataclass(frozen=True, eq=False)
class ElementTables:
    """차수 k 요소 기저와 차수 m facet 기저의 물리 적분점 테이블"""
    k: int
    m: int
    maps: ElementMap
    points: np.ndarray  # (nt, nq, 2)
    weights: np.ndarray  # (nt, nq) 물리 가중치
    values: np.ndarray  # (nt, nq, dim)
    gradients: np.ndarray  # (nt, nq, dim, 2)
    facet_points: np.ndarray  # (nt, 3, nqf, 2)
    facet_weights: np.ndarray  # (nt, 3, nqf) 물리 가중치
    trace_values: np.ndarray  # (nt, 3, nqf, dim)
    trace_gradients: np.ndarray  # (nt, 3, nqf, dim, 2)
    facet_values: np.ndarray  # (nt, 3, nqf, m+1) 전역 매개 기준
    normals: np.ndarray  # (nt, 3, 2)

    @classmethod
    def build(cls, mesh: Mesh, k: int, m: int, degree: Optional[int] = None) -> "ElementTables":
        """
        Args:
            mesh: 메쉬
            k: 요소 다항식 차수
            m: facet 다항식 차수
            degree: 적분 차수 (기본 2·max(k, m) + assembly_quadrature_excess)
        """
        if degree is None:
            degree = 2 * max(k, m) + get_settings().assembly_quadrature_excess
        maps = ElementMap.from_mesh(mesh)
        cell = cell_table(k, degree)
        trace = trace_table(k, degree)
        facet = facet_table(m, degree)

        scale = maps.scale
        points = maps.to_physical(cell.points)
        weights = 2.0 * maps.area[:, None] * cell.weights[None, :]
        values = cell.values[None, :, :] * scale[:, None, None]
        gradients = maps.physical_gradients(cell.gradients)

        nt = mesh.n_elements
        lengths = mesh.local_facet_lengths
        facet_points = np.stack(
            [maps.to_physical(reference_facet_points(j, trace.s)) for j in range(3)], axis=1
        )
        facet_weights = lengths[:, :, None] * trace.weights[None, None, :]
        trace_values = trace.values[None] * scale[:, None, None, None]
        trace_gradients = np.stack(
            [maps.physical_gradients(trace.gradients[j]) for j in range(3)], axis=1
        )

        forward = facet_forward(mesh)
        facet_values = np.where(
            forward[:, :, None, None], facet[0][None, None], facet[1][None, None]
        ) / np.sqrt(lengths)[:, :, None, None]

        tables = cls(
            k=k,
            m=m,
            maps=maps,
            points=points,
            weights=weights,
            values=values,
            gradients=gradients,
            facet_points=facet_points,
            facet_weights=facet_weights,
            trace_values=trace_values,
            trace_gradients=trace_gradients,
            facet_values=facet_values,
            normals=np.asarray(mesh.normals),
        )
        logger.debug("Element tables built", n_elements=nt, k=k, m=m, degree=degree)
        return tables

    @property
    def dim(self) -> int:
        return dim_p(self.k)

    @property
    def n_facet_modes(self) -> int:
        return self.m + 1

    def normal_gradients(self) -> np.ndarray:
        """∇φ_i·n (nt, 3, nqf, dim)"""
        return np.einsum("njqib,njb->njqi", self.trace_gradients, self.normals)

    def trace_moments(self) -> np.ndarray:
        """⟨φ_i, ψ_m⟩_F (nt, 3, dim, m+1)"""
        return np.einsum("njq,njqi,njqm->njim", self.facet_weights, self.trace_values, self.facet_values)

    def normal_gradient_moments(self) -> np.ndarray:
        """⟨∇φ_i·n, ψ_m⟩_F (nt, 3, dim, m+1)"""
        return np.einsum(
            "njq,njqi,njqm->njim", self.facet_weights, self.normal_gradients(), self.facet_values
        )


def facet_forward(mesh: Mesh) -> np.ndarray:
    """(nt, 3) 로컬 facet 진행 방향이 전역 매개화와 같은지"""
    start = np.stack([mesh.triangles[:, (j + 1) % 3] for j in range(3)], axis=1)
    return start == mesh.facets[mesh.element_facets, 0]


def facet_dofs(mesh: Mesh, nm: int) -> np.ndarray:
    """요소별 로컬 λ → 전역 skeleton 번호 (nt, 3·nm)"""
    return (mesh.element_facets[:, :, None] * nm + np.arange(nm)[None, None, :]).reshape(mesh.n_elements, -1)


def load_moments(problem: ProblemSpec, k: int, maps: Optional[ElementMap] = None) -> np.ndarray:
    """(f, φ_i)_K (nt, dim P_k), 적분 차수 2k + load_quadrature_excess"""
    maps = ElementMap.from_mesh(problem.mesh) if maps is None else maps
    return project_cells(problem.load, k, maps)


def dirichlet_trace(problem: ProblemSpec, m: int) -> tuple[np.ndarray, np.ndarray]:
    """
    경계 facet 의 P_M g 계수

    Returns:
        (경계 facet 번호, (n_boundary, m+1) 계수)
    """
    mesh = problem.mesh
    boundary = mesh.boundary_facets
    values = np.zeros((len(boundary), m + 1))
    for row, f in enumerate(boundary):
        g = problem.boundary_data(mesh.boundary_tags[f])
        if g is not None:
            values[row] = project_facet(g, m, mesh.vertices[mesh.facets[f]])
    return boundary, values


# ===== 로컬 시스템 / 정적 축약 =====

@dataclass(frozen=True, eq=False)
class LocalSystem:
    """
    요소별 블록 (행 = 시험함수)

    [A_xx A_xλ] [x]   [b]
    [A_λx A_λλ] [λ] = [0]
    """
    A_xx: np.ndarray  # (nt, nx, nx)
    A_xl: np.ndarray  # (nt, nx, nl)
    A_lx: np.ndarray  # (nt, nl, nx)
    A_ll: np.ndarray  # (nt, nl, nl)
    load: np.ndarray  # (nt, nx)

    @property
    def n_elements(self) -> int:
        return self.A_xx.shape[0]

    def element_matrix(self, element: int) -> np.ndarray:
        """요소 전체 블록 행렬 (nx + nl, nx + nl)"""
        return np.block(
            [
                [self.A_xx[element], self.A_xl[element]],
                [self.A_lx[element], self.A_ll[element]],
            ]
        )


@dataclass(frozen=True, eq=False)
class CondensedSystem:
    """정적 축약 결과와 복원 정보"""
    skeleton: SparseSpd
    local_load: np.ndarray  # (nt, nx) A_xx⁻¹ b
    local_lift: np.ndarray  # (nt, nx, nl) A_xx⁻¹ A_xλ
    dofs: np.ndarray  # (nt, nl)


def condense(
    system: LocalSystem,
    mesh: Mesh,
    nm: int,
    constrained_facets: np.ndarray,
    constrained_values: np.ndarray,
) -> CondensedSystem:
    """
    요소 미지수 소거 후 skeleton 시스템 조립

    S_K = A_λλ - A_λx A_xx⁻¹ A_xλ, g_K = -A_λx A_xx⁻¹ b

    Raises:
        SingularMatrixError: A_xx 가 특이한 요소 (요소 번호 포함)
        AssemblyError: Schur complement 비대칭
    """
    settings = get_settings()
    nt = system.n_elements
    nx = system.A_xx.shape[1]
    nl = system.A_ll.shape[1]
    if nl != 3 * nm:
        raise AssemblyError(f"Local trace block has {nl} rows, expected {3 * nm}")

    dofs = facet_dofs(mesh, nm)
    local_load = np.empty((nt, nx))
    local_lift = np.empty((nt, nx, nl))
    contributions = []

    for K in range(nt):
        rhs = np.column_stack([system.load[K], system.A_xl[K]])
        try:
            Y = dense_solve(system.A_xx[K], rhs)
        except SingularMatrixError as e:
            raise e.on_element(K) from e
        local_load[K] = Y[:, 0]
        local_lift[K] = Y[:, 1:]

        S = system.A_ll[K] - system.A_lx[K] @ local_lift[K]
        scale = max(float(np.abs(S).max()), np.finfo(float).tiny)
        asymmetry = float(np.abs(S - S.T).max()) / scale
        if asymmetry > settings.symmetry_tol:
            raise AssemblyError(f"Schur complement of element {K} is not symmetric ({asymmetry:.3e})")
        S = 0.5 * (S + S.T)
        g = -system.A_lx[K] @ local_load[K]
        contributions.append(ElementContribution(dofs[K], S, g))

    constrained = (constrained_facets[:, None] * nm + np.arange(nm)[None, :]).ravel()
    skeleton = assemble_condensed(
        contributions, mesh.n_facets * nm, constrained, np.asarray(constrained_values).ravel()
    )
    return CondensedSystem(skeleton, local_load, local_lift, dofs)


def solve_condensed(condensed: CondensedSystem) -> tuple[np.ndarray, np.ndarray]:
    """
    skeleton 풀이 후 요소 미지수 복원

    Returns:
        (요소 미지수 (nt, nx), 전체 skeleton 벡터 (n_facets·nm,))
    """
    skeleton = condensed.skeleton
    trace = skeleton.expand(sparse_spd_solve(skeleton))
    local_trace = trace[condensed.dofs]
    x = condensed.local_load - np.einsum("nij,nj->ni", condensed.local_lift, local_trace)
    return x, trace


def solve_monolithic(
    system: LocalSystem,
    mesh: Mesh,
    nm: int,
    constrained_facets: np.ndarray,
    constrained_values: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """
    축약 없이 (x, λ) 전체 시스템 조립 및 풀이 (검증용)

    Returns:
        (요소 미지수 (nt, nx), 전체 skeleton 벡터)
    """
    nt, nx, _ = system.A_xx.shape
    n_cell = nt * nx
    n_trace = mesh.n_facets * nm
    dofs = facet_dofs(mesh, nm)
    cell_dofs = np.arange(n_cell).reshape(nt, nx)

    global_dofs = np.concatenate([cell_dofs, n_cell + dofs], axis=1)
    rows = np.repeat(global_dofs, global_dofs.shape[1], axis=1).ravel()
    cols = np.tile(global_dofs, (1, global_dofs.shape[1])).ravel()
    blocks = np.stack([system.element_matrix(K) for K in range(nt)])
    n = n_cell + n_trace
    A = sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    b = np.zeros(n)
    b[:n_cell] = system.load.ravel()

    constrained = n_cell + (constrained_facets[:, None] * nm + np.arange(nm)[None, :]).ravel()
    values = np.asarray(constrained_values, dtype=float).ravel()
    mask = np.ones(n, dtype=bool)
    mask[constrained] = False
    free = np.flatnonzero(mask)

    solution = np.zeros(n)
    solution[constrained] = values
    solution[free] = monolithic_solve(
        A[free][:, free], b[free] - A[free][:, constrained] @ values
    )
    return solution[:n_cell].reshape(nt, nx), solution[n_cell:]


# ===== 수치 flux / 보존 =====

@dataclass(frozen=True, eq=False)
class NumericalFlux:
    """
    요소 외향 법선 flux σ̂·n 의 facet 기저 계수

    coefficients[K, j] 는 요소 K 로컬 facet j 위 다항식 (전역 facet 매개 기준)
    """
    mesh: Mesh
    coefficients: np.ndarray  # (nt, 3, m+1)

    @property
    def degree(self) -> int:
        return self.coefficients.shape[2] - 1

    def facet_integrals(self) -> np.ndarray:
        """⟨σ̂·n, 1⟩_F (nt, 3)"""
        return self.coefficients[:, :, 0] * np.sqrt(self.mesh.local_facet_lengths)

    def padded(self, m: int) -> np.ndarray:
        """P_m(F) 로 0 확장한 계수 (nt, 3, m+1)"""
        if m < self.degree:
            raise ValueError(f"Cannot embed degree {self.degree} flux into P_{m}")
        out = np.zeros(self.coefficients.shape[:2] + (m + 1,))
        out[:, :, : self.degree + 1] = self.coefficients
        return out

    def facet_jumps(self) -> np.ndarray:
        """내부 facet 별 ‖⟦σ̂⟧‖_F / ‖{σ̂}‖_F"""
        mesh = self.mesh
        interior = mesh.interior_facets
        if len(interior) == 0:
            return np.zeros(0)
        left = self.coefficients[mesh.facet_elements[interior, 0], mesh.facet_local[interior, 0]]
        right = self.coefficients[mesh.facet_elements[interior, 1], mesh.facet_local[interior, 1]]
        jump = np.linalg.norm(left + right, axis=1)
        mean = np.linalg.norm(0.5 * (left - right), axis=1)
        return np.divide(jump, mean, out=np.zeros_like(jump), where=mean > 0)


@dataclass(frozen=True)
class ConservationReport:
    """국소 보존 진단"""
    residuals: np.ndarray  # (nt,) (f,1)_K + ⟨σ̂·n, 1⟩_∂K
    scales: np.ndarray  # (nt,) |(f,1)_K| + ‖σ̂‖_∂K
    max_facet_jump: float

    @property
    def max_relative_residual(self) -> float:
        if len(self.residuals) == 0:
            return 0.0
        rel = np.divide(
            np.abs(self.residuals), self.scales, out=np.abs(self.residuals), where=self.scales > 0
        )
        return float(rel.max())


def element_integrals(load: Callable[[np.ndarray], np.ndarray] | np.ndarray, mesh: Mesh) -> np.ndarray:
    """(f, 1)_K: 함수면 적분, (nt, dim) 하중 모멘트면 φ_0 성분에서 계산"""
    if callable(load):
        maps = ElementMap.from_mesh(mesh)
        return project_cells(load, 0, maps)[:, 0] * np.sqrt(mesh.areas)
    load = np.asarray(load, dtype=float)
    if load.ndim == 1:
        return load
    # φ_0 = 1/√|K|
    return load[:, 0] * np.sqrt(mesh.areas)


def check_conservation(
    flux: NumericalFlux,
    load: Callable[[np.ndarray], np.ndarray] | np.ndarray,
    mesh: Optional[Mesh] = None,
) -> ConservationReport:
    """
    국소 보존 (f,1)_K + ⟨σ̂·n, 1⟩_∂K = 0 과 facet 도약 검사

    Args:
        flux: 수치 flux
        load: f (함수), 요소별 (f,1)_K (nt,), 또는 하중 모멘트 (nt, dim)
        mesh: 메쉬 (기본 flux.mesh)
    """
    mesh = flux.mesh if mesh is None else mesh
    f_int = element_integrals(load, mesh)
    boundary_flux = flux.facet_integrals().sum(axis=1)
    residuals = f_int + boundary_flux
    # ‖σ̂‖_F = 계수 2-노름 (직교정규 facet 기저)
    scales = np.abs(f_int) + np.linalg.norm(flux.coefficients.reshape(mesh.n_elements, -1), axis=1)
    jumps = flux.facet_jumps()
    return ConservationReport(
        residuals=residuals,
        scales=scales,
        max_facet_jump=float(jumps.max()) if len(jumps) else 0.0,
    )


def trace_defect(trace_moments: np.ndarray, u: np.ndarray, trace: np.ndarray, mesh: Mesh) -> np.ndarray:
    """
    P_M u_h - û_h 의 facet 기저 계수

    Args:
        trace_moments: ⟨φ_i, ψ_m⟩_F (nt, 3, dim, nm)
        u: 요소 계수 (nt, dim)
        trace: skeleton 벡터 (n_facets·nm,)

    Returns:
        (nt, 3, nm)
    """
    nm = trace_moments.shape[3]
    local_trace = trace.reshape(-1, nm)[mesh.element_facets]
    return np.einsum("njim,ni->njm", trace_moments, u) - local_trace


def discrete_residual(
    system: LocalSystem,
    mesh: Mesh,
    nm: int,
    x: np.ndarray,
    trace: np.ndarray,
    constrained_facets: np.ndarray,
) -> float:
    """모든 시험함수에 대한 이산 방정식 잔차 (상대 max-norm)"""
    dofs = facet_dofs(mesh, nm)
    local_trace = trace[dofs]
    r_x = (
        np.einsum("nij,nj->ni", system.A_xx, x)
        + np.einsum("nij,nj->ni", system.A_xl, local_trace)
        - system.load
    )
    r_local = np.einsum("nij,nj->ni", system.A_lx, x) + np.einsum("nij,nj->ni", system.A_ll, local_trace)
    r_trace = np.zeros(mesh.n_facets * nm)
    np.add.at(r_trace, dofs.ravel(), r_local.ravel())
    r_trace[(constrained_facets[:, None] * nm + np.arange(nm)[None, :]).ravel()] = 0.0

    scale = max(
        float(np.abs(system.load).max(initial=0.0)),
        float(np.abs(np.einsum("nij,nj->ni", system.A_xx, x)).max(initial=0.0)),
        np.finfo(float).tiny,
    )
    return max(float(np.abs(r_x).max(initial=0.0)), float(np.abs(r_trace).max(initial=0.0))) / scale
