"""HDG 후처리: 평형 flux 와 적합 potential 재구성

- EquilibratedFlux: 요소별 BDM 형 국소 풀이로 얻은 σ* ∈ H(div)
    * facet 모멘트: ⟨σ*·n, v̂⟩_F = ⟨σ̂·n, v̂⟩_F
    * 발산 모멘트: (∇·σ*, v)_K = -(f, v)_K, v 는 평균 0 다항식
    * 버블 모멘트: (σ*, τ)_K = (목표장, τ)_K, τ 는 발산 0 버블
- ConformingPotential: Lagrange 절점 평균으로 얻은 연속 potential u*
- local_potential_mixed: mixed 해에서 차수 k+1 불연속 potential 국소 복원

σ* 차수는 primal k, mixed k+1 이고 어느 경우든 발산은 P_{차수-1} 로 평형됩니다.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Mapping, Optional, Union

import numpy as np

from app.config import get_settings
from app.core.basis import (
    CellBasis,
    ElementMap,
    degree_of,
    dim_p,
    divfree_bubble_basis,
    embed_vector,
    evaluate_at,
    project_cells,
)
from app.core.errors import AssemblyError, SingularMatrixError
from app.core.hybrid import ElementTables, NumericalFlux
from app.core.linalg import dense_solve
from app.core.mesh import Mesh
from app.core.models import SchemeType
from app.utils.logger import get_logger

logger = get_logger(__name__)

ScalarField = Callable[[np.ndarray], np.ndarray]
DirichletData = Mapping[str, Optional[ScalarField]]


# ===== 평형 flux =====

@dataclass(frozen=True, eq=False)
class EquilibratedFlux:
    """
    평형 flux σ*

    coefficients 는 요소별 VectorCellBasis(degree) 계수 (번호 c·dim P_degree + i) 입니다.
    provenance / scheme_degree 는 추정기에서 출처 확인에 사용합니다.
    """
    mesh: Mesh
    degree: int
    coefficients: np.ndarray  # (nt, 2·dim P_degree)
    provenance: SchemeType
    scheme_degree: int
    load: np.ndarray  # (nt, ≥ dim P_{degree-1}) (f, φ_i)_K
    normal_flux: NumericalFlux

    @property
    def dim(self) -> int:
        return dim_p(self.degree)

    def components(self) -> np.ndarray:
        """(nt, 2, dim P_degree)"""
        return self.coefficients.reshape(self.mesh.n_elements, 2, self.dim)

    def values(self, tables: ElementTables) -> np.ndarray:
        """적분점 값 (nt, nq, 2), tables.k 는 degree 와 같아야 함"""
        return np.einsum("nqi,nci->nqc", tables.values, self.components())

    def values_at(self, elements: np.ndarray, points: np.ndarray) -> np.ndarray:
        """
        지정 요소의 물리 좌표 점에서 값

        Args:
            elements: (n,) 요소 번호
            points: (n, nq, 2)

        Returns:
            (n, nq, 2)
        """
        maps = ElementMap.from_mesh(self.mesh)[elements]
        comps = self.components()[elements]
        return np.stack([evaluate_at(comps[:, c], maps, points) for c in range(2)], axis=-1)


def _flux_system_blocks(mesh: Mesh, degree: int) -> tuple[ElementTables, np.ndarray, np.ndarray]:
    """
    facet 모멘트 행렬과 발산 모멘트 행렬

    Returns:
        (tables, C (nt, 3(degree+1), 2dim), divergence (nt, dim, 2dim))
    """
    tables = ElementTables.build(mesh, degree, degree)
    nt = mesh.n_elements
    dim = dim_p(degree)
    C = np.einsum(
        "nfq,nfqi,nfc,nfqm->nfmci",
        tables.facet_weights,
        tables.trace_values,
        tables.normals,
        tables.facet_values,
    ).reshape(nt, 3 * (degree + 1), 2 * dim)
    # (∂_c φ_j, φ_i)_K, 열 번호 c·dim + j
    divergence = np.einsum(
        "nq,nqi,nqjc->nicj", tables.weights, tables.values, tables.gradients
    ).reshape(nt, dim, 2 * dim)
    return tables, C, divergence


def _equilibrate(
    mesh: Mesh,
    degree: int,
    flux: NumericalFlux,
    load: np.ndarray,
    target: np.ndarray,
) -> np.ndarray:
    """
    요소별 정사각 BDM 형 시스템 풀이

    Args:
        degree: σ* 차수
        flux: σ̂·n (차수 <= degree)
        load: (f, φ_i)_K, 처음 dim P_{degree-1} 개 사용
        target: 버블 모멘트 목표장의 P_degree² 계수 (nt, 2dim)

    Raises:
        SingularMatrixError: 국소 시스템 특이 (요소 번호 포함)
    """
    tables, C, divergence = _flux_system_blocks(mesh, degree)
    nt = mesh.n_elements
    n_unknowns = 2 * dim_p(degree)
    n_div = dim_p(degree - 1)
    facet_rhs = flux.padded(degree).reshape(nt, -1)
    vertices = mesh.vertices[mesh.triangles]

    coefficients = np.empty((nt, n_unknowns))
    for K in range(nt):
        bubbles = divfree_bubble_basis(degree, vertices[K])
        matrix = np.vstack([C[K], divergence[K, 1:n_div], bubbles])
        rhs = np.concatenate([facet_rhs[K], -load[K, 1:n_div], bubbles @ target[K]])
        if matrix.shape != (n_unknowns, n_unknowns):
            raise AssemblyError(
                f"Flux system of element {K} has shape {matrix.shape}, expected {n_unknowns} square"
            )
        try:
            coefficients[K] = dense_solve(matrix, rhs)
        except SingularMatrixError as e:
            raise e.on_element(K) from e
    return coefficients


def equilibrated_flux_primal(sol, flux: Optional[NumericalFlux] = None) -> EquilibratedFlux:
    """
    primal 해의 평형 flux (차수 k)

    버블 목표장은 a∇u_h 이며, δ = 1 이면 σ̂·n ∈ P_{k-1}(F) 를 P_k(F) 로 0 확장해 사용합니다.

    Args:
        sol: PrimalSolution
        flux: 수치 flux (기본 numerical_flux_primal(sol))
    """
    from app.schemes.primal import numerical_flux_primal

    mesh = sol.mesh
    k = sol.k
    if flux is None:
        flux = numerical_flux_primal(sol)

    tables = ElementTables.build(mesh, k, k)
    dim = dim_p(k)
    # (a ∂_c u_h, φ_i)_K
    grad_u = np.einsum("nqia,ni->nqa", tables.gradients, sol.u)
    target = mesh.coefficient[:, None, None] * np.einsum(
        "nq,nqa,nqi->nai", tables.weights, grad_u, tables.values
    )
    coefficients = _equilibrate(mesh, k, flux, sol.load, target.reshape(-1, 2 * dim))

    logger.debug("Primal flux equilibrated", k=k, n_elements=mesh.n_elements)
    return EquilibratedFlux(
        mesh=mesh,
        degree=k,
        coefficients=coefficients,
        provenance=SchemeType.PRIMAL,
        scheme_degree=k,
        load=sol.load,
        normal_flux=flux,
    )


def equilibrated_flux_mixed(sol, flux: Optional[NumericalFlux] = None) -> EquilibratedFlux:
    """
    mixed 해의 평형 flux (차수 k+1), 버블 목표장은 σ_h

    Args:
        sol: MixedSolution
        flux: 수치 flux (기본 numerical_flux_mixed(sol))
    """
    from app.schemes.mixed import numerical_flux_mixed

    mesh = sol.mesh
    degree = sol.k + 1
    if flux is None:
        flux = numerical_flux_mixed(sol)

    target = embed_vector(sol.sigma, degree)
    coefficients = _equilibrate(mesh, degree, flux, sol.load, target)

    logger.debug("Mixed flux equilibrated", k=sol.k, n_elements=mesh.n_elements)
    return EquilibratedFlux(
        mesh=mesh,
        degree=degree,
        coefficients=coefficients,
        provenance=SchemeType.MIXED,
        scheme_degree=sol.k,
        load=sol.load,
        normal_flux=flux,
    )


@dataclass(frozen=True)
class EquilibrationReport:
    """평형 flux 진단 (모두 요소별 상대값)"""
    divergence: np.ndarray  # (nt,) ‖∇·σ* + Π f‖_K / (‖σ*‖_K/h_K + ‖Π f‖_K)
    trace: np.ndarray  # (nt,) facet 모멘트 불일치
    normal_jump: float  # 내부 facet 적분점 ⟦σ*·n⟧ 최대 상대값

    @property
    def max_divergence(self) -> float:
        return float(self.divergence.max(initial=0.0))

    @property
    def max_trace(self) -> float:
        return float(self.trace.max(initial=0.0))

    def passed(self, tol: float) -> bool:
        return max(self.max_divergence, self.max_trace, self.normal_jump) <= tol


def _relative(values: np.ndarray, scales: np.ndarray) -> np.ndarray:
    return np.divide(values, scales, out=np.array(values, dtype=float), where=scales > 0)


def verify_equilibration(
    flux: EquilibratedFlux,
    f: Union[ScalarField, np.ndarray, None] = None,
    mesh: Optional[Mesh] = None,
) -> EquilibrationReport:
    """
    평형 조건 재검증

    - 발산: ∇·σ* + Π_{degree-1} f = 0 (요소별)
    - 법선 trace: σ*·n 의 P_degree(F) 모멘트 = σ̂·n
    - H(div): 내부 facet 적분점에서 양쪽 σ*·n 일치

    Args:
        flux: 평형 flux
        f: 하중 함수 또는 하중 모멘트 (기본 flux.load)
        mesh: 메쉬 (기본 flux.mesh)
    """
    settings = get_settings()
    mesh = flux.mesh if mesh is None else mesh
    degree = flux.degree
    n_div = dim_p(degree - 1)
    _, C, divergence = _flux_system_blocks(mesh, degree)

    if f is None:
        projected = flux.load[:, :n_div]
    elif callable(f):
        quad = 2 * flux.scheme_degree + settings.load_quadrature_excess
        projected = project_cells(f, degree - 1, ElementMap.from_mesh(mesh), degree=quad)
    else:
        projected = np.asarray(f, dtype=float)[:, :n_div]

    div = np.einsum("nij,nj->ni", divergence, flux.coefficients)
    div[:, :n_div] += projected
    sigma_norm = np.linalg.norm(flux.coefficients, axis=1)
    h = mesh.diameters
    div_scale = sigma_norm / h + np.linalg.norm(projected, axis=1)
    div_rel = _relative(np.linalg.norm(div, axis=1), div_scale)

    nt = mesh.n_elements
    target = flux.normal_flux.padded(degree).reshape(nt, -1)
    mismatch = np.einsum("nij,nj->ni", C, flux.coefficients) - target
    trace_scale = np.linalg.norm(target, axis=1) + sigma_norm / np.sqrt(h)
    trace_rel = _relative(np.linalg.norm(mismatch, axis=1), trace_scale)

    report = EquilibrationReport(
        divergence=div_rel,
        trace=trace_rel,
        normal_jump=_normal_jump(flux, mesh),
    )
    worst = max(report.max_divergence, report.max_trace, report.normal_jump)
    if worst > settings.equilibration_warn_tol:
        logger.warning(
            "Equilibration residual above tolerance",
            divergence=report.max_divergence,
            trace=report.max_trace,
            normal_jump=report.normal_jump,
            tolerance=settings.equilibration_warn_tol,
        )
    return report


def _normal_jump(flux: EquilibratedFlux, mesh: Mesh) -> float:
    interior = mesh.interior_facets
    if len(interior) == 0:
        return 0.0
    n_points = flux.degree + 2
    s = (np.arange(n_points) + 0.5) / n_points
    start = mesh.vertices[mesh.facets[interior, 0]]
    end = mesh.vertices[mesh.facets[interior, 1]]
    points = start[:, None, :] + s[None, :, None] * (end - start)[:, None, :]

    left = mesh.facet_elements[interior, 0]
    right = mesh.facet_elements[interior, 1]
    normal = mesh.normals[left, mesh.facet_local[interior, 0]]
    sigma_left = flux.values_at(left, points)
    sigma_right = flux.values_at(right, points)

    jump = np.abs(np.einsum("nqc,nc->nq", sigma_left - sigma_right, normal)).max(axis=1)
    scale = np.maximum(
        np.linalg.norm(sigma_left, axis=2).max(axis=1), np.linalg.norm(sigma_right, axis=2).max(axis=1)
    )
    return float(_relative(jump, scale).max())


# ===== Lagrange 절점 =====

def _lattice(p: int) -> np.ndarray:
    """무게중심 격자 (i, j, l), i + j + l = p (dim P_p, 3)"""
    rows = []
    for d in range(p + 1):
        for l in range(d + 1):
            rows.append((p - d, d - l, l))
    return np.array(rows)


@dataclass(frozen=True, eq=False)
class LagrangeNodes:
    """
    차수 p 연속 Lagrange 절점 번호

    번호 순서: 꼭짓점, facet 당 p-1 개 (전역 매개 s = i/p), 요소 내부 절점
    """
    mesh: Mesh
    degree: int
    element_nodes: np.ndarray  # (nt, dim P_p) 전역 절점 번호
    reference_points: np.ndarray  # (dim P_p, 2)
    points: np.ndarray  # (n_nodes, 2)
    boundary_tags: tuple[str, ...]  # 절점별 경계 태그, 내부는 ""
    vandermonde: np.ndarray  # V[a, i] = ψ_i(x̂_a)

    @classmethod
    def build(cls, mesh: Mesh, degree: int) -> "LagrangeNodes":
        if degree < 1:
            raise ValueError(f"Lagrange nodes need degree >= 1, got {degree}")
        p = degree
        nv = mesh.n_vertices
        nt = mesh.n_elements
        n_edge = p - 1
        n_inner = (p - 1) * (p - 2) // 2
        edge_offset = nv
        inner_offset = nv + mesh.n_facets * n_edge

        lattice = _lattice(p)
        reference_points = lattice[:, 1:] / p
        start = np.stack([mesh.triangles[:, (j + 1) % 3] for j in range(3)], axis=1)
        forward = start == mesh.facets[mesh.element_facets, 0]

        element_nodes = np.empty((nt, len(lattice)), dtype=np.int64)
        inner_position = 0
        for a, (i, j, l) in enumerate(lattice):
            bary = (i, j, l)
            zeros = [t for t in range(3) if bary[t] == 0]
            if len(zeros) == 2:
                vertex = ({0, 1, 2} - set(zeros)).pop()
                element_nodes[:, a] = mesh.triangles[:, vertex]
            elif len(zeros) == 1:
                local = zeros[0]
                along = bary[(local + 2) % 3]  # 로컬 진행 방향 s·p
                position = np.where(forward[:, local], along, p - along)
                element_nodes[:, a] = edge_offset + mesh.element_facets[:, local] * n_edge + position - 1
            else:
                element_nodes[:, a] = inner_offset + np.arange(nt) * n_inner + inner_position
                inner_position += 1

        n_nodes = inner_offset + nt * n_inner
        maps = ElementMap.from_mesh(mesh)
        points = np.empty((n_nodes, 2))
        points[element_nodes.ravel()] = maps.to_physical(reference_points).reshape(-1, 2)

        tags = [""] * n_nodes
        boundary = mesh.boundary_facets
        for f in boundary[::-1]:
            # 번호가 작은 경계 facet 의 태그가 우선
            tag = mesh.boundary_tags[f]
            v0, v1 = mesh.facets[f]
            tags[v0] = tags[v1] = tag
            for position in range(n_edge):
                tags[edge_offset + f * n_edge + position] = tag

        vandermonde = CellBasis(p).values(reference_points)
        return cls(
            mesh=mesh,
            degree=p,
            element_nodes=element_nodes,
            reference_points=reference_points,
            points=points,
            boundary_tags=tuple(tags),
            vandermonde=vandermonde,
        )

    @property
    def n_nodes(self) -> int:
        return len(self.points)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        return np.array([tag != "" for tag in self.boundary_tags])

    def to_nodal(self, coefficients: np.ndarray) -> np.ndarray:
        """요소 모드 계수 → 요소 절점값 (nt, dim)"""
        scale = 1.0 / np.sqrt(2.0 * self.mesh.areas)
        return np.einsum("ai,ni->na", self.vandermonde, coefficients) * scale[:, None]

    def to_modal(self, nodal: np.ndarray) -> np.ndarray:
        """요소 절점값 → 모드 계수 (nt, dim)"""
        coefficients = np.linalg.solve(self.vandermonde, nodal.T).T
        return coefficients * np.sqrt(2.0 * self.mesh.areas)[:, None]


@dataclass(frozen=True, eq=False)
class ConformingPotential:
    """연속 potential u* (절점값과 요소별 모드 계수)"""
    nodes: LagrangeNodes
    values: np.ndarray  # (n_nodes,)
    coefficients: np.ndarray  # (nt, dim P_degree)

    @property
    def degree(self) -> int:
        return self.nodes.degree

    @property
    def mesh(self) -> Mesh:
        return self.nodes.mesh


def average_potential(
    u_dc: np.ndarray,
    mesh: Mesh,
    dirichlet: Optional[DirichletData] = None,
    nodes: Optional[LagrangeNodes] = None,
) -> ConformingPotential:
    """
    불연속 다항식 장의 절점 평균

    Flow:
        1. 요소 모드 계수 → 절점값
        2. 공유 절점은 인접 요소 값의 평균
        3. 경계 절점은 Dirichlet 값 (태그 데이터가 없거나 None 이면 0)

    Args:
        u_dc: (nt, dim P_m) 요소 계수, m >= 1
        mesh: 메쉬
        dirichlet: 경계 태그 → g (None 이면 동차)
        nodes: 미리 만든 절점 테이블

    Returns:
        ConformingPotential
    """
    u_dc = np.asarray(u_dc, dtype=float)
    if nodes is None:
        nodes = LagrangeNodes.build(mesh, degree_of(u_dc.shape[1]))

    nodal = nodes.to_nodal(u_dc)
    total = np.zeros(nodes.n_nodes)
    count = np.zeros(nodes.n_nodes)
    np.add.at(total, nodes.element_nodes.ravel(), nodal.ravel())
    np.add.at(count, nodes.element_nodes.ravel(), 1.0)
    values = total / count

    boundary = np.flatnonzero(nodes.boundary_mask)
    values[boundary] = 0.0
    if dirichlet is not None:
        for tag in sorted(set(nodes.boundary_tags[i] for i in boundary)):
            g = dirichlet.get(tag)
            if g is None:
                continue
            selected = np.array([i for i in boundary if nodes.boundary_tags[i] == tag])
            values[selected] = np.asarray(g(nodes.points[selected]), dtype=float).reshape(-1)

    coefficients = nodes.to_modal(values[nodes.element_nodes])
    return ConformingPotential(nodes=nodes, values=values, coefficients=coefficients)


def potential_primal(sol) -> ConformingPotential:
    """primal u* = 평균(u_h), 차수 k"""
    return average_potential(sol.u, sol.mesh, sol.problem.dirichlet)


def local_potential_mixed(sol) -> np.ndarray:
    """
    mixed 해의 요소별 차수 k+1 potential

    (a∇u*, ∇v)_K = (σ_h, ∇v)_K (v ∈ P_{k+1}), (u*, 1)_K = (u_h, 1)_K

    평균 0 부분공간 (φ_i, i >= 1) 위 강성 행렬로 풀고 φ_0 계수는 u_h 의 것을 사용합니다.

    Returns:
        (nt, dim P_{k+1})
    """
    mesh = sol.mesh
    degree = sol.k + 1
    tables = ElementTables.build(mesh, degree, degree)
    dim = dim_p(degree)
    a = mesh.coefficient

    sigma = np.einsum("nqi,nci->nqc", tables.values, embed_vector(sol.sigma, degree).reshape(-1, 2, dim))
    stiffness = a[:, None, None] * np.einsum(
        "nq,nqia,nqja->nij", tables.weights, tables.gradients, tables.gradients
    )
    rhs = np.einsum("nq,nqa,nqia->ni", tables.weights, sigma, tables.gradients)

    coefficients = np.zeros((mesh.n_elements, dim))
    coefficients[:, 0] = sol.u[:, 0]
    for K in range(mesh.n_elements):
        try:
            coefficients[K, 1:] = dense_solve(stiffness[K, 1:, 1:], rhs[K, 1:])
        except SingularMatrixError as e:
            raise e.on_element(K) from e
    return coefficients


def potential_mixed(sol) -> ConformingPotential:
    """mixed u* = 평균(국소 차수 k+1 potential)"""
    return average_potential(local_potential_mixed(sol), sol.mesh, sol.problem.dirichlet)


def potential_jump(potential: ConformingPotential) -> float:
    """내부 facet 점에서 |u*_L - u*_R| 최대값 (max|u*| 대비 상대값)"""
    mesh = potential.mesh
    interior = mesh.interior_facets
    if len(interior) == 0:
        return 0.0
    n_points = potential.degree + 2
    s = (np.arange(n_points) + 0.5) / n_points
    start = mesh.vertices[mesh.facets[interior, 0]]
    end = mesh.vertices[mesh.facets[interior, 1]]
    points = start[:, None, :] + s[None, :, None] * (end - start)[:, None, :]

    maps = ElementMap.from_mesh(mesh)
    left = mesh.facet_elements[interior, 0]
    right = mesh.facet_elements[interior, 1]
    u_left = evaluate_at(potential.coefficients[left], maps[left], points)
    u_right = evaluate_at(potential.coefficients[right], maps[right], points)
    scale = max(float(np.abs(potential.values).max(initial=0.0)), np.finfo(float).tiny)
    return float(np.abs(u_left - u_right).max() / scale)
