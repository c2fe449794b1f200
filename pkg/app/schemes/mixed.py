"""Mixed HDG (LDG-H)

미지수 (σ_h, u_h, û_h) ∈ P_k(K)² × P_k(K) × P_k(F), k >= 0

B((σ,u,û),(τ,v,v̂)) = Σ_K (a⁻¹σ, τ)_K + (u, ∇·τ)_K - ⟨û, τ·n⟩
                      + (σ, ∇v)_K - ⟨σ·n - α(u - û), v - v̂⟩

요소 미지수 순서는 x = (σ, u), σ 는 VectorCellBasis 번호 (성분 c, 모드 i) → c·dim + i
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.core.basis import dim_p
from app.core.errors import StabilizationError
from app.core.hybrid import (
    ElementTables,
    LocalSystem,
    NumericalFlux,
    condense,
    dirichlet_trace,
    discrete_residual,
    load_moments,
    solve_condensed,
    solve_monolithic,
    trace_defect,
)
from app.core.linalg import SparseSpd
from app.core.mesh import GEOMETRY_TOL, Mesh
from app.core.models import Stabilization
from app.core.problems import ProblemSpec
from app.utils.logger import get_logger

logger = get_logger(__name__)


FACET_CHOICES = ("newest", "longest")


@dataclass(frozen=True, eq=False)
class MixedSolution:
    """Mixed HDG 해"""
    problem: ProblemSpec
    k: int
    sigma: np.ndarray  # (nt, 2·dim P_k)
    u: np.ndarray  # (nt, dim P_k)
    trace: np.ndarray  # (n_facets·(k+1),)
    alpha: np.ndarray  # (nt, 3)
    load: np.ndarray  # (nt, dim P_k)
    stabilization: Stabilization
    chosen_facet: np.ndarray  # (nt,) single-facet 의 F*_K 로컬 번호, uniform 은 -1
    skeleton: Optional[SparseSpd] = None

    @property
    def mesh(self) -> Mesh:
        return self.problem.mesh

    @property
    def facet_degree(self) -> int:
        return self.k

    @property
    def facet_trace(self) -> np.ndarray:
        return self.trace.reshape(self.mesh.n_facets, -1)


# ===== 안정화 =====

def single_facet_choice(mesh: Mesh, rule: str = "newest") -> np.ndarray:
    """
    요소별 F*_K 로컬 번호

    - newest: 마지막 이분으로 생긴 변, 초기 요소는 최장변
    - longest: 최장변
    동률은 로컬 번호가 작은 쪽
    """
    if rule not in FACET_CHOICES:
        raise StabilizationError(f"Unknown facet choice '{rule}', expected one of {FACET_CHOICES}")
    lengths = mesh.local_facet_lengths
    tied = lengths >= lengths.max(axis=1, keepdims=True) * (1.0 - GEOMETRY_TOL)
    longest = np.argmax(tied, axis=1)
    if rule == "longest":
        return longest
    return np.where(mesh.bisection_edge >= 0, mesh.bisection_edge, longest)


def stabilization_mixed(
    mesh: Mesh,
    mode: Stabilization | str = Stabilization.UNIFORM,
    *,
    a: Optional[np.ndarray] = None,
    facet_choice: str = "newest",
) -> tuple[np.ndarray, np.ndarray]:
    """
    요소별 facet 안정화 파라미터

    - uniform: 세 facet 모두 α = a|_K
    - single-facet: F*_K 에서만 α = a|_K, 나머지 0

    Returns:
        ((nt, 3) α, (nt,) F*_K 로컬 번호 또는 -1)
    """
    mode = Stabilization(mode)
    a = mesh.coefficient if a is None else np.asarray(a, dtype=float)
    nt = mesh.n_elements

    if mode == Stabilization.UNIFORM:
        return np.repeat(a[:, None], 3, axis=1), np.full(nt, -1, dtype=np.int64)

    if mode == Stabilization.SINGLE_FACET:
        chosen = single_facet_choice(mesh, facet_choice)
        alpha = np.zeros((nt, 3))
        alpha[np.arange(nt), chosen] = a
        return alpha, chosen.astype(np.int64)

    raise StabilizationError(f"Stabilization '{mode.value}' is not a mixed stabilization")


# ===== 로컬 블록 =====

def local_matrices_mixed(
    mesh: Mesh,
    k: int,
    alpha: np.ndarray,
    load: Optional[np.ndarray] = None,
    tables: Optional[ElementTables] = None,
) -> LocalSystem:
    """
    모든 요소의 mixed 블록 (행 = 시험함수 τ, v, v̂)

    τ 행: [a⁻¹I, (u, ∇·τ), -⟨û, τ·n⟩]
    v 행: [(σ, ∇v) - ⟨σ·n, v⟩, ⟨αu, v⟩, -⟨αû, v⟩]
    v̂ 행: [⟨σ·n, v̂⟩, -⟨αu, v̂⟩, ⟨αû, v̂⟩]
    """
    if tables is None:
        tables = ElementTables.build(mesh, k, k)
    nt = mesh.n_elements
    dim = dim_p(k)
    nm = k + 1
    a = mesh.coefficient

    W, V, G = tables.weights, tables.values, tables.gradients
    Wf, Tv, normals, Fv = tables.facet_weights, tables.trace_values, tables.normals, tables.facet_values

    # (φ_j, ∂_c φ_i): τ = φ_i e_c 의 발산과 u = φ_j
    div_moments = np.einsum("nq,nqj,nqic->ncij", W, V, G).reshape(nt, 2 * dim, dim)
    grad_moments = np.einsum("nq,nqj,nqic->nicj", W, V, G).reshape(nt, dim, 2 * dim)
    normal_moments = np.einsum("nfq,nfqb,nfc,nfqi->nicb", Wf, Tv, normals, Tv).reshape(nt, dim, 2 * dim)
    penalty = np.einsum("nf,nfq,nfqi,nfqj->nij", alpha, Wf, Tv, Tv)

    # C[(f, m), (c, i)] = ⟨φ_i n_c, ψ_m⟩_F
    C = np.einsum("nfq,nfqi,nfc,nfqm->nfmci", Wf, Tv, normals, Fv).reshape(nt, 3 * nm, 2 * dim)
    T = tables.trace_moments()
    alpha_T = (alpha[:, :, None, None] * T).transpose(0, 2, 1, 3).reshape(nt, dim, 3 * nm)

    A_xx = np.zeros((nt, 3 * dim, 3 * dim))
    A_xx[:, : 2 * dim, : 2 * dim] = np.eye(2 * dim)[None] / a[:, None, None]
    A_xx[:, : 2 * dim, 2 * dim :] = div_moments
    A_xx[:, 2 * dim :, : 2 * dim] = grad_moments - normal_moments
    A_xx[:, 2 * dim :, 2 * dim :] = penalty

    A_xl = np.concatenate([-C.transpose(0, 2, 1), -alpha_T], axis=1)
    A_lx = np.concatenate([C, -alpha_T.transpose(0, 2, 1)], axis=2)
    A_ll = np.zeros((nt, 3 * nm, 3 * nm))
    diagonal = np.arange(3 * nm)
    A_ll[:, diagonal, diagonal] = np.repeat(alpha, nm, axis=1)

    rhs = np.zeros((nt, 3 * dim))
    if load is not None:
        rhs[:, 2 * dim :] = load

    return LocalSystem(A_xx=A_xx, A_xl=A_xl, A_lx=A_lx, A_ll=A_ll, load=rhs)


# ===== 풀이 =====

def _prepare(
    problem: ProblemSpec,
    k: int,
    stabilization: Stabilization | str,
    facet_choice: str,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, LocalSystem]:
    if k < 0:
        raise ValueError(f"Mixed HDG needs k >= 0, got {k}")
    mesh = problem.mesh
    alpha, chosen = stabilization_mixed(mesh, stabilization, facet_choice=facet_choice)
    tables = ElementTables.build(mesh, k, k)
    load = load_moments(problem, k, tables.maps)
    system = local_matrices_mixed(mesh, k, alpha, load, tables)
    return alpha, chosen, load, system


def _split(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    dim = dim_p(k)
    return x[:, : 2 * dim], x[:, 2 * dim :]


def solve_mixed(
    problem: ProblemSpec,
    k: int,
    stabilization: Stabilization | str = Stabilization.UNIFORM,
    facet_choice: str = "newest",
) -> MixedSolution:
    """
    Mixed HDG 풀이 (요소별 (σ_h, u_h) 소거 후 skeleton 풀이)

    Args:
        problem: 문제
        k: 차수 (>= 0)
        stabilization: uniform | single-facet
        facet_choice: single-facet 의 F*_K 규칙 (newest | longest)

    Raises:
        SingularMatrixError: α ≡ 0 인 요소
    """
    stabilization = Stabilization(stabilization)
    alpha, chosen, load, system = _prepare(problem, k, stabilization, facet_choice)
    mesh = problem.mesh

    boundary, values = dirichlet_trace(problem, k)
    condensed = condense(system, mesh, k + 1, boundary, values)
    x, trace = solve_condensed(condensed)
    sigma, u = _split(x, k)

    logger.info(
        "Mixed HDG solved",
        k=k,
        stabilization=stabilization.value,
        n_elements=mesh.n_elements,
        n_skeleton=condensed.skeleton.n,
    )
    return MixedSolution(
        problem=problem,
        k=k,
        sigma=sigma,
        u=u,
        trace=trace,
        alpha=alpha,
        load=load,
        stabilization=stabilization,
        chosen_facet=chosen,
        skeleton=condensed.skeleton,
    )


def solve_mixed_monolithic(
    problem: ProblemSpec,
    k: int,
    stabilization: Stabilization | str = Stabilization.UNIFORM,
    facet_choice: str = "newest",
) -> MixedSolution:
    """축약 없는 전체 시스템으로 풀이 (검증용)"""
    stabilization = Stabilization(stabilization)
    alpha, chosen, load, system = _prepare(problem, k, stabilization, facet_choice)
    boundary, values = dirichlet_trace(problem, k)
    x, trace = solve_monolithic(system, problem.mesh, k + 1, boundary, values)
    sigma, u = _split(x, k)
    return MixedSolution(problem, k, sigma, u, trace, alpha, load, stabilization, chosen)


def mixed_residual(sol: MixedSolution) -> float:
    """이산 방정식 잔차 (상대 max-norm)"""
    system = local_matrices_mixed(sol.mesh, sol.k, sol.alpha, sol.load)
    x = np.concatenate([sol.sigma, sol.u], axis=1)
    return discrete_residual(system, sol.mesh, sol.k + 1, x, sol.trace, sol.mesh.boundary_facets)


# ===== 수치 flux =====

def mixed_trace_defect(sol: MixedSolution, tables: Optional[ElementTables] = None) -> np.ndarray:
    """u_h - û_h 의 P_k(F) 계수 (nt, 3, k+1)"""
    if tables is None:
        tables = ElementTables.build(sol.mesh, sol.k, sol.k)
    return trace_defect(tables.trace_moments(), sol.u, sol.trace, sol.mesh)


def numerical_flux_mixed(sol: MixedSolution) -> NumericalFlux:
    """σ̂·n = σ_h·n - α(u_h - û_h) 의 facet 기저 계수 (σ_h·n ∈ P_k(F) 로 정확)"""
    mesh = sol.mesh
    tables = ElementTables.build(mesh, sol.k, sol.k)
    nt = mesh.n_elements
    dim = dim_p(sol.k)
    C = np.einsum(
        "nfq,nfqi,nfc,nfqm->nfmci",
        tables.facet_weights,
        tables.trace_values,
        tables.normals,
        tables.facet_values,
    ).reshape(nt, 3, sol.k + 1, 2 * dim)
    normal_part = np.einsum("nfmx,nx->nfm", C, sol.sigma)
    defect = trace_defect(tables.trace_moments(), sol.u, sol.trace, mesh)
    return NumericalFlux(mesh, normal_part - sol.alpha[:, :, None] * defect)
