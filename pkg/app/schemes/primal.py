"""Primal HDG (hybridized symmetric interior penalty)

미지수 (u_h, û_h) ∈ P_k(K) × P_{k-δ}(F), δ ∈ {0, 1}

B((u,û),(v,v̂)) = Σ_K (a∇u, ∇v)_K - ⟨a∇u·n, v - v̂⟩ - ⟨a∇v·n, u - û⟩
                 + ⟨α(P_M u - û), P_M v - v̂⟩
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.config import get_settings
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
from app.core.mesh import Mesh
from app.core.models import Stabilization, gamma_threshold
from app.core.problems import ProblemSpec
from app.utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class PrimalSolution:
    """Primal HDG 해"""
    problem: ProblemSpec
    k: int
    delta: int
    u: np.ndarray  # (nt, dim P_k)
    trace: np.ndarray  # (n_facets·(k-δ+1),) 경계 facet 은 P_M g
    alpha: np.ndarray  # (nt, 3) 한쪽 값
    load: np.ndarray  # (nt, dim P_k) (f, φ_i)_K
    stabilization: Stabilization
    gamma: Optional[float] = None
    skeleton: Optional[SparseSpd] = None

    @property
    def mesh(self) -> Mesh:
        return self.problem.mesh

    @property
    def facet_degree(self) -> int:
        return self.k - self.delta

    @property
    def facet_trace(self) -> np.ndarray:
        """(n_facets, k-δ+1)"""
        return self.trace.reshape(self.mesh.n_facets, -1)


# ===== 안정화 =====

def stabilization_primal(
    mesh: Mesh,
    k: int,
    gamma: Optional[float] = None,
    *,
    a: Optional[np.ndarray] = None,
    mode: Stabilization | str = Stabilization.LEMMA,
) -> np.ndarray:
    """
    요소별 facet 안정화 파라미터

    - lemma: α|_F = a|_K γ / |F| · Σ_{F'∈E(K)} |F'|² / |K|, γ > k(k+1)/2
    - paper10k2: α|_F = 10 k² a|_K / |F|

    Args:
        mesh: 메쉬
        k: 다항식 차수
        gamma: lemma 상수 (미지정 시 lemma_gamma_factor · 하한)
        a: 요소별 계수 (기본 mesh.coefficient)
        mode: lemma | paper10k2

    Returns:
        (nt, 3) α (내부 facet 은 양쪽 요소 값이 따로 존재)

    Raises:
        StabilizationError: γ 가 하한 이하
    """
    settings = get_settings()
    mode = Stabilization(mode)
    a = mesh.coefficient if a is None else np.asarray(a, dtype=float)
    lengths = mesh.local_facet_lengths

    if mode == Stabilization.LEMMA:
        threshold = gamma_threshold(k)
        if gamma is None:
            gamma = settings.lemma_gamma_factor * threshold
        if gamma <= threshold:
            raise StabilizationError(
                f"gamma = {gamma} must exceed k(k+1)/2 = {threshold} for k = {k}",
                required_bound=threshold,
            )
        perimeter_term = (lengths**2).sum(axis=1) / mesh.areas
        return a[:, None] * gamma / lengths * perimeter_term[:, None]

    if mode == Stabilization.SCALED_PENALTY:
        return settings.penalty_stabilization_factor * k**2 * a[:, None] / lengths

    raise StabilizationError(f"Stabilization '{mode.value}' is not a primal stabilization")


# ===== 로컬 블록 =====

def local_matrices_primal(
    mesh: Mesh,
    k: int,
    delta: int,
    alpha: np.ndarray,
    load: Optional[np.ndarray] = None,
    tables: Optional[ElementTables] = None,
) -> LocalSystem:
    """
    모든 요소의 primal 블록 (행 = 시험함수)

    A_uu = K - N - Nᵀ + Σ_F α T_F T_Fᵀ
    A_uλ = D_F - α T_F, A_λu = A_uλᵀ, A_λλ = α I

    K_ij = (a∇φ_j, ∇φ_i), N_ij = ⟨φ_i, a∇φ_j·n⟩, T_F,im = ⟨φ_i, ψ_m⟩_F, D_F,im = ⟨a∇φ_i·n, ψ_m⟩_F

    Args:
        load: (f, φ_i)_K (nt, dim), 기본 0
    """
    m = k - delta
    nm = m + 1
    if tables is None:
        tables = ElementTables.build(mesh, k, m)
    nt = mesh.n_elements
    dim = dim_p(k)
    a = mesh.coefficient

    stiffness = a[:, None, None] * np.einsum(
        "nq,nqia,nqja->nij", tables.weights, tables.gradients, tables.gradients
    )
    normal_grads = tables.normal_gradients()
    N = a[:, None, None] * np.einsum(
        "njq,njqi,njqk->nik", tables.facet_weights, tables.trace_values, normal_grads
    )
    T = tables.trace_moments()
    D = a[:, None, None, None] * tables.normal_gradient_moments()

    A_uu = stiffness - N - N.transpose(0, 2, 1) + np.einsum("nj,njim,njlm->nil", alpha, T, T)
    A_ul = (D - alpha[:, :, None, None] * T).transpose(0, 2, 1, 3).reshape(nt, dim, 3 * nm)
    A_ll = np.zeros((nt, 3 * nm, 3 * nm))
    diagonal = np.arange(3 * nm)
    A_ll[:, diagonal, diagonal] = np.repeat(alpha, nm, axis=1)

    return LocalSystem(
        A_xx=A_uu,
        A_xl=A_ul,
        A_lx=A_ul.transpose(0, 2, 1).copy(),
        A_ll=A_ll,
        load=np.zeros((nt, dim)) if load is None else np.asarray(load, dtype=float),
    )


# ===== 풀이 =====

def _prepare(
    problem: ProblemSpec,
    k: int,
    delta: int,
    gamma: Optional[float],
    stabilization: Stabilization | str,
) -> tuple[ElementTables, np.ndarray, np.ndarray, LocalSystem]:
    if k < 1:
        raise ValueError(f"Primal HDG needs k >= 1, got {k}")
    if delta not in (0, 1):
        raise ValueError(f"delta must be 0 or 1, got {delta}")
    mesh = problem.mesh
    alpha = stabilization_primal(mesh, k, gamma, mode=stabilization)
    tables = ElementTables.build(mesh, k, k - delta)
    load = load_moments(problem, k, tables.maps)
    system = local_matrices_primal(mesh, k, delta, alpha, load, tables)
    return tables, alpha, load, system


def solve_primal(
    problem: ProblemSpec,
    k: int,
    delta: int = 0,
    gamma: Optional[float] = None,
    stabilization: Stabilization | str = Stabilization.LEMMA,
) -> PrimalSolution:
    """
    Primal HDG 풀이 (정적 축약)

    경계 facet 의 û_h 는 P_M g 로 고정해 우변으로 이동합니다.

    Args:
        problem: 문제
        k: 요소 차수 (>= 1)
        delta: facet 차수 감소 (0 또는 1)
        gamma: lemma 안정화 상수
        stabilization: lemma | paper10k2

    Returns:
        PrimalSolution
    """
    stabilization = Stabilization(stabilization)
    tables, alpha, load, system = _prepare(problem, k, delta, gamma, stabilization)
    nm = k - delta + 1
    mesh = problem.mesh

    boundary, values = dirichlet_trace(problem, k - delta)
    condensed = condense(system, mesh, nm, boundary, values)
    u, trace = solve_condensed(condensed)

    if stabilization == Stabilization.LEMMA and gamma is None:
        gamma = get_settings().lemma_gamma_factor * gamma_threshold(k)

    logger.info(
        "Primal HDG solved",
        k=k,
        delta=delta,
        stabilization=stabilization.value,
        n_elements=mesh.n_elements,
        n_skeleton=condensed.skeleton.n,
    )
    return PrimalSolution(
        problem=problem,
        k=k,
        delta=delta,
        u=u,
        trace=trace,
        alpha=alpha,
        load=load,
        stabilization=stabilization,
        gamma=gamma if stabilization == Stabilization.LEMMA else None,
        skeleton=condensed.skeleton,
    )


def solve_primal_monolithic(
    problem: ProblemSpec,
    k: int,
    delta: int = 0,
    gamma: Optional[float] = None,
    stabilization: Stabilization | str = Stabilization.LEMMA,
) -> PrimalSolution:
    """축약 없는 전체 시스템으로 풀이 (검증용)"""
    stabilization = Stabilization(stabilization)
    _, alpha, load, system = _prepare(problem, k, delta, gamma, stabilization)
    boundary, values = dirichlet_trace(problem, k - delta)
    u, trace = solve_monolithic(system, problem.mesh, k - delta + 1, boundary, values)
    return PrimalSolution(problem, k, delta, u, trace, alpha, load, stabilization, gamma)


def primal_residual(sol: PrimalSolution) -> float:
    """이산 방정식 잔차 (상대 max-norm)"""
    tables = ElementTables.build(sol.mesh, sol.k, sol.facet_degree)
    system = local_matrices_primal(sol.mesh, sol.k, sol.delta, sol.alpha, sol.load, tables)
    return discrete_residual(
        system, sol.mesh, sol.facet_degree + 1, sol.u, sol.trace, sol.mesh.boundary_facets
    )


# ===== 수치 flux =====

def primal_trace_defect(sol: PrimalSolution, tables: Optional[ElementTables] = None) -> np.ndarray:
    """P_M u_h - û_h 계수 (nt, 3, k-δ+1)"""
    if tables is None:
        tables = ElementTables.build(sol.mesh, sol.k, sol.facet_degree)
    return trace_defect(tables.trace_moments(), sol.u, sol.trace, sol.mesh)


def numerical_flux_primal(sol: PrimalSolution) -> NumericalFlux:
    """
    σ̂·n = a∇u_h·n - α(P_M u_h - û_h) 의 facet 기저 계수

    a∇u_h·n ∈ P_{k-1}(F) ⊂ P_{k-δ}(F) 이므로 표현이 정확합니다.
    """
    mesh = sol.mesh
    tables = ElementTables.build(mesh, sol.k, sol.facet_degree)
    D = mesh.coefficient[:, None, None, None] * tables.normal_gradient_moments()
    gradient_part = np.einsum("njim,ni->njm", D, sol.u)
    defect = trace_defect(tables.trace_moments(), sol.u, sol.trace, mesh)
    return NumericalFlux(mesh, gradient_part - sol.alpha[:, :, None] * defect)
