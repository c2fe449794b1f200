"""다항식 기저와 L² 사영

- CellBasis: 기준 삼각형 위 직교정규 Dubiner 기저 (총차수 순 정렬, φ_0 = 상수)
- FacetBasis: [0, 1] 위 직교정규 Legendre 기저
- VectorCellBasis: P_k(K)² = 성분별 스칼라 기저 두 벌 (번호 c·dim + i)
- ElementMap: 기준 → 물리 아핀 사상 (요소 배열 단위로 브로드캐스트)

물리 요소 위 기저는 φ_K = φ̂ ∘ F_K⁻¹ / √(2|K|) 이므로 역시 직교정규입니다.
facet 기저는 전역 facet 매개화 (facets[f, 0] → facets[f, 1]) 기준이며 1/√|F| 로 정규화합니다.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.special import eval_jacobi, eval_legendre

from app.config import get_settings
from app.core.errors import BasisError
from app.core.quadrature import Domain, quadrature_rule

ScalarField = Callable[[np.ndarray], np.ndarray]

# 기준 삼각형 꼭짓점, 로컬 facet j 는 꼭짓점 j 맞은편 (v[j+1] → v[j+2])
REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def dim_p(k: int) -> int:
    """dim P_k (2D), 음수 차수는 0"""
    return (k + 1) * (k + 2) // 2 if k >= 0 else 0


def reference_facet_points(local: int, s: np.ndarray) -> np.ndarray:
    """기준 삼각형 로컬 facet 위 점 (로컬 진행 방향 매개 s ∈ [0, 1])"""
    a = REF_VERTICES[(local + 1) % 3]
    b = REF_VERTICES[(local + 2) % 3]
    s = np.asarray(s, dtype=float)
    return a[None, :] + s[:, None] * (b - a)[None, :]


def reference_normals() -> np.ndarray:
    """기준 삼각형 외향 단위법선 (3, 2)"""
    edges = np.array([REF_VERTICES[(j + 2) % 3] - REF_VERTICES[(j + 1) % 3] for j in range(3)])
    normals = np.column_stack([edges[:, 1], -edges[:, 0]])
    return normals / np.linalg.norm(normals, axis=1, keepdims=True)


# ===== Dubiner =====

def _index_pairs(k: int) -> list[tuple[int, int]]:
    # 총차수 순: 처음 dim P_m 개가 P_m 을 생성
    return [(i, d - i) for d in range(k + 1) for i in range(d, -1, -1)]


def _homogeneous_legendre(k: int, u: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, ...]:
    """Q_n(u, t) = t^n L_n(u/t) 와 u, t 편미분 (n = 0..k)"""
    n_pts = len(u)
    Q = np.zeros((k + 1, n_pts))
    Qu = np.zeros_like(Q)
    Qt = np.zeros_like(Q)
    Q[0] = 1.0
    if k >= 1:
        Q[1] = u
        Qu[1] = 1.0
    for n in range(1, k):
        Q[n + 1] = ((2 * n + 1) * u * Q[n] - n * t**2 * Q[n - 1]) / (n + 1)
        Qu[n + 1] = ((2 * n + 1) * (Q[n] + u * Qu[n]) - n * t**2 * Qu[n - 1]) / (n + 1)
        Qt[n + 1] = (
            (2 * n + 1) * u * Qt[n] - n * (2.0 * t * Q[n - 1] + t**2 * Qt[n - 1])
        ) / (n + 1)
    return Q, Qu, Qt


def _dubiner_raw(k: int, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = points[:, 0], points[:, 1]
    u = 2.0 * x + y - 1.0
    t = 1.0 - y
    z = 2.0 * y - 1.0

    Q, Qu, Qt = _homogeneous_legendre(k, u, t)
    pairs = _index_pairs(k)
    values = np.empty((len(points), len(pairs)))
    grads = np.empty((len(points), len(pairs), 2))

    for col, (i, j) in enumerate(pairs):
        alpha = 2 * i + 1
        R = eval_jacobi(j, alpha, 0, z)
        dR = (j + alpha + 1) * eval_jacobi(j - 1, alpha + 1, 1, z) if j > 0 else np.zeros_like(z)
        values[:, col] = Q[i] * R
        grads[:, col, 0] = 2.0 * Qu[i] * R
        grads[:, col, 1] = (Qu[i] - Qt[i]) * R + Q[i] * dR

    return values, grads


@lru_cache(maxsize=None)
def _dubiner_norms(k: int) -> np.ndarray:
    rule = quadrature_rule(Domain.TRIANGLE, 2 * k)
    values, _ = _dubiner_raw(k, rule.points)
    norms = np.sqrt(rule.integrate(values**2))
    norms.setflags(write=False)
    return norms


@dataclass(frozen=True)
class CellBasis:
    """기준 삼각형 직교정규 스칼라 기저 (P_k)"""
    degree: int

    def __post_init__(self) -> None:
        if self.degree < 0:
            raise BasisError(f"Cell basis degree must be non-negative, got {self.degree}")

    @property
    def dim(self) -> int:
        return dim_p(self.degree)

    def values(self, points: np.ndarray) -> np.ndarray:
        """기준 좌표 점에서의 값 (n, dim)"""
        values, _ = _dubiner_raw(self.degree, points)
        return values / _dubiner_norms(self.degree)

    def gradients(self, points: np.ndarray) -> np.ndarray:
        """기준 좌표 기울기 (n, dim, 2)"""
        _, grads = _dubiner_raw(self.degree, points)
        return grads / _dubiner_norms(self.degree)[None, :, None]

    def tabulate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        values, grads = _dubiner_raw(self.degree, points)
        norms = _dubiner_norms(self.degree)
        return values / norms, grads / norms[None, :, None]


@dataclass(frozen=True)
class FacetBasis:
    """[0, 1] 직교정규 Legendre 기저 (P_m)"""
    degree: int

    def __post_init__(self) -> None:
        if self.degree < 0:
            raise BasisError(f"Facet basis degree must be non-negative, got {self.degree}")

    @property
    def dim(self) -> int:
        return self.degree + 1

    def values(self, s: np.ndarray) -> np.ndarray:
        """매개 s 에서의 값 (n, dim)"""
        s = np.asarray(s, dtype=float).reshape(-1)
        j = np.arange(self.dim)
        return np.sqrt(2 * j + 1)[None, :] * eval_legendre(j[None, :], 2.0 * s[:, None] - 1.0)


@dataclass(frozen=True)
class VectorCellBasis:
    """P_k(K)² 기저, 번호 c·dim P_k + i 는 성분 c 의 스칼라 φ_i"""
    degree: int

    @property
    def scalar(self) -> CellBasis:
        return CellBasis(self.degree)

    @property
    def dim(self) -> int:
        return 2 * dim_p(self.degree)

    def values(self, points: np.ndarray) -> np.ndarray:
        """기준 좌표 값 (n, dim, 2)"""
        phi = self.scalar.values(points)
        n, d = phi.shape
        out = np.zeros((n, 2 * d, 2))
        out[:, :d, 0] = phi
        out[:, d:, 1] = phi
        return out

    def divergence(self, points: np.ndarray) -> np.ndarray:
        """기준 좌표 발산 (n, dim)"""
        grads = self.scalar.gradients(points)
        return np.concatenate([grads[:, :, 0], grads[:, :, 1]], axis=1)


# ===== 아핀 사상 =====

@dataclass(frozen=True, eq=False)
class ElementMap:
    """
    기준 → 물리 아핀 사상 x = origin + J x̂

    배열은 (..., 2), (..., 2, 2) 형태로 여러 요소를 한 번에 담을 수 있습니다.
    """
    origin: np.ndarray
    jacobian: np.ndarray
    inverse: np.ndarray
    area: np.ndarray

    @classmethod
    def from_vertices(cls, vertices: np.ndarray) -> "ElementMap":
        """꼭짓점 (..., 3, 2) 으로 생성"""
        vertices = np.asarray(vertices, dtype=float)
        origin = vertices[..., 0, :]
        J = np.stack([vertices[..., 1, :] - origin, vertices[..., 2, :] - origin], axis=-1)
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        if np.any(det <= 0):
            raise BasisError("Element map requires counter-clockwise, non-degenerate vertices")
        return cls(origin=origin, jacobian=J, inverse=np.linalg.inv(J), area=0.5 * det)

    @classmethod
    def from_mesh(cls, mesh) -> "ElementMap":
        return cls.from_vertices(mesh.vertices[mesh.triangles])

    @property
    def scale(self) -> np.ndarray:
        """기준 기저 → 물리 직교정규 기저 배율 1/√(2|K|)"""
        return 1.0 / np.sqrt(2.0 * self.area)

    def __getitem__(self, index) -> "ElementMap":
        return ElementMap(self.origin[index], self.jacobian[index], self.inverse[index], self.area[index])

    def to_physical(self, ref_points: np.ndarray) -> np.ndarray:
        """(nq, 2) → (..., nq, 2)"""
        ref_points = np.asarray(ref_points, dtype=float).reshape(-1, 2)
        return np.einsum("...ab,qb->...qa", self.jacobian, ref_points) + self.origin[..., None, :]

    def to_reference(self, points: np.ndarray) -> np.ndarray:
        """(..., n, 2) → (..., n, 2)"""
        return np.einsum("...ab,...qb->...qa", self.inverse, points - self.origin[..., None, :])

    def physical_gradients(self, ref_grads: np.ndarray) -> np.ndarray:
        """기준 기저 기울기 (nq, dim, 2) → 물리 직교정규 기저 기울기 (..., nq, dim, 2)"""
        grads = np.einsum("qib,...ba->...qia", ref_grads, self.inverse)
        return grads * self.scale[..., None, None, None]


# ===== 참조 테이블 =====

@dataclass(frozen=True, eq=False)
class CellTable:
    """요소 내부 적분점 테이블"""
    weights: np.ndarray  # (nq,) 기준 삼각형 가중치 (합 1/2)
    points: np.ndarray  # (nq, 2)
    values: np.ndarray  # (nq, dim)
    gradients: np.ndarray  # (nq, dim, 2)


@dataclass(frozen=True, eq=False)
class TraceTable:
    """로컬 facet 적분점 테이블 (로컬 진행 방향 매개)"""
    weights: np.ndarray  # (nqf,) 합 1
    s: np.ndarray  # (nqf,)
    values: np.ndarray  # (3, nqf, dim)
    gradients: np.ndarray  # (3, nqf, dim, 2)


@lru_cache(maxsize=None)
def cell_table(k: int, degree: int) -> CellTable:
    rule = quadrature_rule(Domain.TRIANGLE, degree)
    values, grads = CellBasis(k).tabulate(rule.points)
    return CellTable(rule.weights, rule.points, _readonly(values), _readonly(grads))


@lru_cache(maxsize=None)
def trace_table(k: int, degree: int) -> TraceTable:
    rule = quadrature_rule(Domain.SEGMENT, degree)
    basis = CellBasis(k)
    values, grads = zip(*(basis.tabulate(reference_facet_points(j, rule.points)) for j in range(3)))
    return TraceTable(rule.weights, rule.points, _readonly(np.stack(values)), _readonly(np.stack(grads)))


@lru_cache(maxsize=None)
def facet_table(m: int, degree: int) -> np.ndarray:
    """facet 기저 값 (2, nqf, m+1): [0] 정방향, [1] 역방향 (s → 1 - s)"""
    rule = quadrature_rule(Domain.SEGMENT, degree)
    basis = FacetBasis(m)
    return _readonly(np.stack([basis.values(rule.points), basis.values(1.0 - rule.points)]))


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


# ===== 사영 / 평가 =====

def project_cells(f: ScalarField, k: int, maps: ElementMap, degree: Optional[int] = None) -> np.ndarray:
    """
    요소별 L² 사영 Π_k f 계수

    Args:
        f: (n, 2) 점 → (n,) 값
        k: 차수
        maps: 요소 사상 (배열 가능)
        degree: 적분 차수 (기본 2k + load_quadrature_excess)

    Returns:
        (..., dim P_k) 직교정규 기저 계수
    """
    if degree is None:
        degree = 2 * k + get_settings().load_quadrature_excess
    table = cell_table(k, degree)
    x = maps.to_physical(table.points)
    fx = np.asarray(f(x.reshape(-1, 2)), dtype=float).reshape(x.shape[:-1])
    # ∫_K f φ_i = 2|K| Σ w f ψ_i / √(2|K|)
    return np.einsum("q,...q,qi->...i", table.weights, fx, table.values) * np.sqrt(2.0 * maps.area)[..., None]


def project_cell(f: ScalarField, k: int, vertices: np.ndarray, degree: Optional[int] = None) -> np.ndarray:
    """단일 요소 L² 사영 계수 (dim P_k,)"""
    return project_cells(f, k, ElementMap.from_vertices(vertices), degree)


def evaluate_cells(coefficients: np.ndarray, maps: ElementMap, ref_points: np.ndarray) -> np.ndarray:
    """기준 좌표 점에서 요소별 다항식 값 (..., nq)"""
    k = degree_of(coefficients.shape[-1])
    phi = CellBasis(k).values(ref_points)
    return np.einsum("...i,qi->...q", coefficients, phi) * maps.scale[..., None]


def evaluate_at(coefficients: np.ndarray, maps: ElementMap, points: np.ndarray) -> np.ndarray:
    """
    요소별 물리 좌표 점에서 다항식 값

    Args:
        coefficients: (n, dim P_k)
        maps: n 개 요소 사상
        points: (n, nq, 2)

    Returns:
        (n, nq)
    """
    k = degree_of(coefficients.shape[-1])
    ref = maps.to_reference(points)
    phi = CellBasis(k).values(ref.reshape(-1, 2)).reshape(ref.shape[:-1] + (-1,))
    return np.einsum("nqi,ni->nq", phi, coefficients) * maps.scale[:, None]


def evaluate_cell(coefficients: np.ndarray, vertices: np.ndarray, points: np.ndarray) -> np.ndarray:
    """물리 좌표 점 (n, 2) 에서 단일 요소 다항식 값"""
    element = ElementMap.from_vertices(vertices)
    ref = element.to_reference(np.asarray(points, dtype=float).reshape(-1, 2))
    return evaluate_cells(np.asarray(coefficients, dtype=float), element, ref)


def degree_of(dim: int) -> int:
    """dim P_k → k"""
    k = int(round((np.sqrt(8 * dim + 1) - 3) / 2))
    if dim_p(k) != dim:
        raise BasisError(f"{dim} is not the dimension of a 2D polynomial space")
    return k


def project_facet(
    g: ScalarField,
    m: int,
    endpoints: np.ndarray,
    degree: Optional[int] = None,
) -> np.ndarray:
    """
    facet L² 사영 P_m g 계수

    Args:
        g: (n, 2) 점 → (n,) 값
        m: 차수
        endpoints: facet 시작/끝점 (2, 2), 매개 방향을 정함
        degree: 적분 차수 (기본 2m + load_quadrature_excess)

    Returns:
        (m+1,) 계수 (값 = Σ c_j χ_j(s) / √|F|)
    """
    if degree is None:
        degree = 2 * m + get_settings().load_quadrature_excess
    endpoints = np.asarray(endpoints, dtype=float)
    rule = quadrature_rule(Domain.SEGMENT, degree)
    length = float(np.linalg.norm(endpoints[1] - endpoints[0]))
    x = endpoints[0][None, :] + rule.points[:, None] * (endpoints[1] - endpoints[0])[None, :]
    chi = FacetBasis(m).values(rule.points)
    gx = np.asarray(g(x), dtype=float).reshape(-1)
    return np.sqrt(length) * (rule.weights * gx) @ chi


def evaluate_facet(coefficients: np.ndarray, length: float, s: np.ndarray) -> np.ndarray:
    """facet 다항식 값 (전역 매개 s)"""
    m = len(coefficients) - 1
    return FacetBasis(m).values(s) @ np.asarray(coefficients) / np.sqrt(length)


# ===== 발산 0 버블 =====

@lru_cache(maxsize=None)
def _reference_bubbles(k: int) -> np.ndarray:
    """기준 삼각형 curl(b̂ q̂), q̂ ∈ P_{k-2} 의 P_k² 계수 (nb, 2, dim P_k)"""
    rule = quadrature_rule(Domain.TRIANGLE, 2 * k + 2)
    x, y = rule.points[:, 0], rule.points[:, 1]
    bubble = (1.0 - x - y) * x * y
    bubble_grad = np.column_stack([y * (1.0 - 2.0 * x - y), x * (1.0 - x - 2.0 * y)])

    q, dq = CellBasis(k - 2).tabulate(rule.points)
    grad_w = bubble_grad[:, None, :] * q[:, :, None] + bubble[:, None, None] * dq
    curl = np.stack([grad_w[..., 1], -grad_w[..., 0]], axis=-1)  # (nq, nb, 2)

    phi, dphi = CellBasis(k).tabulate(rule.points)
    coeffs = np.einsum("q,qbc,qi->bci", rule.weights, curl, phi)

    _check_reference_bubbles(k, coeffs)
    return _readonly(coeffs)


def _check_reference_bubbles(k: int, coeffs: np.ndarray) -> None:
    """
    단위 L² 노름으로 맞춘 각 버블의 발산과 법선 trace 검사

    허용치는 bubble_check_tol × max(1, Σ|c_i||∂φ_i|) (점별 평가의 반올림 크기)
    """
    tol = get_settings().bubble_check_tol
    norms = np.sqrt(np.einsum("bci,bci->b", coeffs, coeffs))
    unit = coeffs / norms[:, None, None]

    rule = quadrature_rule(Domain.TRIANGLE, 2 * k)
    _, dphi = CellBasis(k).tabulate(rule.points)
    divergence = np.einsum("bci,qic->qb", unit, dphi)
    scale = np.einsum("bci,qic->qb", np.abs(unit), np.abs(dphi)).max()
    if np.abs(divergence).max() > tol * max(1.0, scale):
        raise BasisError(f"Bubble basis of degree {k} is not divergence-free")

    segment = quadrature_rule(Domain.SEGMENT, 2 * k)
    normals = reference_normals()
    for j in range(3):
        phi = CellBasis(k).values(reference_facet_points(j, segment.points))
        trace = np.einsum("bci,qi,c->qb", unit, phi, normals[j])
        scale = np.einsum("bci,qi,c->qb", np.abs(unit), np.abs(phi), np.abs(normals[j])).max()
        if np.abs(trace).max() > tol * max(1.0, scale):
            raise BasisError(f"Bubble basis of degree {k} has a normal trace on facet {j}")


def divfree_bubble_basis(k: int, vertices: np.ndarray) -> np.ndarray:
    """
    요소 위 발산 0, 법선 trace 0 버블 공간 기저

    기준 요소의 curl(b̂ · P_{k-2}) 를 contravariant Piola 로 옮긴 뒤
    물리 L² 내적으로 직교정규화합니다.

    Args:
        k: 벡터 다항식 차수
        vertices: 요소 꼭짓점 (3, 2), 반시계 방향

    Returns:
        (k(k-1)/2, 2·dim P_k) VectorCellBasis 계수 (k < 2 이면 빈 배열)
    """
    n_vector = 2 * dim_p(k)
    if k < 2:
        return np.zeros((0, n_vector))

    element = ElementMap.from_vertices(vertices)
    ref = _reference_bubbles(k)
    # τ = J τ̂ / det J, 물리 기저 φ = ψ / √(2|K|)
    coeffs = np.einsum("ac,bci->bai", element.jacobian, ref) / np.sqrt(2.0 * element.area)
    coeffs = coeffs.reshape(len(ref), n_vector)

    q, r = np.linalg.qr(coeffs.T)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-12 * diag.max():
        raise BasisError(f"Bubble basis of degree {k} is rank deficient")
    return q.T


def embed(coefficients: np.ndarray, degree: int) -> np.ndarray:
    """P_k 계수를 P_degree 계수로 0 확장 (총차수 순 정렬이므로 앞부분이 일치)"""
    coefficients = np.asarray(coefficients, dtype=float)
    target = dim_p(degree)
    if coefficients.shape[-1] > target:
        raise BasisError(f"Cannot embed {coefficients.shape[-1]} coefficients into P_{degree}")
    out = np.zeros(coefficients.shape[:-1] + (target,))
    out[..., : coefficients.shape[-1]] = coefficients
    return out


def embed_vector(coefficients: np.ndarray, degree: int) -> np.ndarray:
    """VectorCellBasis 계수를 P_degree² 로 0 확장"""
    coefficients = np.asarray(coefficients, dtype=float)
    half = coefficients.shape[-1] // 2
    return np.concatenate(
        [embed(coefficients[..., :half], degree), embed(coefficients[..., half:], degree)], axis=-1
    )
