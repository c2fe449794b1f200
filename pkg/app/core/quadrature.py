"""수치 적분 규칙

- 삼각형: collapsed 좌표 Gauss-Legendre × Gauss-Jacobi(1, 0) 곱 규칙 (가중치 전부 양수)
- 선분: Gauss-Legendre

기준 삼각형은 (0,0), (1,0), (0,1), 기준 선분은 [0, 1]
"""
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from app.config import get_settings
from app.core.errors import QuadratureError


class Domain(str, Enum):
    """적분 영역"""
    TRIANGLE = "triangle"
    SEGMENT = "segment"


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """적분 규칙 (읽기 전용)"""
    domain: Domain
    degree: int
    points: np.ndarray  # triangle: (n, 2), segment: (n,)
    weights: np.ndarray  # (n,)

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """기준 영역 위 적분 (첫 축이 적분점)"""
        return np.tensordot(self.weights, values, axes=(0, 0))


def _gauss_points(degree: int) -> int:
    # n점 Gauss 규칙은 2n-1차까지 정확
    return degree // 2 + 1


def _segment_rule(degree: int) -> QuadratureRule:
    x, w = roots_legendre(_gauss_points(degree))
    points = 0.5 * (x + 1.0)
    weights = 0.5 * w
    return QuadratureRule(Domain.SEGMENT, degree, _frozen(points), _frozen(weights))


def _triangle_rule(degree: int) -> QuadratureRule:
    n = _gauss_points(degree)
    s, ws = roots_legendre(n)
    z, wz = roots_jacobi(n, 1.0, 0.0)

    s = 0.5 * (s + 1.0)
    ws = 0.5 * ws
    y = 0.5 * (z + 1.0)
    wy = 0.25 * wz  # (1-y) 야코비안 포함

    ss, yy = np.meshgrid(s, y, indexing="ij")
    points = np.column_stack([(ss * (1.0 - yy)).ravel(), yy.ravel()])
    weights = np.outer(ws, wy).ravel()
    return QuadratureRule(Domain.TRIANGLE, degree, _frozen(points), _frozen(weights))


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array, dtype=float)
    array.setflags(write=False)
    return array


@lru_cache(maxsize=None)
def _cached_rule(domain: Domain, degree: int) -> QuadratureRule:
    if domain == Domain.TRIANGLE:
        return _triangle_rule(degree)
    return _segment_rule(degree)


def quadrature_rule(domain: Domain | str, degree: int) -> QuadratureRule:
    """
    요청 차수까지 정확한 적분 규칙 반환

    Args:
        domain: triangle 또는 segment
        degree: 정확도 차수 (>= 0)

    Returns:
        QuadratureRule (캐시됨, 배열 읽기 전용)

    Raises:
        QuadratureError: 최대 지원 차수 초과
    """
    domain = Domain(domain)
    if degree < 0:
        raise ValueError(f"Quadrature degree must be non-negative, got {degree}")

    maximum = get_settings().quadrature_max_degree
    if degree > maximum:
        raise QuadratureError(degree, maximum)

    return _cached_rule(domain, int(degree))
