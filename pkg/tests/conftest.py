"""공통 테스트 픽스처"""
import numpy as np
import pytest

from app.core.mesh import build_mesh, square_mesh
from app.core.problems import ExactSolution, ProblemSpec, lambdify_scalar


def zero_field(points: np.ndarray) -> np.ndarray:
    return np.zeros(len(np.asarray(points).reshape(-1, 2)))


@pytest.fixture
def reference_mesh():
    """기준 삼각형 1개"""
    return build_mesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])


@pytest.fixture
def two_triangles():
    """단위 정사각형을 대각선 하나로 2분할"""
    return build_mesh(
        [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        [[0, 1, 2], [0, 2, 3]],
    )


@pytest.fixture
def zero_problem():
    """f = 0, g = 0"""
    return ProblemSpec("zero", square_mesh(2), zero_field, {"dirichlet": None})


@pytest.fixture
def affine_problem():
    """u = 1 + 2x - y, f = 0, g = u (이산 공간에 정확해 포함)"""
    u = lambdify_scalar("1 + 2*x - y")

    def gradient(points: np.ndarray) -> np.ndarray:
        n = len(np.asarray(points).reshape(-1, 2))
        return np.tile([2.0, -1.0], (n, 1))

    return ProblemSpec(
        "affine",
        square_mesh(2),
        zero_field,
        {"dirichlet": u},
        ExactSolution(u, gradient),
    )


@pytest.fixture(autouse=True)
def _clear_singletons():
    from app.core.scheme_factory import get_scheme_factory
    from app.core.store import get_run_store

    yield
    get_scheme_factory().clear_cache()
    get_run_store().clear()
