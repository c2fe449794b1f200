"""확산 모델 문제 정의

-∇·(a∇u) = f (Ω), u = g (∂Ω)

기본 문제:
- square-smooth: 단위 정사각형, u = sin(πx)sin(πy)
- lshape2d: L자 영역, u = r^{2/3} sin(2θ/3) (원점 특이점)
- checkerboard-a: 단위 정사각형, 사분면별 a ∈ {1, κ}, f = 1

JSON 문제 파일의 식은 sympy 로 파싱해 numpy 함수로 변환합니다.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Optional

import numpy as np
import sympy as sym

from app.config import get_settings
from app.core.errors import MeshError, ProblemError
from app.core.mesh import Mesh, build_mesh, load_mesh_file, lshape_mesh, square_mesh
from app.utils.logger import get_logger

logger = get_logger(__name__)

ScalarField = Callable[[np.ndarray], np.ndarray]
VectorField = Callable[[np.ndarray], np.ndarray]

BUILTIN_PROBLEMS = ("square-smooth", "lshape2d", "checkerboard-a")


@dataclass(frozen=True, eq=False)
class ExactSolution:
    """정확해 u, ∇u 와 특이점"""
    value: ScalarField
    gradient: VectorField
    singular_points: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """
    확산 문제

    a 는 메쉬 요소별 계수 (mesh.coefficient) 로 저장되어 세분 시 상속됩니다.
    dirichlet 값이 None 인 태그는 동차 조건입니다.
    """
    name: str
    mesh: Mesh
    load: ScalarField
    dirichlet: Mapping[str, Optional[ScalarField]] = field(default_factory=lambda: {"dirichlet": None})
    exact: Optional[ExactSolution] = None

    @property
    def coefficient(self) -> np.ndarray:
        return self.mesh.coefficient

    @property
    def is_homogeneous(self) -> bool:
        return all(g is None for g in self.dirichlet.values())

    def boundary_data(self, tag: str) -> Optional[ScalarField]:
        """경계 태그의 Dirichlet 함수 (None = 0)"""
        if tag not in self.dirichlet:
            raise ProblemError(f"No Dirichlet data for boundary tag '{tag}'")
        return self.dirichlet[tag]

    def with_mesh(self, mesh: Mesh) -> "ProblemSpec":
        """같은 데이터를 새 메쉬에 적용"""
        return replace(self, mesh=mesh)


# ===== 기본 문제 =====

def _zero(points: np.ndarray) -> np.ndarray:
    return np.zeros(len(points))


def _one(points: np.ndarray) -> np.ndarray:
    return np.ones(len(points))


def _lshape_angle(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x, y = points[:, 0], points[:, 1]
    r = np.hypot(x, y)
    theta = np.arctan2(y, x)
    theta = np.where(theta < 0, theta + 2.0 * np.pi, theta)
    return r, theta


def lshape_exact_value(points: np.ndarray) -> np.ndarray:
    """u = r^{2/3} sin(2θ/3), θ ∈ [0, 2π)"""
    r, theta = _lshape_angle(np.asarray(points, dtype=float).reshape(-1, 2))
    return r ** (2.0 / 3.0) * np.sin(2.0 * theta / 3.0)


def lshape_exact_gradient(points: np.ndarray) -> np.ndarray:
    """∇u = (2/3) r^{-1/3} (-sin(θ/3), cos(θ/3))"""
    r, theta = _lshape_angle(np.asarray(points, dtype=float).reshape(-1, 2))
    factor = (2.0 / 3.0) * r ** (-1.0 / 3.0)
    return np.column_stack([-factor * np.sin(theta / 3.0), factor * np.cos(theta / 3.0)])


def manufactured(u_expr: sym.Expr, a: float = 1.0) -> tuple[ScalarField, ExactSolution]:
    """
    기호 정확해로부터 f = -a Δu 와 정확해 함수 생성

    Args:
        u_expr: x, y 에 대한 sympy 식
        a: 상수 확산계수

    Returns:
        (f, ExactSolution)
    """
    x, y = sym.symbols("x y")
    grad = [sym.diff(u_expr, x), sym.diff(u_expr, y)]
    f_expr = sym.simplify(-a * (sym.diff(grad[0], x) + sym.diff(grad[1], y)))

    value = lambdify_scalar(u_expr)
    gx, gy = lambdify_scalar(grad[0]), lambdify_scalar(grad[1])

    def gradient(points: np.ndarray) -> np.ndarray:
        return np.column_stack([gx(points), gy(points)])

    return lambdify_scalar(f_expr), ExactSolution(value, gradient)


def lambdify_scalar(expr: sym.Expr | str | float) -> ScalarField:
    """x, y 식 → (n, 2) 점 → (n,) numpy 함수"""
    x, y = sym.symbols("x y")
    expr = sym.sympify(expr)
    extra = expr.free_symbols - {x, y}
    if extra:
        raise ProblemError(f"Expression {expr} uses unknown symbols {sorted(map(str, extra))}")
    fn = sym.lambdify((x, y), expr, "numpy")

    def evaluate(points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        values = fn(points[:, 0], points[:, 1])
        return np.broadcast_to(np.asarray(values, dtype=float), (len(points),)).copy()

    return evaluate


def square_smooth() -> ProblemSpec:
    x, y = sym.symbols("x y")
    load, exact = manufactured(sym.sin(sym.pi * x) * sym.sin(sym.pi * y))
    return ProblemSpec("square-smooth", square_mesh(2), load, {"dirichlet": None}, exact)


def lshape2d() -> ProblemSpec:
    exact = ExactSolution(lshape_exact_value, lshape_exact_gradient, singular_points=((0.0, 0.0),))
    return ProblemSpec("lshape2d", lshape_mesh(), _zero, {"dirichlet": lshape_exact_value}, exact)


def checkerboard(kappa: Optional[float] = None) -> ProblemSpec:
    """좌하/우상 사분면 a = κ, 나머지 a = 1"""
    kappa = get_settings().checkerboard_kappa if kappa is None else kappa
    mesh = square_mesh(2)
    c = mesh.centroids
    diagonal = (c[:, 0] < 0.5) == (c[:, 1] < 0.5)
    coefficient = np.where(diagonal, kappa, 1.0)
    mesh = build_mesh(mesh.vertices, mesh.triangles, coefficient=coefficient)
    return ProblemSpec("checkerboard-a", mesh, _one, {"dirichlet": None}, None)


def builtin_problem(problem_id: str) -> ProblemSpec:
    """
    기본 문제 반환

    Raises:
        ProblemError: 알 수 없는 id
    """
    builders = {
        "square-smooth": square_smooth,
        "lshape2d": lshape2d,
        "checkerboard-a": checkerboard,
    }
    builder = builders.get(problem_id)
    if builder is None:
        raise ProblemError(f"Unknown problem '{problem_id}', expected one of {', '.join(BUILTIN_PROBLEMS)}")
    return builder()


# ===== 문제 파일 =====

def load_problem_file(path: str | Path) -> ProblemSpec:
    """
    JSON 문제 파일 로드

    형식::

        {
          "name": "my-problem",
          "mesh": "mesh.json" 또는 {"vertices": ..., "triangles": ..., "boundary_tags": ...},
          "coefficient": 1.0 또는 [a_0, a_1, ...],
          "exact": "x*y" (선택, 주어지면 f 기본값 = -aΔu, g 기본값 = u),
          "f": "2*pi**2*sin(pi*x)*sin(pi*y)" 또는 숫자,
          "g": "0" 또는 {"tag": "식", ...},
          "singular_points": [[0, 0]]
        }
    """
    path = Path(path)
    try:
        data: dict[str, Any] = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ProblemError(f"Cannot read problem file {path}: {e}") from e

    mesh = _problem_mesh(data, path.parent)

    exact: Optional[ExactSolution] = None
    load: Optional[ScalarField] = None
    if "exact" in data:
        coeff = np.unique(mesh.coefficient)
        if len(coeff) != 1:
            raise ProblemError("Exact solutions in problem files need a constant coefficient")
        load, exact = manufactured(sym.sympify(data["exact"]), float(coeff[0]))
        exact = replace(
            exact, singular_points=tuple(tuple(map(float, p)) for p in data.get("singular_points", []))
        )

    if "f" in data:
        load = lambdify_scalar(data["f"])
    if load is None:
        raise ProblemError(f"Problem file {path} needs 'f' or 'exact'")

    dirichlet = _dirichlet_data(data.get("g"), mesh, exact)

    problem = ProblemSpec(str(data.get("name", path.stem)), mesh, load, dirichlet, exact)
    logger.info("Problem file loaded", path=str(path), name=problem.name, n_elements=mesh.n_elements)
    return problem


def _problem_mesh(data: Mapping[str, Any], base: Path) -> Mesh:
    spec = data.get("mesh")
    coefficient = data.get("coefficient")
    if isinstance(spec, str):
        return load_mesh_file(base / spec, coefficient=coefficient)
    if isinstance(spec, Mapping):
        try:
            tags = {tuple(item["edge"]): item["tag"] for item in spec.get("boundary_tags", [])}
            return build_mesh(spec["vertices"], spec["triangles"], boundary_tags=tags, coefficient=coefficient)
        except (KeyError, TypeError) as e:
            raise MeshError(f"Malformed inline mesh: {e}") from e
    raise ProblemError("Problem file needs a 'mesh' path or inline mesh object")


def _dirichlet_data(
    spec: Any, mesh: Mesh, exact: Optional[ExactSolution]
) -> dict[str, Optional[ScalarField]]:
    tags = sorted({t for t in mesh.boundary_tags if t})

    def parse(value: Any) -> Optional[ScalarField]:
        if value is None:
            return exact.value if exact is not None else None
        expr = sym.sympify(value)
        return None if expr == 0 else lambdify_scalar(expr)

    if isinstance(spec, Mapping):
        missing = set(tags) - set(spec)
        if missing and exact is None:
            raise ProblemError(f"No Dirichlet data for boundary tags {sorted(missing)}")
        return {tag: parse(spec.get(tag)) for tag in tags}
    return {tag: parse(spec) for tag in tags}
