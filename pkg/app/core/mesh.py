"""2D 단체 메쉬

주요 기능:
- 정합(conforming) 삼각분할 검증 및 facet/인접 테이블 구성
- 요소 기하량 (h_K, |K|, |F|, 외향 단위법선)
- newest-vertex bisection + 재귀 conforming closure
- JSON 메쉬 파일 로드, 기본 메쉬 (단위 정사각형, L자형)

로컬 facet j 는 로컬 꼭짓점 j 의 맞은편 변 (v[j+1] → v[j+2]) 입니다.
전역 facet 은 (작은 꼭짓점 번호 → 큰 번호) 방향으로 매개화됩니다.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from app.core.errors import DegenerateElementError, MeshError, NonConformingMeshError
from app.utils.logger import get_logger

logger = get_logger(__name__)


DEFAULT_BOUNDARY_TAG = "dirichlet"
# 면적/공선성 판정 상대 허용오차
GEOMETRY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Mesh:
    """정합 삼각형 메쉬 (생성 후 불변)"""
    vertices: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3), 반시계 방향
    facets: np.ndarray  # (nf, 2) 꼭짓점 쌍 (작은 번호 먼저)
    facet_elements: np.ndarray  # (nf, 2) 왼쪽/오른쪽 요소 (경계면 오른쪽 = -1)
    facet_local: np.ndarray  # (nf, 2) 각 요소에서의 로컬 facet 번호
    element_facets: np.ndarray  # (nt, 3) 로컬 facet → 전역 facet
    boundary_tags: tuple[str, ...]  # (nf,) 내부 facet 은 ""
    refinement_edge: np.ndarray  # (nt,) NVB 분할 변의 로컬 번호
    generation: np.ndarray  # (nt,)
    parent: np.ndarray  # (nt,) 직전 메쉬에서의 요소 번호 (입력 메쉬는 -1)
    bisection_edge: np.ndarray  # (nt,) 마지막 이분으로 생긴 변의 로컬 번호 (-1 = 초기 요소)
    coefficient: np.ndarray  # (nt,) 확산계수 a|_K

    # 기하량
    areas: np.ndarray = field(repr=False)
    diameters: np.ndarray = field(repr=False)
    facet_lengths: np.ndarray = field(repr=False)
    local_facet_lengths: np.ndarray = field(repr=False)  # (nt, 3)
    normals: np.ndarray = field(repr=False)  # (nt, 3, 2)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.facet_elements[:, 1] < 0

    @property
    def boundary_facets(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    @property
    def interior_facets(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def element_vertices(self, element: int) -> np.ndarray:
        """요소 꼭짓점 좌표 (3, 2)"""
        return self.vertices[self.triangles[element]]

    def facet_orientation(self, element: int, local: int) -> int:
        """로컬 facet 진행 방향이 전역 매개화와 같으면 +1, 반대면 -1"""
        tri = self.triangles[element]
        start = tri[(local + 1) % 3]
        return 1 if start == self.facets[self.element_facets[element, local], 0] else -1

    def min_angle(self) -> float:
        """최소 내각 (라디안)"""
        angles = []
        for j in range(3):
            p = self.vertices[self.triangles[:, j]]
            q = self.vertices[self.triangles[:, (j + 1) % 3]]
            r = self.vertices[self.triangles[:, (j + 2) % 3]]
            u, v = q - p, r - p
            cos = np.einsum("ij,ij->i", u, v) / (
                np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
            )
            angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
        return float(np.min(angles))


@dataclass(frozen=True)
class FacetGeometry:
    """요소 facet 기하량"""
    index: int
    length: float
    normal: tuple[float, float]


@dataclass(frozen=True)
class ElementGeometry:
    """요소 기하량"""
    diameter: float
    area: float
    facets: tuple[FacetGeometry, ...]


# ===== 생성 =====

def build_mesh(
    vertices: Sequence[Sequence[float]] | np.ndarray,
    triangles: Sequence[Sequence[int]] | np.ndarray,
    boundary_tags: Optional[Mapping[tuple[int, int], str]] = None,
    coefficient: float | Sequence[float] | np.ndarray | None = None,
    *,
    refinement_edge: Optional[np.ndarray] = None,
    generation: Optional[np.ndarray] = None,
    parent: Optional[np.ndarray] = None,
    bisection_edge: Optional[np.ndarray] = None,
    default_tag: str = DEFAULT_BOUNDARY_TAG,
) -> Mesh:
    """
    꼭짓점/삼각형 목록으로 메쉬 생성

    Args:
        vertices: 꼭짓점 좌표 (nv, 2)
        triangles: 꼭짓점 번호 3개씩 (시계 방향이면 반시계로 재정렬)
        boundary_tags: {(i, j): tag} 경계 facet 태그 (미지정 facet 은 default_tag)
        coefficient: 요소별 확산계수 (스칼라면 전체 동일)
        refinement_edge: NVB 분할 변 (미지정 시 최장변, 동률은 맞은편 꼭짓점 번호가 작은 쪽)

    Returns:
        Mesh

    Raises:
        MeshError: 잘못된 번호, 비다양체 변, 뒤집힌 인접 요소
        DegenerateElementError: 면적 0 삼각형
        NonConformingMeshError: hanging node
    """
    V = np.array(vertices, dtype=float).reshape(-1, 2)
    T = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    nt = len(T)

    if nt == 0:
        raise MeshError("Mesh needs at least one triangle")
    if T.min() < 0 or T.max() >= len(V):
        raise MeshError(f"Triangle indices out of range [0, {len(V)})")

    re = _optional_int(refinement_edge, nt, None)
    be = _optional_int(bisection_edge, nt, -1)

    # 방향 정리
    area = _signed_areas(V, T)
    scale = max(float(np.ptp(V, axis=0).max()), 1.0) ** 2
    degenerate = np.flatnonzero(np.abs(area) <= GEOMETRY_TOL * scale)
    if len(degenerate):
        K = int(degenerate[0])
        raise DegenerateElementError(K, float(area[K]))

    flipped = area < 0
    if flipped.any():
        logger.debug("Reoriented clockwise triangles", count=int(flipped.sum()))
        T[flipped] = T[flipped][:, [0, 2, 1]]
        area = np.abs(area)
        # 꼭짓점 1, 2 교환 → 로컬 facet 1, 2 교환
        for local in (re, be):
            if local is not None:
                swap = flipped & (local > 0)
                local[swap] = 3 - local[swap]

    facets, element_facets, facet_elements, facet_local = _facet_tables(T)
    nf = len(facets)

    # 기하량
    edges = np.stack(
        [V[T[:, (j + 2) % 3]] - V[T[:, (j + 1) % 3]] for j in range(3)], axis=1
    )
    lengths = np.linalg.norm(edges, axis=2)
    normals = np.stack([edges[..., 1], -edges[..., 0]], axis=2) / lengths[..., None]
    facet_lengths = np.linalg.norm(V[facets[:, 1]] - V[facets[:, 0]], axis=1)

    if re is None:
        re = _longest_edge(T, lengths)

    _check_conformity(V, T, facets, facet_elements)

    tags = _boundary_tag_table(facets, facet_elements, boundary_tags or {}, default_tag)

    if coefficient is None:
        coeff = np.ones(nt)
    else:
        coeff = np.broadcast_to(np.asarray(coefficient, dtype=float), (nt,)).copy()
    if np.any(coeff <= 0) or not np.all(np.isfinite(coeff)):
        raise MeshError("Diffusion coefficient must be positive and finite on every element")

    mesh = Mesh(
        vertices=_frozen(V),
        triangles=_frozen(T),
        facets=_frozen(facets),
        facet_elements=_frozen(facet_elements),
        facet_local=_frozen(facet_local),
        element_facets=_frozen(element_facets),
        boundary_tags=tags,
        refinement_edge=_frozen(re),
        generation=_frozen(_optional_int(generation, nt, 0)),
        parent=_frozen(_optional_int(parent, nt, -1)),
        bisection_edge=_frozen(be),
        coefficient=_frozen(coeff),
        areas=_frozen(area),
        diameters=_frozen(lengths.max(axis=1)),
        facet_lengths=_frozen(facet_lengths),
        local_facet_lengths=_frozen(lengths),
        normals=_frozen(normals),
    )

    logger.debug(
        "Mesh built",
        n_vertices=mesh.n_vertices,
        n_elements=nt,
        n_facets=nf,
        n_boundary=int(mesh.boundary_mask.sum()),
    )
    return mesh


def _optional_int(values: Optional[np.ndarray], n: int, default: Optional[int]) -> Optional[np.ndarray]:
    if values is None:
        return None if default is None else np.full(n, default, dtype=np.int64)
    array = np.array(values, dtype=np.int64).reshape(-1)
    if len(array) != n:
        raise MeshError(f"Per-element array has length {len(array)}, expected {n}")
    return array


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


def _signed_areas(V: np.ndarray, T: np.ndarray) -> np.ndarray:
    p0, p1, p2 = V[T[:, 0]], V[T[:, 1]], V[T[:, 2]]
    return 0.5 * (
        (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
        - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
    )


def _facet_tables(T: np.ndarray) -> tuple[np.ndarray, ...]:
    nt = len(T)
    directed = np.stack([T[:, [(j + 1) % 3, (j + 2) % 3]] for j in range(3)], axis=1)
    pairs = np.sort(directed.reshape(-1, 2), axis=1)

    facets, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)

    if np.any(counts > 2):
        f = int(np.flatnonzero(counts > 2)[0])
        raise MeshError(f"Edge {tuple(facets[f])} is shared by more than two triangles")

    order = np.argsort(inverse, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])

    facet_elements = np.full((len(facets), 2), -1, dtype=np.int64)
    facet_local = np.full((len(facets), 2), -1, dtype=np.int64)
    first = order[starts]
    facet_elements[:, 0] = first // 3
    facet_local[:, 0] = first % 3

    shared = counts == 2
    second = order[starts[shared] + 1]
    facet_elements[shared, 1] = second // 3
    facet_local[shared, 1] = second % 3

    # 정합 메쉬에서 공유 변은 두 요소에서 반대 방향으로 순회됨
    flat = directed.reshape(-1, 2)
    same_direction = np.all(flat[first[shared]] == flat[second], axis=1)
    if same_direction.any():
        f = int(np.flatnonzero(shared)[np.flatnonzero(same_direction)[0]])
        raise MeshError(
            f"Triangles {tuple(facet_elements[f])} overlap across edge {tuple(facets[f])}"
        )

    element_facets = inverse.reshape(nt, 3)
    return facets, element_facets, facet_elements, facet_local


def _longest_edge(T: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    longest = lengths.max(axis=1, keepdims=True)
    tied = lengths >= longest * (1.0 - GEOMETRY_TOL)
    # 동률이면 맞은편 꼭짓점 번호가 작은 변
    key = np.where(tied, T, np.iinfo(np.int64).max)
    return np.argmin(key, axis=1).astype(np.int64)


def _check_conformity(V: np.ndarray, T: np.ndarray, facets: np.ndarray, facet_elements: np.ndarray) -> None:
    """한 변 내부에 다른 꼭짓점이 놓이면 hanging node"""
    boundary = np.flatnonzero(facet_elements[:, 1] < 0)
    if len(boundary) == 0:
        return

    candidates = np.unique(facets[boundary])
    P = V[candidates]
    for f in boundary:
        a, b = facets[f]
        d = V[b] - V[a]
        rel = P - V[a]
        length2 = float(d @ d)
        cross = d[0] * rel[:, 1] - d[1] * rel[:, 0]
        t = rel @ d / length2
        inside = (
            (np.abs(cross) <= GEOMETRY_TOL * length2)
            & (t > GEOMETRY_TOL)
            & (t < 1.0 - GEOMETRY_TOL)
        )
        if inside.any():
            vertex = int(candidates[np.flatnonzero(inside)[0]])
            owner = int(facet_elements[f, 0])
            other = int(np.flatnonzero((T == vertex).any(axis=1))[0])
            raise NonConformingMeshError((owner, other), vertex)


def _boundary_tag_table(
    facets: np.ndarray,
    facet_elements: np.ndarray,
    boundary_tags: Mapping[tuple[int, int], str],
    default_tag: str,
) -> tuple[str, ...]:
    tags = ["" if right >= 0 else default_tag for right in facet_elements[:, 1]]
    if not boundary_tags:
        return tuple(tags)

    lookup = {(int(a), int(b)): f for f, (a, b) in enumerate(facets)}
    for (i, j), tag in boundary_tags.items():
        key = (min(int(i), int(j)), max(int(i), int(j)))
        f = lookup.get(key)
        if f is None or facet_elements[f, 1] >= 0:
            raise MeshError(f"Boundary tag given for non-boundary edge {key}")
        tags[f] = str(tag)
    return tuple(tags)


# ===== 기하량 =====

def element_geometry(mesh: Mesh, element: int) -> ElementGeometry:
    """
    요소 기하량

    Args:
        mesh: 메쉬
        element: 요소 번호

    Returns:
        ElementGeometry (h_K = 최장변, |K|, facet 별 |F| 와 외향 단위법선)
    """
    facets = tuple(
        FacetGeometry(
            index=int(mesh.element_facets[element, j]),
            length=float(mesh.local_facet_lengths[element, j]),
            normal=(float(mesh.normals[element, j, 0]), float(mesh.normals[element, j, 1])),
        )
        for j in range(3)
    )
    return ElementGeometry(
        diameter=float(mesh.diameters[element]),
        area=float(mesh.areas[element]),
        facets=facets,
    )


# ===== Newest-vertex bisection =====

def refine(mesh: Mesh, marked: Iterable[int]) -> Mesh:
    """
    Newest-vertex bisection 세분 (conforming closure 포함)

    Flow:
    1. 표시된 요소의 분할 변 표시
    2. closure: 표시된 변을 가진 요소의 분할 변도 표시 (고정점까지)
    3. 분할 변이 표시된 요소를 반복 이분 (자식의 분할 변 = 새 꼭짓점 맞은편)

    Args:
        mesh: 입력 메쉬
        marked: 세분할 요소 번호

    Returns:
        새 Mesh (parent = 입력 메쉬의 요소 번호, 계수는 부모에서 상속)
    """
    marked = np.unique(np.fromiter((int(K) for K in marked), dtype=np.int64))
    if len(marked) and (marked[0] < 0 or marked[-1] >= mesh.n_elements):
        raise MeshError(f"Marked element index out of range [0, {mesh.n_elements})")

    T = mesh.triangles
    r = mesh.refinement_edge
    # peak-first 형태 [p, b, c] (분할 변 = (b, c))
    rotated = [
        (int(T[K, r[K]]), int(T[K, (r[K] + 1) % 3]), int(T[K, (r[K] + 2) % 3]))
        for K in range(mesh.n_elements)
    ]

    def base(tri: tuple[int, int, int]) -> tuple[int, int]:
        return (min(tri[1], tri[2]), max(tri[1], tri[2]))

    edge_elements: dict[tuple[int, int], list[int]] = {}
    for f, (a, b) in enumerate(mesh.facets):
        edge_elements[(int(a), int(b))] = [int(K) for K in mesh.facet_elements[f] if K >= 0]

    # closure
    split: set[tuple[int, int]] = set()
    queue: deque[tuple[int, int]] = deque()
    for K in marked:
        edge = base(rotated[K])
        if edge not in split:
            split.add(edge)
            queue.append(edge)
    while queue:
        edge = queue.popleft()
        for K in edge_elements[edge]:
            edge_K = base(rotated[K])
            if edge_K not in split:
                split.add(edge_K)
                queue.append(edge_K)

    vertices = [tuple(p) for p in mesh.vertices.tolist()]
    midpoint: dict[tuple[int, int], int] = {}

    def midpoint_of(edge: tuple[int, int]) -> int:
        if edge not in midpoint:
            a, b = edge
            vertices.append(
                (0.5 * (vertices[a][0] + vertices[b][0]), 0.5 * (vertices[a][1] + vertices[b][1]))
            )
            midpoint[edge] = len(vertices) - 1
        return midpoint[edge]

    new_triangles: list[tuple[int, int, int]] = []
    new_refinement: list[int] = []
    new_generation: list[int] = []
    new_parent: list[int] = []
    new_bisection: list[int] = []

    for K in range(mesh.n_elements):
        if base(rotated[K]) not in split:
            new_triangles.append(tuple(int(v) for v in T[K]))
            new_refinement.append(int(r[K]))
            new_generation.append(int(mesh.generation[K]))
            new_parent.append(K)
            new_bisection.append(int(mesh.bisection_edge[K]))
            continue

        # 깊이 우선, 첫 번째 자식 먼저
        stack = [(rotated[K], int(mesh.generation[K]), int(mesh.bisection_edge[K]))]
        while stack:
            tri, gen, bisected = stack.pop()
            edge = base(tri)
            if edge not in split:
                new_triangles.append(tri)
                new_refinement.append(0)
                new_generation.append(gen)
                new_parent.append(K)
                new_bisection.append(bisected)
                continue
            p, b, c = tri
            m = midpoint_of(edge)
            # 새 변 (m, p) 는 첫 자식에서 꼭짓점 b, 둘째 자식에서 꼭짓점 c 맞은편
            stack.append(((m, c, p), gen + 1, 1))
            stack.append(((m, p, b), gen + 1, 2))

    tags = _split_boundary_tags(mesh, midpoint)

    refined = build_mesh(
        vertices,
        new_triangles,
        boundary_tags=tags,
        coefficient=mesh.coefficient[np.array(new_parent, dtype=np.int64)],
        refinement_edge=np.array(new_refinement),
        generation=np.array(new_generation),
        parent=np.array(new_parent),
        bisection_edge=np.array(new_bisection),
    )

    logger.debug(
        "Mesh refined",
        marked=len(marked),
        split_edges=len(split),
        n_elements_before=mesh.n_elements,
        n_elements_after=refined.n_elements,
    )
    return refined


def _split_boundary_tags(mesh: Mesh, midpoint: Mapping[tuple[int, int], int]) -> dict[tuple[int, int], str]:
    tags: dict[tuple[int, int], str] = {}
    for f in mesh.boundary_facets:
        a, b = (int(v) for v in mesh.facets[f])
        tag = mesh.boundary_tags[f]
        m = midpoint.get((a, b))
        if m is None:
            tags[(a, b)] = tag
        else:
            tags[(a, m)] = tag
            tags[(m, b)] = tag
    return tags


# ===== 입력 / 기본 메쉬 =====

def load_mesh_file(path: str | Path, coefficient: float | Sequence[float] | None = None) -> Mesh:
    """
    JSON 메쉬 파일 로드

    형식::

        {
          "vertices": [[x, y], ...],
          "triangles": [[i, j, k], ...],
          "boundary_tags": [{"edge": [i, j], "tag": "neumann"}, ...],   (선택)
          "coefficient": [a_0, a_1, ...] 또는 스칼라                      (선택)
        }
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise MeshError(f"Cannot read mesh file {path}: {e}") from e

    try:
        tags = {tuple(item["edge"]): item["tag"] for item in data.get("boundary_tags", [])}
        mesh = build_mesh(
            data["vertices"],
            data["triangles"],
            boundary_tags=tags,
            coefficient=coefficient if coefficient is not None else data.get("coefficient"),
        )
    except (KeyError, TypeError) as e:
        raise MeshError(f"Malformed mesh file {path}: {e}") from e

    logger.info("Mesh file loaded", path=str(path), n_elements=mesh.n_elements)
    return mesh


def square_mesh(n: int = 2, lower: tuple[float, float] = (0.0, 0.0), size: float = 1.0) -> Mesh:
    """n×n 정사각형 격자, 각 칸을 (좌하 → 우상) 대각선으로 2분할"""
    if n < 1:
        raise MeshError(f"Square mesh needs n >= 1, got {n}")
    x0, y0 = lower
    coords = np.linspace(0.0, size, n + 1)
    vertices = [(x0 + x, y0 + y) for y in coords for x in coords]

    def index(i: int, j: int) -> int:
        return j * (n + 1) + i

    triangles = []
    for j in range(n):
        for i in range(n):
            v00, v10, v11, v01 = index(i, j), index(i + 1, j), index(i + 1, j + 1), index(i, j + 1)
            triangles.append((v00, v10, v11))
            triangles.append((v00, v11, v01))
    return build_mesh(vertices, triangles)


def lshape_mesh() -> Mesh:
    """
    L자 영역 (-1,1)² \\ [0,1)×(-1,0] 초기 메쉬

    단위 정사각형 3개를 중심점 기준 criss-cross 로 4분할 (12 요소)
    """
    squares = [(-1.0, -1.0), (-1.0, 0.0), (0.0, 0.0)]
    vertices: list[tuple[float, float]] = []
    lookup: dict[tuple[float, float], int] = {}

    def vertex(x: float, y: float) -> int:
        key = (float(x), float(y))
        if key not in lookup:
            lookup[key] = len(vertices)
            vertices.append(key)
        return lookup[key]

    triangles = []
    for x, y in squares:
        corners = [vertex(x, y), vertex(x + 1, y), vertex(x + 1, y + 1), vertex(x, y + 1)]
        center = vertex(x + 0.5, y + 0.5)
        for j in range(4):
            triangles.append((center, corners[j], corners[(j + 1) % 4]))
    return build_mesh(vertices, triangles)
