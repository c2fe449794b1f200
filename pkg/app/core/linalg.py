"""선형대수 커널

- 요소 로컬 조밀 행렬: 피벗 LU (scipy.linalg)
- 정적 축약된 skeleton 시스템: scipy.sparse 조립 + 대칭 Dirichlet 소거
- 희소 SPD 풀이: SuperLU 대칭 모드, 실패 시 Jacobi 전처리 CG
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from app.config import get_settings
from app.core.errors import AssemblyError, SingularMatrixError, SolverError
from app.utils.logger import get_logger

logger = get_logger(__name__)

# 이 크기 이하는 조밀 Cholesky 로 SPD 판정
DENSE_CERTIFICATE_LIMIT = 2000


# ===== 조밀 =====

def dense_solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """
    피벗 LU 로 AX = B 풀이

    Args:
        A: (n, n) 정방 행렬
        B: (n,) 또는 (n, r) 우변

    Returns:
        B 와 같은 형태의 해

    Raises:
        SingularMatrixError: |U_ii| < singular_pivot_tol · max|A|
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise AssemblyError(f"dense_solve needs a square matrix, got shape {A.shape}")
    if A.shape[0] == 0:
        return np.zeros_like(B)
    if not np.all(np.isfinite(A)):
        raise AssemblyError("Matrix has non-finite entries")

    scale = float(np.abs(A).max())
    tol = get_settings().singular_pivot_tol * max(scale, np.finfo(float).tiny)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", la.LinAlgWarning)
        lu, piv = la.lu_factor(A, check_finite=False)

    pivots = np.abs(np.diag(lu))
    small = np.flatnonzero(pivots < tol)
    if len(small):
        pivot = int(small[0])
        raise SingularMatrixError(pivot, float(pivots[pivot]))

    return la.lu_solve((lu, piv), B, check_finite=False)


# ===== 희소 =====

@dataclass(frozen=True, eq=False)
class ElementContribution:
    """요소 Schur complement 와 하중을 전역 skeleton DOF 에 대응"""
    dofs: np.ndarray  # (n,)
    matrix: np.ndarray  # (n, n)
    rhs: np.ndarray  # (n,)


@dataclass(frozen=True, eq=False)
class SparseSpd:
    """Dirichlet DOF 소거 후의 대칭 희소 시스템"""
    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: Optional[np.ndarray] = None  # 전역 번호 (None = 전체)
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    constrained_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_total(self) -> int:
        return self.n + len(self.constrained)

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        """자유 DOF 해 → 전체 skeleton 벡터"""
        if self.free is None:
            return np.asarray(x_free, dtype=float)
        full = np.zeros(self.n_total)
        full[self.free] = x_free
        full[self.constrained] = self.constrained_values
        return full


def assemble_condensed(
    contributions: Iterable[ElementContribution],
    n_dofs: int,
    constrained: Optional[np.ndarray] = None,
    constrained_values: Optional[np.ndarray] = None,
) -> SparseSpd:
    """
    요소 Schur complement 를 산포해 전역 skeleton 시스템 조립

    Args:
        contributions: 요소별 기여
        n_dofs: 전역 skeleton DOF 수 (경계 포함)
        constrained: Dirichlet DOF 번호
        constrained_values: Dirichlet DOF 값

    Returns:
        SparseSpd (Dirichlet 값은 우변으로 이동)

    Raises:
        AssemblyError: 차원 불일치, 비대칭 기여
    """
    settings = get_settings()
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    rhs = np.zeros(n_dofs)

    for c in contributions:
        n = len(c.dofs)
        if c.matrix.shape != (n, n) or c.rhs.shape != (n,):
            raise AssemblyError(
                f"Element contribution shape {c.matrix.shape}/{c.rhs.shape} does not match {n} DOFs"
            )
        if n and (c.dofs.min() < 0 or c.dofs.max() >= n_dofs):
            raise AssemblyError(f"Element DOF index out of range [0, {n_dofs})")
        scale = max(float(np.abs(c.matrix).max(initial=0.0)), 1.0)
        if np.abs(c.matrix - c.matrix.T).max(initial=0.0) > settings.symmetry_tol * scale:
            raise AssemblyError("Element Schur complement is not symmetric")

        rows.append(np.repeat(c.dofs, n))
        cols.append(np.tile(c.dofs, n))
        vals.append(c.matrix.ravel())
        np.add.at(rhs, c.dofs, c.rhs)

    A = sp.coo_matrix(
        (
            np.concatenate(vals) if vals else np.zeros(0),
            (
                np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64),
                np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64),
            ),
        ),
        shape=(n_dofs, n_dofs),
    ).tocsr()

    constrained = np.zeros(0, dtype=np.int64) if constrained is None else np.asarray(constrained, dtype=np.int64)
    values = np.zeros(len(constrained)) if constrained_values is None else np.asarray(constrained_values, dtype=float)
    if values.shape != constrained.shape:
        raise AssemblyError("Constrained values do not match constrained DOFs")

    mask = np.ones(n_dofs, dtype=bool)
    mask[constrained] = False
    free = np.flatnonzero(mask)

    A_ff = A[free][:, free].tocsr()
    b_f = rhs[free] - A[free][:, constrained] @ values

    logger.debug("Skeleton system assembled", n_free=len(free), n_constrained=len(constrained), nnz=A_ff.nnz)
    return SparseSpd(A_ff, b_f, free, constrained, values)


def symmetry_defect(matrix: sp.spmatrix) -> float:
    """‖A - Aᵀ‖_max / ‖A‖_max"""
    if matrix.shape[0] == 0:
        return 0.0
    scale = abs(matrix).max()
    if scale == 0:
        return 0.0
    return float(abs(matrix - matrix.T).max() / scale)


def _symmetric_lu(matrix: sp.spmatrix):
    return spla.splu(
        sp.csc_matrix(matrix),
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options=dict(SymmetricMode=True),
    )


def cholesky_certificate(matrix: sp.spmatrix) -> bool:
    """
    대칭 행렬의 양의 정부호 판정

    작은 행렬은 조밀 Cholesky, 큰 행렬은 대각 피벗 LU 의 U 대각 부호로 판정합니다.
    """
    n = matrix.shape[0]
    if n == 0:
        return True
    if symmetry_defect(matrix) > get_settings().symmetry_tol:
        return False

    if n <= DENSE_CERTIFICATE_LIMIT:
        try:
            np.linalg.cholesky(matrix.toarray())
        except np.linalg.LinAlgError:
            return False
        return True

    try:
        lu = _symmetric_lu(matrix)
    except RuntimeError:
        return False
    if not np.array_equal(lu.perm_r, lu.perm_c):
        return False
    return bool(np.all(lu.U.diagonal() > 0))


def _relative_residual(A: sp.spmatrix, x: np.ndarray, b: np.ndarray) -> float:
    norm_b = float(np.linalg.norm(b))
    res = float(np.linalg.norm(A @ x - b))
    return res / norm_b if norm_b > 0 else res


def sparse_spd_solve(system: SparseSpd) -> np.ndarray:
    """
    축약된 skeleton 시스템 풀이

    Flow:
    1. 대칭성 검사
    2. SuperLU (대칭 모드, 대각 피벗) 직접 풀이
    3. 잔차가 solver_rtol 초과 또는 분해 실패 시 Jacobi 전처리 CG

    Returns:
        자유 DOF 해 (전체 벡터는 system.expand)

    Raises:
        AssemblyError: 비대칭 행렬
        SolverError: 두 경로 모두 실패 (달성한 잔차 포함)
    """
    settings = get_settings()
    A, b = system.matrix, system.rhs
    n = system.n
    if n == 0:
        return np.zeros(0)

    defect = symmetry_defect(A)
    if defect > settings.symmetry_tol:
        raise AssemblyError(f"Skeleton matrix is not symmetric (relative defect {defect:.3e})")

    x: Optional[np.ndarray] = None
    residual = np.inf
    try:
        lu = _symmetric_lu(A)
        x = lu.solve(b)
        residual = _relative_residual(A, x, b)
    except RuntimeError as e:
        logger.warning("Sparse factorization failed, falling back to CG", n=n, error=str(e))

    if x is not None and residual <= settings.solver_rtol:
        logger.debug("Skeleton system solved", n=n, method="splu", residual=residual)
        return x

    diagonal = A.diagonal()
    if np.any(diagonal <= 0):
        raise SolverError("Skeleton matrix has a non-positive diagonal", residual)

    x_cg, info = spla.cg(
        A,
        b,
        x0=x,
        rtol=settings.cg_rtol,
        maxiter=settings.cg_maxiter_factor * n,
        M=sp.diags(1.0 / diagonal),
    )
    residual = _relative_residual(A, x_cg, b)
    if info != 0 and residual > settings.solver_rtol:
        raise SolverError(f"Conjugate gradients stopped with info={info}", residual)

    logger.debug("Skeleton system solved", n=n, method="cg", residual=residual)
    return x_cg


def monolithic_solve(matrix: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    """축약 없는 전체 시스템 직접 풀이 (검증용)"""
    if matrix.shape[0] == 0:
        return np.zeros(0)
    x = spla.spsolve(sp.csc_matrix(matrix), rhs)
    residual = _relative_residual(matrix, x, rhs)
    if not np.all(np.isfinite(x)) or residual > 1e-8:
        raise SolverError("Monolithic solve failed", residual)
    return x
