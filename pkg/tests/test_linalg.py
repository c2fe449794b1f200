"""선형대수 커널 테스트"""
import numpy as np
import pytest
import scipy.sparse as sp

from app.core.errors import AssemblyError, SingularMatrixError
from app.core.linalg import (
    ElementContribution,
    SparseSpd,
    assemble_condensed,
    cholesky_certificate,
    dense_solve,
    monolithic_solve,
    sparse_spd_solve,
    symmetry_defect,
)


def random_spd(n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, n))
    return m @ m.T + n * np.eye(n)


def tridiagonal(n: int) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()


# ===== 조밀 =====

def test_dense_identity():
    b = np.array([1.0, -2.0, 3.0])
    assert dense_solve(np.eye(3), b) == pytest.approx(b)


def test_dense_diagonal():
    assert dense_solve(np.diag([2.0, 4.0]), np.array([2.0, 8.0])) == pytest.approx([1.0, 2.0])


def test_dense_random_spd_multiple_rhs():
    A = random_spd(20)
    B = np.random.default_rng(1).standard_normal((20, 3))
    X = dense_solve(A, B)
    assert X.shape == (20, 3)
    assert np.abs(A @ X - B).max() < 1e-10


def test_dense_singular():
    A = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(SingularMatrixError) as info:
        dense_solve(A, np.ones(2))
    assert info.value.pivot == 1
    assert info.value.element is None


def test_dense_non_square():
    with pytest.raises(AssemblyError):
        dense_solve(np.ones((2, 3)), np.ones(2))


def test_dense_empty():
    assert dense_solve(np.zeros((0, 0)), np.zeros(0)).shape == (0,)


# ===== 희소 =====

def test_sparse_one_by_one():
    system = SparseSpd(sp.csr_matrix([[4.0]]), np.array([8.0]))
    assert sparse_spd_solve(system) == pytest.approx([2.0])


def test_sparse_matches_dense():
    A = tridiagonal(50)
    b = np.linspace(0.0, 1.0, 50)
    x = sparse_spd_solve(SparseSpd(A, b))
    assert np.abs(x - np.linalg.solve(A.toarray(), b)).max() < 1e-10


def test_sparse_rejects_asymmetric():
    A = sp.csr_matrix([[2.0, 1.0], [0.0, 2.0]])
    with pytest.raises(AssemblyError):
        sparse_spd_solve(SparseSpd(A, np.ones(2)))


def test_assemble_scatters_and_eliminates():
    # 1D 요소 강성 두 개: DOF 0-1-2, DOF 0 과 2 를 고정
    stiffness = np.array([[1.0, -1.0], [-1.0, 1.0]])
    contributions = [
        ElementContribution(np.array([0, 1]), stiffness, np.array([0.5, 0.5])),
        ElementContribution(np.array([1, 2]), stiffness, np.array([0.5, 0.5])),
    ]
    system = assemble_condensed(contributions, 3, np.array([0, 2]), np.array([1.0, 3.0]))
    assert system.n == 1
    assert system.matrix.toarray() == pytest.approx([[2.0]])
    # 1.0 + (1 + 3)
    assert system.rhs == pytest.approx([5.0])

    full = system.expand(sparse_spd_solve(system))
    assert full == pytest.approx([1.0, 2.5, 3.0])


def test_assemble_all_constrained():
    contribution = ElementContribution(np.array([0, 1]), np.eye(2), np.ones(2))
    system = assemble_condensed([contribution], 2, np.array([0, 1]), np.array([4.0, 5.0]))
    assert system.n == 0
    assert system.expand(sparse_spd_solve(system)) == pytest.approx([4.0, 5.0])


def test_assemble_shape_mismatch():
    bad = ElementContribution(np.array([0, 1]), np.eye(3), np.ones(2))
    with pytest.raises(AssemblyError):
        assemble_condensed([bad], 3)


def test_assemble_asymmetric_contribution():
    bad = ElementContribution(np.array([0, 1]), np.array([[1.0, 2.0], [0.0, 1.0]]), np.ones(2))
    with pytest.raises(AssemblyError):
        assemble_condensed([bad], 2)


def test_assemble_index_out_of_range():
    bad = ElementContribution(np.array([0, 5]), np.eye(2), np.ones(2))
    with pytest.raises(AssemblyError):
        assemble_condensed([bad], 3)


# ===== 판정 =====

def test_cholesky_certificate():
    assert cholesky_certificate(tridiagonal(10))
    indefinite = sp.csr_matrix(np.diag([1.0, -1.0]))
    assert not cholesky_certificate(indefinite)
    assert not cholesky_certificate(sp.csr_matrix([[1.0, 1.0], [0.0, 1.0]]))


def test_symmetry_defect():
    assert symmetry_defect(tridiagonal(5)) == 0.0
    assert symmetry_defect(sp.csr_matrix([[1.0, 2.0], [0.0, 1.0]])) == pytest.approx(1.0)


def test_monolithic_solve():
    A = sp.csr_matrix(random_spd(8, seed=3))
    b = np.arange(8.0)
    assert np.abs(A @ monolithic_solve(A, b) - b).max() < 1e-10
