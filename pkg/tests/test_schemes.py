"""Primal / mixed HDG 스킴 테스트"""
import numpy as np
import pytest

from app.core.basis import dim_p
from app.core.errors import SingularMatrixError, StabilizationError
from app.core.hybrid import ElementTables, check_conservation, condense, dirichlet_trace
from app.core.linalg import cholesky_certificate
from app.core.mesh import build_mesh, square_mesh
from app.core.models import Stabilization, gamma_threshold
from app.core.problems import ProblemSpec, square_smooth
from app.core.estimator import true_error
from app.schemes.mixed import (
    local_matrices_mixed,
    mixed_residual,
    numerical_flux_mixed,
    single_facet_choice,
    solve_mixed,
    solve_mixed_monolithic,
    stabilization_mixed,
)
from app.schemes.primal import (
    local_matrices_primal,
    numerical_flux_primal,
    primal_residual,
    solve_primal,
    solve_primal_monolithic,
    stabilization_primal,
)


def constant_state(mesh, k: int, nm: int, element: int = 0) -> np.ndarray:
    """u ≡ 1, û ≡ 1 의 요소 계수 벡터"""
    u = np.zeros(dim_p(k))
    u[0] = np.sqrt(mesh.areas[element])
    lam = np.zeros((3, nm))
    lam[:, 0] = np.sqrt(mesh.local_facet_lengths[element])
    return np.concatenate([u, lam.ravel()])


# ===== Primal 안정화 =====

def test_lemma_stabilization_on_reference(reference_mesh):
    alpha = stabilization_primal(reference_mesh, 1, 2.0)
    # 로컬 facet 0 은 빗변
    assert alpha[0] == pytest.approx([16.0 / np.sqrt(2.0), 16.0, 16.0])


def test_lemma_threshold_rejected(reference_mesh):
    with pytest.raises(StabilizationError) as info:
        stabilization_primal(reference_mesh, 2, gamma_threshold(2))
    assert info.value.required_bound == pytest.approx(3.0)


def test_lemma_stabilization_scales_inversely(reference_mesh):
    s = 0.25
    scaled = build_mesh(reference_mesh.vertices * s, reference_mesh.triangles)
    base = stabilization_primal(reference_mesh, 2, 4.0)
    assert stabilization_primal(scaled, 2, 4.0) == pytest.approx(base / s)


def test_paper10k2_stabilization(reference_mesh):
    coefficient = build_mesh(reference_mesh.vertices, reference_mesh.triangles, coefficient=[2.0])
    alpha = stabilization_primal(coefficient, 3, mode="paper10k2")
    assert alpha[0] == pytest.approx(180.0 / coefficient.local_facet_lengths[0])


def test_mixed_stabilization_rejected_for_primal(reference_mesh):
    with pytest.raises(StabilizationError):
        stabilization_primal(reference_mesh, 1, mode=Stabilization.UNIFORM)


# ===== Primal 로컬 블록 =====

@pytest.mark.parametrize("k, delta", [(1, 0), (2, 0), (3, 1)])
def test_primal_local_block_symmetric_with_constant_kernel(k, delta):
    mesh = square_mesh(1)
    alpha = stabilization_primal(mesh, k, 1.5 * gamma_threshold(k))
    system = local_matrices_primal(mesh, k, delta, alpha)
    nm = k - delta + 1
    for K in range(mesh.n_elements):
        B = system.element_matrix(K)
        assert np.abs(B - B.T).max() < 1e-12 * np.abs(B).max()
        assert np.abs(B @ constant_state(mesh, k, nm, K)).max() < 1e-10
        eigenvalues = np.linalg.eigvalsh(B)
        assert (np.abs(eigenvalues) < 1e-9 * eigenvalues.max()).sum() == 1
        assert eigenvalues.min() > -1e-9 * eigenvalues.max()


# ===== Primal 풀이 =====

def test_primal_zero_problem(zero_problem):
    sol = solve_primal(zero_problem, 2)
    assert np.abs(sol.u).max() < 1e-14
    assert np.abs(sol.trace).max() < 1e-14


def test_two_triangle_skeleton(two_triangles):
    problem = ProblemSpec("pair", two_triangles, lambda p: np.ones(len(p)))
    sol = solve_primal(problem, 1)
    assert sol.skeleton.n == 2


@pytest.mark.parametrize("k, delta", [(1, 0), (2, 0), (2, 1)])
def test_primal_condensed_matches_monolithic(k, delta):
    problem = square_smooth()
    condensed = solve_primal(problem, k, delta)
    monolithic = solve_primal_monolithic(problem, k, delta)
    assert np.abs(condensed.u - monolithic.u).max() < 1e-9
    assert np.abs(condensed.trace - monolithic.trace).max() < 1e-9


@pytest.mark.parametrize("k, delta, mode", [(1, 0, "lemma"), (2, 0, "paper10k2"), (3, 1, "lemma")])
def test_primal_conservation_and_residual(k, delta, mode):
    sol = solve_primal(square_smooth(), k, delta, stabilization=mode)
    report = check_conservation(numerical_flux_primal(sol), sol.load)
    assert report.max_relative_residual < 1e-10
    assert report.max_facet_jump < 1e-8
    assert primal_residual(sol) < 1e-8
    assert numerical_flux_primal(sol).degree == k - delta


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_primal_skeleton_spd_near_threshold(k):
    sol = solve_primal(square_smooth(), k, gamma=1.01 * gamma_threshold(k))
    assert cholesky_certificate(sol.skeleton.matrix)


@pytest.mark.parametrize("k, delta", [(1, 0), (2, 0), (2, 1)])
def test_primal_reproduces_affine(affine_problem, k, delta):
    sol = solve_primal(affine_problem, k, delta)
    assert true_error(sol) < 1e-9


def test_primal_rejects_bad_degree(zero_problem):
    with pytest.raises(ValueError):
        solve_primal(zero_problem, 0)
    with pytest.raises(ValueError):
        solve_primal(zero_problem, 2, delta=2)


# ===== Mixed 안정화 =====

def test_uniform_stabilization_uses_coefficient():
    mesh = build_mesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]], coefficient=[3.0])
    alpha, chosen = stabilization_mixed(mesh, "uniform")
    assert alpha.tolist() == [[3.0, 3.0, 3.0]]
    assert chosen.tolist() == [-1]


def test_single_facet_one_nonzero_per_element():
    mesh = square_mesh(2)
    alpha, chosen = stabilization_mixed(mesh, Stabilization.SINGLE_FACET)
    assert ((alpha != 0).sum(axis=1) == 1).all()
    assert (alpha[np.arange(mesh.n_elements), chosen] == mesh.coefficient).all()


def test_longest_rule_picks_hypotenuse(reference_mesh):
    assert single_facet_choice(reference_mesh, "longest").tolist() == [0]
    # 초기 메쉬의 newest 는 최장변
    assert single_facet_choice(reference_mesh, "newest").tolist() == [0]


def test_unknown_facet_rule(reference_mesh):
    with pytest.raises(StabilizationError):
        single_facet_choice(reference_mesh, "shortest")


def test_zero_stabilization_singular_local_block(reference_mesh):
    problem = ProblemSpec("zero-alpha", reference_mesh, lambda p: np.ones(len(p)))
    system = local_matrices_mixed(reference_mesh, 0, np.zeros((1, 3)))
    boundary, values = dirichlet_trace(problem, 0)
    with pytest.raises(SingularMatrixError) as info:
        condense(system, reference_mesh, 1, boundary, values)
    assert info.value.element == 0


# ===== Mixed 풀이 =====

def test_mixed_zero_problem(zero_problem):
    sol = solve_mixed(zero_problem, 1)
    assert np.abs(sol.sigma).max() < 1e-14
    assert np.abs(sol.u).max() < 1e-14


@pytest.mark.parametrize("k, mode", [(0, "uniform"), (1, "single-facet"), (2, "uniform")])
def test_mixed_condensed_matches_monolithic(k, mode):
    problem = square_smooth()
    condensed = solve_mixed(problem, k, mode)
    monolithic = solve_mixed_monolithic(problem, k, mode)
    assert np.abs(condensed.sigma - monolithic.sigma).max() < 1e-9
    assert np.abs(condensed.u - monolithic.u).max() < 1e-9
    assert np.abs(condensed.trace - monolithic.trace).max() < 1e-9


@pytest.mark.parametrize("k", [0, 1, 2, 3])
@pytest.mark.parametrize("mode", ["uniform", "single-facet"])
def test_mixed_skeleton_spd_and_conservative(k, mode):
    sol = solve_mixed(square_smooth(), k, mode)
    assert cholesky_certificate(sol.skeleton.matrix)
    report = check_conservation(numerical_flux_mixed(sol), sol.load)
    assert report.max_relative_residual < 1e-10
    assert report.max_facet_jump < 1e-8
    assert mixed_residual(sol) < 1e-8


def test_mixed_single_facet_records_choice():
    sol = solve_mixed(square_smooth(), 1, "single-facet", facet_choice="longest")
    assert (sol.chosen_facet == single_facet_choice(sol.mesh, "longest")).all()


@pytest.mark.parametrize("k", [1, 2])
def test_mixed_reproduces_affine(affine_problem, k):
    sol = solve_mixed(affine_problem, k)
    assert true_error(sol) < 1e-9
    # σ_h = ∇u = (2, -1)
    sigma = sol.sigma.reshape(sol.mesh.n_elements, 2, -1)
    assert sigma[:, 0, 0] / np.sqrt(sol.mesh.areas) == pytest.approx(np.full(sol.mesh.n_elements, 2.0))


def test_mixed_rejects_primal_stabilization(zero_problem):
    with pytest.raises(StabilizationError):
        solve_mixed(zero_problem, 1, "lemma")
