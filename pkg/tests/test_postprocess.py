"""평형 flux / 적합 potential 테스트"""
import numpy as np
import pytest

from app.core.basis import ElementMap, project_cells
from app.core.hybrid import ElementTables
from app.core.mesh import build_mesh, square_mesh
from app.core.models import SchemeType, Stabilization
from app.core.postprocess import (
    LagrangeNodes,
    average_potential,
    equilibrated_flux_mixed,
    equilibrated_flux_primal,
    local_potential_mixed,
    potential_jump,
    potential_mixed,
    potential_primal,
    verify_equilibration,
)
from app.core.problems import ProblemSpec, checkerboard, lambdify_scalar, square_smooth
from app.schemes.mixed import MixedSolution, solve_mixed
from app.schemes.primal import solve_primal

TOL = 1e-10


def zero_field(points):
    return np.zeros(len(points))


def centroid_values(flux):
    mesh = flux.mesh
    return flux.values_at(np.arange(mesh.n_elements), mesh.centroids[:, None, :])[:, 0]


# ===== 평형 flux =====

@pytest.mark.parametrize("k, delta", [(1, 0), (2, 0), (2, 1)])
def test_primal_flux_equilibrated(k, delta):
    problem = square_smooth()
    sol = solve_primal(problem, k, delta)
    flux = equilibrated_flux_primal(sol)
    assert flux.degree == k
    assert flux.provenance == SchemeType.PRIMAL

    report = verify_equilibration(flux, problem.load)
    assert report.max_divergence < TOL
    assert report.max_trace < TOL
    assert report.normal_jump < 1e-9
    assert report.passed(1e-9)


@pytest.mark.parametrize("k, mode", [(0, "uniform"), (1, "uniform"), (1, "single-facet")])
def test_mixed_flux_equilibrated(k, mode):
    problem = square_smooth()
    flux = equilibrated_flux_mixed(solve_mixed(problem, k, mode))
    assert flux.degree == k + 1
    assert flux.scheme_degree == k

    report = verify_equilibration(flux)
    assert report.max_divergence < TOL
    assert report.max_trace < TOL
    assert report.normal_jump < 1e-9


def test_checkerboard_divergence_matches_unit_load():
    sol = solve_primal(checkerboard(10.0), 1)
    flux = equilibrated_flux_primal(sol)
    tables = ElementTables.build(sol.mesh, 1, 1)
    divergence = np.einsum("nqic,nci->nq", tables.gradients, flux.components())
    assert np.abs(divergence + 1.0).max() < 1e-10


def test_affine_flux_is_exact(affine_problem):
    flux = equilibrated_flux_primal(solve_primal(affine_problem, 1))
    values = centroid_values(flux)
    assert np.abs(values - [2.0, -1.0]).max() < 1e-9

    mixed = equilibrated_flux_mixed(solve_mixed(affine_problem, 1))
    assert np.abs(centroid_values(mixed) - [2.0, -1.0]).max() < 1e-9


def test_zero_problem_flux_vanishes(zero_problem):
    flux = equilibrated_flux_mixed(solve_mixed(zero_problem, 1))
    assert np.abs(flux.coefficients).max() < 1e-14


# ===== 절점 평균 =====

def test_lagrange_nodes_count():
    mesh = square_mesh(2)
    nodes = LagrangeNodes.build(mesh, 3)
    # 꼭짓점 + facet 당 2 + 요소 당 1
    assert nodes.n_nodes == mesh.n_vertices + 2 * mesh.n_facets + mesh.n_elements
    assert nodes.boundary_mask.sum() == mesh.boundary_facets.size * 3
    with pytest.raises(ValueError):
        LagrangeNodes.build(mesh, 0)


def test_average_of_discontinuous_constant(two_triangles):
    # 요소 0 에서 1, 요소 1 에서 0 (P_2 계수)
    u_dc = np.zeros((2, 6))
    u_dc[0, 0] = np.sqrt(two_triangles.areas[0])
    potential = average_potential(u_dc, two_triangles)

    nodes = potential.nodes
    centre = int(np.argmin(np.linalg.norm(nodes.points - [0.5, 0.5], axis=1)))
    assert nodes.points[centre] == pytest.approx([0.5, 0.5])
    assert potential.values[centre] == pytest.approx(0.5)
    assert np.abs(potential.values[nodes.boundary_mask]).max() == 0.0
    assert potential_jump(potential) < TOL


def test_average_preserves_continuous_field():
    mesh = square_mesh(2)
    g = lambdify_scalar("x + 2*y")
    u_dc = project_cells(g, 1, ElementMap.from_mesh(mesh))
    potential = average_potential(u_dc, mesh, {"dirichlet": g})
    assert np.abs(potential.values - g(potential.nodes.points)).max() < 1e-12
    assert np.abs(potential.coefficients - u_dc).max() < 1e-12


def test_unlisted_tag_is_homogeneous():
    mesh = square_mesh(1)
    u_dc = project_cells(lambdify_scalar("1 + x"), 1, ElementMap.from_mesh(mesh))
    potential = average_potential(u_dc, mesh, {"other": lambdify_scalar("5")})
    assert np.abs(potential.values[potential.nodes.boundary_mask]).max() == 0.0


@pytest.mark.parametrize("k", [1, 2])
def test_primal_potential_continuous(k):
    potential = potential_primal(solve_primal(square_smooth(), k))
    assert potential.degree == k
    assert potential_jump(potential) < TOL


@pytest.mark.parametrize("k", [0, 1])
def test_mixed_potential_continuous(k):
    potential = potential_mixed(solve_mixed(square_smooth(), k))
    assert potential.degree == k + 1
    assert potential_jump(potential) < TOL


# ===== mixed 국소 potential =====

@pytest.mark.parametrize("a", [1.0, 2.0])
def test_local_potential_recovers_affine(a):
    vertices = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
    mesh = build_mesh(vertices, [[0, 1, 2]], coefficient=[a])
    area = mesh.areas[0]
    # σ = a∇u, u = 1 + 2x - y, 평균 4/3
    sigma = np.array([[2.0 * a, -a]]) * np.sqrt(area)
    u = np.array([[4.0 / 3.0]]) * np.sqrt(area)
    sol = MixedSolution(
        problem=ProblemSpec("affine", mesh, zero_field),
        k=0,
        sigma=sigma,
        u=u,
        trace=np.zeros(3),
        alpha=np.ones((1, 3)),
        load=np.zeros((1, 1)),
        stabilization=Stabilization.UNIFORM,
        chosen_facet=np.full(1, -1),
    )
    expected = project_cells(lambdify_scalar("1 + 2*x - y"), 1, ElementMap.from_mesh(mesh))
    assert np.abs(local_potential_mixed(sol) - expected).max() < 1e-12
