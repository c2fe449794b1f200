"""기저 / 사영 / 발산 0 버블 테스트"""
import numpy as np
import pytest

from app.core.basis import (
    CellBasis,
    _check_reference_bubbles,
    _reference_bubbles,
    ElementMap,
    FacetBasis,
    VectorCellBasis,
    degree_of,
    dim_p,
    divfree_bubble_basis,
    embed,
    embed_vector,
    evaluate_cell,
    evaluate_facet,
    project_cell,
    project_facet,
    reference_facet_points,
)
from app.core.errors import BasisError
from app.core.problems import lambdify_scalar
from app.core.quadrature import Domain, quadrature_rule

SKEWED = np.array([[0.0, 0.0], [2.0, 0.5], [0.3, 1.5]])
REFERENCE = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


# ===== 직교정규성 =====

@pytest.mark.parametrize("k", [0, 1, 2, 5])
def test_cell_basis_orthonormal(k):
    rule = quadrature_rule(Domain.TRIANGLE, 2 * k)
    phi = CellBasis(k).values(rule.points)
    gram = np.einsum("q,qi,qj->ij", rule.weights, phi, phi)
    assert np.abs(gram - np.eye(dim_p(k))).max() < 1e-12


def test_cell_basis_total_degree_ordering():
    # 처음 dim P_1 개는 P_1 을 생성: 1, x, y 재현
    rule = quadrature_rule(Domain.TRIANGLE, 6)
    phi = CellBasis(3).values(rule.points)[:, :3]
    for target in (np.ones(len(rule)), rule.points[:, 0], rule.points[:, 1]):
        coeffs, *_ = np.linalg.lstsq(phi, target, rcond=None)
        assert np.abs(phi @ coeffs - target).max() < 1e-12


def test_constant_mode_value():
    points = np.array([[0.2, 0.3], [0.7, 0.1]])
    assert CellBasis(2).values(points)[:, 0] == pytest.approx([np.sqrt(2.0)] * 2)


@pytest.mark.parametrize("k", [1, 3])
def test_cell_basis_gradients_match_differences(k):
    basis = CellBasis(k)
    point = np.array([[0.21, 0.33]])
    step = 1e-6
    grads = basis.gradients(point)[0]
    for c in range(2):
        shift = np.zeros((1, 2))
        shift[0, c] = step
        fd = (basis.values(point + shift) - basis.values(point - shift))[0] / (2 * step)
        assert np.abs(fd - grads[:, c]).max() < 1e-6


def test_facet_basis_orthonormal():
    rule = quadrature_rule(Domain.SEGMENT, 8)
    chi = FacetBasis(4).values(rule.points)
    gram = np.einsum("q,qi,qj->ij", rule.weights, chi, chi)
    assert np.abs(gram - np.eye(5)).max() < 1e-13


def test_vector_basis_layout():
    basis = VectorCellBasis(1)
    values = basis.values(np.array([[0.25, 0.25]]))
    assert basis.dim == 6
    assert (values[0, :3, 1] == 0).all()
    assert (values[0, 3:, 0] == 0).all()


def test_negative_degree_rejected():
    with pytest.raises(BasisError):
        CellBasis(-1)


def test_element_map_rejects_clockwise():
    with pytest.raises(BasisError):
        ElementMap.from_vertices(REFERENCE[[0, 2, 1]])


# ===== 사영 =====

def test_project_constant():
    coeffs = project_cell(lambda p: np.full(len(p), 3.5), 2, SKEWED)
    points = np.array([[0.5, 0.5], [1.0, 0.6]])
    assert evaluate_cell(coeffs, SKEWED, points) == pytest.approx([3.5, 3.5], rel=1e-12)


def test_project_x_to_constant_is_mean():
    coeffs = project_cell(lambda p: p[:, 0], 0, REFERENCE)
    assert evaluate_cell(coeffs, REFERENCE, np.array([[0.1, 0.1]])) == pytest.approx([1.0 / 3.0])


def test_project_reproduces_polynomials():
    f = lambdify_scalar("x**2 + x*y - y + 2")
    coeffs = project_cell(f, 2, SKEWED)
    points = np.array([[0.4, 0.4], [1.2, 0.7], [0.5, 1.0]])
    assert np.abs(evaluate_cell(coeffs, SKEWED, points) - f(points)).max() < 1e-12


def test_project_facet_constant_and_linear():
    endpoints = np.array([[0.0, 0.0], [2.0, 0.0]])
    constant = project_facet(lambda p: np.full(len(p), 2.0), 1, endpoints)
    assert evaluate_facet(constant, 2.0, np.array([0.1, 0.9])) == pytest.approx([2.0, 2.0])
    mean = project_facet(lambda p: p[:, 0], 0, endpoints)
    assert evaluate_facet(mean, 2.0, np.array([0.3])) == pytest.approx([1.0])


def test_project_facet_reproduces_polynomial():
    endpoints = np.array([[1.0, 0.0], [0.0, 2.0]])
    g = lambdify_scalar("x**2 - y")
    coeffs = project_facet(g, 2, endpoints)
    s = np.array([0.0, 0.4, 1.0])
    points = endpoints[0] + s[:, None] * (endpoints[1] - endpoints[0])
    assert np.abs(evaluate_facet(coeffs, np.sqrt(5.0), s) - g(points)).max() < 1e-12


def test_degree_of():
    assert degree_of(1) == 0
    assert degree_of(10) == 3
    with pytest.raises(BasisError):
        degree_of(7)


def test_embed():
    coeffs = np.array([[1.0, 2.0, 3.0]])
    assert embed(coeffs, 2).tolist() == [[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]]
    vector = embed_vector(np.arange(6.0), 2)
    assert vector.tolist() == [0, 1, 2, 0, 0, 0, 3, 4, 5, 0, 0, 0]
    with pytest.raises(BasisError):
        embed(np.zeros(6), 1)


# ===== 발산 0 버블 =====

@pytest.mark.parametrize("k, expected", [(0, 0), (1, 0), (2, 1), (3, 3), (4, 6)])
def test_bubble_dimension(k, expected):
    assert divfree_bubble_basis(k, SKEWED).shape == (expected, 2 * dim_p(k))


@pytest.mark.parametrize("k", [2, 3, 4])
def test_bubbles_divergence_free_with_zero_normal_trace(k):
    bubbles = divfree_bubble_basis(k, SKEWED)
    assert np.abs(bubbles @ bubbles.T - np.eye(len(bubbles))).max() < 1e-12

    element = ElementMap.from_vertices(SKEWED)
    dim = dim_p(k)
    coeffs = bubbles.reshape(len(bubbles), 2, dim)

    rule = quadrature_rule(Domain.TRIANGLE, 2 * k)
    grads = element.physical_gradients(CellBasis(k).gradients(rule.points))
    divergence = np.einsum("qic,bci->bq", grads, coeffs)
    assert np.abs(divergence).max() < 1e-10

    edges = SKEWED[[2, 0, 1]] - SKEWED[[1, 2, 0]]
    normals = np.column_stack([edges[:, 1], -edges[:, 0]]) / np.linalg.norm(edges, axis=1)[:, None]
    segment = quadrature_rule(Domain.SEGMENT, 2 * k)
    for j in range(3):
        phi = CellBasis(k).values(reference_facet_points(j, segment.points)) * element.scale
        trace = np.einsum("qi,bci,c->bq", phi, coeffs, normals[j])
        assert np.abs(trace).max() < 1e-10



def reference_vector_field(field) -> np.ndarray:
    """기준 삼각형 위 P_1² 벡터장의 (1, 2, dim P_1) 계수"""
    rule = quadrature_rule(Domain.TRIANGLE, 4)
    phi = CellBasis(1).values(rule.points)
    values = field(rule.points)
    return np.einsum("q,qc,qi->ci", rule.weights, values, phi)[None]


def test_bubble_check_rejects_divergence():
    coeffs = reference_vector_field(lambda p: np.column_stack([p[:, 0], np.zeros(len(p))]))
    with pytest.raises(BasisError, match="not divergence-free"):
        _check_reference_bubbles(1, coeffs)


def test_bubble_check_rejects_normal_trace():
    coeffs = reference_vector_field(lambda p: np.column_stack([np.ones(len(p)), np.zeros(len(p))]))
    with pytest.raises(BasisError, match="normal trace"):
        _check_reference_bubbles(1, coeffs)


def test_bubble_check_rejects_small_defect_after_normalisation():
    # 1e-10 크기의 결함도 계수 크기와 무관하게 걸러져야 함
    bubble = np.array(_reference_bubbles(2))
    bubble /= np.linalg.norm(bubble)
    defect = reference_vector_field(lambda p: np.column_stack([p[:, 0], np.zeros(len(p))]))
    padded = np.zeros_like(bubble)
    padded[:, :, : defect.shape[2]] = defect / np.linalg.norm(defect)
    for scale in (1e-6, 1.0, 1e6):
        with pytest.raises(BasisError):
            _check_reference_bubbles(2, scale * (bubble + 1e-10 * padded))


@pytest.mark.parametrize("k", [2, 3, 4, 5])
def test_reference_bubbles_pass_unit_norm_check(k):
    _check_reference_bubbles(k, np.array(_reference_bubbles(k)))
