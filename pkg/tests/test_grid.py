import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from fraclab.grid import (
    BasisMismatch, GridError, build_box_basis, build_masked_basis, is_connected, lp_norm, read_mask,
    spectral_transform, stencil_matrix, write_mask,
)


def test_box_1d_eigenvalues_match_dense_solver():
    b = build_box_basis([(0.0, 1.0)], 0.25)
    k = np.arange(1, 4)
    assert np.allclose(b.eigenvalues, 32 * (1 - np.cos(k * np.pi / 4)), rtol=0, atol=1e-12)
    dense = scipy.linalg.eigvalsh(stencil_matrix(b.grid).toarray())
    assert np.allclose(np.sort(b.eigenvalues), dense, atol=1e-12)


def test_box_2d_eigenvalues_are_pairwise_sums():
    b = build_box_basis([(0.0, 1.0)] * 2, 0.25)
    one = 32 * (1 - np.cos(np.arange(1, 4) * np.pi / 4))
    sums = np.sort((one[:, None] + one[None, :]).ravel())
    assert np.allclose(np.sort(b.eigenvalues), sums, atol=1e-12)
    dense = scipy.linalg.eigvalsh(stencil_matrix(b.grid).toarray())
    assert np.allclose(np.sort(b.eigenvalues), dense, atol=1e-11)


@pytest.mark.parametrize("name", ["interval_basis", "square_basis", "lshape_basis"])
def test_gram_matrix_is_identity(name, request):
    b = request.getfixturevalue(name)
    V = b.eigenvectors()
    gram = b.grid.weight * V.T @ V
    assert np.max(np.abs(gram - np.eye(b.size))) <= 1e-10


@pytest.mark.parametrize("name", ["interval_basis", "square_basis", "lshape_basis"])
def test_stencil_reproduces_eigenpairs(name, request):
    b = request.getfixturevalue(name)
    A = stencil_matrix(b.grid)
    V = b.eigenvectors()
    res = A @ V - V * b.eigenvalues[None, :]
    assert np.max(np.abs(res)) / np.max(np.abs(b.eigenvalues[None, :] * V)) <= 1e-8
    assert np.all(b.eigenvalues > 0)


def test_full_rectangle_mask_matches_box():
    mask = np.ones((7, 5), dtype=bool)
    m = build_masked_basis(mask, 0.125)
    box = build_box_basis([(0.0, 1.0), (0.0, 0.75)], 0.125)
    assert np.allclose(np.sort(m.eigenvalues), np.sort(box.eigenvalues), rtol=1e-9)


def test_two_squares_with_one_cell_neck_connected():
    mask = np.zeros((11, 5), dtype=bool)
    mask[:5, :] = True
    mask[6:, :] = True
    assert not is_connected(mask)
    with pytest.raises(GridError):
        build_masked_basis(mask, 0.1)
    mask[5, 2] = True
    assert is_connected(mask)
    b = build_masked_basis(mask, 0.1)
    assert b.grid.size == mask.sum()


def test_mask_cap_and_spacing_errors():
    with pytest.raises(GridError, match="coarser"):
        build_masked_basis(np.ones((80, 80), dtype=bool), 0.01)
    with pytest.raises(GridError, match="divide"):
        build_box_basis([(0.0, 1.0)], 0.3)


def test_mask_round_trip(tmp_path):
    mask = np.ones((4, 6), dtype=bool)
    mask[0, 0] = False
    write_mask(tmp_path / "m.txt", mask, 0.125)
    back, h = read_mask(tmp_path / "m.txt")
    assert h == 0.125 and np.array_equal(back, mask)


def test_transform_of_eigenvector_is_unit_vector(square_basis):
    b = square_basis
    a = spectral_transform(b, b.eigenvector(3), "analyze")
    e = np.zeros(b.size)
    e[3] = 1.0
    assert np.max(np.abs(a - e)) <= 1e-12


@pytest.mark.parametrize("name", ["interval_basis", "square_basis", "lshape_basis"])
def test_round_trip_and_linearity(name, request, rng):
    b = request.getfixturevalue(name)
    u, v = rng.standard_normal((2, b.grid.size))
    back = spectral_transform(b, spectral_transform(b, u, "analyze"), "synthesize")
    assert np.max(np.abs(back - u)) <= 1e-10
    lhs = b.analyze(2.5 * u - 0.7 * v)
    assert np.allclose(lhs, 2.5 * b.analyze(u) - 0.7 * b.analyze(v), atol=1e-12)


def test_basis_mismatch(interval_basis):
    with pytest.raises(BasisMismatch):
        interval_basis.analyze(np.ones(5))


def test_lp_norms(rng):
    b = build_box_basis([(0.0, 1.0)], 1 / 64)
    one = np.ones(b.grid.size)
    assert abs(lp_norm(b.grid, one, 2) - 1.0) <= 2 / 64
    u = rng.standard_normal(b.grid.size)
    assert lp_norm(b.grid, u, np.inf) == np.max(np.abs(u))
    with pytest.raises(ValueError):
        lp_norm(b.grid, u, 0.5)


def test_bubble_norm_against_closed_form():
    from fraclab.bubbles import BubbleParams, bubble_eval
    from fraclab.constants import bubble_integral, closed_form_constants

    n, s, L = 1, 0.2, 20.0
    cs = closed_form_constants(n, s)
    b = build_box_basis([(-L, L)], L / 512)
    w = bubble_eval(BubbleParams(1.0, (0.0,)), b.grid.points, n, s)
    num = lp_norm(b.grid, w, cs.p + 1) ** (cs.p + 1)
    exact = cs.c ** (cs.p + 1) * bubble_integral(n, n)
    # w^(p+1) = c^(p+1) / (1 + x^2) in 1D, so the part beyond |x| = L is known
    tail = cs.c ** (cs.p + 1) * 2 * (np.pi / 2 - np.arctan(L))
    assert abs(num + tail - exact) / exact <= 1e-4


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=3, max_value=40), st.integers(min_value=0, max_value=2**31 - 1))
def test_round_trip_property(cells, seed):
    b = build_box_basis([(0.0, 1.0)], 1 / cells)
    u = np.random.default_rng(seed).standard_normal(b.grid.size)
    assert np.max(np.abs(b.synthesize(b.analyze(u)) - u)) <= 1e-10 * max(1.0, np.max(np.abs(u)))
