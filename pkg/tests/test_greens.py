import numpy as np
import pytest

from fraclab.greens import (
    build_green_cache, green_column, lattice_free_green, regular_part, robin_axes, robin_function, robin_gradient,
)
from fraclab.grid import GridError, build_box_basis
from fraclab.operator import apply_power


@pytest.fixture(scope="module")
def interval_cache():
    return build_green_cache(build_box_basis([(-1.0, 1.0)], 2 / 1024), 0.2)


@pytest.fixture(scope="module")
def square_cache():
    return build_green_cache(build_box_basis([(-1.0, 1.0)] * 2, 2 / 48), 0.25)


@pytest.mark.parametrize("name", ["interval_cache", "square_cache"])
def test_symmetry_positivity_tau(name, request):
    cache = request.getfixturevalue(name)
    G = cache.matrix
    off = ~np.eye(G.shape[0], dtype=bool)
    assert np.max(np.abs(G - G.T)[off]) <= 1e-9 * np.max(np.abs(G))
    assert np.all(G > 0)
    assert np.all(cache.tau > 0)


def test_columns_match_matrix(square_cache, lshape_basis):
    j = square_cache.basis.grid.nearest_node([0.3, -0.4])
    col = green_column(square_cache.basis, j, 0.25)
    assert np.allclose(col, square_cache.matrix[:, j], rtol=0, atol=1e-12 * np.max(col))
    lazy = build_green_cache(square_cache.basis, 0.25, full_matrix=False)
    assert np.allclose(lazy.tau, square_cache.tau, rtol=0, atol=1e-12)
    assert lazy.matrix is None
    assert np.allclose(lazy.column(j), col, rtol=0, atol=1e-12 * np.max(col))
    Gl = build_green_cache(lshape_basis, 0.3).matrix
    assert np.max(np.abs(Gl - Gl.T)) <= 1e-9 * np.max(Gl)
    assert np.all(Gl > 0)


def test_tau_grows_toward_boundary(interval_cache, square_cache):
    t = interval_cache.tau
    assert t[0] > t[1] > t[2] and t[-1] > t[-2] > t[-3]
    T = square_cache.basis.grid.raster(square_cache.tau)
    for R in (T, T[::-1], T.T, T.T[::-1]):
        assert np.all(R[0, 1:-1] > R[1, 1:-1])
        assert np.all(R[1, 2:-2] > R[2, 2:-2])


def test_inverse_identity(square_cache, rng):
    basis = square_cache.basis
    w = basis.grid.weight
    for _ in range(3):
        u = rng.standard_normal(basis.grid.size)
        back = w * square_cache.matrix @ apply_power(basis, u, 0.25)
        assert np.max(np.abs(back - u)) <= 1e-9 * np.max(np.abs(u))


@pytest.mark.parametrize("y0", [0.3, 0.5])
def test_tent_limit(y0):
    basis = build_box_basis([(0.0, 1.0)], 1 / 1024)
    j = basis.grid.nearest_node([y0])
    G = green_column(basis, j, 0.95)
    x = basis.grid.points[:, 0]
    y = x[j]
    tent = np.minimum(x, y) * (1 - np.maximum(x, y))
    assert np.max(np.abs(G / G.max() - tent / tent.max())) <= 0.05


def test_regular_part_symmetric_positive():
    basis = build_box_basis([(-1.0, 1.0)] * 2, 2 / 12)
    cache = build_green_cache(basis, 0.3)
    H = np.array([cache.regular_column(j) for j in range(basis.grid.size)])
    assert np.max(np.abs(H - H.T)) <= 1e-9 * np.max(np.abs(H))
    assert np.all(H > 0)
    x, y = 5, 40
    assert regular_part(cache, x, y) == pytest.approx(regular_part(cache, y, x), abs=1e-12)
    assert regular_part(cache, x, y) == pytest.approx(H[y, x], abs=1e-12)
    assert regular_part(cache, y, y) == pytest.approx(cache.tau[y], abs=1e-12)
    with pytest.raises(ValueError):
        regular_part(cache, y, y, kernel="continuum")


def test_regular_part_smooth_across_diagonal(square_cache):
    grid = square_cache.basis.grid
    y = grid.nearest_node([0.1, 0.0])
    _, j = grid.multi_index(y)
    H = grid.raster(square_cache.regular_column(y))[:, j]
    G = grid.raster(square_cache.column(y))[:, j]
    d2H = np.max(np.abs(np.diff(H, 2)))
    d2G = np.max(np.abs(np.diff(G, 2)))
    assert d2H <= 1e-2 * np.max(H)
    assert d2G >= 1e4 * d2H


@pytest.mark.parametrize("n,s,sizes", [(1, 0.2, (256, 512, 1024)), (2, 0.25, (16, 32, 64))])
def test_diagonal_divergence_rate(n, s, sizes):
    diag, tau = [], []
    for N in sizes:
        basis = build_box_basis([(-1.0, 1.0)] * n, 2 / N)
        cache = build_green_cache(basis, s, full_matrix=False)
        j = basis.grid.nearest_node([0.0] * n)
        g0 = lattice_free_green(np.zeros((1, n), dtype=int), s, 2 / N)[0]
        diag.append(g0 - cache.tau[j])
        tau.append(cache.tau[j])
    expo = np.log2(np.array(diag[1:]) / np.array(diag[:-1]))
    assert np.all(np.abs(expo - (n - 2 * s)) <= 0.15 * (n - 2 * s))
    assert np.ptp(tau) <= 0.02 * tau[-1]


def test_robin_interval(interval_cache):
    grid = interval_cache.basis.grid
    c = grid.nearest_node([0.0])
    tau0 = robin_function(interval_cache, c)
    assert tau0 == pytest.approx(0.2293718599, rel=1e-6)
    for x in (0.1, 0.35, 0.7):
        a, b = grid.nearest_node([x]), grid.nearest_node([-x])
        assert abs(robin_function(interval_cache, a) - robin_function(interval_cache, b)) <= 1e-6 * tau0
        assert robin_function(interval_cache, a) > tau0
        assert np.allclose(robin_gradient(interval_cache, a), -robin_gradient(interval_cache, b), rtol=0, atol=1e-6 * tau0)
    assert np.all(np.abs(robin_gradient(interval_cache, c)) <= 1e-4 * tau0)


def test_robin_refinement():
    vals = []
    for N in (512, 1024):
        basis = build_box_basis([(-1.0, 1.0)], 2 / N)
        cache = build_green_cache(basis, 0.2, full_matrix=False)
        vals.append(robin_function(cache, basis.grid.nearest_node([0.0])))
    assert abs(vals[1] - vals[0]) <= 0.02 * vals[1]


def test_robin_square(square_cache):
    grid = square_cache.basis.grid
    c = grid.nearest_node([0.0, 0.0])
    tau0 = robin_function(square_cache, c)
    assert np.all(np.abs(robin_gradient(square_cache, c)) <= 1e-4 * tau0)
    a, b = grid.nearest_node([0.25, -0.5]), grid.nearest_node([-0.25, 0.5])
    assert np.allclose(robin_gradient(square_cache, a), -robin_gradient(square_cache, b), rtol=0, atol=1e-6 * tau0)
    assert robin_function(square_cache, a) > tau0


def test_extrapolation_axis_spread(square_cache):
    grid = square_cache.basis.grid
    for x in ([0.0, 0.0], [0.3, -0.2], [0.5, 0.1]):
        vals = robin_axes(square_cache, grid.nearest_node(x))
        assert np.ptp(vals) <= 0.02 * abs(np.mean(vals))
    assert square_cache.order == 2
    y = grid.nearest_node([0.3, -0.2])
    assert robin_function(square_cache, y, method="extrapolate") == pytest.approx(np.mean(robin_axes(square_cache, y)), rel=1e-12)


def test_errors(square_cache):
    basis = square_cache.basis
    with pytest.raises(GridError):
        green_column(basis, basis.grid.size, 0.25)
    with pytest.raises(GridError):
        green_column(basis, -1, 0.25)
    edge = basis.grid.node_index((1, 20))
    with pytest.raises(GridError):
        robin_function(square_cache, edge)
    ring = basis.grid.node_index((2, 20))
    robin_function(square_cache, ring)
    robin_gradient(square_cache, basis.grid.node_index((3, 20)))
    with pytest.raises(GridError):
        robin_gradient(square_cache, ring)
    with pytest.raises(ValueError):
        robin_function(square_cache, basis.grid.nearest_node([0.0, 0.0]), method="spline")
