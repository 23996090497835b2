import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fraclab.bubbles import BubbleParams, bubble_eval, project_bubble, projection_expansion_residual
from fraclab.constants import closed_form_constants
from fraclab.greens import green_column, lattice_free_green
from fraclab.grid import build_box_basis
from fraclab.operator import apply_power, critical_exponent


@pytest.mark.parametrize("n,s", [(1, 0.2), (2, 0.45), (3, 0.75)])
def test_peak_value(n, s):
    w = bubble_eval(BubbleParams(1.0, (0.0,) * n), np.zeros((1, n)), n, s)
    assert w[0] == closed_form_constants(n, s).c


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([(1, 0.2), (2, 0.45), (3, 0.75)]), st.floats(0.1, 10.0), st.integers(0, 2**31 - 1))
def test_dilation_covariance_and_reflection(ns, lam, seed):
    n, s = ns
    rng = np.random.default_rng(seed)
    xi = rng.uniform(-1, 1, n)
    x = rng.uniform(-3, 3, (20, n))
    w = bubble_eval(BubbleParams(lam, xi), x, n, s)
    ref = lam ** (-(n - 2 * s) / 2) * bubble_eval(BubbleParams(1.0, (0.0,) * n), (x - xi) / lam, n, s)
    assert np.allclose(w, ref, rtol=1e-12, atol=0)
    mirrored = bubble_eval(BubbleParams(lam, xi), 2 * xi - x, n, s)
    assert np.allclose(w, mirrored, rtol=1e-13, atol=0)


@pytest.mark.parametrize("n,s", [(1, 0.2), (2, 0.45), (3, 0.75)])
def test_parameter_derivatives_match_finite_differences(n, s, rng):
    x = rng.uniform(-2, 2, (30, n))
    xi = np.array(rng.uniform(-0.5, 0.5, n))
    lam = 0.8
    step = 1e-5
    d0 = bubble_eval(BubbleParams(lam, xi), x, n, s, deriv=0)
    fd = (bubble_eval(BubbleParams(lam + step, xi), x, n, s) - bubble_eval(BubbleParams(lam - step, xi), x, n, s)) / (2 * step)
    assert np.max(np.abs(d0 - fd)) <= 1e-6 * np.max(np.abs(d0))
    for j in range(1, n + 1):
        e = np.zeros(n)
        e[j - 1] = step
        dj = bubble_eval(BubbleParams(lam, xi), x, n, s, deriv=j)
        fd = (bubble_eval(BubbleParams(lam, xi + e), x, n, s) - bubble_eval(BubbleParams(lam, xi - e), x, n, s)) / (2 * step)
        assert np.max(np.abs(dj - fd)) <= 1e-6 * np.max(np.abs(dj))


def test_invalid_params():
    with pytest.raises(ValueError):
        BubbleParams(0.0, (0.0,))
    with pytest.raises(ValueError):
        bubble_eval(BubbleParams(1.0, (0.0,)), np.zeros((1, 1)), 1, 0.2, deriv=2)


def test_projection_defining_equation_and_comparison():
    s = 0.3
    b = build_box_basis([(-1.0, 1.0)] * 2, 2 / 32)
    prm = BubbleParams(0.3, (0.1, -0.2))
    pw, psis = project_bubble(b, prm, s)
    w = bubble_eval(prm, b.grid.points, 2, s)
    p = critical_exponent(2, s)
    assert np.max(np.abs(apply_power(b, pw, s) - w**p)) <= 1e-10 * np.max(w**p)
    assert np.min(w - pw) >= -1e-6 * np.max(w)
    assert len(psis) == 3
    for j, ps in enumerate(psis):
        rhs = p * w ** (p - 1) * bubble_eval(prm, b.grid.points, 2, s, deriv=j)
        assert np.max(np.abs(apply_power(b, ps, s) - rhs)) <= 1e-10 * np.max(np.abs(rhs))


def test_projection_error_shrinks_with_box():
    s = 0.2
    errs = []
    for L in (2.0, 4.0, 8.0):
        b = build_box_basis([(-L, L)], 1 / 64)
        prm = BubbleParams(1.0, (0.0,))
        pw, _ = project_bubble(b, prm, s)
        errs.append(np.max(np.abs(pw - bubble_eval(prm, b.grid.points, 1, s))))
    assert errs[0] > errs[1] > errs[2]


def test_center_outside_rejected(interval_basis):
    with pytest.raises(ValueError):
        project_bubble(interval_basis, BubbleParams(1.0, (1.5,)), 0.2)


@pytest.fixture(scope="module")
def interval_green():
    b = build_box_basis([(-1.0, 1.0)], 2 / 65536)
    j = b.grid.nearest_node([0.0])
    G = green_column(b, j, 0.2)
    H = lattice_free_green(b.grid.cells - b.grid.cells[j], 0.2, b.grid.h[0]) - G
    return b, G, H


@pytest.mark.parametrize("component", ["w", "psi0"])
def test_expansion_residual_decreases(interval_green, component):
    b, G, H = interval_green
    r = projection_expansion_residual(b, BubbleParams(1.0, (0.0,)), 0.2, 1 / 0.6, [0.2, 0.1, 0.05], H, G,
                                      component=component)
    assert r.monotone and np.all(np.diff(r.residual) < 0)
    if component == "w":
        assert r.far_field_error[-1] <= 0.10


def test_expansion_lambda_scaling(interval_green):
    # the H-term prediction scales like lam^((n-2s)/2); compare residual-corrected leading terms
    b, G, H = interval_green
    m = 0.6
    eps = [0.05, 0.025]
    leading = []
    for lam in (1.0, 2.0):
        r = projection_expansion_residual(b, BubbleParams(lam, (0.0,)), 0.2, 1 / 0.6, eps, np.zeros_like(H), G)
        leading.append(r.residual[-1])
    assert abs(leading[1] / leading[0] - 2 ** (m / 2)) <= 0.05 * 2 ** (m / 2)


def test_expansion_needs_two_scales(interval_basis):
    z = np.zeros(interval_basis.grid.size)
    with pytest.raises(ValueError):
        projection_expansion_residual(interval_basis, BubbleParams(1.0, (0.0,)), 0.2, 1.0, [0.1], z, z)
