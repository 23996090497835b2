import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import integrate
from scipy.special import gamma

from fraclab.bubbles import BubbleParams, bubble_eval
from fraclab.constants import closed_form_constants
from fraclab.extension import (
    ExtensionError, bessel_k, extend_cylinder, extend_halfspace_bubble, extension_energy, flux_residual,
    halfspace_bubble_fourier_1d, pohozaev_residual, rho,
)
from fraclab.grid import build_box_basis
from fraclab.operator import apply_power


def test_bessel_half_order():
    r = np.array([0.1, 1.0, 10.0])
    exact = np.sqrt(np.pi / (2 * r)) * np.exp(-r)
    assert np.allclose(bessel_k(0.5, r), exact, rtol=1e-10, atol=0)


@pytest.mark.parametrize("s", [0.1, 0.3, 0.75])
def test_bessel_symmetry_and_monotone(s):
    from scipy.special import kv

    r = np.geomspace(1e-3, 50, 200)
    k = bessel_k(s, r)
    assert np.array_equal(k, bessel_k(-s, r))
    assert np.all(np.diff(k) < 0)
    assert np.allclose(k, kv(s, r), rtol=1e-10, atol=0)


def test_bessel_rejects_nonpositive():
    with pytest.raises(ExtensionError):
        bessel_k(0.3, np.array([1.0, 0.0]))


@pytest.mark.parametrize("s", [0.2, 0.5, 0.8])
def test_rho_profile(s):
    r = np.linspace(0, 60, 601)
    p = rho(r, s)
    assert p[0] == pytest.approx(1.0, abs=1e-14)
    assert np.all(np.diff(p) < 0)
    tail = r >= 4
    assert np.all(p[tail] <= np.exp(-r[tail] / 2))


def test_flux_routes(square_basis, rng):
    s = 0.3
    for _ in range(3):
        u = rng.standard_normal(square_basis.grid.size)
        assert flux_residual(square_basis, u, s) <= 1e-12
    x, y = square_basis.grid.points.T
    smooth = np.cos(np.pi * x / 2) * np.cos(np.pi * y / 2) + 0.3 * np.sin(np.pi * x) * np.cos(np.pi * y / 2)
    assert flux_residual(square_basis, smooth, s, route="numerical") <= 1e-3
    with pytest.raises(ExtensionError):
        flux_residual(square_basis, np.zeros(square_basis.grid.size), s)
    with pytest.raises(ValueError):
        flux_residual(square_basis, smooth, s, route="guess")


def test_single_mode_and_boundary_value(interval_basis, rng):
    s = 0.35
    phi = interval_basis.eigenvector(0)
    ext = extend_cylinder(interval_basis, phi, s)
    kappa = math.sqrt(interval_basis.eigenvalues[0])
    for t in (0.01, 0.3, 2.0):
        assert np.allclose(ext.field(t), phi * rho(np.array([kappa * t]), s)[0], rtol=0, atol=1e-12)
    u = rng.standard_normal(interval_basis.grid.size)
    ext = extend_cylinder(interval_basis, u, s)
    assert np.max(np.abs(ext.field(0.0) - u)) <= 1e-12
    assert ext(5, 0.0) == u[5]
    assert ext(5, 0.07) == pytest.approx(ext.field(0.07)[5], abs=1e-10 * np.max(np.abs(u)))


def test_harmonic_extension_half(interval_basis, rng):
    u = rng.standard_normal(interval_basis.grid.size)
    ext = extend_cylinder(interval_basis, u, 0.5)
    a = interval_basis.analyze(u)
    kappa = np.sqrt(interval_basis.eigenvalues)
    for t in (0.02, 0.5):
        exact = interval_basis.synthesize(a * np.exp(-kappa * t))
        assert np.max(np.abs(ext.field(t) - exact)) <= 1e-10 * np.max(np.abs(u))


def test_extension_energy_identity(interval_basis, rng):
    s = 0.3
    u = rng.standard_normal(interval_basis.grid.size)
    C_s = 2 ** (1 - 2 * s) * gamma(1 - s) / gamma(s)
    quad = interval_basis.inner(apply_power(interval_basis, u, s), u)
    assert extension_energy(interval_basis, u, s) == pytest.approx(C_s * quad, rel=1e-8)


@pytest.mark.parametrize("n,s", [(1, 0.2), (2, 0.5)])
def test_halfspace_bubble_trace_and_decay(n, s):
    params = BubbleParams(0.7, (0.1,) * n)
    W = extend_halfspace_bubble(params, s, n)
    x0 = np.array(params.xi)
    w0 = float(bubble_eval(params, x0[None, :], n, s)[0])
    assert W(x0, 0.0) == pytest.approx(w0, rel=1e-8)
    # W(x, t) = w - Gamma(1-s)/Gamma(1+s) (t/2)^(2s) (-Delta)^s w + ..., and (-Delta)^s w = w^p
    p = (n + 2 * s) / (n - 2 * s)
    slope = gamma(1 - s) / gamma(1 + s) * 2 ** (-2 * s) * w0**p
    t = 1e-6
    assert (w0 - W(x0, t)) / t ** (2 * s) == pytest.approx(slope, rel=1e-2)
    vals = [W(x0, t) for t in (0.05, 0.2, 0.8)]
    assert vals[0] <= w0 and np.all(np.diff(vals) < 0)


def test_halfspace_bubble_poisson_2d():
    # s = 1/2: the normalized kernel is the classical Poisson kernel t / (2 pi (t^2 + |z|^2)^(3/2))
    params = BubbleParams(1.0, (0.0, 0.0))
    W = extend_halfspace_bubble(params, 0.5, 2)
    x, t = np.array([0.4, 0.0]), 0.6

    def poisson(r):
        inner = integrate.quad(lambda th: float(bubble_eval(params, np.array([[x[0] + r * math.cos(th), r * math.sin(th)]]), 2, 0.5)[0]),
                               0, 2 * math.pi, epsabs=0, epsrel=1e-12, limit=200)[0]
        return inner * r * t / (2 * math.pi * (t * t + r * r) ** 1.5)

    ref = sum(integrate.quad(poisson, a, b, epsabs=0, epsrel=1e-11, limit=400)[0] for a, b in [(0, 1), (1, 10), (10, 100), (100, np.inf)])
    assert W(x, t) == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("x,t", [(0.0, 0.3), (0.5, 0.1), (1.5, 1.0)])
def test_halfspace_bubble_fourier_1d(x, t):
    params = BubbleParams(0.8, (0.0,))
    W = extend_halfspace_bubble(params, 0.2, 1)
    assert W(np.array([x]), t) == pytest.approx(halfspace_bubble_fourier_1d(params, 0.2, x, t), rel=1e-7)


def test_pohozaev_errors_and_trivial(interval_basis, square_basis):
    zero = SimpleNamespace(basis=interval_basis, s=0.2, kind="critical", epsilon=0.1, u=np.zeros(interval_basis.grid.size))
    pair = pohozaev_residual(zero)
    assert pair.lhs == pair.rhs == 0.0
    x = interval_basis.grid.points[:, 0]
    bump = SimpleNamespace(basis=interval_basis, s=0.2, kind="critical", epsilon=0.1, u=np.cos(np.pi * x / 2))
    pair = pohozaev_residual(bump)
    assert pair.lhs > 0 and pair.rhs > 0
    with pytest.raises(ExtensionError):
        pohozaev_residual(SimpleNamespace(**{**vars(bump), "kind": "subcritical"}))
    with pytest.raises(ExtensionError):
        pohozaev_residual(SimpleNamespace(basis=square_basis, s=0.2, kind="critical", epsilon=0.1, u=np.ones(square_basis.grid.size)))
