"""The s-harmonic extension on the half-cylinder and the checks built on it.

Each eigenmode extends as ``phi_k(x) rho_s(sqrt(lam_k) t)`` with
``rho_s(r) = 2^(1-s) / Gamma(s) r^s K_s(r)``, so the extension of a grid
function is a mode sum and never requires solving the degenerate PDE.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gamma

from fraclab import kernels
from fraclab.bubbles import BubbleParams, bubble_eval
from fraclab.constants import closed_form_constants
from fraclab.grid import BoxBasis, SpectralBasis
from fraclab.operator import apply_power


class ExtensionError(ValueError):
    pass


def bessel_k(order: float, r):
    """K_order(r) for r > 0 by trapezoidal quadrature of int_0^inf e^(-r cosh t) cosh(order t) dt."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ExtensionError("bessel_k needs r > 0")
    return kernels.bessel_k_scaled(order, r) * np.exp(-r)


def rho(r, s: float):
    """Mode profile rho_s with rho_s(0) = 1."""
    return kernels.rho(np.asarray(r, dtype=float), s)


def _small_r_flux_coefficient(s: float) -> float:
    # rho_s(r) = 1 - Gamma(1-s)/Gamma(1+s) (r/2)^(2s) + O(r^2), so
    # t^(1-2s) d/dt rho_s(sqrt(lam) t) -> -2s Gamma(1-s)/Gamma(1+s) 2^(-2s) lam^s
    return 2 * s * gamma(1 - s) / gamma(1 + s) * 2 ** (-2 * s)


class CylinderExtension:
    """U(x, t) = sum_k a_k phi_k(x) rho_s(sqrt(lam_k) t) for a grid function u."""

    def __init__(self, basis: SpectralBasis, u, s: float, tol: float = 1e-14):
        self.basis = basis
        self.s = s
        self.u = np.asarray(u, dtype=float).copy()
        self.coeffs = basis.analyze(self.u)
        self.kappa = np.sqrt(basis.eigenvalues)
        self.tol = tol

    def _active(self, t: float) -> np.ndarray:
        scale = max(np.max(np.abs(self.u)), 1e-300)
        prof = kernels.rho(self.kappa * t, self.s)
        return prof, np.abs(self.coeffs * prof) >= self.tol * scale

    def field(self, t: float) -> np.ndarray:
        """U(., t) at every node."""
        if t <= 0:
            return self.u.copy()
        prof, keep = self._active(t)
        return self.basis.synthesize(np.where(keep, self.coeffs * prof, 0.0))

    def __call__(self, node: int, t: float) -> float:
        """U at one node through the compiled mode-sum kernel."""
        if t <= 0:
            return float(self.u[node])
        phi = self._node_values(node)
        return float(np.asarray(kernels.mode_sum(self.coeffs * phi, self.kappa, t, self.s)).ravel()[0])

    def dt_field(self, t: float) -> np.ndarray:
        """dU/dt(., t) at every node, t > 0."""
        if t <= 0:
            raise ExtensionError("dU/dt needs t > 0")
        d = self.kappa * kernels.drho(self.kappa * t, self.s)
        return self.basis.synthesize(self.coeffs * d)

    def _node_values(self, node: int) -> np.ndarray:
        e = np.zeros(self.basis.grid.size)
        e[node] = 1.0 / self.basis.grid.weight
        # <e_node / w, phi_k> = phi_k(x_node)
        return self.basis.analyze(e)


def extend_cylinder(basis: SpectralBasis, u, s: float) -> CylinderExtension:
    return CylinderExtension(basis, u, s)


def flux_residual(basis: SpectralBasis, u, s: float, route: str = "analytic", ts=(1e-3, 5e-4)) -> float:
    """max |(-1/C_s) lim t^(1-2s) dU/dt - A_s u| / ||A_s u||_inf.

    ``analytic`` takes the limit per mode from the small-argument expansion of
    rho_s; ``numerical`` evaluates t^(1-2s) dU/dt at two small t and removes
    the leading t^(2-2s) correction.
    """
    u = np.asarray(u, dtype=float)
    if not np.any(u):
        raise ExtensionError("flux residual undefined for u = 0")
    C_s = 2 ** (1 - 2 * s) * gamma(1 - s) / gamma(s)
    target = apply_power(basis, u, s)
    if route == "analytic":
        a = basis.analyze(u)
        flux = basis.synthesize(a * _small_r_flux_coefficient(s) * basis.eigenvalues**s / C_s)
    elif route == "numerical":
        ext = CylinderExtension(basis, u, s)
        t1, t2 = ts
        f1 = -(t1 ** (1 - 2 * s)) * ext.dt_field(t1) / C_s
        f2 = -(t2 ** (1 - 2 * s)) * ext.dt_field(t2) / C_s
        g = 2 - 2 * s
        flux = (f2 * t1**g - f1 * t2**g) / (t1**g - t2**g)
    else:
        raise ValueError(f"unknown route {route!r}")
    return float(np.max(np.abs(flux - target)) / np.max(np.abs(target)))


def extension_energy(basis: SpectralBasis, u, s: float) -> float:
    """int_C t^(1-2s) |grad U|^2 per mode, by quadrature in t.

    Mode k contributes a_k^2 lam_k^s int_0^inf r^(1-2s) (rho'(r)^2 + rho(r)^2) dr.
    """
    a = basis.analyze(u)
    f = lambda r: r ** (1 - 2 * s) * (kernels.drho(np.array([r]), s)[0] ** 2 + kernels.rho(np.array([r]), s)[0] ** 2)
    edges = np.concatenate([[0.0], np.geomspace(1e-6, 60.0, 30)])
    val = sum(integrate.quad(f, lo, hi, limit=200)[0] for lo, hi in zip(edges[:-1], edges[1:]))
    return float(np.sum(a * a * basis.eigenvalues**s) * val)


def extend_halfspace_bubble(params: BubbleParams, s: float, n: int):
    """W(x, t) = int p_s(x - y, t) w(y) dy with the normalized Poisson kernel.

    Returns a callable ``W(x, t)``.  With y = x + t z the kernel becomes
    ``C (1 + |z|^2)^(-(n+2s)/2)`` and the integral is done radially in z
    (angular part exact in 1D, nested quadrature in 2D/3D).
    """
    C = gamma((n + 2 * s) / 2) / (math.pi ** (n / 2) * gamma(s))
    beta = (n + 2 * s) / 2
    xi = np.asarray(params.xi, dtype=float)

    def w_at(y):
        return float(bubble_eval(params, np.atleast_2d(y), n, s)[0])

    def W(x, t: float) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if t <= 0:
            return w_at(x)
        opts = dict(epsabs=0.0, epsrel=1e-11, limit=400)
        if n == 1:
            kern = lambda z: (1 + z * z) ** (-beta) * w_at(x + t * z)
            # split at the bubble center seen from x
            z0 = (xi[0] - x[0]) / t
            pts = sorted({-1e3, min(z0, -1.0), max(z0, 1.0), 1e3, z0})
            tot = 0.0
            edges = [-np.inf] + pts + [np.inf]
            for lo, hi in zip(edges[:-1], edges[1:]):
                if hi > lo:
                    tot += integrate.quad(kern, lo, hi, **opts)[0]
            return C * tot
        d = xi - x
        dist = float(np.linalg.norm(d))
        axis = d / dist if dist > 0 else np.eye(n)[0]
        rad = lambda r: (1 + r * r) ** (-beta) * r ** (n - 1)

        def shell(r):
            # angular average of w over |z| = r, using radial symmetry of w about xi
            if n == 2:
                g = lambda th: w_at(x + t * r * (math.cos(th) * axis + math.sin(th) * np.array([-axis[1], axis[0]])))
                return 2 * integrate.quad(g, 0.0, math.pi, **opts)[0]
            perp = np.cross(axis, [1.0, 0.0, 0.0] if abs(axis[0]) < 0.9 else [0.0, 1.0, 0.0])
            perp /= np.linalg.norm(perp)
            g = lambda ct: w_at(x + t * r * (ct * axis + math.sqrt(max(1 - ct * ct, 0.0)) * perp))
            return 2 * math.pi * integrate.quad(g, -1.0, 1.0, **opts)[0]

        edges = [0.0, 1.0, 10.0, 100.0, np.inf]
        tot = sum(integrate.quad(lambda r: rad(r) * shell(r), lo, hi, **opts)[0] for lo, hi in zip(edges[:-1], edges[1:]))
        return C * tot

    return W


def halfspace_bubble_fourier_1d(params: BubbleParams, s: float, x: float, t: float) -> float:
    """Independent 1D evaluation of W through the Fourier multiplier rho_s(|k| t).

    The transform of (lam^2 + x^2)^(-(1-2s)/2) is
    ``2 sqrt(pi) / Gamma(1/2 - s) (|k| / (2 lam))^(-s) K_s(lam |k|)``.
    """
    c = closed_form_constants(1, s).c
    lam = params.lam
    m = 1 - 2 * s
    x = x - params.xi[0]

    def hat(k):
        return c * lam ** (m / 2) * 2 * math.sqrt(math.pi) / gamma(0.5 - s) * (k / (2 * lam)) ** (-s) * bessel_k(s, np.array([lam * k]))[0]

    f = lambda k: hat(k) * math.cos(k * x) * (rho(np.array([k * t]), s)[0] if t > 0 else 1.0)
    edges = np.concatenate([[0.0], np.geomspace(1e-8, 200.0 / min(lam, 1.0), 60)])
    tot = sum(integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-12, limit=400)[0] for lo, hi in zip(edges[:-1], edges[1:]))
    return tot / math.pi


@dataclass
class PohozaevPair:
    lhs: float
    rhs: float
    gap: float


def _boundary_flux_1d(basis: BoxBasis, coeffs: np.ndarray, s: float, ts: np.ndarray, decades: int = 40):
    """d_x U at both ends of the interval for every t in ``ts``.

    d_x U(b, t) = sum_k a_k phi_k'(b) rho_s(sqrt(lam_k) t) is evaluated through
    the heat-semigroup form of the extension,
    U(., t) = t^(2s) / (4^s Gamma(s)) int_0^inf e^(-t^2/(4r)) e^(-r A) u dr / r^(1+s),
    so the O(N) mode sums are done once per heat time r instead of per t.
    """
    lam = basis.eigenvalues
    L = basis.grid.bounds[0][1] - basis.grid.bounds[0][0]
    k = basis.mode_numbers()[:, 0]
    kappa = np.sqrt(lam)
    amp = np.sqrt(2.0 / L) * kappa * coeffs
    # phi_k' at the ends, up to sign (only squares are used); (x . nu) is applied by the caller
    right = amp * np.where(k % 2 == 0, 1.0, -1.0)
    left = amp
    lo = np.log(1e-3 / lam[-1])
    hi = np.log(50.0 / lam[0])
    num = int(decades * (hi - lo) / np.log(10)) + 1
    lr = np.linspace(lo, hi, num)
    r = np.exp(lr)
    gr = np.empty(num)
    gl = np.empty(num)
    for i, ri in enumerate(r):
        cut = np.searchsorted(lam, 40.0 / ri)
        e = np.exp(-lam[:cut] * ri)
        gr[i] = right[:cut] @ e
        gl[i] = left[:cut] @ e
    dlr = lr[1] - lr[0]
    weight = np.exp(-ts[:, None] ** 2 / (4 * r[None, :])) * r[None, :] ** (-s) * dlr
    pref = ts ** (2 * s) / (4**s * gamma(s))
    return pref * (weight @ gl), pref * (weight @ gr)


def pohozaev_residual(report, s: float | None = None) -> PohozaevPair:
    """Global Pohozaev balance for a critical-kind solution on an interval.

    lhs = eps s C_s sum_i w u_i^2,
    rhs = (1/2) sum over both ends of int_0^T t^(1-2s) |d_x U|^2 (x . nu) dt.
    The extension derivatives come from the mode sum with wave numbers
    sqrt(lam_k); T is set where rho_s(sqrt(lam_1) T) < 1e-17.
    """
    basis = report.basis
    s = report.s if s is None else s
    if basis.grid.ndim != 1 or basis.grid.kind != "box":
        raise ExtensionError("Pohozaev check is implemented for intervals (n = 1) only")
    if report.kind != "critical":
        raise ExtensionError("Pohozaev balance needs a critical-kind solution")
    u = np.asarray(report.u, dtype=float)
    if not np.any(u):
        return PohozaevPair(0.0, 0.0, 0.0)
    C_s = 2 ** (1 - 2 * s) * gamma(1 - s) / gamma(s)
    lhs = report.epsilon * s * C_s * basis.grid.weight * float(np.sum(u * u))
    a, b = basis.grid.bounds[0]
    lam = basis.eigenvalues
    lt = np.linspace(np.log(1e-3 / np.sqrt(lam[-1])), np.log(40.0 / np.sqrt(lam[0])), 1500)
    ts = np.exp(lt)
    fl, fr = _boundary_flux_1d(basis, basis.analyze(u), s, ts)
    integrand = ts ** (2 - 2 * s) * (fl * fl * (-a) + fr * fr * b)
    rhs = 0.5 * float(integrate.trapezoid(integrand, lt))
    gap = abs(lhs - rhs) / max(abs(lhs), abs(rhs))
    return PohozaevPair(lhs, rhs, gap)
