"""Pure-numpy reference implementation of the extension kernels.

Mirrors ``_kernels.pyx`` one function at a time; the compiled module is
preferred at import when it is available (see ``fraclab.kernels``).
"""
import math

import numpy as np

# trapezoid step for the cosh representation of K_nu; the integrand is
# analytic in a strip of half-width pi/2, so the error is ~exp(-pi^2 / step)
_DE_STEP = 0.125
# stop once r*(cosh t - 1) exceeds this (e^-60 relative to the t=0 term)
_DE_CUTOFF = 60.0
_SERIES_MAX_R = 2.0
_SERIES_TERMS = 30
# rho(r) < 1e-25 beyond this argument for every order in (0, 1)
MODE_CUTOFF = 60.0


def bessel_k_scaled(nu, r):
    """exp(r) * K_nu(r) for r > 0 by trapezoidal quadrature of the cosh form."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    t = 0.0
    w = 0.5
    active = np.ones(r.shape, dtype=bool)
    while active.any():
        expo = r * (math.cosh(t) - 1.0)
        active = expo < _DE_CUTOFF
        out += np.where(active, w * np.exp(-np.minimum(expo, _DE_CUTOFF)) * math.cosh(nu * t), 0.0)
        t += _DE_STEP
        w = 1.0
    return out * _DE_STEP


def _series_parts(r, s):
    q = (0.5 * r) ** 2
    a = np.full_like(r, 1.0 / math.gamma(1.0 - s))
    b = np.full_like(r, 1.0 / math.gamma(1.0 + s))
    sa = a.copy()
    sb = b.copy()
    da = np.zeros_like(r)
    db = s * b
    for j in range(1, _SERIES_TERMS):
        a = a * q / (j * (j - s))
        b = b * q / (j * (j + s))
        sa += a
        sb += b
        da += j * a
        db += (j + s) * b
    return sa, sb, da, db


def rho(r, s):
    """Extension profile rho_s(r) = 2^(1-s)/Gamma(s) r^s K_s(r), rho_s(0) = 1."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    out = np.empty_like(r)
    small = r <= _SERIES_MAX_R
    if small.any():
        rs = r[small]
        sa, sb, _, _ = _series_parts(rs, s)
        out[small] = math.gamma(1.0 - s) * (sa - (0.5 * rs) ** (2 * s) * sb)
    big = ~small
    if big.any():
        rb = r[big]
        out[big] = (2.0 ** (1 - s) / math.gamma(s)) * rb**s * np.exp(-rb) * bessel_k_scaled(s, rb)
    return out


def drho(r, s):
    """d rho_s / dr for r > 0 (behaves like r^(2s-1) at the origin)."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    out = np.empty_like(r)
    small = r <= _SERIES_MAX_R
    if small.any():
        rs = r[small]
        _, sb, da, db = _series_parts(rs, s)
        half = 0.5 * rs
        # d/dr (r/2)^(2j) = j (r/2)^(2j-1); the a-sum's derivative carries da / (r/2)
        out[small] = math.gamma(1.0 - s) * (da / half - db * half ** (2 * s - 1))
    big = ~small
    if big.any():
        rb = r[big]
        out[big] = -(2.0 ** (1 - s) / math.gamma(s)) * rb**s * np.exp(-rb) * bessel_k_scaled(1.0 - s, rb)
    return out


def mode_sum(coef, kappa, t, s, deriv=0):
    """Sum_k coef_k f(kappa_k t) for each t, f = rho_s (deriv=0) or rho_s' (deriv=1).

    ``kappa`` must be ascending; modes with kappa_k t > MODE_CUTOFF are dropped.
    The derivative at t = 0 is returned as NaN (rho_s' is singular there for s < 1/2).
    """
    coef = np.asarray(coef, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    f = rho if deriv == 0 else drho
    out = np.empty(t.shape)
    for i, ti in enumerate(t):
        if ti <= 0.0:
            out[i] = coef.sum() if deriv == 0 else math.nan
            continue
        m = int(np.searchsorted(kappa, MODE_CUTOFF / ti, side="right"))
        out[i] = float(np.dot(coef[:m], f(kappa[:m] * ti, s))) if m else 0.0
    return out
