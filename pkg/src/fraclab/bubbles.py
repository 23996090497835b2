"""Bubbles w_{lambda,xi}, their parameter derivatives, and projections onto a bounded grid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fraclab.constants import closed_form_constants
from fraclab.grid import SpectralBasis
from fraclab.operator import apply_power, critical_exponent


@dataclass(frozen=True)
class BubbleParams:
    lam: float
    xi: tuple

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda={self.lam} must be positive")
        object.__setattr__(self, "xi", tuple(float(v) for v in np.atleast_1d(self.xi)))


def bubble_eval(params: BubbleParams, points, n: int, s: float, deriv: int | None = None) -> np.ndarray:
    """w = c (lam / (lam^2 + |x - xi|^2))^((n-2s)/2) or one of its parameter derivatives.

    ``deriv=None`` gives w, ``deriv=0`` gives dw/dlam, ``deriv=j`` (1..n) gives dw/dxi_j.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, n)
    c = closed_form_constants(n, s).c
    m = n - 2 * s
    diff = pts - np.asarray(params.xi)[None, :]
    r2 = np.sum(diff * diff, axis=1)
    lam = params.lam
    den = lam * lam + r2
    w = c * (lam / den) ** (m / 2)
    if deriv is None:
        return w
    if deriv == 0:
        return w * (m / 2) * (r2 - lam * lam) / (lam * den)
    if 1 <= deriv <= n:
        return w * m * diff[:, deriv - 1] / den
    raise ValueError(f"deriv must be None or in 0..{n}, got {deriv}")


def _check_inside(basis: SpectralBasis, xi) -> None:
    grid = basis.grid
    xi = np.asarray(xi, dtype=float)
    lo = np.array([b[0] for b in grid.bounds])
    hi = np.array([b[1] for b in grid.bounds])
    if np.any(xi <= lo) or np.any(xi >= hi):
        raise ValueError(f"center {tuple(xi)} is not inside the domain")
    if grid.kind == "mask2d":
        node = grid.nearest_node(xi)
        if np.linalg.norm(grid.points[node] - xi) > np.sqrt(2) * grid.h[0]:
            raise ValueError(f"center {tuple(xi)} is not inside the mask")


def project_bubble(basis: SpectralBasis, params: BubbleParams, s: float):
    """Solve A_s P w = w^p and A_s P psi^j = p w^(p-1) psi^j with zero Dirichlet data.

    Returns ``(Pw, [P psi^0, ..., P psi^n])``.
    """
    n = basis.grid.ndim
    _check_inside(basis, params.xi)
    p = critical_exponent(n, s)
    pts = basis.grid.points
    w = bubble_eval(params, pts, n, s)
    pw = apply_power(basis, w**p, -s)
    psis = [apply_power(basis, p * w ** (p - 1) * bubble_eval(params, pts, n, s, deriv=j), -s) for j in range(n + 1)]
    return pw, psis


@dataclass
class ProjectionResidual:
    epsilons: np.ndarray
    residual: np.ndarray
    far_field_error: np.ndarray
    monotone: bool


def projection_expansion_residual(
    basis: SpectralBasis, params: BubbleParams, s: float, alpha0: float, epsilons, regular, green, far_radius: float = 0.5,
    component: str = "w",
) -> ProjectionResidual:
    """Remainder of P_eps w = w - c_1 lam^((n-2s)/2) H delta^(n-2s) + o(delta^(n-2s)), delta = eps^alpha0.

    The dilated domain is realized on the fixed grid by shrinking the bubble
    to scale ``lam * delta``.  ``regular`` and ``green`` are H(., xi) and
    G(., xi) sampled on the grid (xi must be a node).  For each eps the
    returned residual is ``max |P_eps w - w + c_1 lam^(m/2) H delta^m| / delta^m``
    and the far-field error is ``max |P_eps w - c_1 lam^(m/2) G delta^m| /
    max |c_1 lam^(m/2) G delta^m|`` over nodes at distance > ``far_radius`` from xi.
    """
    eps = np.asarray(epsilons, dtype=float)
    if eps.size < 2:
        raise ValueError("need at least two scales")
    n = basis.grid.ndim
    m = n - 2 * s
    p = critical_exponent(n, s)
    c1 = closed_form_constants(n, s).c1
    pts = basis.grid.points
    far = np.linalg.norm(pts - np.asarray(params.xi)[None, :], axis=1) > far_radius
    if not far.any():
        raise ValueError("far-field set is empty")
    amp = c1 * params.lam ** (m / 2) if component == "w" else 0.5 * m * c1 * params.lam ** (m / 2 - 1)
    pred_h = amp * np.asarray(regular)
    pred_g = amp * np.asarray(green)
    res = np.empty_like(eps)
    far_err = np.empty_like(eps)
    for i, e in enumerate(eps):
        delta = e**alpha0
        small = BubbleParams(params.lam * delta, params.xi)
        w = bubble_eval(small, pts, n, s)
        if component == "w":
            pw = apply_power(basis, w**p, -s)
        else:
            # d/dlam of the shrunken bubble w_{lam delta}, and its projection
            psi = delta * bubble_eval(small, pts, n, s, deriv=0)
            pw = apply_power(basis, p * w ** (p - 1) * psi, -s)
            w = psi
        # back to the dilated-domain normalization and divide by delta^m
        scaled = delta ** (-m / 2) * (pw - w)
        res[i] = np.max(np.abs(scaled + pred_h))
        far_pw = delta ** (-m / 2) * pw[far]
        far_err[i] = np.max(np.abs(far_pw - pred_g[far])) / np.max(np.abs(pred_g[far]))
    order = np.argsort(-eps)
    monotone = bool(np.all(np.diff(res[order]) < 0))
    return ProjectionResidual(eps, res, far_err, monotone)
