"""Discrete Green's function of A_s, its regular part H and the Robin function tau.

The singular part subtracted from G is, by default, the free-space Green
function of the same discrete operator on the infinite lattice h Z^n.  It
agrees with a_{n,s}|x - y|^(2s-n) away from the diagonal (relative error
O(h^2 / |x - y|^2)) and is finite at x = y, so H = Gamma_h - G is smooth
across the diagonal and tau(y) = H(y, y) needs no extrapolation.  The
continuum kernel with diagonal extrapolation is kept as ``method="extrapolate"``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import gamma, gammaln, ive

from fraclab.constants import closed_form_constants
from fraclab.grid import GridError, SpectralBasis
from fraclab.operator import apply_power

FULL_MATRIX_CAP = 4096
ROBIN_MARGIN = 3


@lru_cache(maxsize=None)
def _lattice_unit(offset: tuple, s: float) -> float:
    """Free lattice Green function at integer ``offset`` for h = 1."""
    n = len(offset)
    j = np.array(offset, dtype=float)
    if n == 1:
        k = abs(j[0])
        return math.gamma(1 - 2 * s) * math.sin(math.pi * s) / math.pi * math.exp(gammaln(k + s) - gammaln(k + 1 - s))
    # (1/Gamma(s)) int_0^inf t^(s-1) prod_i e^(-2t) I_{j_i}(2t) dt
    f = lambda t: float(np.prod(ive(j, 2.0 * t)))
    big = max(float(np.max(np.abs(j))), 1.0)
    T = max(400.0, 40.0 * big * big)
    val = integrate.quad(f, 0.0, 1.0, weight="alg", wvar=(s - 1.0, 0.0), epsabs=0.0, epsrel=1e-12, limit=200)[0]
    edges = np.geomspace(1.0, T, 12)
    for a, b in zip(edges[:-1], edges[1:]):
        val += integrate.quad(lambda t: t ** (s - 1.0) * f(t), a, b, epsabs=0.0, epsrel=1e-12, limit=200)[0]
    # tail from ive(j, x) ~ (2 pi x)^(-1/2) (1 - (mu-1)/(8x) + (mu-1)(mu-9)/(2 (8x)^2))
    poly = np.array([1.0])
    for ji in j:
        mu = 4.0 * ji * ji
        poly = np.convolve(poly, [1.0, -(mu - 1.0) / 16.0, (mu - 1.0) * (mu - 9.0) / 512.0])
    tail = sum(ck * (4 * math.pi) ** (-n / 2) * T ** (s - n / 2 - k) / (n / 2 + k - s) for k, ck in enumerate(poly[:3]))
    return (val + tail) / gamma(s)


def lattice_free_green(offsets, s: float, h: float) -> np.ndarray:
    """Free-space Green function of the s-power of the lattice Laplacian on h Z^n.

    ``offsets`` is an (m, n) integer array of node differences.
    """
    off = np.atleast_2d(np.asarray(offsets, dtype=int))
    n = off.shape[1]
    if n == 1:
        k = np.abs(off[:, 0]).astype(float)
        a = math.gamma(1 - 2 * s) * math.sin(math.pi * s) / math.pi
        return h ** (2 * s - 1) * a * np.exp(gammaln(k + s) - gammaln(k + 1 - s))
    keys = np.sort(np.abs(off), axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    vals = np.array([_lattice_unit(tuple(int(v) for v in row), float(s)) for row in uniq])
    return h ** (2 * s - n) * vals[np.ravel(inv)]


def _uniform_h(basis: SpectralBasis) -> float:
    h = basis.grid.h
    if max(h) - min(h) > 1e-12 * max(h):
        raise GridError("lattice kernel needs equal spacing on every axis")
    return float(h[0])


def green_column(basis: SpectralBasis, y: int, s: float) -> np.ndarray:
    """G(., y) = A_s^{-1} delta_y with delta_y = e_y / cell volume."""
    if not 0 <= int(y) < basis.grid.size:
        raise GridError(f"source {y} is not a grid node")
    delta = np.zeros(basis.grid.size)
    delta[int(y)] = 1.0 / basis.grid.weight
    return apply_power(basis, delta, -s)


@dataclass(eq=False)
class GreenCache:
    """Green data on one basis: optional full matrix, tau and grad tau per node."""

    basis: SpectralBasis
    s: float
    tau: np.ndarray
    tau_grad: np.ndarray
    method: str = "lattice"
    order: int = 0
    matrix: np.ndarray | None = field(default=None, repr=False)
    _columns: dict = field(default_factory=dict, repr=False)

    @property
    def a(self) -> float:
        return closed_form_constants(self.basis.grid.ndim, self.s).a

    def column(self, y: int) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix[:, int(y)]
        y = int(y)
        if y not in self._columns:
            self._columns[y] = green_column(self.basis, y, self.s)
        return self._columns[y]

    def singular(self, x: int, y: int) -> float:
        grid = self.basis.grid
        off = np.asarray(grid.cells[x]) - np.asarray(grid.cells[y])
        return float(lattice_free_green(off[None, :], self.s, _uniform_h(self.basis))[0])

    def singular_column(self, y: int) -> np.ndarray:
        grid = self.basis.grid
        off = grid.cells - grid.cells[int(y)][None, :]
        return lattice_free_green(off, self.s, _uniform_h(self.basis))

    def regular_column(self, y: int) -> np.ndarray:
        """H(., y) with the lattice singular part, defined at every node."""
        return self.singular_column(y) - self.column(y)


def _margins(grid) -> np.ndarray:
    if grid.kind == "box":
        return np.min(np.minimum(grid.cells + 1, np.asarray(grid.shape)[None, :] - grid.cells), axis=1)
    return np.array([grid.boundary_distance(i) for i in range(grid.size)])


def _central_gradient(grid, f: np.ndarray, margin: int) -> np.ndarray:
    """Central differences of a grid function; NaN within ``margin`` cells of the boundary."""
    full = np.pad(grid.raster(f), 1)
    ok = _margins(grid) > margin
    idx = tuple((grid.cells + 1).T)
    grad = np.full((grid.size, grid.ndim), np.nan)
    for axis in range(grid.ndim):
        up = list(idx)
        dn = list(idx)
        up[axis] = idx[axis] + 1
        dn[axis] = idx[axis] - 1
        diff = (full[tuple(up)] - full[tuple(dn)]) / (2 * grid.h[axis])
        grad[ok, axis] = diff[ok]
    return grad


def build_green_cache(basis: SpectralBasis, s: float, full_matrix: bool | None = None) -> GreenCache:
    grid = basis.grid
    if full_matrix is None:
        full_matrix = grid.size <= FULL_MATRIX_CAP
    matrix = None
    if full_matrix:
        vec = basis.eigenvectors()
        matrix = (vec * basis.eigenvalues[None, :] ** (-s)) @ vec.T
        matrix = 0.5 * (matrix + matrix.T)
        diag = np.diag(matrix).copy()
    else:
        diag = basis.eigenvalue_diagonal(basis.eigenvalues ** (-s))
    g0 = lattice_free_green(np.zeros((1, grid.ndim), dtype=int), s, _uniform_h(basis))[0]
    tau = g0 - diag
    grad = _central_gradient(grid, tau, ROBIN_MARGIN)
    return GreenCache(basis=basis, s=s, tau=tau, tau_grad=grad, matrix=matrix)


def regular_part(cache: GreenCache, x: int, y: int, kernel: str = "lattice") -> float:
    """H(x, y) = singular(x - y) - G(x, y).

    ``kernel="continuum"`` uses a_{n,s} |x - y|^(2s-n) literally and needs x != y.
    """
    x, y = int(x), int(y)
    g = float(cache.column(y)[x])
    if kernel == "lattice":
        return cache.singular(x, y) - g
    if kernel == "continuum":
        if x == y:
            raise ValueError("continuum regular part is singular at x = y; use robin_function")
        grid = cache.basis.grid
        m = grid.ndim - 2 * cache.s
        r = float(np.linalg.norm(grid.points[x] - grid.points[y]))
        return cache.a / r**m - g
    raise ValueError(f"unknown kernel {kernel!r}")


def _check_margin(cache: GreenCache, y: int, margin: int) -> None:
    if cache.basis.grid.boundary_distance(int(y)) < margin:
        raise GridError(f"node {y} is closer than {margin} cells to the boundary")


def robin_axes(cache: GreenCache, y: int) -> np.ndarray:
    """Per-axis quadratic extrapolation of the continuum H(x, y) to x = y.

    Least-squares fit through x = y +- h, y +- 2h along each axis.
    """
    y = int(y)
    _check_margin(cache, y, ROBIN_MARGIN)
    grid = cache.basis.grid
    vals = []
    for axis in range(grid.ndim):
        d, hv = [], []
        for step in (-2, -1, 1, 2):
            x = grid.neighbor(y, axis, step)
            d.append(step * grid.h[axis])
            hv.append(regular_part(cache, x, y, kernel="continuum"))
        vals.append(np.polynomial.polynomial.polyfit(d, hv, 2)[0])
    cache.order = 2
    return np.array(vals)


def robin_function(cache: GreenCache, y: int, method: str = "lattice") -> float:
    """tau(y) = H(y, y).

    ``lattice``: exact diagonal of the lattice-regularized H.
    ``extrapolate``: mean over axes of ``robin_axes``.
    """
    y = int(y)
    _check_margin(cache, y, ROBIN_MARGIN)
    if method == "lattice":
        return float(cache.tau[y])
    if method != "extrapolate":
        raise ValueError(f"unknown method {method!r}")
    return float(np.mean(robin_axes(cache, y)))


def robin_gradient(cache: GreenCache, y: int) -> np.ndarray:
    """Central differences of tau over the neighboring nodes."""
    y = int(y)
    _check_margin(cache, y, ROBIN_MARGIN + 1)
    return cache.tau_grad[y].copy()
