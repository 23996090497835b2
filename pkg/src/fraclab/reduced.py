"""Reduced energies Upsilon_k (critical) and Upsilon~_k (subcritical) and their critical points.

tau and G are known on grid nodes.  Off-node centers use tensor-product
cubic convolution (Keys kernel, a = -1/2): it is C^1, reproduces node values,
its gradient at a node is the central difference, and it only touches the
4^n surrounding nodes, so G(sigma_i, sigma_h) is interpolated from entries
well away from the diagonal when |sigma_i - sigma_h| > delta0.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from fraclab.constants import ConstantSet
from fraclab.grid import DomainGrid, GridError
from fraclab.greens import GreenCache


class ReducedError(ValueError):
    pass


def _domain_distance(grid: DomainGrid, x) -> float:
    x = np.asarray(x, dtype=float)
    if grid.kind == "box":
        lo = np.array([b[0] for b in grid.bounds])
        hi = np.array([b[1] for b in grid.bounds])
        return float(min(np.min(x - lo), np.min(hi - x)))
    # distance to the nearest exterior raster cell (padding ring included)
    full = np.pad(grid.mask, 1)
    out = np.argwhere(~full)
    pts = np.asarray(grid.origin)[None, :] + out * grid.h[0]
    return float(np.min(np.linalg.norm(pts - x[None, :], axis=1)))


@dataclass
class ReducedConfig:
    lambdas: np.ndarray
    sigmas: np.ndarray
    delta0: float
    alpha0: float

    def __post_init__(self):
        self.lambdas = np.atleast_1d(np.asarray(self.lambdas, dtype=float))
        self.sigmas = np.atleast_2d(np.asarray(self.sigmas, dtype=float))
        if self.sigmas.shape[0] != self.lambdas.size:
            # a 1D list of scalar centers
            self.sigmas = self.sigmas.reshape(self.lambdas.size, -1)

    @property
    def k(self) -> int:
        return self.lambdas.size

    def validate(self, grid: DomainGrid) -> None:
        """Membership in O^{delta0}; raises ReducedError otherwise."""
        d0 = self.delta0
        if self.sigmas.shape[1] != grid.ndim:
            raise ReducedError("center dimension does not match the grid")
        for lam in self.lambdas:
            if not d0 < lam < 1 / d0:
                raise ReducedError(f"lambda={lam} outside ({d0}, {1 / d0})")
        for sg in self.sigmas:
            if _domain_distance(grid, sg) <= d0:
                raise ReducedError(f"center {tuple(sg)} within delta0 of the boundary")
        for i, j in itertools.combinations(range(self.k), 2):
            if np.linalg.norm(self.sigmas[i] - self.sigmas[j]) <= d0:
                raise ReducedError(f"centers {i} and {j} closer than delta0")

    def vector(self) -> np.ndarray:
        return np.concatenate([self.lambdas, self.sigmas.ravel()])

    def with_vector(self, v) -> "ReducedConfig":
        k = self.k
        return ReducedConfig(v[:k].copy(), v[k:].reshape(k, -1).copy(), self.delta0, self.alpha0)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "lambdas": self.lambdas.tolist(),
            "sigmas": self.sigmas.tolist(),
            "delta0": self.delta0,
            "alpha0": self.alpha0,
        }


def default_alpha0(n: int, s: float, kind: str) -> float:
    return 1 / (n - 4 * s) if kind == "critical" else 1 / (n - 2 * s)


def _keys(t):
    """Keys cubic-convolution kernel (a = -1/2) and its derivative."""
    a = -0.5
    x = np.abs(t)
    sg = np.sign(t)
    w = np.where(x <= 1, (a + 2) * x**3 - (a + 3) * x**2 + 1, np.where(x < 2, a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a, 0.0))
    dw = np.where(x <= 1, 3 * (a + 2) * x**2 - 2 * (a + 3) * x, np.where(x < 2, 3 * a * x**2 - 10 * a * x + 8 * a, 0.0))
    return w, dw * sg


def interp_weights(grid: DomainGrid, x):
    """Nodes, weights and weight gradients of the cubic-convolution interpolant at x."""
    x = np.asarray(x, dtype=float)
    n = grid.ndim
    origin = np.array([b[0] for b in grid.bounds]) if grid.kind == "box" else np.asarray(grid.origin, dtype=float)
    h = np.asarray(grid.h)
    u = (x - origin) / h - 1.0  # raster coordinate
    base = np.floor(u).astype(int)
    per_axis = []
    for ax in range(n):
        idx = base[ax] + np.arange(-1, 3)
        w, dw = _keys(u[ax] - idx)
        per_axis.append((idx, w, dw / h[ax]))
    nodes, wts, grads = [], [], []
    for combo in itertools.product(range(4), repeat=n):
        mi = tuple(int(per_axis[ax][0][c]) for ax, c in enumerate(combo))
        if any(i < 0 or i >= sz for i, sz in zip(mi, grid.flat.shape)) or grid.flat[mi] < 0:
            raise GridError(f"interpolation stencil at {tuple(x)} leaves the domain")
        ws = [per_axis[ax][1][c] for ax, c in enumerate(combo)]
        g = np.array([per_axis[ax][2][c] * np.prod([ws[b] for b in range(n) if b != ax]) for ax, c in enumerate(combo)])
        nodes.append(int(grid.flat[mi]))
        wts.append(float(np.prod(ws)))
        grads.append(g)
    return np.array(nodes), np.array(wts), np.array(grads)


@dataclass
class _Sampled:
    tau: np.ndarray
    dtau: np.ndarray
    G: np.ndarray
    dG: np.ndarray  # dG[i, h] = gradient of G(sigma_i, sigma_h) in sigma_i


def _sample(cache: GreenCache, config: ReducedConfig) -> _Sampled:
    grid = cache.basis.grid
    k, n = config.k, grid.ndim
    st = [interp_weights(grid, sg) for sg in config.sigmas]
    tau = np.array([w @ cache.tau[nd] for nd, w, _ in st])
    dtau = np.array([g.T @ cache.tau[nd] for nd, _, g in st])
    G = np.zeros((k, k))
    dG = np.zeros((k, k, n))
    for i in range(k):
        for h in range(k):
            if i == h:
                continue
            ni, wi, gi = st[i]
            nh, wh, _ = st[h]
            block = np.stack([cache.column(y)[ni] for y in nh], axis=1)
            G[i, h] = wi @ block @ wh
            dG[i, h] = gi.T @ block @ wh
    return _Sampled(tau, dtau, G, dG)


def _check_kind(kind: str) -> None:
    if kind not in ("critical", "subcritical"):
        raise ValueError(f"unknown kind {kind!r}")


def _value(cs: ConstantSet, lam, smp: _Sampled, kind: str) -> float:
    m = cs.n - 2 * cs.s
    inter = np.sum(smp.tau * lam**m) - np.sum(smp.G * np.outer(lam, lam) ** (m / 2))
    val = cs.c1**2 * inter
    if kind == "critical":
        if cs.c2 is None:
            raise ReducedError("Upsilon_k needs n > 4s (c_2 undefined)")
        return float(val - cs.c2 * np.sum(lam ** (2 * cs.s)))
    return float(val - cs.c1 * m**2 / (4 * cs.n) * np.sum(np.log(lam)))


def upsilon(cache: GreenCache, constants: ConstantSet, config: ReducedConfig, kind: str = "critical") -> float:
    _check_kind(kind)
    config.validate(cache.basis.grid)
    return _value(constants, config.lambdas, _sample(cache, config), kind)


def upsilon_grad(cache: GreenCache, constants: ConstantSet, config: ReducedConfig, kind: str = "critical") -> np.ndarray:
    """[dU/dlam_1..k, dU/dsigma_1 (n comps), ..., dU/dsigma_k]."""
    _check_kind(kind)
    config.validate(cache.basis.grid)
    cs = constants
    smp = _sample(cache, config)
    lam = config.lambdas
    m = cs.n - 2 * cs.s
    k = config.k
    pair = smp.G * np.outer(lam ** (m / 2 - 1), lam ** (m / 2))
    g_lam = cs.c1**2 * (m * smp.tau * lam ** (m - 1) - m * np.sum(pair, axis=1))
    if kind == "critical":
        g_lam -= 2 * cs.s * cs.c2 * lam ** (2 * cs.s - 1)
    else:
        g_lam -= cs.c1 * m**2 / (4 * cs.n) / lam
    g_sig = np.zeros((k, cs.n))
    for i in range(k):
        g_sig[i] = smp.dtau[i] * lam[i] ** m
        for h in range(k):
            if h != i:
                g_sig[i] -= 2 * smp.dG[i, h] * (lam[i] * lam[h]) ** (m / 2)
    g_sig *= cs.c1**2
    return np.concatenate([g_lam, g_sig.ravel()])


def lambda_star(constants: ConstantSet, tau: float) -> float:
    """Stationary scale of Upsilon_1 at a center with Robin value tau."""
    cs = constants
    m = cs.n - 2 * cs.s
    return float((2 * cs.s * cs.c2 / (m * cs.c1**2 * tau)) ** (1 / (cs.n - 4 * cs.s)))


@dataclass
class CriticalResult:
    config: ReducedConfig
    value: float
    grad_norm: float
    hessian: np.ndarray
    eigenvalues: np.ndarray
    iterations: int
    scale: float
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "value": self.value,
            "grad_norm": self.grad_norm,
            "scale": self.scale,
            "hessian": self.hessian.tolist(),
            "hessian_eigenvalues": self.eigenvalues.tolist(),
            "min_abs_eigenvalue": float(np.min(np.abs(self.eigenvalues))),
            "iterations": self.iterations,
        }


def _hessian(cache, cs, config, kind, rel=1e-5):
    v = config.vector()
    dim = v.size
    Hm = np.zeros((dim, dim))
    k = config.k
    for j in range(dim):
        step = rel * max(abs(v[j]), 1.0) if j < k else rel * 10 * cache.basis.grid.h[0]
        vp, vm = v.copy(), v.copy()
        vp[j] += step
        vm[j] -= step
        gp = upsilon_grad(cache, cs, config.with_vector(vp), kind)
        gm = upsilon_grad(cache, cs, config.with_vector(vm), kind)
        Hm[:, j] = (gp - gm) / (2 * step)
    return 0.5 * (Hm + Hm.T)


def _hessian_inside(cache, cs, config, kind):
    try:
        return _hessian(cache, cs, config, kind)
    except (ReducedError, GridError) as err:
        # the difference stencil reaches past the edge of O^{delta0}
        raise ReducedError(f"migrated out of O^{{delta0}} ({err})") from err


def find_critical_config(cache: GreenCache, constants: ConstantSet, start: ReducedConfig, kind: str = "critical",
                         tol: float = 1e-8, maxit: int = 100) -> CriticalResult:
    """Damped Newton on grad Upsilon with a finite-difference Hessian.

    The step is halved until the gradient norm drops and the iterate stays in
    O^{delta0}; if no admissible decreasing step exists the search has
    "migrated out of O^{delta0}".  Convergence: ||grad|| <= tol * scale with
    scale = c_1^2 max_i tau(sigma_i) lambda_i^(n-2s).
    """
    _check_kind(kind)
    grid = cache.basis.grid
    start.validate(grid)
    cs = constants
    m = cs.n - 2 * cs.s
    cfg = start
    g = upsilon_grad(cache, cs, cfg, kind)
    hist = [float(np.linalg.norm(g))]
    it = 0
    while True:
        scale = cs.c1**2 * float(np.max(_sample(cache, cfg).tau * cfg.lambdas**m))
        if np.linalg.norm(g) <= tol * scale:
            break
        if it >= maxit:
            raise ReducedError(f"no critical point after {maxit} iterations (|grad|={np.linalg.norm(g):.3e})")
        it += 1
        Hm = _hessian_inside(cache, cs, cfg, kind)
        try:
            step = -np.linalg.solve(Hm, g)
        except np.linalg.LinAlgError:
            step = -g
        v = cfg.vector()
        t = 1.0
        for _ in range(40):
            cand = cfg.with_vector(v + t * step)
            try:
                cand.validate(grid)
                gc = upsilon_grad(cache, cs, cand, kind)
            except (ReducedError, GridError):
                t *= 0.5
                continue
            if np.linalg.norm(gc) < np.linalg.norm(g):
                break
            t *= 0.5
        else:
            raise ReducedError("migrated out of O^{delta0}")
        cfg, g = cand, gc
        hist.append(float(np.linalg.norm(g)))
    Hm = _hessian_inside(cache, cs, cfg, kind)
    eig = np.linalg.eigvalsh(Hm)
    return CriticalResult(cfg, upsilon(cache, cs, cfg, kind), float(np.linalg.norm(g)), Hm, eig, it, scale, hist)


def dumbbell_mask(k: int, lobe: float, neck: float, h: float):
    """k square lobes of side ``lobe`` in a row, consecutive lobes joined by a
    neck of width ``neck`` and length ``lobe``.

    Returns ``(mask, origin)``; raster cell (i, j) is the node at
    ``origin + ((i + 1) h, (j + 1) h)`` and the domain spans [0, (2k-1) lobe] x [0, lobe].
    """
    if k < 1:
        raise ValueError("need at least one lobe")
    if neck < 2 * h - 1e-12:
        raise ValueError(f"neck width {neck} below 2h = {2 * h}")
    if neck > lobe:
        raise ValueError("neck wider than a lobe")
    cells_lobe = lobe / h
    if abs(cells_lobe - round(cells_lobe)) > 1e-9:
        raise ValueError("h must divide the lobe size")
    width = (2 * k - 1) * lobe
    nx = int(round(width / h)) - 1
    ny = int(round(lobe / h)) - 1
    x = (np.arange(nx) + 1) * h
    y = (np.arange(ny) + 1) * h
    X, Y = np.meshgrid(x, y, indexing="ij")
    tol = 1e-9 * h
    seg = np.floor((X + tol) / lobe).astype(int)
    inside_x = (X > tol) & (X < width - tol)
    on_lobe = (seg % 2 == 0) & (np.abs(X - np.round(X / lobe) * lobe) > tol)
    lo, hi = (lobe - neck) / 2, (lobe + neck) / 2
    in_neck = (Y > lo + tol) & (Y < hi - tol)
    mask = inside_x & (on_lobe | in_neck)
    return mask, (0.0, 0.0)
