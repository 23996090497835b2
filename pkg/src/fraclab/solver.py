"""Positive solutions of A_s u = u^p + eps u (critical) and A_s u = u^(p-eps) (subcritical).

Linear solves are matrix-free: the Newton system (A_s - f'(u)) du = -F is
right-preconditioned by A_s^{-1}, i.e. du = A_s^{-1} y with
(I - f'(u) A_s^{-1}) y = -F solved by GMRES.  Each application costs two
spectral transforms.

Besides the staged fixed-eps solver there is an amplitude continuation
(``trace_branch``) that follows the least-energy branch in its peak value,
treating eps as an unknown, and doubles the grid when the core gets thin.
This is what the eps-sweeps use.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator, make_interp_spline
from scipy.sparse.linalg import LinearOperator, gmres

from fraclab.bubbles import BubbleParams, bubble_eval, project_bubble
from fraclab.constants import closed_form_constants
from fraclab.grid import BoxBasis, SpectralBasis, build_box_basis
from fraclab.operator import apply_power, critical_exponent, energy

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-9
MIN_CORE_NODES = 6
SPIKE_SEED_POWER = 8
GMRES_RTOL = 1e-10
ROUNDOFF_FLOOR = 1e-13


class SolverError(RuntimeError):
    def __init__(self, msg: str, residual: float | None = None):
        super().__init__(msg)
        self.residual = residual


@dataclass
class SolveReport:
    kind: str
    epsilon: float
    s: float
    basis: SpectralBasis = field(repr=False)
    u: np.ndarray = field(repr=False)
    energy: float
    residual: float
    mu_eps: float
    x_eps: tuple
    x_index: int
    bound_ratio: float
    core_nodes: float
    resolved: bool
    iterations: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.basis.grid.ndim

    @property
    def sup(self) -> float:
        return float(np.max(self.u))

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "epsilon": self.epsilon,
            "s": self.s,
            "nodes": self.basis.grid.size,
            "h": self.basis.grid.h[0],
            "energy": self.energy,
            "residual": self.residual,
            "sup": self.sup,
            "mu_eps": self.mu_eps,
            "x_eps": list(self.x_eps),
            "bound_ratio": self.bound_ratio,
            "core_nodes": self.core_nodes,
            "resolved": self.resolved,
            "iterations": dict(self.iterations),
        }


class _Nonlinearity:
    """f_eps(u), df/du and df/deps for one problem kind."""

    def __init__(self, kind: str, n: int, s: float):
        if kind not in ("critical", "subcritical"):
            raise ValueError(f"kind must be critical or subcritical, got {kind!r}")
        self.kind = kind
        self.p = critical_exponent(n, s)

    def exponent(self, eps: float) -> float:
        return self.p if self.kind == "critical" else self.p - eps

    def __call__(self, u, eps):
        up = np.maximum(u, 0.0)
        if self.kind == "critical":
            pw = up ** (self.p - 1)
            return pw * up + eps * u, self.p * pw + eps, u
        q = self.p - eps
        pw = up ** (q - 1)
        f = pw * up
        with np.errstate(divide="ignore"):
            logu = np.where(up > 0, np.log(np.where(up > 0, up, 1.0)), 0.0)
        return f, q * pw, -logu * f

    def primitive(self, u, eps) -> np.ndarray:
        up = np.maximum(u, 0.0)
        q = self.exponent(eps)
        out = up ** (q + 1) / (q + 1)
        if self.kind == "critical":
            out = out + 0.5 * eps * u * u
        return out


def _residual(basis, nl, u, eps, s):
    return apply_power(basis, u, s) - nl(u, eps)[0]


def _newton(basis, s, nl, u, eps, anchor=None, target=None, maxit=60, tol=RESIDUAL_TOL, polish=2):
    """Damped Newton at fixed eps, or bordered in (u, eps) with u[anchor] = target.

    Stops when ||F||_inf <= tol ||u||_inf^p (and the anchor constraint holds to
    1e-12), then takes up to ``polish`` extra steps while the residual keeps
    dropping by at least a factor 4.
    """
    n = basis.grid.size
    bordered = anchor is not None
    gm_total = 0
    extra = 0
    res_prev = np.inf

    def norms(u_, eps_):
        F_ = _residual(basis, nl, u_, eps_, s)
        scale = max(np.max(np.abs(u_)), 1e-300) ** nl.p
        r = np.max(np.abs(F_)) / scale
        c = abs(u_[anchor] - target) / abs(target) if bordered else 0.0
        return F_, r, c

    F, r, c = norms(u, eps)
    for it in range(maxit + 1):
        done = r <= tol and c <= 1e-12
        if done:
            if extra >= polish or r > 0.25 * res_prev or r < ROUNDOFF_FLOOR:
                return u, eps, {"newton": it, "gmres": gm_total, "residual": r}
            extra += 1
        if it == maxit:
            break
        res_prev = r
        _, d, de = nl(u, eps)
        # GMRES works in the 2-norm; no point resolving far below the Newton target
        floor = 1e-3 * tol * max(np.max(np.abs(u)), 1e-300) ** nl.p
        count = [0]
        cb = lambda _: count.__setitem__(0, count[0] + 1)
        if not bordered:
            op = LinearOperator((n, n), matvec=lambda y: y - d * apply_power(basis, y, -s), dtype=float)
            y, _ = gmres(op, -F, rtol=GMRES_RTOL, atol=floor, restart=min(100, n), maxiter=30, callback=cb, callback_type="pr_norm")
            du = apply_power(basis, y, -s)
            de_step = 0.0
        else:

            def mv(z):
                y = z[:-1]
                w = apply_power(basis, y, -s)
                return np.concatenate([y - d * w - de * z[-1], [w[anchor]]])

            op = LinearOperator((n + 1, n + 1), matvec=mv, dtype=float)
            rhs = np.concatenate([-F, [target - u[anchor]]])
            # the floor also covers the anchor row, which must hold to 1e-12
            z, _ = gmres(op, rhs, rtol=GMRES_RTOL, atol=min(floor, 1e-13 * abs(target)), restart=min(100, n + 1), maxiter=30, callback=cb, callback_type="pr_norm")
            du = apply_power(basis, z[:-1], -s)
            de_step = z[-1]
        gm_total += count[0]
        # Armijo backtracking on the residual, factor 1/2, at most 30 halvings
        merit = r + c
        step = 1.0
        for _ in range(31):
            un = u + step * du
            en = eps + step * de_step
            Fn, rn, cn = norms(un, en)
            if rn + cn <= (1 - 1e-4 * step) * merit or rn + cn < 1e-14:
                break
            step *= 0.5
        else:
            if done:
                # polish step stalled at the roundoff level of a converged iterate
                return u, eps, {"newton": it, "gmres": gm_total, "residual": r}
            raise SolverError("line search failed", residual=r)
        u, eps, F, r, c = un, en, Fn, rn, cn
    raise SolverError(f"Newton did not converge in {maxit} steps", residual=r)


def _quotient_descent(basis, s, nl, eps, u, maxit=400, tol=1e-10):
    """Stage 1: Sobolev-gradient descent of the Rayleigh-type quotient on {||u||_{q+1} = 1}.

    Q(u) = (<A_s u, u> - eps_c ||u||^2) / ||u||_{q+1}^2, eps_c = eps for the
    critical kind and 0 otherwise, q the kind's exponent.  Returns the
    normalized minimizer and the history of Q (non-increasing by Armijo).
    """
    w = basis.grid.weight
    q = nl.exponent(eps)
    lin = eps if nl.kind == "critical" else 0.0
    mu = basis.eigenvalues**s

    def norm(v):
        return (w * np.sum(np.abs(v) ** (q + 1))) ** (1 / (q + 1))

    def Q(a):
        # Parseval: <A_s u, u> - lin ||u||^2 from the eigen-coefficients
        return float(np.sum((mu - lin) * a * a))

    u = np.abs(u)
    u = u / norm(u)
    a = basis.analyze(u)
    hist = [Q(a)]
    for _ in range(maxit):
        val = hist[-1]
        # A_s^{-1} (A_s u - lin u - val u^q), kept in coefficients so that a
        # sign-preserving step needs no further transform
        g = a - (lin * a + val * basis.analyze(u**q)) / mu
        grad = basis.synthesize(g)
        step = 1.0
        for _ in range(30):
            v = u - step * grad
            if v.min() >= 0:
                c = 1 / norm(v)
                cand, ac = c * v, c * (a - step * g)
            else:
                cand = np.abs(v)
                cand /= norm(cand)
                ac = basis.analyze(cand)
            qc = Q(ac)
            if qc <= val:
                break
            step *= 0.5
        else:
            break
        u, a = cand, ac
        hist.append(qc)
        if val - qc <= tol * abs(val):
            break
    return u, hist


def _bubble_guess(basis, s) -> np.ndarray:
    grid = basis.grid
    lo = np.array([b[0] for b in grid.bounds])
    hi = np.array([b[1] for b in grid.bounds])
    if grid.kind == "box":
        center = 0.5 * (lo + hi)
    else:
        # the node deepest inside the mask
        dist = np.array([grid.boundary_distance(i) for i in range(grid.size)])
        center = grid.points[int(np.argmax(dist))]
    lam = 0.1 * float(np.min(hi - lo))
    return bubble_eval(BubbleParams(lam, tuple(center)), grid.points, grid.ndim, s)


def blowup_diagnostics(basis, u, s, kind, eps, constants=None):
    """mu_eps, x_eps (index and point), bound_ratio and core width in nodes."""
    n = basis.grid.ndim
    cs = constants or closed_form_constants(n, s)
    m = n - 2 * s
    idx = int(np.argmax(u))
    mu = float(u[idx]) / cs.c
    expo = 2 / m if kind == "critical" else (cs.p - 1 - eps) / (2 * s)
    z = mu**expo * (basis.grid.points - basis.grid.points[idx][None, :])
    b = u / mu
    w1 = bubble_eval(BubbleParams(1.0, (0.0,) * n), z, n, s)
    ratio = float(np.max(b / w1))
    core = mu ** (-2 / m) / min(basis.grid.h)
    return mu, idx, ratio, core


def rescaled_profile(report: SolveReport, z) -> np.ndarray:
    """b_eps(z) = mu^-1 u(mu^-expo z + x_eps) by linear interpolation (zero outside).

    Interpolation runs in raster-index coordinates centred on the peak node
    and the scale is applied as c (u / max u), so b_eps(0) = c_{n,s} exactly.
    """
    grid = report.basis.grid
    n = grid.ndim
    cs = closed_form_constants(n, report.s)
    expo = 2 / (n - 2 * report.s) if report.kind == "critical" else (cs.p - 1 - report.epsilon) / (2 * report.s)
    offsets = report.mu_eps ** (-expo) * np.atleast_2d(np.asarray(z, dtype=float)).reshape(-1, n) / np.asarray(grid.h)[None, :]
    # the raster is padded by one zero cell on each side
    peak = np.asarray(grid.multi_index(report.x_index), dtype=float) + 1
    full = np.pad(grid.raster(report.u), 1)
    axes = [np.arange(m, dtype=float) for m in full.shape]
    interp = RegularGridInterpolator(axes, full, method="linear", bounds_error=False, fill_value=0.0)
    return cs.c * (interp(peak[None, :] + offsets) / float(report.u[report.x_index]))


def make_report(basis, s, kind, eps, u, iterations=None, constants=None) -> SolveReport:
    nl = _Nonlinearity(kind, basis.grid.ndim, s)
    F = _residual(basis, nl, u, eps, s)
    res = float(np.max(np.abs(F)))
    en = 0.5 * energy(basis, u, s) - basis.grid.weight * float(np.sum(nl.primitive(u, eps)))
    mu, idx, ratio, core = blowup_diagnostics(basis, u, s, kind, eps, constants)
    return SolveReport(
        kind=kind, epsilon=float(eps), s=s, basis=basis, u=u, energy=float(en), residual=res,
        mu_eps=mu, x_eps=tuple(float(v) for v in basis.grid.points[idx]), x_index=idx,
        bound_ratio=ratio, core_nodes=float(core), resolved=bool(core >= MIN_CORE_NODES),
        iterations=dict(iterations or {}),
    )


def _check_range(basis, s, eps, kind):
    n = basis.grid.ndim
    p = critical_exponent(n, s)
    if kind == "critical":
        if n <= 4 * s:
            raise ValueError(f"critical kind needs n > 4s (n={n}, s={s})")
        top = basis.eigenvalues[0] ** s
        if not 0 < eps < top:
            raise ValueError(f"eps={eps} must lie in (0, lambda_1^s={top:.6g})")
    elif kind == "subcritical":
        if not 0 < eps < p - 1:
            raise ValueError(f"eps={eps} must lie in (0, p-1={p - 1:.6g})")
    else:
        raise ValueError(f"unknown kind {kind!r}")


def _verify(u, kind):
    if not np.all(u > 0):
        raise SolverError(f"{kind} solution is not positive at every node")


def _staged_solve(basis, s, nl, epsilon, u0):
    """Quotient descent, rescaling to the equation's normalization, damped Newton."""
    v, hist = _quotient_descent(basis, s, nl, epsilon, u0)
    theta = hist[-1] ** (1 / (nl.exponent(epsilon) - 1))
    iters = {"descent": len(hist) - 1}
    u, _, info = _newton(basis, s, nl, theta * v, epsilon)
    return u, {**iters, **info}


def solve_least_energy(basis: SpectralBasis, s: float, epsilon: float, kind: str, init=None) -> SolveReport:
    """Stage 1 quotient descent, stage 2 rescaling, stage 3 damped Newton.

    If Newton fails from the stage-2 guess the branch is traced from its
    start by amplitude continuation on the same grid.
    """
    _check_range(basis, s, epsilon, kind)
    nl = _Nonlinearity(kind, basis.grid.ndim, s)
    u0 = _bubble_guess(basis, s) if init is None else np.abs(np.asarray(init, dtype=float))
    try:
        u, iters = _staged_solve(basis, s, nl, epsilon, u0)
    except SolverError as err:
        log.info("Newton from the quotient minimizer failed (%s); tracing the branch", err)
        reports = trace_branch(basis, s, kind, [epsilon], max_size=basis.grid.size)
        rep = reports[0]
        rep.iterations = {**rep.iterations, "fallback": "continuation"}
        return rep
    _verify(u, kind)
    return make_report(basis, s, kind, epsilon, u, iters)


def refine_box(basis: BoxBasis, u):
    """Halve h on a box and carry u over by cubic interpolation."""
    grid = basis.grid
    new = build_box_basis(grid.bounds, [h / 2 for h in grid.h])
    full = np.pad(grid.raster(u), 1)
    axes = [np.linspace(a, b, m) for (a, b), m in zip(grid.bounds, full.shape)]
    if grid.ndim == 1:
        spl = make_interp_spline(axes[0], full, k=3)
        un = spl(new.grid.points[:, 0])
    else:
        un = RegularGridInterpolator(axes, full, method="cubic")(new.grid.points)
    return new, un


def _branch_start(basis, s, nl, kind):
    if kind == "critical":
        eps0 = 0.5 * basis.eigenvalues[0] ** s
    else:
        eps0 = min(0.6, 0.45 * (nl.p - 1))
    u0 = _bubble_guess(basis, s)
    v, hist = _quotient_descent(basis, s, nl, eps0, u0)
    u = hist[-1] ** (1 / (nl.exponent(eps0) - 1)) * v
    u, eps, _ = _newton(basis, s, nl, u, eps0)
    return u, eps


def _direct_rows(basis, s, nl, kind, targets, u, counts, cs):
    """Staged solves at fixed eps past the end of the resolvable branch.

    The minimizer there is a spike a fraction of a cell wide.  Raising the
    last branch state to a power concentrates it and shortens the descent;
    each later target starts from the previous spike.
    """
    rows = []
    seed = u**SPIKE_SEED_POWER
    for et in targets:
        ut, info = _staged_solve(basis, s, nl, et, seed)
        _verify(ut, kind)
        rows.append(make_report(basis, s, kind, et, ut, {**counts, **info}, cs))
        seed = ut
    return rows


def trace_branch(basis: SpectralBasis, s: float, kind: str, targets, max_size: int = 2**21,
                 refine_nodes: float = 24.0, growth: float = 1.25, max_steps: int = 400) -> list:
    """Follow the least-energy branch by its peak value and stop at each target eps.

    Targets are visited in decreasing order.  On boxes the grid is doubled
    (up to ``max_size`` nodes) whenever the predicted core width
    ``mu^(-2/(n-2s))`` spans fewer than ``refine_nodes`` cells.
    """
    targets = sorted((float(e) for e in targets), reverse=True)
    if not targets:
        raise ValueError("empty eps list")
    n = basis.grid.ndim
    cs = closed_form_constants(n, s)
    m = n - 2 * s
    nl = _Nonlinearity(kind, n, s)
    for e in targets:
        _check_range(basis, s, e, kind)
    u, eps = _branch_start(basis, s, nl, kind)
    if eps < targets[0]:
        raise SolverError(f"branch start eps={eps} is already below the first target {targets[0]}")
    anchor = int(np.argmax(u))
    M = float(u[anchor])
    hist = []
    out = []
    ti = 0
    steps = 0
    counts = {"refinements": 0, "continuation_steps": 0}
    while ti < len(targets):
        steps += 1
        if steps > max_steps:
            raise SolverError("continuation step limit reached")
        width = (M / cs.c) ** (-2 / m) / min(basis.grid.h)
        if isinstance(basis, BoxBasis) and width < refine_nodes and 2**n * basis.grid.size <= max_size:
            x_old = basis.grid.points[anchor]
            basis, u = refine_box(basis, u)
            anchor = basis.grid.nearest_node(x_old)
            M = float(u[anchor])
            u, eps, _ = _newton(basis, s, nl, u, eps, anchor, M)
            hist = []
            counts["refinements"] += 1
            continue
        hist.append((M, eps, u))
        Mn = M * growth
        at_floor = not (isinstance(basis, BoxBasis) and 2**n * basis.grid.size <= max_size)
        if at_floor and (Mn / cs.c) ** (-2 / m) / min(basis.grid.h) < MIN_CORE_NODES:
            # every remaining row would be under-resolved on the finest allowed grid
            log.info("continuation stops at eps=%.6g on N=%d: next core below %d cells", eps, basis.grid.size, MIN_CORE_NODES)
            return out + _direct_rows(basis, s, nl, kind, targets[ti:], u, {**counts, "fallback": "resolution"}, cs)
        if len(hist) >= 2:
            (M0, e0, u0), (M1, e1, u1) = hist[-2], hist[-1]
            fr = (Mn - M1) / (M1 - M0)
            ug, eg = u1 + fr * (u1 - u0), e1 + fr * (e1 - e0)
        else:
            ug, eg = u * (Mn / M), eps
        un, en, step_info = _newton(basis, s, nl, ug, eg, anchor, Mn)
        counts["continuation_steps"] += 1
        log.debug("continuation N=%d peak=%.6g eps=%.6g %s", basis.grid.size, Mn, en, step_info)
        if en >= eps or en <= 0:
            # eps stopped decreasing: once the core is thinner than the finest
            # allowed grid the discrete branch folds, so the remaining targets
            # are solved at fixed eps from the current state
            log.info("branch folds at eps=%.6g on N=%d; remaining targets solved directly", eps, basis.grid.size)
            return out + _direct_rows(basis, s, nl, kind, targets[ti:], u, {**counts, "fallback": "fold"}, cs)
        while ti < len(targets) and en < targets[ti] <= eps:
            et = targets[ti]
            guess = u + (un - u) * (eps - et) / (eps - en)
            ut, _, info = _newton(basis, s, nl, guess, et)
            _verify(ut, kind)
            out.append(make_report(basis, s, kind, et, ut, {**counts, **info}, cs))
            ti += 1
        u, eps, M = un, en, Mn
    return out


def check_peaks(grid, u, init) -> np.ndarray:
    """Points of the local maxima of u; exactly k, each within delta0/2 of a sigma_i."""
    peaks = local_maxima(grid, u, min_height=0.05 * float(np.max(u)))
    pts = grid.points[peaks]
    sig = np.asarray(init.sigmas, dtype=float)
    ok = len(peaks) == init.k and all(np.min(np.linalg.norm(pts - sg[None, :], axis=1)) <= init.delta0 / 2 for sg in sig)
    if not ok:
        raise SolverError(f"merged peaks: found {len(peaks)} maxima for k={init.k}")
    return pts


def solve_multipeak(basis: SpectralBasis, s: float, epsilon: float, init, kind: str = "critical",
                    retries: int = 3) -> SolveReport:
    """Newton from the ansatz sum_i P w_{lam_i eps^alpha0, sigma_i}.

    ``init`` is a ReducedConfig.  Fails with "merged peaks" if the converged
    solution does not have exactly k local maxima, each within delta0/2 of a
    sigma_i.
    """
    init.validate(basis.grid)
    nl = _Nonlinearity(kind, basis.grid.ndim, s)
    eps = float(epsilon)
    last = None
    for attempt in range(retries + 1):
        _check_range(basis, s, eps, kind)
        delta = eps**init.alpha0
        u = np.zeros(basis.grid.size)
        for lam, sig in zip(init.lambdas, init.sigmas):
            pw, _ = project_bubble(basis, BubbleParams(lam * delta, tuple(sig)), s)
            u += pw
        try:
            u, eps_out, info = _newton(basis, s, nl, u, eps)
            break
        except SolverError as err:
            last = err
            eps *= 0.5
    else:
        raise SolverError(f"Newton from the multi-bubble ansatz failed after {retries} retries: {last}", getattr(last, "residual", None))
    _verify(u, kind)
    pts = check_peaks(basis.grid, u, init)
    rep = make_report(basis, s, kind, eps, u, {**info, "retries": attempt})
    rep.iterations["peaks"] = [list(map(float, p)) for p in pts]
    return rep


def local_maxima(grid, u, min_height: float = 0.0) -> list:
    """Nodes whose value is >= every edge neighbor's (exterior counts as 0)."""
    full = np.pad(grid.raster(u), 1)
    idx = tuple((grid.cells + 1).T)
    val = full[idx]
    keep = val > min_height
    for axis in range(grid.ndim):
        for step in (1, -1):
            nb = list(idx)
            nb[axis] = idx[axis] + step
            keep &= val >= full[tuple(nb)]
    return [int(i) for i in np.flatnonzero(keep)]
