"""Eps-sweeps along the least-energy branch and extraction of blow-up rates.

Rate products are reported on the sup-norm scale, ``mu_eps * c_{n,s} = ||u||_inf``:
critical rows carry eps ||u||^(2(n-4s)/(n-2s)), subcritical rows eps ||u||^2.
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np

from fraclab.constants import ConstantSet, closed_form_constants
from fraclab.grid import SpectralBasis
from fraclab.greens import GreenCache, green_column
from fraclab.solver import SolveReport, trace_branch

CSV_COLUMNS = (
    "epsilon", "mu_eps", "x_eps", "rate_product_critical", "rate_product_subcritical",
    "green_residual", "bound_ratio", "core_nodes", "nodes", "resolved",
)


class SweepError(ValueError):
    pass


@dataclass
class SweepRow:
    epsilon: float
    mu_eps: float
    x_eps: tuple
    rate_product_critical: float | None
    rate_product_subcritical: float | None
    green_residual: float
    bound_ratio: float
    core_nodes: float
    nodes: int
    resolved: bool

    def rate(self, kind: str) -> float:
        v = self.rate_product_critical if kind == "critical" else self.rate_product_subcritical
        if v is None:
            raise SweepError(f"row has no {kind} rate product")
        return v


@dataclass
class SweepTable:
    kind: str
    n: int
    s: float
    rows: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        eps = [r.epsilon for r in self.rows]
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise SweepError("sweep epsilons must be strictly decreasing")

    @property
    def resolved_rows(self) -> list:
        return [r for r in self.rows if r.resolved]

    def column(self, name: str, resolved_only: bool = True) -> np.ndarray:
        rows = self.resolved_rows if resolved_only else self.rows
        if name == "rate":
            return np.array([r.rate(self.kind) for r in rows])
        return np.array([getattr(r, name) for r in rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for r in self.rows:
            d = asdict(r)
            d["x_eps"] = " ".join(repr(float(v)) for v in r.x_eps)
            wr.writerow(["" if d[c] is None else d[c] for c in CSV_COLUMNS])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "s": self.s,
            "columns": list(CSV_COLUMNS),
            "rows": [asdict(r) for r in self.rows],
            "meta": self.meta,
        }


def rate_products(report: SolveReport, constants: ConstantSet | None = None):
    """(critical, subcritical) rate products; the one not matching the kind is None."""
    cs = constants or closed_form_constants(report.n, report.s)
    n, s = report.n, report.s
    sup = report.mu_eps * cs.c
    if report.kind == "critical":
        return report.epsilon * sup ** (2 * (n - 4 * s) / (n - 2 * s)), None
    return None, report.epsilon * sup**2


def green_limit_residual(report: SolveReport, constants: ConstantSet | None = None, radius: float | None = None,
                         cache: GreenCache | None = None) -> float:
    """max |‖u‖ u(x) - b G(x, x_eps)| / max |b G| over nodes farther than ``radius`` from x_eps.

    ``radius`` defaults to a quarter of the domain diameter.  G comes from
    ``cache`` when it lives on the report's basis, otherwise one column is
    computed spectrally.
    """
    cs = constants or closed_form_constants(report.n, report.s)
    grid = report.basis.grid
    pts = grid.points
    if radius is None:
        radius = domain_diameter(grid) / 4
    far = np.linalg.norm(pts - np.asarray(report.x_eps)[None, :], axis=1) > radius
    if not far.any():
        raise SweepError(f"no nodes farther than {radius} from x_eps")
    if cache is not None and cache.basis is report.basis:
        G = cache.column(report.x_index)
    else:
        G = green_column(report.basis, report.x_index, report.s)
    bG = cs.b * G[far]
    return float(np.max(np.abs(report.sup * report.u[far] - bG)) / np.max(np.abs(bG)))


def domain_diameter(grid) -> float:
    if grid.kind == "box":
        return float(np.linalg.norm([b - a for a, b in grid.bounds]))
    pts = grid.points
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return float(np.linalg.norm(hi - lo + 2 * np.asarray(grid.h)))


def table_from_reports(reports, constants: ConstantSet | None = None, radius: float | None = None) -> SweepTable:
    if not reports:
        raise SweepError("no reports")
    kind, n, s = reports[0].kind, reports[0].n, reports[0].s
    cs = constants or closed_form_constants(n, s)
    rows = []
    for rep in reports:
        crit, sub = rate_products(rep, cs)
        rows.append(SweepRow(
            epsilon=float(rep.epsilon), mu_eps=float(rep.mu_eps), x_eps=tuple(rep.x_eps),
            rate_product_critical=None if crit is None else float(crit),
            rate_product_subcritical=None if sub is None else float(sub),
            green_residual=green_limit_residual(rep, cs, radius), bound_ratio=float(rep.bound_ratio),
            core_nodes=float(rep.core_nodes), nodes=int(rep.basis.grid.size), resolved=bool(rep.resolved),
        ))
    return SweepTable(kind, n, s, rows)


def epsilon_sweep(basis: SpectralBasis, s: float, kind: str, epsilons, constants: ConstantSet | None = None,
                  radius: float | None = None, max_size: int = 2**21, keep_reports: bool = False):
    """One report per eps from a single continuation along the branch.

    Returns the SweepTable, or ``(table, reports)`` with ``keep_reports``.
    """
    eps = [float(e) for e in epsilons]
    if not eps:
        raise SweepError("empty eps list")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise SweepError("eps list must be strictly decreasing")
    reports = trace_branch(basis, s, kind, eps, max_size=max_size)
    table = table_from_reports(reports, constants, radius)
    if not table.resolved_rows:
        raise SweepError("every row is under-resolved; use a finer grid or raise max_size")
    table.meta = {"max_size": max_size, "radius": radius, "kind": kind}
    return (table, reports) if keep_reports else table


def cauchy_trend(values) -> bool:
    """Successive absolute differences strictly decrease."""
    d = np.abs(np.diff(np.asarray(values, dtype=float)))
    return bool(d.size >= 2 and np.all(np.diff(d) < 0))


@dataclass
class RateFit:
    limit: float
    method: str
    ratios: dict
    rows_used: int

    def matches(self, tol: float = 0.3) -> list:
        return [k for k, r in self.ratios.items() if abs(r - 1) <= tol]


def extrapolate(eps, values) -> tuple:
    """Limit of values(eps) as eps -> 0 from at least three samples.

    With geometric eps and geometrically contracting differences the last three
    samples give the Aitken/Richardson limit (exact for L + a eps^q).  Otherwise
    a least-squares line in eps is used.
    """
    e = np.asarray(eps, dtype=float)
    v = np.asarray(values, dtype=float)
    if e.size < 3:
        raise SweepError("need at least 3 resolved rows")
    d1, d2 = v[-2] - v[-3], v[-1] - v[-2]
    scale = max(np.max(np.abs(v)), 1e-300)
    if abs(d1) <= 1e-14 * scale and abs(d2) <= 1e-14 * scale:
        return float(v[-1]), "converged"
    ratio = e[1:] / e[:-1]
    geometric = np.allclose(ratio[-2:], ratio[-1], rtol=1e-9)
    if geometric and d1 * d2 > 0 and abs(d2) < abs(d1):
        return float(v[-1] - d2 * d2 / (d2 - d1)), "aitken"
    slope, icpt = np.polyfit(e, v, 1)
    return float(icpt), "linear"


def rate_fit(table: SweepTable, targets) -> RateFit:
    """Extrapolated rate product over resolved rows and limit/target per variant.

    ``targets`` is a number or a mapping variant name -> target value.
    """
    rows = table.resolved_rows
    if len(rows) < 3:
        raise SweepError(f"rate fit needs at least 3 resolved rows, got {len(rows)}")
    eps = [r.epsilon for r in rows]
    vals = [r.rate(table.kind) for r in rows]
    limit, method = extrapolate(eps, vals)
    if not isinstance(targets, dict):
        targets = {"target": targets}
    ratios = {k: limit / float(t) for k, t in targets.items() if t is not None and t != 0}
    return RateFit(limit, method, ratios, len(rows))


def rate_targets(constants: ConstantSet, tau: float, kind: str) -> dict:
    """Predicted rate limits, one per constant variant."""
    t = abs(float(tau))
    variants = constants.d_variants() if kind == "critical" else constants.g_variants()
    return {k: (None if v is None else float(v) * t) for k, v in variants.items()}


def energy_expansion_link(report: SolveReport, constants: ConstantSet, tau: float) -> dict:
    """Compare (E_eps - (s/n) c_0) / eps^((n-2s)/(n-4s)) with (1/2) Upsilon_1(lambda*, sigma).

    Critical kind only.  Reported as a trend; the discrete energy carries an
    O(h^2) error that is amplified by the small denominator.
    """
    cs = constants
    if report.kind != "critical" or cs.c2 is None:
        raise SweepError("energy link needs a critical report with n > 4s")
    n, s = cs.n, cs.s
    m = n - 2 * s
    lam = (2 * s * cs.c2 / (m * cs.c1**2 * tau)) ** (1 / (n - 4 * s))
    ups = cs.c1**2 * tau * lam**m - cs.c2 * lam ** (2 * s)
    scaled = (report.energy - s / n * cs.c0) / report.epsilon ** (m / (n - 4 * s))
    return {"epsilon": report.epsilon, "scaled_energy": float(scaled), "half_upsilon": float(0.5 * ups),
            "ratio": float(scaled / (0.5 * ups))}
