"""Command line harness: ``fraclab <subcommand> [flags] [--config FILE] [--out DIR]``.

Every run writes into its own directory (``--out``, default ``runs/<subcommand>``)
and always leaves ``manifest.json`` there, with a failure record if the
numerics failed.  Usage errors exit with status 2 before anything is written;
numerical failures exit with status 1.

The config file is flat key-value text with sections.  Keys mirror the long
flag names (``max-size`` or ``max_size``); section ``[common]`` applies to
every subcommand and a section named after the subcommand applies to it
alone.  Flags on the command line override the file.
"""
from __future__ import annotations

import argparse
import configparser
import json
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from fraclab import kernels
from fraclab.asymptotics import CSV_COLUMNS, cauchy_trend, epsilon_sweep, rate_fit, rate_targets
from fraclab.constants import closed_form_constants, oracle_constants
from fraclab.extension import extension_energy, flux_residual, pohozaev_residual
from fraclab.greens import build_green_cache, robin_function
from fraclab.grid import build_box_basis, build_masked_basis, read_mask, write_mask
from fraclab.operator import energy
from fraclab.reduced import ReducedConfig, default_alpha0, dumbbell_mask, find_critical_config, lambda_star
from fraclab.solver import GMRES_RTOL, MIN_CORE_NODES, RESIDUAL_TOL, solve_least_energy, solve_multipeak

VERSION = "0.1.0"
BOXES = {"interval": 1, "square": 2, "cube": 3}
DEFAULT_H = {"interval": 2 / 1024, "square": 2 / 48, "cube": 2 / 16}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def float_list(text: str) -> list:
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"{text} is not positive")
    return v


def _fraction(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"s={text} must lie in (0, 1)")
    return v


def _add_domain(p):
    p.add_argument("--domain", default="interval",
                   help="interval (-1,1), square (-1,1)^2, cube (-1,1)^3, dumbbell, or mask:PATH")
    p.add_argument("--h", type=_positive, default=None, help="grid spacing (mask files carry their own)")
    p.add_argument("--lobes", type=int, default=2, help="dumbbell lobe count")
    p.add_argument("--lobe", type=_positive, default=1.0, help="dumbbell lobe side")
    p.add_argument("--neck", type=_positive, default=0.25, help="dumbbell neck width")


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="fraclab", description="Spectral fractional Laplacian experiments.")
    top.add_argument("--version", action="version", version=VERSION)
    sub = top.add_subparsers(dest="command", parser_class=_Parser)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=None, help="key-value config file")
        p.add_argument("--out", default=None, help="run directory")
        return p

    p = cmd("constants", "closed-form constants (and quadrature oracles) as JSON")
    p.add_argument("--n", type=int, required=True, choices=(1, 2, 3))
    p.add_argument("--s", type=_fraction, required=True)
    p.add_argument("--oracle", action="store_true", help="also evaluate the quadrature oracles")

    p = cmd("basis", "eigenvalues of the discrete Dirichlet Laplacian")
    _add_domain(p)
    p.add_argument("--s", type=_fraction, default=0.5)
    p.add_argument("--count", type=int, default=20)

    p = cmd("solve", "least-energy solution at one eps")
    _add_domain(p)
    p.add_argument("--s", type=_fraction, required=True)
    p.add_argument("--kind", choices=("critical", "subcritical"), required=True)
    p.add_argument("--eps", type=_positive, required=True)

    p = cmd("sweep", "eps-sweep along the least-energy branch")
    _add_domain(p)
    p.add_argument("--s", type=_fraction, required=True)
    p.add_argument("--kind", choices=("critical", "subcritical"), required=True)
    p.add_argument("--eps", type=float_list, required=True, help="comma-separated, strictly decreasing")
    p.add_argument("--max-size", type=int, default=2**21, dest="max_size")
    p.add_argument("--radius", type=_positive, default=None, help="Green-limit exclusion radius")

    p = cmd("green", "Robin function over the grid and one Green column")
    _add_domain(p)
    p.add_argument("--s", type=_fraction, required=True)
    p.add_argument("--source", type=float_list, default=None, help="source point, default: grid center")

    p = cmd("reduce", "critical point of the reduced energy")
    _add_domain(p)
    p.add_argument("--s", type=_fraction, required=True)
    p.add_argument("--kind", choices=("critical", "subcritical"), default="critical")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--lambdas", type=float_list, default=None)
    p.add_argument("--sigmas", type=float_list, default=None, help="k*n comma-separated coordinates")
    p.add_argument("--delta0", type=_positive, default=None)

    p = cmd("extension-check", "flux residuals of the s-harmonic extension")
    _add_domain(p)
    p.add_argument("--s", type=_fraction, required=True)
    p.add_argument("--eps", type=_positive, default=None, help="also solve (critical, n=1) and report the Pohozaev pair")

    p = cmd("dumbbell", "reduced-energy prediction and multi-peak solve on a dumbbell")
    _add_domain(p)
    p.add_argument("--s", type=_fraction, default=0.25)
    p.add_argument("--delta0", type=_positive, default=0.06)
    p.add_argument("--eps", type=_positive, default=0.25)
    p.set_defaults(domain="dumbbell", h=1 / 48)
    return top


def _apply_config(sub_parser, command: str, path: str) -> None:
    """Install config-file values as defaults of the subcommand parser."""
    cfg = configparser.ConfigParser()
    try:
        if not cfg.read(path):
            raise UsageError(f"cannot read config {path}")
    except configparser.Error as err:
        raise UsageError(f"bad config: {err}")
    known = {a.dest: a for a in sub_parser._actions}
    defaults = {}
    for section in ("common", command):
        if not cfg.has_section(section):
            continue
        for key, raw in cfg.items(section):
            dest = key.replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                raise UsageError(f"unknown config key {key!r} in [{section}]")
            act = known[dest]
            if act.const is True and act.nargs == 0:
                defaults[dest] = cfg.getboolean(section, key)
                continue
            try:
                val = act.type(raw) if act.type else raw
            except (argparse.ArgumentTypeError, ValueError) as err:
                raise UsageError(f"config {key}={raw!r}: {err}")
            if act.choices is not None and val not in act.choices:
                raise UsageError(f"config {key}={raw!r} not in {list(act.choices)}")
            defaults[dest] = val
    for a in sub_parser._actions:
        if a.dest in defaults:
            a.required = False
    sub_parser.set_defaults(**defaults)


def parse_args(argv):
    parser = build_parser()
    subs = parser._subparsers._group_actions[0].choices
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config is not None:
        command = next((a for a in argv if a in subs), None)
        if command is None:
            raise UsageError("missing subcommand")
        _apply_config(subs[command], command, known.config)
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("missing subcommand")
    _validate(args)
    return args


def _validate(args):
    eps = getattr(args, "eps", None)
    if isinstance(eps, list):
        if any(e <= 0 for e in eps):
            raise UsageError("eps values must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise UsageError("eps list must be strictly decreasing")
    dom = getattr(args, "domain", None)
    if dom is not None and dom not in BOXES and dom != "dumbbell" and not dom.startswith("mask:"):
        raise UsageError(f"unknown domain {dom!r}")
    if dom is not None and dom.startswith("mask:") and not Path(dom[5:]).is_file():
        raise UsageError(f"mask file {dom[5:]!r} not found")
    if args.command == "reduce":
        n = BOXES.get(dom, 2)
        if args.sigmas is not None and len(args.sigmas) != args.k * n:
            raise UsageError(f"--sigmas needs {args.k * n} numbers")
        if args.sigmas is None and args.k > 1:
            raise UsageError("--sigmas is required for k > 1")
        if args.lambdas is not None and len(args.lambdas) != args.k:
            raise UsageError(f"--lambdas needs {args.k} numbers")
    if args.command == "extension-check" and args.eps is not None and dom != "interval":
        raise UsageError("the Pohozaev pair is available on the interval only")
    if args.command == "dumbbell" and not (dom == "dumbbell" or dom.startswith("mask:")):
        raise UsageError("dumbbell needs --domain dumbbell or a mask file")


def build_domain(args):
    """(basis, description) for the requested domain."""
    dom = args.domain
    if dom in BOXES:
        h = args.h or DEFAULT_H[dom]
        basis = build_box_basis([(-1.0, 1.0)] * BOXES[dom], h)
        return basis, {"domain": dom, "h": h, "nodes": basis.grid.size}
    if dom == "dumbbell":
        h = args.h or 1 / 48
        mask, origin = dumbbell_mask(args.lobes, args.lobe, args.neck, h)
        basis = build_masked_basis(mask, h, origin)
        return basis, {"domain": dom, "h": h, "lobes": args.lobes, "lobe": args.lobe, "neck": args.neck,
                       "nodes": basis.grid.size}
    mask, h = read_mask(dom[5:])
    basis = build_masked_basis(mask, h)
    return basis, {"domain": dom, "h": h, "nodes": basis.grid.size}


def _field_csv(path, grid, columns: dict):
    names = [f"x{i}" for i in range(grid.ndim)] + list(columns)
    data = np.column_stack([grid.points] + [np.asarray(v) for v in columns.values()])
    np.savetxt(path, data, delimiter=",", header=",".join(names), comments="", fmt="%.17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_constants(args, out):
    cs = closed_form_constants(args.n, args.s)
    data = _jsonable(cs.to_dict())
    data["d_variants"] = cs.d_variants()
    data["g_variants"] = cs.g_variants()
    if args.oracle:
        data["oracle"] = oracle_constants(args.n, args.s)
    _dump(out / "constants.json", data)
    print(json.dumps(_jsonable(data), sort_keys=True))
    return ["constants.json"], {}


def run_basis(args, out):
    basis, desc = build_domain(args)
    lam = np.sort(basis.eigenvalues)[: args.count]
    np.savetxt(out / "eigenvalues.csv", np.column_stack([np.arange(1, lam.size + 1), lam]), delimiter=",",
               header="k,eigenvalue", comments="", fmt=["%d", "%.17g"])
    info = {**desc, "lambda_1": float(lam[0]), "lambda_1_pow_s": float(lam[0] ** args.s), "s": args.s}
    _dump(out / "basis.json", info)
    return ["eigenvalues.csv", "basis.json"], info


def run_solve(args, out):
    basis, desc = build_domain(args)
    rep = solve_least_energy(basis, args.s, args.eps, args.kind)
    _dump(out / "report.json", {**desc, **rep.summary()})
    _field_csv(out / "solution.csv", rep.basis.grid, {"u": rep.u})
    return ["report.json", "solution.csv"], {"sup": rep.sup, "residual": rep.residual}


def _center_node(grid, point=None):
    if point is None:
        point = 0.5 * (grid.points.min(axis=0) + grid.points.max(axis=0))
    return grid.nearest_node(np.asarray(point, dtype=float))


def run_sweep(args, out):
    basis, desc = build_domain(args)
    n = basis.grid.ndim
    cs = closed_form_constants(n, args.s)
    table, reports = epsilon_sweep(basis, args.s, args.kind, args.eps, cs, args.radius, args.max_size, keep_reports=True)
    (out / "sweep.csv").write_text(table.to_csv())
    meta = {**desc, "n": n, "s": args.s, "kind": args.kind, "columns": list(CSV_COLUMNS),
            "constants": cs.to_dict(), "min_core_nodes": MIN_CORE_NODES, "agreement_tolerance": 0.3}
    # tau at the limit point, on the starting grid
    cache = build_green_cache(basis, args.s, full_matrix=False)
    tau = robin_function(cache, _center_node(basis.grid, reports[-1].x_eps))
    meta["tau_x0"] = tau
    targets = rate_targets(cs, tau, args.kind)
    meta["targets"] = targets
    rates = table.column("rate")
    meta["cauchy_trend"] = cauchy_trend(rates) if rates.size >= 3 else None
    if len(table.resolved_rows) >= 3:
        fit = rate_fit(table, targets)
        meta["rate_fit"] = {"limit": fit.limit, "method": fit.method, "ratios": fit.ratios, "rows": fit.rows_used,
                            "variants_within_tolerance": fit.matches(0.3)}
    else:
        meta["rate_fit"] = None
    _dump(out / "sweep.json", meta)
    return ["sweep.csv", "sweep.json"], {"rows": len(table.rows), "resolved": len(table.resolved_rows)}


def run_green(args, out):
    basis, desc = build_domain(args)
    grid = basis.grid
    cache = build_green_cache(basis, args.s)
    _field_csv(out / "robin.csv", grid, {"tau": cache.tau})
    y = _center_node(grid, args.source)
    _field_csv(out / "green.csv", grid, {"G": cache.column(y), "H": cache.regular_column(y)})
    info = {**desc, "s": args.s, "source": grid.points[y].tolist(), "tau_source": robin_function(cache, y),
            "tau_min": float(np.min(cache.tau)), "tau_max": float(np.max(cache.tau))}
    _dump(out / "green.json", info)
    return ["robin.csv", "green.csv", "green.json"], {"tau_source": info["tau_source"]}


def _start_config(args, grid, cache, cs, kind):
    n = grid.ndim
    k = args.k
    if args.sigmas is not None:
        sig = np.reshape(args.sigmas, (k, n))
    else:
        sig = grid.points[[_center_node(grid)]]
    if args.lambdas is not None:
        lam = np.array(args.lambdas)
    elif kind == "critical":
        lam = np.array([lambda_star(cs, cache.tau[grid.nearest_node(sg)]) for sg in sig])
    else:
        lam = np.ones(k)
    delta0 = args.delta0 if args.delta0 is not None else 0.5 * float(np.min(lam))
    return ReducedConfig(lam, sig, delta0, default_alpha0(n, args.s, kind))


def run_reduce(args, out):
    basis, desc = build_domain(args)
    grid = basis.grid
    cs = closed_form_constants(grid.ndim, args.s)
    cache = build_green_cache(basis, args.s)
    start = _start_config(args, grid, cache, cs, args.kind)
    res = find_critical_config(cache, cs, start, args.kind)
    _dump(out / "reduced.json", {**desc, "s": args.s, "kind": args.kind, "start": start.to_dict(), **res.to_dict()})
    return ["reduced.json"], {"grad_norm": res.grad_norm}


def run_extension_check(args, out):
    basis, desc = build_domain(args)
    grid = basis.grid
    x = grid.points
    # smooth test field vanishing on the boundary of the bounding box
    lo, hi = x.min(axis=0) - grid.h, x.max(axis=0) + grid.h
    u = np.prod(np.sin(np.pi * (x - lo) / (hi - lo)), axis=1) * (1 + 0.3 * np.cos(2 * np.pi * (x[:, 0] - lo[0]) / (hi[0] - lo[0])))
    info = {**desc, "s": args.s,
            "flux_residual_analytic": flux_residual(basis, u, args.s, "analytic"),
            "flux_residual_numerical": flux_residual(basis, u, args.s, "numerical"),
            "extension_energy": extension_energy(basis, u, args.s),
            "C_s_times_energy": closed_form_constants(grid.ndim, args.s).C_s * energy(basis, u, args.s)}
    if args.eps is not None:
        rep = solve_least_energy(basis, args.s, args.eps, "critical")
        pair = pohozaev_residual(rep)
        info["pohozaev"] = {"epsilon": args.eps, "lhs": pair.lhs, "rhs": pair.rhs, "gap": pair.gap}
    _dump(out / "extension.json", info)
    print(json.dumps(_jsonable(info), sort_keys=True))
    return ["extension.json"], {}


def run_dumbbell(args, out):
    basis, desc = build_domain(args)
    grid = basis.grid
    cs = closed_form_constants(2, args.s)
    if args.domain == "dumbbell":
        write_mask(out / "mask.txt", grid.mask, desc["h"])
    cache = build_green_cache(basis, args.s, full_matrix=False)
    k = args.lobes
    sig = np.array([[(2 * i + 0.5) * args.lobe, 0.5 * args.lobe] for i in range(k)])
    lam = [lambda_star(cs, cache.tau[grid.nearest_node(sg)]) for sg in sig]
    start = ReducedConfig(lam, sig, args.delta0, default_alpha0(2, args.s, "critical"))
    res = find_critical_config(cache, cs, start, "critical")
    _dump(out / "reduced.json", {**desc, "s": args.s, "start": start.to_dict(), **res.to_dict()})
    rep = solve_multipeak(basis, args.s, args.eps, res.config)
    _dump(out / "multipeak.json", {**desc, **rep.summary()})
    _field_csv(out / "solution.csv", grid, {"u": rep.u})
    files = ["reduced.json", "multipeak.json", "solution.csv"]
    if args.domain == "dumbbell":
        files.insert(0, "mask.txt")
    return files, {"peaks": rep.iterations.get("peaks")}


COMMANDS = {
    "constants": run_constants,
    "basis": run_basis,
    "solve": run_solve,
    "sweep": run_sweep,
    "green": run_green,
    "reduce": run_reduce,
    "extension-check": run_extension_check,
    "dumbbell": run_dumbbell,
}


def _manifest(args, argv):
    inputs = {k: v for k, v in vars(args).items() if k not in ("out",)}
    return {
        "command": args.command,
        "argv": list(argv),
        "inputs": inputs,
        "versions": {"fraclab": VERSION, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "kernel_backend": kernels.BACKEND},
        "seeds": {},
        "tolerances": {"newton_residual": RESIDUAL_TOL, "gmres_rtol": GMRES_RTOL, "min_core_nodes": MIN_CORE_NODES},
    }


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as err:
        build_parser().print_usage(sys.stderr)
        print(f"fraclab: error: {err}", file=sys.stderr)
        return 2
    out = Path(args.out or Path("runs") / args.command)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, argv)
    try:
        files, summary = COMMANDS[args.command](args, out)
    except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as err:
        manifest.update(status="failed", error={"type": type(err).__name__, "message": str(err),
                                                "residual": getattr(err, "residual", None)})
        _dump(out / "manifest.json", manifest)
        print(f"fraclab: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    manifest.update(status="ok", outputs=files, summary=summary)
    _dump(out / "manifest.json", manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
