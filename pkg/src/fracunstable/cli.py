"""Command-line entry point.

Subcommands: ``solve``, ``analyze``, ``reference``, ``stability``, ``beta``
and ``report``.  Every run writes into ``<out>/<command>-<timestamp>/``,
starting with ``manifest.json``.  Options may also come from a plain
``key = value`` file given with ``--config``; flags on the command line win.

Exit codes: 0 success, 1 usage or configuration error, 2 solver failure
(non-convergence or collapse), 3 certificate failure (disagreement between
closed form and quadrature, violated domination, or a non-positive margin).
"""
from __future__ import annotations

import argparse
import ast
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("fracunstable")

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_CERTIFICATE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- boundary expressions ----------------------------------------------------

_FUNCS = {"abs": np.abs, "sqrt": np.sqrt, "sign": np.sign, "exp": np.exp,
          "sin": np.sin, "cos": np.cos, "log": np.log, "maximum": np.maximum,
          "minimum": np.minimum}
_CONSTS = {"pi": math.pi}
_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
          ast.Constant, ast.operator, ast.unaryop)


def parse_expression(text: str, dim: int):
    """Compile an arithmetic expression in ``x1, x2, x3`` (or ``xn``, ``r``).

    Only arithmetic, numeric constants and a few numpy functions are
    accepted; anything else is rejected before evaluation.
    """
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise UsageError(f"malformed expression {text!r}: {exc.msg}") from None
    names = {f"x{k + 1}" for k in range(dim)} | {"xn", "r"} | set(_FUNCS) | set(_CONSTS)
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise UsageError(f"unsupported syntax in {text!r}")
        if isinstance(node, ast.Name) and node.id not in names:
            raise UsageError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.Call) and not (
                isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise UsageError(f"unsupported call in {text!r}")
    code = compile(tree, "<expression>", "eval")

    def fn(x):
        env = {f"x{k + 1}": x[:, k] for k in range(dim)}
        env.update(xn=x[:, -1], r=np.sqrt(np.sum(x * x, axis=1)), **_FUNCS, **_CONSTS)
        out = eval(code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(out, dtype=float), (len(x),))

    return fn


def parse_grid_spec(text: str):
    """``start:stop:step`` with inclusive stop -> array."""
    try:
        start, stop, step = (float(t) for t in text.split(":"))
    except ValueError:
        raise UsageError(f"expected start:stop:step, got {text!r}") from None
    if step <= 0 or stop < start:
        raise UsageError(f"empty or decreasing range {text!r}")
    n = int(round((stop - start) / step)) + 1
    return np.round(start + step * np.arange(n), 12)


def _floats(text):
    try:
        return [float(t) for t in str(text).replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"expected a list of numbers, got {text!r}") from None


# -- parser ------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="key = value file; flags override its entries")
    p.add_argument("--out", default="runs", help="parent directory for run outputs")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    p.add_argument("--verbose", action="store_true")


def _physics(p, a_default=-0.5):
    p.add_argument("--a", type=float, default=a_default, help="weight exponent in (-1, 1)")
    p.add_argument("--lambda-plus", type=float, default=1.0)
    p.add_argument("--lambda-minus", type=float, default=1.0)


def _grid_opts(p):
    p.add_argument("--n", type=int, choices=(2, 3), default=2, help="space dimension")
    p.add_argument("--resolution", type=int, default=64, help="cells per radius")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--boundary", default="x1", help="Dirichlet data, e.g. 'x1+0.2'")
    p.add_argument("--start", default="best",
                   choices=("best", "from_above", "from_below", "from_boundary_harmonic"))
    p.add_argument("--max-outer", type=int, default=200)
    p.add_argument("--damping", type=float, default=1.0)
    p.add_argument("--linear-tol", type=float, default=1e-10)


def build_parser():
    parser = _Parser(prog="fracunstable", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("solve", help="minimize on a half-ball and dump the field")
    _common(p), _physics(p), _grid_opts(p)

    p = sub.add_parser("analyze", help="free boundary and radial profiles of a field")
    _common(p), _physics(p), _grid_opts(p)
    p.add_argument("--field", help="field JSON from a solve run (else solve first)")
    p.add_argument("--center", default=None, help="thin center; default: nearest free boundary point")
    p.add_argument("--radii", default=None, help="radii for the profiles")
    p.add_argument("--n-radii", type=int, default=20)

    p = sub.add_parser("reference", help="kernel-quadrature reference solutions along a ray")
    _common(p)
    p.add_argument("--a", type=float, default=-0.5)
    p.add_argument("--kind", default="u2",
                   choices=("quadrant", "u2", "line_dipole", "segment", "u2_gradient"))
    p.add_argument("--samples", type=int, default=33)
    p.add_argument("--x-max", type=float, default=0.9)
    p.add_argument("--theta", type=float, default=math.pi / 4,
                   help="thin polar angle of the sampling ray (quadrant and u2)")

    p = sub.add_parser("stability", help="instability certificates")
    _common(p)
    p.add_argument("--target", default="u2", choices=("u2", "ui"))
    p.add_argument("--a", type=float, default=-0.5)
    p.add_argument("--a-grid", default=None, help="start:stop:step; overrides --a")
    p.add_argument("--i", type=int, default=3, help="sector index for --target ui")
    p.add_argument("--truncation-radius", type=float, default=64.0)
    p.add_argument("--radii", default=None, help="truncation sweep, e.g. '2 4 8 16 32 64'")
    p.add_argument("--resolution", type=int, default=24, help="sector grid for --target ui")

    p = sub.add_parser("beta", help="Beta-function margin over an a-grid")
    _common(p)
    p.add_argument("--a-grid", default="-0.99:-0.01:0.01")

    p = sub.add_parser("report", help="summarize run directories")
    _common(p)
    p.add_argument("--runs", default=None, help="directory holding runs (default: --out)")
    return parser, sub


def load_config(path, subparser) -> dict:
    """Parse ``key = value`` lines using the subcommand's option types."""
    actions = {a.dest: a for a in subparser._actions if a.dest not in ("help", "config")}
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for ln, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{ln}: expected 'key = value'")
        key, val = (t.strip() for t in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest not in actions:
            raise UsageError(f"{path}:{ln}: unknown key {key!r}")
        act = actions[dest]
        if isinstance(act, argparse._StoreTrueAction):
            if val.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"{path}:{ln}: {key} expects a boolean")
            out[dest] = val.lower() in ("true", "1", "yes")
            continue
        try:
            v = act.type(val) if act.type else val
        except (TypeError, ValueError):
            raise UsageError(f"{path}:{ln}: bad value {val!r} for {key}") from None
        if act.choices is not None and v not in act.choices:
            raise UsageError(f"{path}:{ln}: {key} must be one of {list(act.choices)}")
        out[dest] = v
    return out


_VALUE_OPTS = ("--a-grid", "--center", "--radii", "--boundary")


def _join_values(argv):
    """Attach values such as ``-0.99:-0.01:0.01`` to their option.

    argparse only recognizes plain negative numbers as values, so a range or
    expression starting with ``-`` would otherwise be taken for a flag.
    """
    out, k = [], 0
    while k < len(argv):
        tok = argv[k]
        if tok in _VALUE_OPTS and k + 1 < len(argv) and argv[k + 1].startswith("-") \
                and not argv[k + 1].startswith("--"):
            out.append(f"{tok}={argv[k + 1]}")
            k += 2
            continue
        out.append(tok)
        k += 1
    return out


def parse_args(argv):
    argv = _join_values(list(argv))
    parser, sub = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a command is required: " + ", ".join(sub.choices))
    if getattr(args, "config", None):
        sp = sub.choices[args.command]
        sp.set_defaults(**load_config(args.config, sp))
        args = parser.parse_args(argv)
    return args


def _config_echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose", "out")}


# -- commands ----------------------------------------------------------------

def _params(args):
    from .grid import Params

    try:
        return Params(args.a, args.lambda_plus, args.lambda_minus)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _solve(args):
    from .grid import build_halfball_grid
    from .solver import SolveOptions, minimize

    params = _params(args)
    try:
        grid = build_halfball_grid(params, args.radius, args.resolution, dim=args.n)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data = parse_expression(args.boundary, args.n)
    opts = SolveOptions(max_outer=args.max_outer, linear_tol=args.linear_tol,
                        damping=args.damping,
                        start=None if args.start == "best" else args.start)
    return minimize(grid, params, data, opts), params


def _residual_checks(field, params, seed, count=5):
    from .functional import first_variation_residual
    from .grid import ScalarField

    rng = np.random.default_rng(seed)
    g = field.grid
    rows = []
    scale = float(np.abs(field.values) @ np.abs(g.stiffness @ field.values)) or 1.0
    for k in range(count):
        psi = np.where(g.interior, rng.standard_normal(g.n_nodes), 0.0)
        r = first_variation_residual(field, ScalarField(g, psi), params)
        rows.append([k, r, abs(r) / math.sqrt(scale)])
    return rows


def cmd_solve(args, run):
    field, params = _solve(args)
    g = field.grid
    run.json("field.json", {**_field_doc(field), "params": _params_doc(params)})
    run.csv("convergence.csv", ["iteration", "energy", "sign_changes"], field.meta["history"])
    tn = g.node_coords[g.thin_nodes]
    run.csv("thin_trace.csv", [f"x{k + 1}" for k in range(g.dim - 1)] + ["value"],
            [list(p[:-1]) + [v] for p, v in zip(tn, field.thin_trace())])
    run.csv("residuals.csv", ["test", "residual", "relative"],
            _residual_checks(field, params, args.seed))
    e = field.meta["energy"]
    run.json("summary.json", {
        "energy": {"dirichlet": e.dirichlet, "thin": e.thin, "total": e.total},
        "start": field.meta["start"], "iterations": field.meta["iterations"],
        "frozen_nodes": len(field.meta["frozen_nodes"]),
        "candidates": field.meta.get("candidates", {}), "grid": g.describe(),
        "nodes": g.n_nodes})
    return EXIT_OK


def _field_doc(field):
    from .io import field_to_dict

    return field_to_dict(field)


def _params_doc(p):
    return {"a": p.a, "lambda_plus": p.lambda_plus, "lambda_minus": p.lambda_minus}


def cmd_analyze(args, run):
    from .free_boundary import (NotApplicable, extract_phases, nondegeneracy_fit,
                                nonseparation_distance, zero_set_measure)
    from .grid import Params
    from .io import field_from_dict, read_json
    from .radial import almgren, s_t_profiles, weiss

    if args.field:
        doc = read_json(args.field)
        field = field_from_dict(doc)
        pd = doc.get("params", {})
        params = Params(field.grid.a, pd.get("lambda_plus", args.lambda_plus),
                        pd.get("lambda_minus", args.lambda_minus))
    else:
        field, params = _solve(args)
    g = field.grid
    fbs = extract_phases(field)
    run.json("free_boundary.json", fbs.to_dict())
    summary = {"grid": g.describe(), "h": g.h,
               "zero_set_measure": zero_set_measure(field, g.h ** (1 - g.a)),
               "zero_set_tol": g.h ** (1 - g.a)}
    try:
        summary["nonseparation_distance"] = nonseparation_distance(fbs)
    except NotApplicable as exc:
        summary["nonseparation_distance"] = None
        summary["nonseparation_note"] = str(exc)
    pts = np.concatenate([np.reshape(fbs.gamma_plus, (-1, g.dim - 1)),
                          np.reshape(fbs.gamma_minus, (-1, g.dim - 1))])
    if args.center is not None:
        center = np.array(_floats(args.center))
        if len(center) != g.dim - 1:
            raise UsageError(f"--center needs {g.dim - 1} coordinates")
    elif len(pts):
        center = pts[np.argmin(np.linalg.norm(pts, axis=1))]
    else:
        center = None
    rows = []
    if center is not None:
        summary["center"] = center.tolist()
        rmax = 0.5 * (g.radius - float(np.linalg.norm(center)))
        if args.radii:
            radii = np.array(_floats(args.radii))
        else:
            radii = np.geomspace(4 * g.h, rmax, args.n_radii)
        wprof = weiss(field, center, radii, params)
        S, T = s_t_profiles(field, center, radii)
        profs = [wprof, S, T]
        if g.a == 0:
            try:
                profs.append(almgren(field, center, radii))
            except ValueError as exc:
                summary["almgren_note"] = str(exc)
        for prof in profs:
            rows.extend(prof.rows())
        summary["weiss_min_increment"] = float(np.min(np.diff(wprof.values)))
        if g.a != 0:
            hi = min(64 * g.h, rmax)
            nd_radii = np.geomspace(4 * g.h, hi, 9) if hi > 8 * g.h else None
            summary["nondegeneracy"] = {}
            for model in ("power", "power_linear"):
                if nd_radii is None:
                    summary["nondegeneracy"][model] = {"error": "grid too coarse for the fit"}
                    continue
                try:
                    fit = nondegeneracy_fit(field, center, nd_radii, model=model)
                    summary["nondegeneracy"][model] = {
                        "C_plus": fit.C_plus, "C_minus": fit.C_minus,
                        "exponent_plus": fit.exponent_plus,
                        "exponent_minus": fit.exponent_minus,
                        "linear_plus": fit.linear_plus, "linear_minus": fit.linear_minus,
                        "expected": fit.expected, "violations": fit.violations}
                except ValueError as exc:
                    summary["nondegeneracy"][model] = {"error": str(exc)}
    else:
        summary["center"] = None
        summary["note"] = "no free boundary point; profiles skipped"
    run.csv("profiles.csv", ["kind", "center", "r", "value"], rows)
    run.json("summary.json", summary)
    return EXIT_OK


def cmd_reference(args, run):
    from . import kernels

    a = args.a
    if not a < 0:
        raise UsageError("reference solutions are built for a < 0")
    c = kernels.calibrate_c_a(a)
    x = np.linspace(args.x_max / args.samples, args.x_max, args.samples)
    closed = [None] * len(x)
    if args.kind in ("quadrant", "u2"):
        pts = np.stack([x * math.cos(args.theta), x * math.sin(args.theta), 0 * x], axis=1)
        fn = kernels.quadrant_potential if args.kind == "quadrant" else kernels.u2_field
        vals = fn(a, pts, c_a=c)
    elif args.kind == "line_dipole":
        pts = np.stack([x, 0 * x, 0 * x], axis=1)
        vals = kernels.line_dipole_field(a, pts, c)
        closed = kernels.line_dipole_axis(a, x, c)
    elif args.kind == "segment":
        pts = np.stack([x, 0 * x, 0 * x], axis=1)
        vals = kernels.segment_test_function(a, pts, c)
        closed = np.where(x < 1, kernels.segment_test_function_axis(a, np.minimum(x, 1 - 1e-15), c),
                          np.nan)
    else:
        vals = kernels.u2_gradient_fd(a, x, c_a=c)
        closed = kernels.u2_thin_gradient(a, x, c)
    rows = [[float(xi), float(v), "" if cl is None or not np.isfinite(cl) else float(cl)]
            for xi, v, cl in zip(x, vals, closed)]
    run.csv("curve.csv", ["x", "quadrature", "closed_form"], rows)
    run.json("reference.json", {"kind": args.kind, "a": a, "c_a": c,
                                "c_a_reference": 1 / (2 * math.pi)})
    return EXIT_OK


def cmd_stability(args, run):
    from .stability import (truncation_sweep, u2_instability_certificate,
                            ui_instability_check)

    a_values = parse_grid_spec(args.a_grid) if args.a_grid else np.array([args.a])
    if np.any(a_values >= 0) or np.any(a_values <= -1):
        raise UsageError("stability certificates need -1 < a < 0")
    reports = []
    for a in a_values:
        a = float(a)
        if args.target == "u2":
            rep = u2_instability_certificate(a, args.truncation_radius)
        else:
            rep = ui_instability_check(args.i, a, args.resolution, args.truncation_radius)
        reports.append(rep)
    docs = [r.to_dict() for r in reports]
    if len(docs) == 1:
        run.json("certificate.json", docs[0])
    else:
        run.json("certificates.json", docs)
    keys = ["a", "i", "radius", "factor", "dirichlet_term", "boundary_term",
            "form_value", "verdict"]
    run.csv("summary.csv", keys, [[d[k] if d[k] is not None else "" for k in keys] for d in docs])
    if args.radii:
        rows = []
        for a in a_values:
            reps, thr = truncation_sweep(float(a), _floats(args.radii))
            rows.extend([[float(a), r.radius, r.dirichlet_term, r.boundary_term, r.form_value,
                          r.verdict, "" if thr is None else thr] for r in reps])
        run.csv("sweep.csv", ["a", "radius", "dirichlet_term", "boundary_term", "form_value",
                              "verdict", "threshold_radius"], rows)
    return EXIT_OK


def cmd_beta(args, run):
    from .stability import beta_margin, instability_factor

    grid = parse_grid_spec(args.a_grid)
    if np.any(grid <= -1) or np.any(grid >= 0):
        raise UsageError("the a-grid must lie in (-1, 0)")
    rows = [[float(a), beta_margin(float(a)), instability_factor(float(a))] for a in grid]
    run.csv("beta.csv", ["a", "beta_margin", "factor"], rows)
    ok = all(r[1] > 0 for r in rows)
    run.json("summary.json", {"count": len(rows), "all_positive": ok,
                              "min_margin": min(r[1] for r in rows)})
    return EXIT_OK if ok else EXIT_CERTIFICATE


def cmd_report(args, run):
    from .io import listed_artifacts, read_json, run_files

    root = Path(args.runs or args.out)
    rows = []
    for d in sorted(p for p in root.iterdir() if (p / "manifest.json").exists()):
        if d.resolve() == run.path.resolve():
            continue
        man = read_json(d / "manifest.json")
        complete = run_files(d) <= listed_artifacts(d)
        rows.append([d.name, man.get("command"), man.get("status"), man.get("exit_code", ""),
                     len(man.get("artifacts", [])), complete])
    run.csv("runs.csv", ["run", "command", "status", "exit_code", "artifacts",
                         "manifest_complete"], rows)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "analyze": cmd_analyze, "reference": cmd_reference,
            "stability": cmd_stability, "beta": cmd_beta, "report": cmd_report}


def run(args, stamp: str | None = None) -> tuple[int, Path | None]:
    """Execute a parsed command; returns ``(exit_code, run_directory)``."""
    from .io import RunDirectory
    from .kernels import CalibrationError
    from .solver import CollapseError, ConvergenceError, LinearSolveError
    from .stability import CertificateDisagreement, DominationError

    np.random.seed(args.seed)
    rd = RunDirectory(args.out, args.command, _config_echo(args), stamp)
    try:
        code = COMMANDS[args.command](args, rd)
    except UsageError as exc:
        rd.finish("usage_error", EXIT_USAGE, str(exc))
        raise
    except (ConvergenceError, CollapseError, LinearSolveError) as exc:
        log.error("solver failure: %s", exc)
        rd.finish("solver_failure", EXIT_SOLVER, str(exc))
        return EXIT_SOLVER, rd.path
    except (CertificateDisagreement, DominationError, CalibrationError) as exc:
        log.error("certificate failure: %s", exc)
        rd.finish("certificate_failure", EXIT_CERTIFICATE, str(exc))
        return EXIT_CERTIFICATE, rd.path
    rd.finish("ok" if code == EXIT_OK else "failed", code)
    return code, rd.path


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        code, path = run(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if path is not None:
        print(path)
    return code


if __name__ == "__main__":
    sys.exit(main())
