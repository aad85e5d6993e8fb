"""Command-line driver: uniform/adaptive studies and verification suites.

Exit codes: 0 ok, 1 usage error, 2 numeric failure, 3 verification failure.
Options can come from flags or a key=value config file (flags win).
"""

from __future__ import annotations

import argparse
import os
import sys

from .adapt import pair_orders, run_adaptive, run_uniform
from .mesh import MeshError, load_mesh, unit_square_mesh
from .postprocess import PostprocessError
from .problems import (IdentityCoefficient, PROBLEMS, Problem, _zero_data,
                       get_problem)
from .solver import SolverError
from .verify import run_all

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3

RATE_COLUMNS = ("err_sigma_L2", "err_divdiv", "err_w", "err_Qw",
                "err_Qw_2h", "err_wstar_2h", "eta41")

PLOT_SCRIPT = """\
#!/usr/bin/env python3
# Log-log convergence history plot; reads history.csv from this directory.
import csv
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open("history.csv")))
N = [float(r["ndof_sigma"]) for r in rows]
series = ["err_sigma_L2", "err_w", "err_wstar_2h", "eta41"]
fig, ax = plt.subplots()
for s in series:
    y = [float(r[s]) for r in rows]
    if all(v == v and v > 0 for v in y):
        ax.loglog(N, y, marker="o", label=s)
for slope, style in ((-1.0, "--"), (-2.0, ":")):
    ref = [y0 := float(rows[0]["eta41"]), *[y0 * (n / N[0]) ** slope
                                            for n in N[1:]]]
    ax.loglog(N, ref, style, color="gray", label=f"slope {slope:g}")
ax.set_xlabel("stress dofs N")
ax.set_ylabel("error / estimator")
ax.legend()
fig.savefig("history.png", dpi=150)
print("wrote history.png")
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so we control exit codes."""

    def error(self, message):
        raise UsageError(message)


def _build_parser():
    p = _Parser(prog="ddplate", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--config", help="key=value file with defaults")
        sp.add_argument("--problem", help="built-in problem name")
        sp.add_argument("--mesh", help="mesh file (replaces the initial mesh)")
        sp.add_argument("--k", type=int, default=3)
        sp.add_argument("--space", choices=("standard", "extended"),
                        default="standard")
        sp.add_argument("--quad-order", type=int, default=10)
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--threads", type=int, default=0,
                        help="BLAS thread cap (0 = library default)")

    su = sub.add_parser("uniform", help="uniform refinement study")
    common(su)
    su.add_argument("--levels", type=int, default=4)
    su.add_argument("--refine", choices=("bisect", "red"), default="bisect")

    sa = sub.add_parser("adaptive", help="adaptive refinement study")
    common(sa)
    sa.add_argument("--theta", type=float, default=0.3)
    sa.add_argument("--max-dofs", type=int, default=200000)
    sa.add_argument("--max-iters", type=int, default=100)

    sv = sub.add_parser("verify", help="structural verification suites")
    common(sv)
    return p


def _apply_config(args, argv):
    """Fill values from a key=value file; keys given as flags keep priority."""
    if not getattr(args, "config", None):
        return
    try:
        with open(args.config) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}")
    defaults = {}
    for ln, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {ln}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        defaults[key.replace("-", "_")] = val
    flagged = set()
    for tok in argv:
        if tok.startswith("--"):
            flagged.add(tok[2:].split("=", 1)[0].replace("-", "_"))
    casts = {"k": int, "quad_order": int, "levels": int, "threads": int,
             "max_dofs": int, "max_iters": int, "theta": float}
    for key, val in defaults.items():
        if key in flagged or not hasattr(args, key):
            continue
        args.__dict__[key] = casts.get(key, str)(val)


def _limit_threads(n):
    if n and n > 0:
        try:
            from threadpoolctl import threadpool_limits
            threadpool_limits(limits=n)
        except ImportError:
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                        "MKL_NUM_THREADS"):
                os.environ[var] = str(n)


def _resolve_problem(args):
    if args.k != 3:
        raise UsageError("only k = 3 is implemented")
    if args.problem:
        try:
            prob = get_problem(args.problem)
        except ValueError as exc:
            raise UsageError(str(exc))
    else:
        prob = Problem("custom", unit_square_mesh, IdentityCoefficient(),
                       has_exact=False)
        _zero_data(prob)
    if args.mesh:
        try:
            with open(args.mesh) as fh:
                mesh = load_mesh(fh.read())
        except (OSError, MeshError) as exc:
            raise UsageError(f"cannot load mesh: {exc}")
        prob.initial_mesh = lambda: mesh
    elif not args.problem and args.command != "verify":
        raise UsageError("need --problem or --mesh")
    return prob


def _rate_table(hist):
    cols = [c for c in RATE_COLUMNS
            if all(v == v and v > 0 for v in hist.column(c))]
    lines = ["level  ndof_sigma  " + "  ".join(
        f"{c:>14s} {'order':>6s}" for c in cols)]
    orders = {c: pair_orders(hist, c) for c in cols}
    for i, row in enumerate(hist.rows):
        cells = [f"{int(row['iter']):>5d}", f"{int(row['ndof_sigma']):>10d}"]
        for c in cols:
            o = f"{orders[c][i - 1]:6.2f}" if i > 0 else "     -"
            cells.append(f"{row[c]:14.6e} {o}")
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"


def cmd_uniform(args):
    if args.levels < 1:
        raise UsageError("--levels must be >= 1")
    prob = _resolve_problem(args)
    hist = run_uniform(prob, args.levels, space=args.space,
                       quad_order=args.quad_order, refine=args.refine)
    os.makedirs(args.out, exist_ok=True)
    hist.write_csv(os.path.join(args.out, "history.csv"))
    with open(os.path.join(args.out, "rates.txt"), "w") as fh:
        fh.write(_rate_table(hist))
    print(_rate_table(hist), end="")
    return EXIT_OK


def cmd_adaptive(args):
    if not 0.0 < args.theta < 1.0:
        raise UsageError("--theta must lie in (0, 1)")
    if args.max_dofs < 1:
        raise UsageError("--max-dofs must be positive")
    prob = _resolve_problem(args)
    hist = run_adaptive(prob, theta=args.theta, max_dofs=args.max_dofs,
                        max_iters=args.max_iters, space=args.space,
                        quad_order=args.quad_order)
    os.makedirs(args.out, exist_ok=True)
    hist.write_csv(os.path.join(args.out, "history.csv"))
    with open(os.path.join(args.out, "plot_history.py"), "w") as fh:
        fh.write(PLOT_SCRIPT)
    with open(os.path.join(args.out, "final_mesh.txt"), "w") as fh:
        fh.write(hist.final_mesh.to_text())
    last = hist.rows[-1]
    print(f"{len(hist.rows)} iterations, {int(last['ntri'])} triangles, "
          f"{int(last['ndof_sigma'])} stress dofs, eta {last['eta41']:.6e}")
    return EXIT_OK


def cmd_verify(args):
    prob = _resolve_problem(args)
    mesh = prob.initial_mesh()
    reports = run_all(mesh, k=args.k)
    os.makedirs(args.out, exist_ok=True)
    text = "\n\n".join(rep.to_text() for rep in reports) + "\n"
    with open(os.path.join(args.out, "verify.txt"), "w") as fh:
        fh.write(text)
    with open(os.path.join(args.out, "verify.csv"), "w") as fh:
        for rep in reports:
            fh.write(rep.to_csv())
    print(text, end="")
    return EXIT_OK if all(rep.passed for rep in reports) else EXIT_VERIFY


def main(argv=None):
    parser = _build_parser()
    if argv is None:
        argv = sys.argv[1:]
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command (uniform, adaptive or verify)")
        _apply_config(args, argv)
        _limit_threads(args.threads)
        handler = {"uniform": cmd_uniform, "adaptive": cmd_adaptive,
                   "verify": cmd_verify}[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"ddplate: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, PostprocessError, MeshError, ValueError,
            FloatingPointError) as exc:
        print(f"ddplate: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
