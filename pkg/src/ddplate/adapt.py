"""Adaptive and uniform refinement drivers with history recording."""

from __future__ import annotations

import time

import numpy as np

from .assembly import DEFAULT_QUAD_ORDER, Discretization
from .estimator import estimate
from .postprocess import error_norms, postprocess_deflection
from .solver import solve_saddle

CSV_COLUMNS = ("iter", "ntri", "ndof_sigma", "ndof_u", "eta41", "eta52",
               "osc_f", "osc_mb", "osc_hb", "err_sigma_L2", "err_sigma_Cinv",
               "err_divdiv", "err_w", "err_Qw", "err_Qw_2h", "err_wstar_2h",
               "marked", "seconds")


class RunHistory:
    """Per-iteration records of a refinement study."""

    def __init__(self):
        self.rows = []
        self.final_mesh = None

    def add(self, **kw):
        row = {c: kw.get(c, float("nan")) for c in CSV_COLUMNS}
        self.rows.append(row)

    def column(self, name):
        return np.array([row[name] for row in self.rows], dtype=float)

    def to_csv(self):
        out = [",".join(CSV_COLUMNS)]
        for row in self.rows:
            cells = []
            for c in CSV_COLUMNS:
                v = row[c]
                if c in ("iter", "ntri", "ndof_sigma", "ndof_u", "marked") \
                        and np.isfinite(v):
                    cells.append(str(int(v)))
                else:
                    cells.append("%.17g" % v)
            out.append(",".join(cells))
        return "\n".join(out) + "\n"

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_csv())


def mark_dorfler(eta2, theta):
    """Minimal-cardinality element set with at least a theta fraction of the
    total squared indicator; ties broken by ascending element id."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    eta2 = np.asarray(eta2, dtype=float)
    total = eta2.sum()
    if not total > 0.0:
        return np.array([], dtype=np.int64)
    order = np.lexsort((np.arange(len(eta2)), -eta2))
    cs = np.cumsum(eta2[order])
    m = int(np.searchsorted(cs, theta * total, side="left"))
    m = min(m, len(eta2) - 1)
    return np.sort(order[: m + 1])


def _record(disc, iteration, compute_errors, t0):
    sol = solve_saddle(disc)
    rep = estimate(disc, sol.x_sigma)
    row = {
        "iter": iteration,
        "ntri": disc.mesh.n_tris,
        "ndof_sigma": disc.sigma.ndof,
        "ndof_u": disc.u.ndof,
        "eta41": rep.eta,
        "eta52": float(np.sqrt(rep.element_eta2.sum())),
        "osc_f": float(np.sqrt(rep.osc_f_sq)),
        "osc_mb": float(np.sqrt(rep.osc_mb_sq)),
        "osc_hb": float(np.sqrt(rep.osc_hb_sq)),
    }
    if compute_errors:
        wstar = postprocess_deflection(disc, sol.x_sigma, sol.x_u)
        row.update(error_norms(disc, sol.x_sigma, sol.x_u, wstar=wstar))
    row["seconds"] = time.time() - t0
    return sol, rep, row


def run_adaptive(problem, theta=0.3, max_dofs=200000, max_iters=25,
                 space="standard", quad_order=DEFAULT_QUAD_ORDER,
                 compute_errors=None):
    """solve -> estimate -> mark -> bisect until the dof or iteration cap."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    if compute_errors is None:
        compute_errors = problem.has_exact
    hist = RunHistory()
    mesh = problem.initial_mesh()
    for it in range(max_iters):
        disc = Discretization(mesh, problem, space=space, quad_order=quad_order)
        t0 = time.time()
        sol, rep, row = _record(disc, it, compute_errors, t0)
        marked = mark_dorfler(rep.element_eta2, theta)
        row["marked"] = len(marked)
        row["seconds"] = time.time() - t0
        hist.add(**row)
        if disc.sigma.ndof >= max_dofs:
            break
        mesh = mesh.bisect(marked)
    hist.final_mesh = mesh
    return hist


def run_uniform(problem, levels, space="standard",
                quad_order=DEFAULT_QUAD_ORDER, refine="bisect",
                compute_errors=None):
    """Uniform refinement study; level 1 is the problem's initial mesh.

    refine='bisect' quadrisects every triangle by two rounds of newest vertex
    bisection; refine='red' uses regular midpoint subdivision (the structured
    family of the uniform benchmark tables)."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if refine not in ("bisect", "red"):
        raise ValueError("refine must be 'bisect' or 'red'")
    if compute_errors is None:
        compute_errors = problem.has_exact
    hist = RunHistory()
    mesh = problem.initial_mesh()
    for lev in range(1, levels + 1):
        disc = Discretization(mesh, problem, space=space, quad_order=quad_order)
        t0 = time.time()
        sol, rep, row = _record(disc, lev, compute_errors, t0)
        row["seconds"] = time.time() - t0
        hist.add(**row)
        if lev < levels:
            mesh = mesh.uniform_refine() if refine == "bisect" \
                else mesh.red_refine()
    hist.final_mesh = mesh
    return hist


def fit_rate(history, quantity, tail=5):
    """Least-squares slope of log(quantity) against log(ndof_sigma) over the
    last `tail` records."""
    q = history.column(quantity)[-tail:]
    n = history.column("ndof_sigma")[-tail:]
    if len(q) < 2:
        raise ValueError("need at least two records")
    if np.any(~(q > 0.0)):
        raise ValueError(f"nonpositive values in {quantity}")
    return float(np.polyfit(np.log(n), np.log(q), 1)[0])


def pair_orders(history, quantity):
    """Successive-pair orders log2(e_i / e_{i+1}) for a uniform study."""
    q = history.column(quantity)
    return np.log2(q[:-1] / q[1:])
