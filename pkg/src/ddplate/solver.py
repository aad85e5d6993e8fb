"""Direct solution of the reduced symmetric indefinite saddle system."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu


class SolverError(Exception):
    pass


class Solution:
    """Stress coefficients (constraint-expanded), deflection coefficients and
    the relative algebraic residual of the reduced system."""

    __slots__ = ("x_sigma", "x_u", "residual", "ndof_free")

    def __init__(self, x_sigma, x_u, residual, ndof_free):
        self.x_sigma = x_sigma
        self.x_u = x_u
        self.residual = residual
        self.ndof_free = ndof_free


def solve_saddle(disc, tol=1e-9):
    """Assemble, reduce and solve the mixed system for a Discretization."""
    M, Bdd, b_sigma, b_u = disc.assemble()
    Z, xp = disc.reduce_constraints()
    A = (Z.T @ M @ Z).tocsr()
    Bz = (Bdd @ Z).tocsr()
    n1 = A.shape[0]
    n2 = Bz.shape[0]
    K = sps.bmat([[A, -Bz.T], [-Bz, None]], format="csc")
    rhs = np.concatenate([Z.T @ (b_sigma - M @ xp), -(b_u - Bdd @ xp)])

    # symmetric equilibration keeps the factorization accurate on strongly
    # graded meshes
    d = np.abs(K).max(axis=0).toarray().ravel()
    d[d == 0.0] = 1.0
    d = 1.0 / np.sqrt(d)
    D = sps.diags(d)
    Ks = (D @ K @ D).tocsc()
    try:
        lu = splu(Ks)
    except RuntimeError as exc:
        raise SolverError(f"saddle factorization failed: {exc}") from exc

    rs = d * rhs
    nrmK = np.abs(Ks).sum(axis=0).max()

    def backward_error(y):
        # normwise backward error: solution-norm aware, so it stays meaningful
        # on strongly graded meshes where |y| >> |rhs|
        den = max(np.linalg.norm(rs) + nrmK * np.linalg.norm(y), 1e-300)
        return np.linalg.norm(rs - Ks @ y) / den

    y = lu.solve(rs)
    res = backward_error(y)
    for _ in range(5):  # iterative refinement
        if not res > 0.01 * tol:
            break
        y2 = y + lu.solve(rs - Ks @ y)
        res2 = backward_error(y2)
        if not res2 < res:
            break
        y, res = y2, res2
    if not np.isfinite(res) or res > tol:
        raise SolverError(f"relative residual {res:.3e} exceeds {tol:.1e}")
    sol = d * y
    x_sigma = Z @ sol[:n1] + xp
    return Solution(x_sigma, sol[n1:], res, n1 + n2)
