"""Benchmark problem definitions: domains, coefficients, exact solutions and
boundary data.

Boundary labels: C = clamped (deflection and normal slope given), S = simply
supported (deflection and normal bending moment given), F = free (normal
bending moment and effective shear given, plus point forces at free corners).

Exact solutions carry all Cartesian derivatives up to fourth order as
vectorized callables, generated once with sympy.  The singular corner
solutions are defined in polar coordinates with the angle branch cut placed
inside the removed quadrant.
"""

from __future__ import annotations

import numpy as np
import sympy as sp

from .mesh import make_mesh

MAX_DERIV_ORDER = 4


class ExactSolution:
    """A scalar field with derivatives up to order 4.

    d(a, b) returns a vectorized callable for d^(a+b) w / dx^a dy^b.
    """

    def __init__(self, deriv_fns):
        self._d = deriv_fns

    def d(self, a, b):
        return self._d[(a, b)]

    def w(self, x, y):
        return self._d[(0, 0)](x, y)

    def grad(self, x, y):
        return np.stack([self._d[(1, 0)](x, y), self._d[(0, 1)](x, y)], axis=-1)

    def hess(self, x, y):
        wxx = self._d[(2, 0)](x, y)
        wxy = self._d[(1, 1)](x, y)
        wyy = self._d[(0, 2)](x, y)
        out = np.empty(np.shape(wxx) + (2, 2))
        out[..., 0, 0] = wxx
        out[..., 0, 1] = wxy
        out[..., 1, 0] = wxy
        out[..., 1, 1] = wyy
        return out

    def third(self, x, y):
        """Symmetric third-derivative tensor, shape (..., 2, 2, 2)."""
        t = {}
        for a in range(4):
            b = 3 - a
            t[(a, b)] = self._d[(a, b)](x, y)
        out = np.empty(np.shape(t[(3, 0)]) + (2, 2, 2))
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    a = (i == 0) + (j == 0) + (k == 0)
                    out[..., i, j, k] = t[(a, 3 - a)]
        return out


def _vectorize(fn):
    def wrapped(x, y):
        out = fn(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(x)).copy() \
            if np.shape(out) != np.shape(x) else np.asarray(out, dtype=float)
    return wrapped


def solution_from_expr(expr, x=None, y=None):
    """ExactSolution from a sympy expression in Cartesian coordinates."""
    if x is None:
        x, y = sp.symbols("x y")
    fns = {}
    for a in range(MAX_DERIV_ORDER + 1):
        for b in range(MAX_DERIV_ORDER + 1 - a):
            d = sp.diff(expr, x, a, y, b)
            fns[(a, b)] = _vectorize(sp.lambdify((x, y), d, "numpy"))
    return ExactSolution(fns)


def solution_from_polar(expr, r, t, angle_shift):
    """ExactSolution from a sympy expression in polar coordinates (r, t).

    angle_shift: the numeric angle is atan2(y, x), shifted by 2*pi when
    negative if angle_shift is True (branch cut on the positive x-axis side
    of the removed quadrant).
    """
    ct, st = sp.cos(t), sp.sin(t)

    def dx(f):
        return sp.simplify(ct * sp.diff(f, r) - st / r * sp.diff(f, t))

    def dy(f):
        return sp.simplify(st * sp.diff(f, r) + ct / r * sp.diff(f, t))

    table = {(0, 0): expr}
    for order in range(1, MAX_DERIV_ORDER + 1):
        for a in range(order + 1):
            b = order - a
            if a > 0:
                table[(a, b)] = dx(table[(a - 1, b)])
            else:
                table[(a, b)] = dy(table[(0, b - 1)])

    fns = {}
    for key, f in table.items():
        lam = sp.lambdify((r, t), f, "numpy")

        def wrapped(xx, yy, lam=lam):
            xx = np.asarray(xx, dtype=float)
            yy = np.asarray(yy, dtype=float)
            rr = np.hypot(xx, yy)
            # +0.0 clears negative zeros, which would flip the atan2 branch
            tt = np.arctan2(yy + 0.0, xx + 0.0)
            if angle_shift:
                tt = np.where(tt < 0.0, tt + 2.0 * np.pi, tt)
            out = lam(rr, tt)
            return np.broadcast_to(np.asarray(out, dtype=float), np.shape(xx)).copy() \
                if np.shape(out) != np.shape(xx) else np.asarray(out, dtype=float)
        fns[key] = wrapped
    return ExactSolution(fns)


# -- material coefficients -------------------------------------------------

class IdentityCoefficient:
    """C = I (and so C^{-1} = I)."""

    def inv_matrix(self, mesh, k):
        return np.eye(3)

    def alpha(self, mesh, k):
        return 1.0


class PiecewiseScalarCoefficient:
    """C = alpha(x) I with alpha constant on each element (sampled at the
    centroid)."""

    def __init__(self, alpha_fn):
        self._alpha = alpha_fn

    def alpha(self, mesh, k):
        c = mesh.geom(k).centroid
        return float(self._alpha(c[0], c[1]))

    def inv_matrix(self, mesh, k):
        return np.eye(3) / self.alpha(mesh, k)


class IsotropicCoefficient:
    """Kirchhoff plate rigidity: C tau = D((1-nu) tau + nu tr(tau) I)."""

    def __init__(self, E, nu, thickness):
        D = E * thickness ** 3 / (12.0 * (1.0 - nu * nu))
        self._mat = D * np.array([[1.0, nu, 0.0],
                                  [nu, 1.0, 0.0],
                                  [0.0, 0.0, 1.0 - nu]])
        self._inv = np.linalg.inv(self._mat)

    def alpha(self, mesh, k):
        return None

    def inv_matrix(self, mesh, k):
        return self._inv


# -- problem container -----------------------------------------------------

class Problem:
    """A plate bending configuration.

    Attributes and callables (data functions are vectorized over points):

    * initial_mesh() -> Triangulation
    * coeff — material coefficient object
    * branch(mesh, k) -> ExactSolution for element k (None if no exact sol.)
    * f(mesh, k) -> load callable (x, y) on element k
    * w_b(x, y), g_b(x, y, n) — essential data on clamped/supported parts
    * m_b(x, y, n) — normal bending moment on supported/free parts
    * h_b(x, y, n, t) — effective shear on free parts
    * corner_p(x, y, np_, tp, nm, tm) — point force at a free corner, as the
      jump t.sigma.n (outgoing edge frame minus incoming edge frame)
    * relaxation(mesh) — vertex relaxation normals for the extended space
    """

    def __init__(self, name, initial_mesh, coeff, has_exact):
        self.name = name
        self.initial_mesh = initial_mesh
        self.coeff = coeff
        self.has_exact = has_exact
        self.relaxation = lambda mesh: {}

    # defaults: overridden per problem
    def branch(self, mesh, k):
        return None

    def f(self, mesh, k):
        return lambda x, y: np.zeros(np.shape(x))


def _data_from_exact(prob, sol):
    """Install boundary data closures computed from an exact solution with
    C = I (so the bending moment is the Hessian)."""

    def w_b(x, y):
        return sol.w(x, y)

    def g_b(x, y, n):
        return sol.grad(x, y) @ n

    def dt_w_b(x, y, t):
        return sol.grad(x, y) @ t

    def m_b(x, y, n):
        H = sol.hess(x, y)
        return np.einsum('i,...ij,j->...', n, H, n)

    def h_b(x, y, n, t):
        T3 = sol.third(x, y)
        dt_tsn = np.einsum('k,i,j,...ijk->...', t, t, n, T3)
        # n . div sigma = n . grad(laplace w)
        ndiv = np.einsum('i,...ijj->...', n, T3)
        return dt_tsn + ndiv

    def corner_p(x, y, np_, tp, nm, tm):
        H = sol.hess(x, y)
        return float(tp @ H @ np_ - tm @ H @ nm)

    prob.w_b, prob.g_b, prob.dt_w_b = w_b, g_b, dt_w_b
    prob.m_b, prob.h_b, prob.corner_p = m_b, h_b, corner_p


def _zero_data(prob):
    zero1 = lambda x, y: np.zeros(np.shape(x))
    prob.w_b = zero1
    prob.g_b = lambda x, y, n: np.zeros(np.shape(x))
    prob.dt_w_b = lambda x, y, t: np.zeros(np.shape(x))
    prob.m_b = lambda x, y, n: np.zeros(np.shape(x))
    prob.h_b = lambda x, y, n, t: np.zeros(np.shape(x))
    prob.corner_p = lambda x, y, np_, tp, nm, tm: 0.0


# -- L-shaped domain, clamped reentrant corner -----------------------------

SINGULAR_ALPHA = 0.544483736782464


def _lshape_clamped_mesh():
    verts = [(0, 0), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)]
    tris = [(0, 1, 2), (0, 2, 3), (0, 3, 4), (0, 4, 5), (0, 6, 7), (0, 7, 1)]
    labels = [(6, 7, "F", 0), (7, 1, "F", 0), (1, 2, "F", 0), (2, 3, "F", 0),
              (3, 4, "F", 0), (4, 5, "F", 0), (5, 0, "C", 0), (0, 6, "C", 0)]
    return make_mesh(verts, tris, labels)


def lshape_clamped_corner():
    """Square minus the third quadrant; the two cut edges are clamped, the
    rest of the boundary is free.  Singular solution r^(1+alpha) g(phi)."""
    alpha = SINGULAR_ALPHA
    # constant chosen so the deflection and slope vanish on both clamped legs
    C = -np.cos((alpha + 1) * 3 * np.pi / 4) / np.cos((alpha - 1) * 3 * np.pi / 4)
    r, t = sp.symbols("r t", positive=True)
    th = t - sp.pi / 4
    expr = r ** (1 + alpha) * (sp.cos((alpha + 1) * th) + C * sp.cos((alpha - 1) * th))
    sol = solution_from_polar(expr, r, t, angle_shift=False)

    prob = Problem("lshape_clamped", _lshape_clamped_mesh,
                   IdentityCoefficient(), has_exact=True)
    prob.singular_constant = C
    prob.branch = lambda mesh, k: sol
    _data_from_exact(prob, sol)
    return prob


# -- L-shaped domain, simply supported reentrant corner --------------------

def _lshape_ss_mesh():
    verts = [(0, 0), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1)]
    tris = [(0, 1, 2), (0, 2, 3), (0, 3, 4), (0, 4, 5), (0, 5, 6), (0, 6, 7)]
    labels = [(7, 0, "S", 0), (0, 1, "S", 1), (1, 2, "C", 0), (2, 3, "C", 0),
              (3, 4, "C", 0), (4, 5, "C", 0), (5, 6, "C", 0), (6, 7, "C", 0)]
    return make_mesh(verts, tris, labels)


def lshape_simply_supported():
    """Square minus the fourth quadrant; the two cut edges are simply
    supported (zero moment), the rest clamped with inhomogeneous data."""
    r, t = sp.symbols("r t", positive=True)
    expr = r ** sp.Rational(4, 3) * sp.sin(sp.Rational(2, 3) * t)
    sol = solution_from_polar(expr, r, t, angle_shift=True)

    prob = Problem("lshape_ss", _lshape_ss_mesh,
                   IdentityCoefficient(), has_exact=True)
    prob.branch = lambda mesh, k: sol
    _data_from_exact(prob, sol)
    # the normal moment vanishes identically on the supported edges; the
    # generic formula would hit the 0 * inf singularity at the corner
    prob.m_b = lambda x, y, n: np.zeros(np.shape(x))
    return prob


# -- unit square with a jump in the coefficient ----------------------------

def _jump_exprs():
    x, y = sp.symbols("x y")
    denom = sp.Rational(4, 10) - 1
    left = (sp.Rational(288, 100) * x ** 2 - sp.Rational(448, 100) * x
            + sp.Rational(192, 100)) * x ** 2 * y ** 4 * (y - 1) ** 4 / denom
    right = (-sp.Rational(48, 10) * x ** 2 + sp.Rational(64, 10) * x
             - sp.Rational(16, 10)) * (x - 1) ** 2 * y ** 4 * (y - 1) ** 4 / denom
    return x, y, left, right


def jump_square():
    """Fully clamped unit square, C = alpha I with alpha jumping across the
    line x = 0.5; the extended space relaxes every interface vertex."""
    x, y, left, right = _jump_exprs()
    sol_l = solution_from_expr(left, x, y)
    sol_r = solution_from_expr(right, x, y)
    alpha_l, alpha_r = 1.0, 0.2
    # f = divdiv(alpha hess w) = alpha * biharmonic(w) on each side
    f_l = sp.lambdify((x, y), alpha_l * sp.diff(left, x, 4)
                      + 2 * sp.diff(left, x, 2, y, 2) * alpha_l
                      + alpha_l * sp.diff(left, y, 4), "numpy")
    f_r = sp.lambdify((x, y), alpha_r * (sp.diff(right, x, 4)
                      + 2 * sp.diff(right, x, 2, y, 2)
                      + sp.diff(right, y, 4)), "numpy")

    def mesh0():
        from .mesh import unit_square_mesh
        return unit_square_mesh(label="C")

    coeff = PiecewiseScalarCoefficient(lambda cx, cy: alpha_l if cx < 0.5 else alpha_r)
    prob = Problem("jump_square", mesh0, coeff, has_exact=True)
    prob.alpha_left, prob.alpha_right = alpha_l, alpha_r

    def branch(mesh, k):
        return sol_l if mesh.geom(k).centroid[0] < 0.5 else sol_r
    prob.branch = branch

    def f(mesh, k):
        fn = f_l if mesh.geom(k).centroid[0] < 0.5 else f_r
        return _vectorize(fn)
    prob.f = f

    def relaxation(mesh):
        out = {}
        for v in range(mesh.n_verts):
            if abs(mesh.verts[v][0] - 0.5) < 1e-12:
                out[v] = np.array([1.0, 0.0])
        return out
    prob.relaxation = relaxation

    _zero_data(prob)
    return prob


# -- manufactured smooth solution on the unit square -----------------------

def manufactured(expr_str=None, labels="C"):
    """Clamped unit square with a polynomial (or any smooth) exact solution
    given as a sympy expression in x and y."""
    x, y = sp.symbols("x y")
    if expr_str is None:
        expr = x ** 3 * y ** 2 + 2 * x ** 2 * y ** 3 - x ** 5 + y ** 4 + x ** 2 * y ** 2
    else:
        expr = sp.sympify(expr_str, locals={"x": x, "y": y})
    sol = solution_from_expr(expr, x, y)
    f_fn = _vectorize(sp.lambdify(
        (x, y), sp.diff(expr, x, 4) + 2 * sp.diff(expr, x, 2, y, 2) + sp.diff(expr, y, 4),
        "numpy"))

    def mesh0():
        from .mesh import unit_square_mesh
        return unit_square_mesh(label=labels)

    prob = Problem("manufactured", mesh0, IdentityCoefficient(), has_exact=True)
    prob.branch = lambda mesh, k: sol
    prob.f = lambda mesh, k: f_fn
    _data_from_exact(prob, sol)
    return prob


PROBLEMS = {
    "lshape_clamped": lshape_clamped_corner,
    "lshape_ss": lshape_simply_supported,
    "jump_square": jump_square,
    "manufactured": manufactured,
}


def get_problem(name):
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}")
