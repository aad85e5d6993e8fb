"""Polynomial algebra in barycentric coordinates on a physical triangle.

Scalar, vector and symmetric-matrix valued polynomials are stored as
coefficient arrays over the homogeneous monomials lam1^a lam2^b lam3^c with
a+b+c = d.  All algebra is coefficient-exact; integration of monomials over
the triangle or its edges uses the closed factorial formulas, so kernel
identities (e.g. divdiv o sym_curl = 0) hold to rounding error.
"""

from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_QUAD_ORDER = 40


@lru_cache(maxsize=None)
def exponents(d):
    """Exponent triples (a,b,c) with a+b+c=d, in a fixed canonical order."""
    out = [(a, b, d - a - b) for a in range(d, -1, -1) for b in range(d - a, -1, -1)]
    return np.array(out, dtype=np.int64).reshape(-1, 3)


@lru_cache(maxsize=None)
def _index_of(d):
    return {tuple(e): m for m, e in enumerate(exponents(d))}


def n_monomials(d):
    return (d + 1) * (d + 2) // 2


@lru_cache(maxsize=None)
def _raise_matrix(d):
    """Matrix R with (R @ coef) the coefficients of (lam1+lam2+lam3)*p."""
    idx = _index_of(d + 1)
    E = exponents(d)
    R = np.zeros((n_monomials(d + 1), n_monomials(d)))
    for m, e in enumerate(E):
        for i in range(3):
            e2 = e.copy()
            e2[i] += 1
            R[idx[tuple(e2)], m] += 1.0
    return R


@lru_cache(maxsize=None)
def _mul_table(d1, d2):
    """Sparse triple list (m1, m2, mout) for monomial products."""
    idx = _index_of(d1 + d2)
    rows = []
    for m1, e1 in enumerate(exponents(d1)):
        for m2, e2 in enumerate(exponents(d2)):
            rows.append((m1, m2, idx[tuple(e1 + e2)]))
    return np.array(rows, dtype=np.int64)


@lru_cache(maxsize=None)
def _dlam_matrix(d, i):
    """Matrix for the formal derivative d/dlam_i, degree d -> d-1."""
    if d == 0:
        return np.zeros((1, 1))
    idx = _index_of(d - 1)
    D = np.zeros((n_monomials(d - 1), n_monomials(d)))
    for m, e in enumerate(exponents(d)):
        if e[i] > 0:
            e2 = e.copy()
            e2[i] -= 1
            D[idx[tuple(e2)], m] = e[i]
    return D


@lru_cache(maxsize=None)
def _tri_int_weights(d):
    """w with w @ coef = integral over the unit-area-normalized triangle.

    Exact formula: int_K lam^(a,b,c) = 2|K| a! b! c! / (a+b+c+2)!.  The
    returned weights omit the 2|K| factor.
    """
    E = exponents(d)
    f = factorial(d + 2)
    return np.array([factorial(a) * factorial(b) * factorial(c) / f for a, b, c in E])


@lru_cache(maxsize=None)
def _edge_int_weights(d):
    """w with w @ c = integral over an edge of unit length.

    c are the coefficients of a homogeneous polynomial sum_j c[j] u^(d-j) v^j
    in the two endpoint barycentric coordinates; int_e u^a v^b = L a! b!/(a+b+1)!.
    """
    f = factorial(d + 1)
    return np.array([factorial(d - j) * factorial(j) / f for j in range(d + 1)])


class TriGeom:
    """Geometry of one physical triangle.

    Vertices are counterclockwise.  Edge i is opposite vertex i; n[i] is its
    outward unit normal, t[i] = rot90(n[i]) the tangent (ccw traversal),
    h[i] = 2|K|/|e_i| the height, and grad_lam[i] = -n[i]/h[i].
    """

    __slots__ = ("verts", "area", "edge_len", "n", "t", "h", "grad_lam", "c", "centroid")

    def __init__(self, verts):
        v = np.asarray(verts, dtype=float)
        if v.shape != (3, 2):
            raise ValueError("expected 3 vertices in 2D")
        d1, d2 = v[1] - v[0], v[2] - v[0]
        det = d1[0] * d2[1] - d1[1] * d2[0]
        if det <= 0:
            raise ValueError("triangle not counterclockwise or degenerate")
        self.verts = v
        self.area = 0.5 * det
        self.centroid = v.mean(axis=0)
        n = np.empty((3, 2))
        t = np.empty((3, 2))
        el = np.empty(3)
        for i in range(3):
            a, b = v[(i + 1) % 3], v[(i + 2) % 3]
            d = b - a
            el[i] = np.hypot(*d)
            tt = d / el[i]
            t[i] = tt
            n[i] = np.array([tt[1], -tt[0]])  # outward for ccw traversal
        self.n, self.t, self.edge_len = n, t, el
        self.h = 2.0 * self.area / el
        self.grad_lam = -n / self.h[:, None]
        c = np.empty(3)
        for i in range(3):
            c[i] = -self.h[i] / (2.0 * (n[i] @ t[(i + 1) % 3]) * (n[i] @ t[(i + 2) % 3]))
        self.c = c

    def barycentric(self, x):
        """Barycentric coordinates of Cartesian points, shape (..., 2) -> (..., 3)."""
        x = np.asarray(x, dtype=float)
        A = np.column_stack([self.verts[1] - self.verts[0], self.verts[2] - self.verts[0]])
        sol = np.linalg.solve(A, (x - self.verts[0]).reshape(-1, 2).T).T
        lam = np.empty(x.reshape(-1, 2).shape[:-1] + (3,))
        lam[..., 1] = sol[..., 0]
        lam[..., 2] = sol[..., 1]
        lam[..., 0] = 1.0 - sol[..., 0] - sol[..., 1]
        return lam.reshape(x.shape[:-1] + (3,))

    def point(self, lam):
        """Cartesian point(s) from barycentric coordinates."""
        lam = np.asarray(lam, dtype=float)
        return lam @ self.verts


class Poly:
    """Scalar polynomial on one triangle, homogeneous-degree-d barycentric form."""

    __slots__ = ("geom", "deg", "coef")

    def __init__(self, geom, deg, coef):
        self.geom = geom
        self.deg = int(deg)
        coef = np.asarray(coef, dtype=float)
        if coef.shape != (n_monomials(self.deg),):
            raise ValueError("coefficient length mismatch")
        self.coef = coef

    @classmethod
    def zero(cls, geom, deg=0):
        return cls(geom, deg, np.zeros(n_monomials(deg)))

    @classmethod
    def const(cls, geom, value):
        return cls(geom, 0, np.array([float(value)]))

    @classmethod
    def lam(cls, geom, i):
        c = np.zeros(3)
        c[_index_of(1)[tuple(np.eye(3, dtype=np.int64)[i])]] = 1.0
        return cls(geom, 1, c)

    def raise_to(self, d):
        if d < self.deg:
            raise ValueError("cannot lower degree")
        c = self.coef
        for dd in range(self.deg, d):
            c = _raise_matrix(dd) @ c
        return Poly(self.geom, d, c)

    def _pair(self, other):
        if isinstance(other, (int, float)):
            other = Poly.const(self.geom, other)
        if other.geom is not self.geom:
            raise ValueError("polynomials live on different triangles")
        d = max(self.deg, other.deg)
        return self.raise_to(d), other.raise_to(d)

    def __add__(self, other):
        p, q = self._pair(other)
        return Poly(p.geom, p.deg, p.coef + q.coef)

    __radd__ = __add__

    def __sub__(self, other):
        p, q = self._pair(other)
        return Poly(p.geom, p.deg, p.coef - q.coef)

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __neg__(self):
        return Poly(self.geom, self.deg, -self.coef)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Poly(self.geom, self.deg, self.coef * other)
        if other.geom is not self.geom:
            raise ValueError("polynomials live on different triangles")
        tab = _mul_table(self.deg, other.deg)
        out = np.zeros(n_monomials(self.deg + other.deg))
        np.add.at(out, tab[:, 2], self.coef[tab[:, 0]] * other.coef[tab[:, 1]])
        return Poly(self.geom, self.deg + other.deg, out)

    __rmul__ = __mul__

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        E = exponents(self.deg)
        mono = np.prod(lam[..., None, :] ** E, axis=-1)
        return mono @ self.coef

    def dlam(self, i):
        d = max(self.deg - 1, 0)
        return Poly(self.geom, d, _dlam_matrix(self.deg, i) @ self.coef if self.deg else np.zeros(1))

    def ddir(self, vec):
        """Directional Cartesian derivative along the constant vector vec."""
        out = Poly.zero(self.geom, max(self.deg - 1, 0))
        for i in range(3):
            w = float(self.geom.grad_lam[i] @ np.asarray(vec, dtype=float))
            if w != 0.0:
                out = out + w * self.dlam(i)
        return out

    def dx(self):
        return self.ddir((1.0, 0.0))

    def dy(self):
        return self.ddir((0.0, 1.0))

    def grad(self):
        return Vec(self.dx(), self.dy())

    def integrate(self):
        return 2.0 * self.geom.area * (_tri_int_weights(self.deg) @ self.coef)

    def edge_coefs(self, i):
        """Restriction to edge i as coefficients of lam_u^(d-j) lam_v^j.

        (u, v) = (i+1, i+2) mod 3, j = 0..d.
        """
        E = exponents(self.deg)
        u, v = (i + 1) % 3, (i + 2) % 3
        out = np.zeros(self.deg + 1)
        keep = E[:, i] == 0
        out[E[keep, v]] = self.coef[keep]
        return out

    def edge_integral(self, i):
        return self.geom.edge_len[i] * (_edge_int_weights(self.deg) @ self.edge_coefs(i))


def edge_poly_deriv(coefs):
    """d/dv of p(v) = sum_j c[j] u^(d-j) v^j with u = 1 - v.

    Returns degree d-1 homogeneous coefficients (of u^(d-1-j) v^j).  For an
    edge of length L parametrized by arclength, v = s/L, so the caller scales
    by 1/L to get d/ds.
    """
    c = np.asarray(coefs, dtype=float)
    d = len(c) - 1
    if d == 0:
        return np.zeros(1)
    out = np.zeros(d)
    for j in range(d + 1):
        if j > 0:
            out[j - 1] += c[j] * j
        if d - j > 0:
            out[j] -= c[j] * (d - j)
    return out


class Vec:
    """Vector-valued polynomial (2 components)."""

    __slots__ = ("x", "y")

    def __init__(self, x, y):
        d = max(x.deg, y.deg)
        self.x = x.raise_to(d)
        self.y = y.raise_to(d)

    @property
    def geom(self):
        return self.x.geom

    @property
    def deg(self):
        return self.x.deg

    def __add__(self, other):
        return Vec(self.x + other.x, self.y + other.y)

    def __sub__(self, other):
        return Vec(self.x - other.x, self.y - other.y)

    def __mul__(self, s):
        return Vec(self.x * s, self.y * s)

    __rmul__ = __mul__

    def __call__(self, lam):
        return np.stack([self.x(lam), self.y(lam)], axis=-1)

    def dot(self, vec):
        return float(vec[0]) * self.x + float(vec[1]) * self.y

    def div(self):
        return self.x.dx() + self.y.dy()


class Mat:
    """Symmetric-matrix-valued polynomial with components (s11, s22, s12)."""

    __slots__ = ("s11", "s22", "s12")

    def __init__(self, s11, s22, s12):
        d = max(s11.deg, s22.deg, s12.deg)
        self.s11 = s11.raise_to(d)
        self.s22 = s22.raise_to(d)
        self.s12 = s12.raise_to(d)

    @property
    def geom(self):
        return self.s11.geom

    @property
    def deg(self):
        return self.s11.deg

    @classmethod
    def from_const(cls, geom, M):
        M = np.asarray(M, dtype=float)
        return cls(Poly.const(geom, M[0, 0]), Poly.const(geom, M[1, 1]),
                   Poly.const(geom, 0.5 * (M[0, 1] + M[1, 0])))

    @classmethod
    def outer(cls, geom, p, M):
        """p * M for a scalar Poly p and constant symmetric matrix M."""
        M = np.asarray(M, dtype=float)
        return cls(p * M[0, 0], p * M[1, 1], p * 0.5 * (M[0, 1] + M[1, 0]))

    def components(self):
        return self.s11, self.s22, self.s12

    def __add__(self, other):
        return Mat(self.s11 + other.s11, self.s22 + other.s22, self.s12 + other.s12)

    def __sub__(self, other):
        return Mat(self.s11 - other.s11, self.s22 - other.s22, self.s12 - other.s12)

    def __mul__(self, s):
        return Mat(self.s11 * s, self.s22 * s, self.s12 * s)

    __rmul__ = __mul__

    def __call__(self, lam):
        a = self.s11(lam)
        b = self.s22(lam)
        c = self.s12(lam)
        out = np.empty(np.shape(a) + (2, 2))
        out[..., 0, 0] = a
        out[..., 1, 1] = b
        out[..., 0, 1] = c
        out[..., 1, 0] = c
        return out

    def dot_vec(self, vec):
        """tau @ vec for a constant vector, as a Vec."""
        v0, v1 = float(vec[0]), float(vec[1])
        return Vec(self.s11 * v0 + self.s12 * v1, self.s12 * v0 + self.s22 * v1)

    def div(self):
        return Vec(self.s11.dx() + self.s12.dy(), self.s12.dx() + self.s22.dy())

    def rot(self):
        """Row-wise rot: (dx s12 - dy s11, dx s22 - dy s12)."""
        return Vec(self.s12.dx() - self.s11.dy(), self.s22.dx() - self.s12.dy())

    def divdiv(self):
        return self.div().div()

    def frobenius(self, other):
        """Pointwise double contraction tau : sigma as a Poly."""
        return (self.s11 * other.s11 + self.s22 * other.s22
                + 2.0 * (self.s12 * other.s12))


def hessian(p):
    """Hessian of a scalar Poly as a Mat."""
    gx, gy = p.dx(), p.dy()
    return Mat(gx.dx(), gy.dy(), gx.dy())


def sym_curl(v):
    """sym curl of a Vec: [[dy v1, (dy v2 - dx v1)/2], [., -dx v2]]."""
    return Mat(v.x.dy(), -v.y.dx(), 0.5 * (v.y.dy() - v.x.dx()))


def eps(v):
    """Symmetric gradient of a Vec."""
    return Mat(v.x.dx(), v.y.dy(), 0.5 * (v.x.dy() + v.y.dx()))


@lru_cache(maxsize=None)
def quad_triangle(order):
    """Quadrature rule on the reference barycentric triangle.

    Returns (points, weights): barycentric points (m,3) and weights summing to
    1 (multiply by |K| for a physical triangle).  Exact for total degree
    >= order; built from a collapsed Gauss-Jacobi x Gauss-Legendre product.
    """
    if order > MAX_QUAD_ORDER:
        raise ValueError(f"quadrature order {order} exceeds supported maximum {MAX_QUAD_ORDER}")
    n = max(1, order // 2 + 1)
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xl, wl = roots_legendre(n)
    # map to [0,1]
    xj = 0.5 * (xj + 1.0)
    wj = wj / 4.0  # includes the Jacobi weight normalization on [0,1]
    xl = 0.5 * (xl + 1.0)
    wl = 0.5 * wl
    pts = []
    wts = []
    for a, wa in zip(xj, wj):
        for b, wb in zip(xl, wl):
            # Duffy: lam1 = a, lam2 = (1-a) b, lam3 = 1 - lam1 - lam2
            lam1 = a
            lam2 = (1.0 - a) * b
            pts.append((lam1, lam2, 1.0 - lam1 - lam2))
            wts.append(wa * wb)
    pts = np.array(pts)
    wts = np.array(wts)
    wts *= 1.0 / wts.sum()
    return pts, wts


@lru_cache(maxsize=None)
def quad_edge(order):
    """Gauss rule on [0,1]; returns (s nodes, weights summing to 1)."""
    if order > 2 * MAX_QUAD_ORDER:
        raise ValueError(f"edge quadrature order {order} not supported")
    n = max(1, order // 2 + 1)
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w
