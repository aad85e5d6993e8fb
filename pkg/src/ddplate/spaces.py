"""Finite element spaces: local bases and global degree-of-freedom maps.

Three spaces appear:

* ``SigmaSpace`` — the symmetric, normal-normal and normal-div continuous
  bending-moment space of piecewise cubics (k = 3).  Optionally relaxes the
  tangential-tangential vertex value at selected vertices into two one-sided
  values (the extended space used across refinement levels and material
  interfaces).
* ``USpace`` — discontinuous piecewise linears for the deflection.
* ``VSpace`` — vector quartics with C^0 gradients at vertices, closing the
  discrete elasticity complex above the stress space.

Local degrees of freedom of the stress element (30 per triangle, k = 3),
with edge i opposite vertex i and (u, v) = (i+1, i+2):

* 0..8    component values (s11, s22, s12) at vertex i -> 3i + j
* 9..20   interior trace coefficients on edge i: 9 + 4i + 2*dir + (m-1),
          dir 0 = n.tau.n, dir 1 = t.tau.n; m = 1, 2 the coefficients of
          lam_u^2 lam_v and lam_u lam_v^2
* 21..29  coefficients of n.div(tau) on edge i: 21 + 3i + m, m = 0, 1, 2 the
          coefficients of lam_u^2, lam_u lam_v, lam_v^2

The local basis is built to be exactly dual to these functionals: an
edge-bubble family carrying the div trace is subtracted from plain monomial
candidates until every other candidate has zero div trace.
"""

from __future__ import annotations

import numpy as np

from .poly import Mat, Poly, n_monomials

N_SIGMA_LOCAL = 30
N_U_LOCAL = 3
N_V_LOCAL = 30


def _check_degree(k):
    if k < 3:
        raise ValueError("polynomial degree k must be at least 3")
    if k != 3:
        raise NotImplementedError("only k = 3 is implemented")


def _div_trace_family(geom):
    """Edge bubbles tau with tau.n = 0 on the whole boundary and
    n_i.div(tau)|e_i = lam_u^2, lam_u lam_v, lam_v^2 (zero on other edges).

    Returns fam[i][m], m ordered like the div-trace dofs.
    """
    lam = [Poly.lam(geom, i) for i in range(3)]
    n, t, h, c = geom.n, geom.t, geom.h, geom.c
    bubble = lam[0] * lam[1] * lam[2]
    fam = []
    for i in range(3):
        u, v = (i + 1) % 3, (i + 2) % 3
        a_u = -h[i] / (n[i] @ t[v]) ** 2
        a_v = -h[i] / (n[i] @ t[u]) ** 2
        T_u = np.outer(t[v], t[v])
        T_v = np.outer(t[u], t[u])
        T_uv = np.outer(t[u], t[v]) + np.outer(t[v], t[u])
        fam.append([
            Mat.outer(geom, (a_u * lam[i]) * (lam[u] * lam[u]), T_u),
            Mat.outer(geom, c[i] * bubble, T_uv),
            Mat.outer(geom, (a_v * lam[i]) * (lam[v] * lam[v]), T_v),
        ])
    return fam


_S_BASIS = (np.array([[1.0, 0.0], [0.0, 0.0]]),
            np.array([[0.0, 0.0], [0.0, 1.0]]),
            np.array([[0.0, 1.0], [1.0, 0.0]]))


def sigma_local_basis(geom, k=3):
    """The 30 dual basis fields of the stress element on one triangle."""
    _check_degree(k)
    lam = [Poly.lam(geom, i) for i in range(3)]
    n, t = geom.n, geom.t
    fam = _div_trace_family(geom)

    def strip_div_trace(tau):
        out = tau
        dv = tau.div()
        for i in range(3):
            coefs = dv.dot(n[i]).edge_coefs(i)
            for m in range(3):
                if coefs[m] != 0.0:
                    out = out - coefs[m] * fam[i][m]
        return out

    basis = [None] * N_SIGMA_LOCAL
    for i in range(3):
        cube = lam[i] * lam[i] * lam[i]
        for j, S in enumerate(_S_BASIS):
            basis[3 * i + j] = strip_div_trace(Mat.outer(geom, cube, S))
    for i in range(3):
        u, v = (i + 1) % 3, (i + 2) % 3
        uuv = lam[u] * lam[u] * lam[v]
        uvv = lam[u] * lam[v] * lam[v]
        Tnn = np.outer(n[i], n[i])
        Tnt = np.outer(n[i], t[i]) + np.outer(t[i], n[i])
        basis[9 + 4 * i + 0] = strip_div_trace(Mat.outer(geom, uuv, Tnn))
        basis[9 + 4 * i + 1] = strip_div_trace(Mat.outer(geom, uvv, Tnn))
        basis[9 + 4 * i + 2] = strip_div_trace(Mat.outer(geom, uuv, Tnt))
        basis[9 + 4 * i + 3] = strip_div_trace(Mat.outer(geom, uvv, Tnt))
    for i in range(3):
        for m in range(3):
            basis[21 + 3 * i + m] = fam[i][m]
    return basis


def sigma_dof_values(geom, tau, k=3):
    """Apply the 30 dof functionals to a matrix field of degree <= 3."""
    _check_degree(k)
    out = np.empty(N_SIGMA_LOCAL)
    eye = np.eye(3)
    for i in range(3):
        M = tau(eye[i])
        out[3 * i + 0] = M[0, 0]
        out[3 * i + 1] = M[1, 1]
        out[3 * i + 2] = M[0, 1]
    dv = tau.div()
    for i in range(3):
        tn_vec = tau.dot_vec(geom.n[i])
        cn = tn_vec.dot(geom.n[i]).raise_to(3).edge_coefs(i)
        ct = tn_vec.dot(geom.t[i]).raise_to(3).edge_coefs(i)
        out[9 + 4 * i + 0] = cn[1]
        out[9 + 4 * i + 1] = cn[2]
        out[9 + 4 * i + 2] = ct[1]
        out[9 + 4 * i + 3] = ct[2]
        out[21 + 3 * i: 24 + 3 * i] = dv.dot(geom.n[i]).raise_to(2).edge_coefs(i)
    return out


def sigma_basis_coefs(geom, k=3):
    """Local basis as a (30, 3, 10) array of degree-3 coefficient rows
    (components s11, s22, s12)."""
    basis = sigma_local_basis(geom, k)
    B = np.empty((N_SIGMA_LOCAL, 3, n_monomials(3)))
    for a, tau in enumerate(basis):
        for c, p in enumerate(tau.components()):
            B[a, c, :] = p.raise_to(3).coef
    return B


def _relax_frame(normal):
    n = np.asarray(normal, dtype=float)
    n = n / np.hypot(*n)
    t = np.array([-n[1], n[0]])
    return n, t


def _relax_matrix(normal):
    """Columns map (b_nn, b_nt, b_tt) in the edge frame to (s11, s22, s12)."""
    n, t = _relax_frame(normal)
    return np.array([
        [n[0] * n[0], 2.0 * n[0] * t[0], t[0] * t[0]],
        [n[1] * n[1], 2.0 * n[1] * t[1], t[1] * t[1]],
        [n[0] * n[1], n[0] * t[1] + n[1] * t[0], t[0] * t[1]],
    ])


def bisection_relaxation(mesh):
    """Relaxation normals at every interior non-initial vertex."""
    boundary_verts = set()
    for e in mesh.boundary_edges():
        boundary_verts.update(int(x) for x in mesh.edges[e])
    return {v: frame[0] for v, frame in mesh.vert_frame.items()
            if v not in boundary_verts}


class SigmaSpace:
    """Global dof map of the stress space on a mesh.

    `relaxed` maps vertex ids to interface normals; at such a vertex the
    tangential-tangential component is stored separately for the elements on
    each side of the interface line.  Vertices whose relaxation would leave
    one side empty stay unrelaxed (the split would add a dangling unknown).
    """

    def __init__(self, mesh, relaxed=None, k=3):
        _check_degree(k)
        self.mesh = mesh
        self.k = k
        nv, ne, nt = mesh.n_verts, mesh.n_edges, mesh.n_tris
        base = 3 * nv + 7 * ne

        stars = None
        self.relaxed = {}
        if relaxed:
            stars = mesh.vertex_stars()
            for vid in sorted(relaxed):
                n, t = _relax_frame(relaxed[vid])
                sides = [(mesh.geom(kk).centroid - mesh.verts[vid]) @ n
                         for kk in stars[vid]]
                if any(s > 0 for s in sides) and any(s <= 0 for s in sides):
                    self.relaxed[vid] = (n, base + len(self.relaxed))
        self.ndof = base + len(self.relaxed)

        self._elem_maps = []
        for kk in range(nt):
            self._elem_maps.append(self._build_elem_map(kk))

    def _build_elem_map(self, kk):
        mesh = self.mesh
        nv = mesh.n_verts
        tri = mesh.tris[kk]
        rows, cols, wts = [], [], []
        centroid = mesh.geom(kk).centroid
        for i in range(3):
            vid = int(tri[i])
            rel = self.relaxed.get(vid)
            if rel is None:
                for c in range(3):
                    rows.append(3 * i + c)
                    cols.append(3 * vid + c)
                    wts.append(1.0)
            else:
                n, extra = rel
                side = (centroid - mesh.verts[vid]) @ n
                tt_dof = 3 * vid + 2 if side > 0 else extra
                M = _relax_matrix(n)
                gdofs = (3 * vid + 0, 3 * vid + 1, tt_dof)
                for c in range(3):
                    for m in range(3):
                        if M[c, m] != 0.0:
                            rows.append(3 * i + c)
                            cols.append(gdofs[m])
                            wts.append(M[c, m])
        for i in range(3):
            e = int(mesh.tri_edges[kk, i])
            ebase = 3 * nv + 7 * e
            u, v = (i + 1) % 3, (i + 2) % 3
            same = int(tri[u]) == int(mesh.edges[e][0])
            for dir_ in range(2):
                for m in range(2):
                    rows.append(9 + 4 * i + 2 * dir_ + m)
                    cols.append(ebase + 2 * dir_ + (m if same else 1 - m))
                    wts.append(1.0)
            for m in range(3):
                rows.append(21 + 3 * i + m)
                cols.append(ebase + 4 + (m if same else 2 - m))
                wts.append(1.0 if same else -1.0)
        return (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
                np.array(wts))

    def elem_map(self, kk):
        """(local rows, global cols, weights) with x_loc = sum w * x_glob."""
        return self._elem_maps[kk]

    def local_coefs(self, kk, x):
        """Local dual-basis coefficients of a global coefficient vector."""
        rows, cols, wts = self._elem_maps[kk]
        out = np.zeros(N_SIGMA_LOCAL)
        np.add.at(out, rows, wts * x[cols])
        return out

    def element_field(self, kk, x, basis_coefs=None):
        """The stress field on element kk as a Mat."""
        if basis_coefs is None:
            basis_coefs = sigma_basis_coefs(self.mesh.geom(kk), self.k)
        loc = self.local_coefs(kk, x)
        comp = np.einsum('a,acm->cm', loc, basis_coefs)
        g = self.mesh.geom(kk)
        return Mat(Poly(g, 3, comp[0]), Poly(g, 3, comp[1]), Poly(g, 3, comp[2]))

    def interpolate(self, fields):
        """Global coefficients of elementwise matrix fields (degree <= 3).

        Returns (x, mismatch): mismatch is the largest disagreement between
        elements about a shared dof — zero (to rounding) exactly when the
        collection lies in the space.
        """
        mesh = self.mesh
        x = np.zeros(self.ndof)
        seen = np.zeros(self.ndof, dtype=bool)
        mismatch = 0.0
        scale = 0.0
        for kk in range(mesh.n_tris):
            vals = sigma_dof_values(mesh.geom(kk), fields[kk], self.k)
            scale = max(scale, np.abs(vals).max())
            tri = mesh.tris[kk]
            centroid = mesh.geom(kk).centroid
            glob = {}
            for i in range(3):
                vid = int(tri[i])
                rel = self.relaxed.get(vid)
                s = vals[3 * i: 3 * i + 3]
                if rel is None:
                    for c in range(3):
                        glob[3 * vid + c] = s[c]
                else:
                    n, extra = rel
                    side = (centroid - mesh.verts[vid]) @ n
                    b = np.linalg.solve(_relax_matrix(n), s)
                    glob[3 * vid + 0] = b[0]
                    glob[3 * vid + 1] = b[1]
                    glob[3 * vid + 2 if side > 0 else extra] = b[2]
            nvert = 3 * mesh.n_verts
            for i in range(3):
                e = int(mesh.tri_edges[kk, i])
                ebase = nvert + 7 * e
                u = (i + 1) % 3
                same = int(tri[u]) == int(mesh.edges[e][0])
                for dir_ in range(2):
                    for m in range(2):
                        g = ebase + 2 * dir_ + (m if same else 1 - m)
                        glob[g] = vals[9 + 4 * i + 2 * dir_ + m]
                for m in range(3):
                    g = ebase + 4 + (m if same else 2 - m)
                    glob[g] = (1.0 if same else -1.0) * vals[21 + 3 * i + m]
            for g, val in glob.items():
                if seen[g]:
                    mismatch = max(mismatch, abs(x[g] - val))
                else:
                    x[g] = val
                    seen[g] = True
        return x, (mismatch / scale if scale > 0 else mismatch)


class USpace:
    """Discontinuous piecewise linears for the deflection (k - 2 = 1)."""

    def __init__(self, mesh, k=3):
        _check_degree(k)
        self.mesh = mesh
        self.ndof = N_U_LOCAL * mesh.n_tris

    def elem_dofs(self, kk):
        return np.arange(N_U_LOCAL * kk, N_U_LOCAL * (kk + 1))

    def element_field(self, kk, x):
        g = self.mesh.geom(kk)
        return Poly(g, 1, x[self.elem_dofs(kk)])


def _v_monomials(geom):
    """Scalar quartic monomial Polys on the triangle (15 of them)."""
    out = []
    for m in range(n_monomials(4)):
        coef = np.zeros(n_monomials(4))
        coef[m] = 1.0
        out.append(Poly(geom, 4, coef))
    return out


def _v_dof_matrix_row(geom, phi):
    """The 30 dof functionals of the gradient-continuous quartic vector space
    applied to a vector field phi = (p, q)."""
    from .poly import _edge_int_weights
    p, q = phi
    out = np.empty(N_V_LOCAL)
    eye = np.eye(3)
    px, py, qx, qy = p.dx(), p.dy(), q.dx(), q.dy()
    for i in range(3):
        lam = eye[i]
        out[6 * i + 0] = p(lam)
        out[6 * i + 1] = q(lam)
        out[6 * i + 2] = px(lam)
        out[6 * i + 3] = py(lam)
        out[6 * i + 4] = qx(lam)
        out[6 * i + 5] = qy(lam)
    dv = px + qy
    w4 = _edge_int_weights(4)
    w4p1 = _edge_int_weights(4)  # deg of div*lam = 4 as well (3+1)
    for i in range(3):
        # average moments of the components (orientation free)
        out[18 + 4 * i + 0] = w4 @ p.edge_coefs(i)
        out[18 + 4 * i + 1] = w4 @ q.edge_coefs(i)
        # moments of div phi against the endpoint coordinates lam_u, lam_v
        dcoef = dv.raise_to(3).edge_coefs(i)
        up = np.zeros(5)
        vp = np.zeros(5)
        up[:4] += dcoef          # multiply by lam_u
        vp[1:] += dcoef          # multiply by lam_v
        out[18 + 4 * i + 2] = w4p1 @ up
        out[18 + 4 * i + 3] = w4p1 @ vp
    return out


def v_local_basis(geom):
    """Dual basis of the 30 vector-quartic dofs as (p, q) Poly pairs."""
    monos = _v_monomials(geom)
    zero = Poly.zero(geom, 4)
    cand = [(m, zero) for m in monos] + [(zero, m) for m in monos]
    D = np.empty((N_V_LOCAL, N_V_LOCAL))
    for j, phi in enumerate(cand):
        D[:, j] = _v_dof_matrix_row(geom, phi)
    C = np.linalg.solve(D, np.eye(N_V_LOCAL))
    basis = []
    for a in range(N_V_LOCAL):
        pc = np.zeros(n_monomials(4))
        qc = np.zeros(n_monomials(4))
        for j in range(15):
            pc += C[j, a] * monos[j].coef
            qc += C[15 + j, a] * monos[j].coef
        basis.append((Poly(geom, 4, pc), Poly(geom, 4, qc)))
    return basis


class VSpace:
    """Vector quartics, gradient-continuous at vertices; 6 dofs per vertex
    and 4 per edge."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.ndof = 6 * mesh.n_verts + 4 * mesh.n_edges

    def elem_map(self, kk):
        mesh = self.mesh
        tri = mesh.tris[kk]
        rows, cols, wts = [], [], []
        for i in range(3):
            for c in range(6):
                rows.append(6 * i + c)
                cols.append(6 * int(tri[i]) + c)
                wts.append(1.0)
        nvert = 6 * mesh.n_verts
        for i in range(3):
            e = int(mesh.tri_edges[kk, i])
            same = int(tri[(i + 1) % 3]) == int(mesh.edges[e][0])
            ebase = nvert + 4 * e
            for c in range(2):
                rows.append(18 + 4 * i + c)
                cols.append(ebase + c)
                wts.append(1.0)
            for m in range(2):
                rows.append(18 + 4 * i + 2 + m)
                cols.append(ebase + 2 + (m if same else 1 - m))
                wts.append(1.0)
        return (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
                np.array(wts))

    def local_coefs(self, kk, x):
        rows, cols, wts = self.elem_map(kk)
        out = np.zeros(N_V_LOCAL)
        np.add.at(out, rows, wts * x[cols])
        return out


def sigma_dim_formula(mesh, k=3):
    _check_degree(k)
    return 3 * mesh.n_verts + 7 * mesh.n_edges


def u_dim_formula(mesh, k=3):
    _check_degree(k)
    return 3 * mesh.n_tris


def v_dim_formula(mesh, k=3):
    _check_degree(k)
    return 6 * mesh.n_verts + 4 * mesh.n_edges
