"""Assembly of the mixed system and of the essential boundary constraints.

The saddle point problem reads: find (sigma_h, w_h) with

    (C^{-1} sigma_h, tau) - (divdiv tau, w_h) = tr_b(tau)   for all tau,
    (divdiv sigma_h, v)                       = (f, v)      for all v,

where tr_b collects the clamped/supported boundary data.  Element integrals
of polynomial quantities use the exact factorial formulas; only data terms
are integrated by quadrature.

Essential conditions (normal bending moment on supported/free parts, the
effective-shear coupling on free parts, point forces at free corners) are
linear constraints on the global stress dofs.  They are eliminated into an
affine parametrization x = Z x_free + x_part.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sps

from .poly import (_dlam_matrix, _edge_int_weights, _mul_table, _tri_int_weights,
                   n_monomials, quad_edge, quad_triangle)
from .spaces import (N_SIGMA_LOCAL, N_U_LOCAL, SigmaSpace, USpace,
                     sigma_basis_coefs)

DEFAULT_QUAD_ORDER = 10  # 2k + 4 for k = 3
FROB_WEIGHTS = np.array([1.0, 1.0, 2.0])

_SHAPE_CACHE = {}


@lru_cache(maxsize=None)
def _pair_int_weights(d1, d2):
    """P with integral over K of p*q = 2|K| * p^T P q for degrees d1, d2."""
    tab = _mul_table(d1, d2)
    w = _tri_int_weights(d1 + d2)
    P = np.zeros((n_monomials(d1), n_monomials(d2)))
    np.add.at(P, (tab[:, 0], tab[:, 1]), w[tab[:, 2]])
    return P


def _cart_deriv_matrix(geom, d, comp):
    """Coefficient matrix of d/dx (comp=0) or d/dy (comp=1), degree d -> d-1."""
    M = np.zeros((n_monomials(d - 1), n_monomials(d)))
    for i in range(3):
        M += geom.grad_lam[i, comp] * _dlam_matrix(d, i)
    return M


def divdiv_coefs(geom, B):
    """Degree-1 coefficients of divdiv of each basis field in B (n, 3, 10)."""
    Dx3 = _cart_deriv_matrix(geom, 3, 0)
    Dy3 = _cart_deriv_matrix(geom, 3, 1)
    Dx2 = _cart_deriv_matrix(geom, 2, 0)
    Dy2 = _cart_deriv_matrix(geom, 2, 1)
    out = (B[:, 0, :] @ (Dx2 @ Dx3).T
           + B[:, 1, :] @ (Dy2 @ Dy3).T
           + 2.0 * B[:, 2, :] @ (Dx2 @ Dy3).T)
    return out


def _edge_shape_values(deg, s):
    """Values of the homogeneous edge basis u^(deg-j) v^j at v = s."""
    u = 1.0 - s
    return np.stack([u ** (deg - j) * s ** j for j in range(deg + 1)], axis=-1)


@lru_cache(maxsize=None)
def _edge_gram(deg):
    """G[j,l] = integral over a unit edge of b_j b_l for the degree-deg basis."""
    w = _edge_int_weights(2 * deg)
    G = np.empty((deg + 1, deg + 1))
    for j in range(deg + 1):
        for l in range(deg + 1):
            # b_j * b_l has coefficient 1 on u^(2deg-j-l) v^(j+l)
            G[j, l] = w[j + l]
    return G


_DERIV3 = None


def _edge_deriv_matrix():
    """D with D @ c the degree-2 coefficients of d/dv of a cubic edge poly."""
    global _DERIV3
    if _DERIV3 is None:
        D = np.zeros((3, 4))
        for j in range(4):
            if j > 0:
                D[j - 1, j] += j
            if j < 3:
                D[j, j] -= 3 - j
        _DERIV3 = D
    return _DERIV3


def edge_moment_interpolant(s, w, mA, mB, mb):
    """Cubic edge interpolant of a normal-moment trace: matches the endpoint
    values and the moments against the linear edge basis.  (s, w) is a unit
    edge quadrature rule and mb the trace values at s."""
    A = np.empty((4, 4))
    rhs = np.empty(4)
    A[0] = [1.0, 0.0, 0.0, 0.0]
    A[1] = [0.0, 0.0, 0.0, 1.0]
    rhs[0], rhs[1] = mA, mB
    w4 = _edge_int_weights(4)
    sh1 = _edge_shape_values(1, s)
    for li, shift in enumerate((0, 1)):
        A[2 + li] = [w4[j + shift] for j in range(4)]
        rhs[2 + li] = (w * mb) @ sh1[:, li]
    return np.linalg.solve(A, rhs)


def _nn_weights(n):
    """Vertex-dof weights of the value n^T sigma(a) n."""
    return np.array([n[0] * n[0], n[1] * n[1], 2.0 * n[0] * n[1]])


def _tn_weights(t, n):
    """Vertex-dof weights of the value t^T sigma(a) n."""
    return np.array([t[0] * n[0], t[1] * n[1], t[0] * n[1] + t[1] * n[0]])


class Discretization:
    """Mesh + problem + spaces, with cached per-element data."""

    def __init__(self, mesh, problem, space="standard", quad_order=DEFAULT_QUAD_ORDER):
        if space not in ("standard", "extended"):
            raise ValueError("space must be 'standard' or 'extended'")
        self.mesh = mesh
        self.problem = problem
        self.space = space
        self.quad_order = quad_order
        relax = problem.relaxation(mesh) if space == "extended" else None
        if relax:
            for e in mesh.boundary_edges():
                kind = mesh.edge_label[e][0]
                if kind != "C":
                    raise NotImplementedError(
                        "extended space supports clamped boundaries only")
        self.sigma = SigmaSpace(mesh, relaxed=relax)
        self.u = USpace(mesh)
        self._B = [None] * mesh.n_tris
        self._Q = [None] * mesh.n_tris
        self._dd = [None] * mesh.n_tris
        self._M0 = [None] * mesh.n_tris

    # -- cached element data ----------------------------------------------
    # basis tensors depend only on the element shape (translation-invariant),
    # so they are shared across meshes of a refinement sequence

    def basis_coefs(self, k):
        if self._B[k] is None:
            g = self.mesh.geom(k)
            key = (g.verts[1:] - g.verts[0]).tobytes()
            hit = _SHAPE_CACHE.get(key)
            if hit is None:
                B = sigma_basis_coefs(g)
                P33 = _pair_int_weights(3, 3)
                M0 = np.einsum('c,acm,mn,bcn->ab', FROB_WEIGHTS, B, P33, B)
                hit = (B, divdiv_coefs(g, B), M0)
                _SHAPE_CACHE[key] = hit
            self._B[k], self._dd[k], self._M0[k] = hit
        return self._B[k]

    def inv_matrix(self, k):
        if self._Q[k] is None:
            self._Q[k] = self.problem.coeff.inv_matrix(self.mesh, k)
        return self._Q[k]

    def divdiv_basis(self, k):
        if self._dd[k] is None:
            self.basis_coefs(k)
        return self._dd[k]

    def sigma_field(self, k, x):
        return self.sigma.element_field(k, x, self.basis_coefs(k))

    def quad(self):
        return quad_triangle(min(self.quad_order, 40))

    # -- system assembly ---------------------------------------------------

    def assemble(self):
        """Returns (M, Bdd, b_sigma, b_u): mass matrix, divdiv coupling
        (u-dofs x sigma-dofs), boundary-data load on stresses, body load."""
        mesh = self.mesh
        ns, nu = self.sigma.ndof, self.u.ndof
        P33 = _pair_int_weights(3, 3)
        P11 = _pair_int_weights(1, 1)

        mi, mj, mv = [], [], []
        bi, bj, bv = [], [], []
        b_u = np.zeros(nu)
        qpts, qw = self.quad()

        for k in range(mesh.n_tris):
            g = mesh.geom(k)
            B = self.basis_coefs(k)
            Q = self.inv_matrix(k)
            # (C^-1 phi_a) : phi_b integrated exactly
            if (Q == Q[0, 0] * np.eye(3)).all():
                Mloc = (2.0 * g.area * Q[0, 0]) * self._M0[k]
            else:
                QB = np.einsum('cd,adm->acm', Q, B)
                Mloc = 2.0 * g.area * np.einsum('c,acm,mn,bcn->ab',
                                                FROB_WEIGHTS, QB, P33, B)
            dd = self.divdiv_basis(k)
            Bloc = 2.0 * g.area * dd @ P11.T  # (30, 3): int divdiv(phi_a) lam_l

            rows, cols, wts = self.sigma.elem_map(k)
            Mt = np.einsum('p,q,pq->pq', wts, wts,
                           Mloc[np.ix_(rows, rows)])
            mi.append(np.repeat(cols, len(cols)))
            mj.append(np.tile(cols, len(cols)))
            mv.append(Mt.ravel())

            udofs = self.u.elem_dofs(k)
            Bt = wts[:, None] * Bloc[rows, :]  # (nmap, 3)
            bi.append(np.repeat(udofs, len(cols)))
            bj.append(np.tile(cols, 3))
            bv.append(Bt.T.ravel())

            xy = g.point(qpts)
            fv = self.problem.f(mesh, k)(xy[:, 0], xy[:, 1])
            b_u[udofs] += g.area * (qw * fv) @ qpts

        M = sps.csr_matrix((np.concatenate(mv),
                            (np.concatenate(mi), np.concatenate(mj))),
                           shape=(ns, ns))
        Bdd = sps.csr_matrix((np.concatenate(bv),
                              (np.concatenate(bi), np.concatenate(bj))),
                             shape=(nu, ns))
        b_sigma = self._boundary_load()
        return M, Bdd, b_sigma, b_u

    def _edge_quad_xy(self, e):
        mesh = self.mesh
        s, w = quad_edge(self.quad_order)
        a, b = mesh.verts[mesh.edges[e][0]], mesh.verts[mesh.edges[e][1]]
        xy = a[None, :] + s[:, None] * (b - a)[None, :]
        return s, w, xy

    def _boundary_load(self):
        """The trace functional tr_b on the global stress dofs:
        <n.tau.n, g_b> on clamped parts, <t.tau.n, dt w_b> - <n.div tau, w_b>
        on clamped and supported parts."""
        mesh = self.mesh
        prob = self.problem
        b = np.zeros(self.sigma.ndof)
        sh3 = None
        for e in mesh.boundary_edges():
            kind, _ = mesh.edge_label[e]
            if kind == "F":
                continue
            s, w, xy = self._edge_quad_xy(e)
            if sh3 is None:
                sh3 = _edge_shape_values(3, s)
                sh2 = _edge_shape_values(2, s)
            L = mesh.edge_len[e]
            n, t = mesh.edge_n[e], mesh.edge_t[e]
            A, Bv = (int(v) for v in mesh.edges[e])
            ebase = 3 * mesh.n_verts + 7 * e

            wb = prob.w_b(xy[:, 0], xy[:, 1])
            dtwb = prob.dt_w_b(xy[:, 0], xy[:, 1], t)
            mom_t = L * (w * dtwb) @ sh3      # against cubic edge basis
            mom_w = L * (w * wb) @ sh2        # against quadratic edge basis

            # t.tau.n trace coefficients: [tn(A), dof, dof, tn(B)]
            b[3 * A: 3 * A + 3] += mom_t[0] * _tn_weights(t, n)
            b[ebase + 2] += mom_t[1]
            b[ebase + 3] += mom_t[2]
            b[3 * Bv: 3 * Bv + 3] += mom_t[3] * _tn_weights(t, n)
            # -<n.div tau, w_b>: div-trace dofs are the quadratic coefficients
            b[ebase + 4: ebase + 7] -= mom_w
            if kind == "C":
                gb = prob.g_b(xy[:, 0], xy[:, 1], n)
                mom_n = L * (w * gb) @ sh3
                b[3 * A: 3 * A + 3] += mom_n[0] * _nn_weights(n)
                b[ebase + 0] += mom_n[1]
                b[ebase + 1] += mom_n[2]
                b[3 * Bv: 3 * Bv + 3] += mom_n[3] * _nn_weights(n)
        return b

    # -- essential constraints --------------------------------------------

    def constraint_rows(self):
        """All essential conditions as (coefficient dict, value) pairs over
        global stress dofs, grouped for elimination:

        returns (vertex_rows, fixed_dofs, shear_rows) where vertex_rows maps a
        vertex id to a list of rows touching only that vertex's dofs,
        fixed_dofs maps a dof to its value, and shear_rows are the free-edge
        effective shear rows (pivot dof first)."""
        mesh = self.mesh
        prob = self.problem
        vertex_rows = {}
        fixed = {}
        shear_rows = []
        if self.sigma.relaxed:
            for e in mesh.boundary_edges():
                if mesh.edge_label[e][0] != "C":
                    raise NotImplementedError(
                        "extended space supports clamped boundaries only")

        s, w = quad_edge(self.quad_order)
        sh3 = _edge_shape_values(3, s)
        sh2 = _edge_shape_values(2, s)
        G3 = _edge_gram(3)
        G2 = _edge_gram(2)
        D = _edge_deriv_matrix()

        def add_vertex_row(vid, coefs, value):
            vertex_rows.setdefault(vid, []).append((coefs, value))

        for e in mesh.boundary_edges():
            kind, _ = mesh.edge_label[e]
            if kind == "C":
                continue
            L = mesh.edge_len[e]
            n, t = mesh.edge_n[e], mesh.edge_t[e]
            A, Bv = (int(v) for v in mesh.edges[e])
            ebase = 3 * mesh.n_verts + 7 * e
            a, bpt = mesh.verts[A], mesh.verts[Bv]
            xy = a[None, :] + s[:, None] * (bpt - a)[None, :]
            mb = prob.m_b(xy[:, 0], xy[:, 1], n)

            # endpoint values of the normal moment
            mA = float(prob.m_b(np.array(a[0]), np.array(a[1]), n))
            mB = float(prob.m_b(np.array(bpt[0]), np.array(bpt[1]), n))
            add_vertex_row(A, _nn_weights(n), mA)
            add_vertex_row(Bv, _nn_weights(n), mB)

            c = edge_moment_interpolant(s, w, mA, mB, mb)
            fixed[ebase + 0] = c[1]
            fixed[ebase + 1] = c[2]

            if kind == "F":
                hb = prob.h_b(xy[:, 0], xy[:, 1], n, t)
                # L2 projection of h_b onto quadratics on the edge
                ph = np.linalg.solve(G2, (w * hb) @ sh2)
                # n.div tau coefficients + d/ds of the t.tau.n cubic = ph
                tnw = _tn_weights(t, n)
                for m in range(3):
                    coefs = {ebase + 4 + m: 1.0}
                    # derivative row over the cubic trace coefficients
                    drow = D[m] / L
                    for c3, dofs in ((drow[0], [(3 * A + j, tnw[j]) for j in range(3)]),
                                     (drow[1], [(ebase + 2, 1.0)]),
                                     (drow[2], [(ebase + 3, 1.0)]),
                                     (drow[3], [(3 * Bv + j, tnw[j]) for j in range(3)])):
                        if c3 != 0.0:
                            for dof, wt in dofs:
                                coefs[dof] = coefs.get(dof, 0.0) + c3 * wt
                    shear_rows.append((coefs, ph[m]))

        # point forces at free corners
        for (vid, e_in, e_out) in mesh.corner_vertices("F"):
            n_p, t_p = mesh.edge_n[e_out], mesh.edge_t[e_out]
            n_m, t_m = mesh.edge_n[e_in], mesh.edge_t[e_in]
            xv = mesh.verts[vid]
            p = prob.corner_p(xv[0], xv[1], n_p, t_p, n_m, t_m)
            add_vertex_row(vid, _tn_weights(t_p, n_p) - _tn_weights(t_m, n_m), p)

        if self.sigma.relaxed:
            touched = set(vertex_rows)
            if touched & set(self.sigma.relaxed):
                raise NotImplementedError(
                    "constraints at relaxed vertices are not supported")
        return vertex_rows, fixed, shear_rows

    def reduce_constraints(self, tol=1e-10):
        """Eliminate the essential conditions: x = Z x_free + x_part."""
        ns = self.sigma.ndof
        vertex_rows, fixed, shear_rows = self.constraint_rows()

        # expr[g] = (dict free_dof -> coef, const) for eliminated dofs
        expr = {}
        for dof, val in fixed.items():
            expr[dof] = ({}, float(val))

        for vid, rows in vertex_rows.items():
            dofs = [3 * vid, 3 * vid + 1, 3 * vid + 2]
            A = np.array([r[0] for r in rows], dtype=float)
            b = np.array([r[1] for r in rows], dtype=float)
            scale = np.abs(A).max()
            # Gaussian elimination with partial pivoting; drop dependent rows
            piv_cols = []
            r = 0
            for _ in range(len(rows)):
                if r >= len(b):
                    break
                remaining = [j for j in range(3) if j not in piv_cols]
                sub = A[r:, remaining]
                if sub.size == 0 or np.abs(sub).max() < tol * scale:
                    if np.abs(b[r:]).max() > 1e-8 * max(1.0, np.abs(b).max()):
                        raise ValueError("inconsistent boundary constraints")
                    break
                ri, ci = np.unravel_index(np.argmax(np.abs(sub)), sub.shape)
                A[[r, r + ri]] = A[[r + ri, r]]
                b[[r, r + ri]] = b[[r + ri, r]]
                col = remaining[ci]
                piv_cols.append(col)
                for rr in range(len(b)):
                    if rr != r and A[rr, col] != 0.0:
                        f = A[rr, col] / A[r, col]
                        A[rr] -= f * A[r]
                        b[rr] -= f * b[r]
                r += 1
            for ri, col in enumerate(piv_cols):
                coefs = {}
                for j in range(3):
                    if j not in piv_cols and A[ri, j] != 0.0:
                        coefs[dofs[j]] = -A[ri, j] / A[ri, col]
                expr[dofs[col]] = (coefs, b[ri] / A[ri, col])

        for coefs, val in shear_rows:
            items = list(coefs.items())
            pivot = items[0][0]
            assert pivot not in expr
            out = {}
            const = float(val)
            for dof, c in items[1:]:
                if dof in expr:
                    sub, sc = expr[dof]
                    const -= c * sc
                    for fd, fc in sub.items():
                        out[fd] = out.get(fd, 0.0) - c * fc
                else:
                    out[dof] = out.get(dof, 0.0) - c
            expr[pivot] = (out, const)

        free = [g for g in range(ns) if g not in expr]
        idx = {g: i for i, g in enumerate(free)}
        zi, zj, zv = [], [], []
        xp = np.zeros(ns)
        for i, g in enumerate(free):
            zi.append(g)
            zj.append(i)
            zv.append(1.0)
        for g, (coefs, const) in expr.items():
            xp[g] = const
            for fd, fc in coefs.items():
                zi.append(g)
                zj.append(idx[fd])
                zv.append(fc)
        Z = sps.csr_matrix((zv, (zi, zj)), shape=(ns, len(free)))
        return Z, xp
