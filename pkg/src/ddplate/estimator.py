"""Residual a posteriori error estimator.

Two aggregations are computed from the same ingredients:

* a global estimator
      eta1^2 = sum_K h_K^2 ||rot(C^-1 sigma_h)||_K^2
             + sum_{interior e} h_e ||[C^-1 sigma_h t_e]||_e^2
             + sum_{clamped e} h_e ||C^-1 sigma_h t - dtt(w_b) t - dt(g_b) n||_e^2
             + sum_{supported e} h_e ||t.C^-1 sigma_h t - dtt(w_b)||_e^2
  with data oscillations
      osc^2 = sum_K h_K^4 ||f - Q_h f||_K^2
            + sum_{supported+free e} h_e ||m_b - pi_e m_b||_e^2
            + sum_{free e} h_e^3 ||h_b - P2 h_b||_e^2
  and eta = eta1 + osc;

* a per-element marking indicator that weights every edge term of an element
  (interior jumps counted fully on both neighbours, boundary residuals on
  their single neighbour) by h_K instead of h_e, plus the volume and
  element-local oscillation terms.
"""

from __future__ import annotations

import numpy as np

from .poly import Mat, quad_edge, quad_triangle
from .assembly import (_edge_gram, _edge_shape_values, _pair_int_weights,
                       edge_moment_interpolant)


class EstimatorReport:
    """Per-element squared indicator parts and the global totals."""

    def __init__(self, mesh):
        n = mesh.n_tris
        self.mesh = mesh
        self.vol2 = np.zeros(n)       # h_K^2 volume rot term
        self.jump2 = np.zeros(n)      # h_K-weighted tangential jumps
        self.bc_C2 = np.zeros(n)      # h_K-weighted clamped-boundary residual
        self.bc_S2 = np.zeros(n)      # h_K-weighted supported-boundary residual
        self.osc_f2 = np.zeros(n)     # h_K^4 load oscillation
        self.osc_bdry2 = np.zeros(n)  # element-localized m_b / h_b oscillation
        self.eta1_sq = 0.0
        self.osc_f_sq = 0.0
        self.osc_mb_sq = 0.0
        self.osc_hb_sq = 0.0

    @property
    def element_eta2(self):
        """Marking indicator eta^2(K)."""
        return (self.vol2 + self.jump2 + self.bc_C2 + self.bc_S2
                + self.osc_f2 + self.osc_bdry2)

    @property
    def eta1(self):
        return np.sqrt(self.eta1_sq)

    @property
    def osc(self):
        return np.sqrt(self.osc_f_sq + self.osc_mb_sq + self.osc_hb_sq)

    @property
    def eta(self):
        return self.eta1 + self.osc

    def write_csv(self, path):
        hdr = ("element,bary_x,bary_y,vol2,jump2,bc_C2,bc_S2,osc_f2,"
               "osc_bdry2,eta2")
        tot = self.element_eta2
        with open(path, "w") as fh:
            fh.write(hdr + "\n")
            for k in range(self.mesh.n_tris):
                c = self.mesh.geom(k).centroid
                fh.write("%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,"
                         "%.17g,%.17g\n"
                         % (k, c[0], c[1], self.vol2[k], self.jump2[k],
                            self.bc_C2[k], self.bc_S2[k], self.osc_f2[k],
                            self.osc_bdry2[k], tot[k]))


def _cinv_sigma(disc, k, x_sigma):
    """C^-1 sigma_h on element k as a Mat."""
    S = disc.sigma_field(k, x_sigma)
    Q = disc.inv_matrix(k)
    c = S.components()
    out = [c[0] * Q[j, 0] + c[1] * Q[j, 1] + c[2] * Q[j, 2] for j in range(3)]
    return Mat(out[0], out[1], out[2])


def _edge_lam(mesh, k, e, s):
    """Barycentric coordinates in triangle k of the points of edge e at
    arclength parameters s (measured from mesh.edges[e][0])."""
    loc = int(np.nonzero(mesh.tri_edges[k] == e)[0][0])
    u, v = (loc + 1) % 3, (loc + 2) % 3
    lam = np.zeros((len(s), 3))
    if mesh.tris[k][u] == mesh.edges[e][0]:
        lam[:, u] = 1.0 - s
        lam[:, v] = s
    else:
        lam[:, u] = s
        lam[:, v] = 1.0 - s
    return lam


def estimate(disc, x_sigma):
    """EstimatorReport for a stress coefficient vector."""
    mesh = disc.mesh
    prob = disc.problem
    rep = EstimatorReport(mesh)
    s, w = quad_edge(disc.quad_order)
    qp, qw = quad_triangle(disc.quad_order)
    P11 = _pair_int_weights(1, 1)

    QS = [_cinv_sigma(disc, k, x_sigma) for k in range(mesh.n_tris)]
    h_K = np.array([mesh.geom(k).edge_len.max() for k in range(mesh.n_tris)])

    for k in range(mesh.n_tris):
        g = mesh.geom(k)
        r = QS[k].rot()
        vol = (r.x * r.x + r.y * r.y).integrate()
        rep.vol2[k] = h_K[k] ** 2 * vol

        xy = g.point(qp)
        fv = prob.f(mesh, k)(xy[:, 0], xy[:, 1])
        mom = g.area * (qw * fv) @ qp
        c = np.linalg.solve(2.0 * g.area * P11, mom)
        res2 = g.area * (qw * (fv - qp @ c) ** 2).sum()
        rep.osc_f2[k] = h_K[k] ** 4 * res2
        rep.osc_f_sq += h_K[k] ** 4 * res2

    for e in mesh.interior_edges():
        k1, k2 = mesh.edge_tris[e]
        t = mesh.edge_t[e]
        L = mesh.edge_len[e]
        v1 = QS[k1].dot_vec(t)(_edge_lam(mesh, k1, e, s))
        v2 = QS[k2].dot_vec(t)(_edge_lam(mesh, k2, e, s))
        d = v1 - v2
        jump = L * (w * (d ** 2).sum(axis=1)).sum()
        rep.eta1_sq += L * jump
        rep.jump2[k1] += h_K[k1] * jump
        rep.jump2[k2] += h_K[k2] * jump

    sh3 = _edge_shape_values(3, s)
    sh2 = _edge_shape_values(2, s)
    G2 = _edge_gram(2)
    for e in mesh.boundary_edges():
        kind, _ = mesh.edge_label[e]
        (k1,) = [kk for kk in mesh.edge_tris[e] if kk >= 0]
        n, t = mesh.edge_n[e], mesh.edge_t[e]
        L = mesh.edge_len[e]
        a = mesh.verts[mesh.edges[e][0]]
        b = mesh.verts[mesh.edges[e][1]]
        xy = a[None, :] + s[:, None] * (b - a)[None, :]
        lam = _edge_lam(mesh, k1, e, s)

        if kind in ("C", "S"):
            sol = prob.branch(mesh, k1)
            if sol is not None:
                H = sol.hess(xy[:, 0], xy[:, 1])
                dtt_wb = np.einsum('i,...ij,j->...', t, H, t)
                dt_gb = np.einsum('i,...ij,j->...', t, H, n)
            else:
                dtt_wb = np.zeros(len(s))
                dt_gb = np.zeros(len(s))
        if kind == "C":
            v = QS[k1].dot_vec(t)(lam)
            d = v - dtt_wb[:, None] * t[None, :] - dt_gb[:, None] * n[None, :]
            val = L * (w * (d ** 2).sum(axis=1)).sum()
            rep.eta1_sq += L * val
            rep.bc_C2[k1] += h_K[k1] * val
        elif kind == "S":
            vt = (QS[k1].dot_vec(t)(lam) * t[None, :]).sum(axis=1)
            d = vt - dtt_wb
            val = L * (w * d ** 2).sum()
            rep.eta1_sq += L * val
            rep.bc_S2[k1] += h_K[k1] * val

        if kind in ("S", "F"):
            mb = prob.m_b(xy[:, 0], xy[:, 1], n)
            mA = float(prob.m_b(np.array(a[0]), np.array(a[1]), n))
            mB = float(prob.m_b(np.array(b[0]), np.array(b[1]), n))
            c = edge_moment_interpolant(s, w, mA, mB, mb)
            d = mb - sh3 @ c
            val = L * (w * d ** 2).sum()
            rep.osc_mb_sq += L * val
            rep.osc_bdry2[k1] += L * val
        if kind == "F":
            hb = prob.h_b(xy[:, 0], xy[:, 1], n, t)
            ph = np.linalg.solve(G2, (w * hb) @ sh2)
            d = hb - sh2 @ ph
            val = L * (w * d ** 2).sum()
            rep.osc_hb_sq += L ** 3 * val
            rep.osc_bdry2[k1] += L ** 3 * val

    rep.eta1_sq += rep.vol2.sum()
    return rep


def effectivity(report, err_sigma_cinv):
    """eta / ||sigma - sigma_h||_{C^-1}; None when the error vanishes."""
    if err_sigma_cinv <= 0.0 or not np.isfinite(err_sigma_cinv):
        return None
    return report.eta / err_sigma_cinv
