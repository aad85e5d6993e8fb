"""Element-local deflection postprocessing and the broken H2-type norm.

On each triangle the postprocessed deflection w* is the quintic whose
linear moments reproduce w_h and whose hessian is closest to C^-1 sigma_h
in L2; the stationarity equations are

    (w*, q)_K        = (w_h, q)_K          for all q in P1(K),
    (grad^2 w*, grad^2 q)_K = (C^-1 sigma_h, grad^2 q)_K
                                           for all quintic q with zero
                                           P1 moments.

All element integrals are exact; edge jump terms of the mesh-dependent
norm use quadrature.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .poly import (Poly, n_monomials, quad_edge, quad_triangle)
from .assembly import _cart_deriv_matrix, _pair_int_weights
from .estimator import _cinv_sigma, _edge_lam


class PostprocessError(Exception):
    pass


@lru_cache(maxsize=1)
def _moment_complement():
    """Orthonormal basis (21 x 18) of quintic coefficient vectors with zero
    moments against P1; the moment matrix is the same for every triangle up
    to the area factor."""
    P15 = _pair_int_weights(1, 5)
    _, _, vt = np.linalg.svd(P15)
    return vt[3:].T


def _second_deriv_matrices(geom):
    Dx = _cart_deriv_matrix(geom, 5, 0)
    Dy = _cart_deriv_matrix(geom, 5, 1)
    Dx4 = _cart_deriv_matrix(geom, 4, 0)
    Dy4 = _cart_deriv_matrix(geom, 4, 1)
    return Dx4 @ Dx, Dy4 @ Dy, Dy4 @ Dx


def postprocess_element(disc, k, x_sigma, x_u):
    """The quintic w* on element k as a Poly."""
    g = disc.mesh.geom(k)
    QS = _cinv_sigma(disc, k, x_sigma)
    wh = disc.u.element_field(k, x_u)

    Dxx, Dyy, Dxy = _second_deriv_matrices(g)
    P33 = _pair_int_weights(3, 3)
    P15 = _pair_int_weights(1, 5)
    P11 = _pair_int_weights(1, 1)
    N = _moment_complement()

    H = Dxx.T @ P33 @ Dxx + Dyy.T @ P33 @ Dyy + 2.0 * Dxy.T @ P33 @ Dxy
    rhs_h = (Dxx.T @ P33 @ QS.s11.coef + Dyy.T @ P33 @ QS.s22.coef
             + 2.0 * Dxy.T @ P33 @ QS.s12.coef)

    A = np.vstack([P15, N.T @ H])
    b = np.concatenate([P11 @ wh.coef, N.T @ rhs_h])
    # equilibrate: hessian rows grow like h^-4 on small elements
    r = np.abs(A).max(axis=1)
    try:
        c = np.linalg.solve(A / r[:, None], b / r)
    except np.linalg.LinAlgError as exc:
        raise PostprocessError(f"singular local system on element {k}") from exc
    return Poly(g, 5, c)


def postprocess_deflection(disc, x_sigma, x_u):
    """List of per-element quintic Polys."""
    return [postprocess_element(disc, k, x_sigma, x_u)
            for k in range(disc.mesh.n_tris)]


def _h2_seminorm_sq(p):
    """Exact integral of |grad^2 p|^2 over the element."""
    gx, gy = p.dx(), p.dy()
    pxx, pyy, pxy = gx.dx(), gy.dy(), gx.dy()
    return (pxx * pxx + pyy * pyy + 2.0 * (pxy * pxy)).integrate()


def norm_2h(mesh, polys, branch=None, grad_branch=None, quad_order=10):
    """Mesh-dependent norm |v|_{2,h} of v|_K = w(x) - polys[K] (or just
    polys[K] when no exact part is given):

        sum_K |v|_{2,K}^2
      + sum over interior and clamped edges of h^-3 ||[v]||^2 + h^-1 ||[dn v]||^2
      + sum over supported edges of h^-3 ||[v]||^2.

    branch(k) -> callable w(x, y); grad_branch(k) -> callable returning
    (..., 2) gradients.  The exact part is assumed C^1 across interior
    edges, so only the polynomial part jumps there.
    """
    total = 0.0
    for k in range(mesh.n_tris):
        if branch is None:
            total += _h2_seminorm_sq(polys[k])
        else:
            # quadrature: the exact part is not polynomial in general
            qp, qw = quad_triangle(min(2 * quad_order, 40))
            g = mesh.geom(k)
            xy = g.point(qp)
            Hex = branch(k).hess(xy[:, 0], xy[:, 1])
            p = polys[k]
            gx, gy = p.dx(), p.dy()
            d11 = Hex[..., 0, 0] - gx.dx()(qp)
            d22 = Hex[..., 1, 1] - gy.dy()(qp)
            d12 = Hex[..., 0, 1] - gx.dy()(qp)
            total += g.area * (qw * (d11 ** 2 + d22 ** 2 + 2 * d12 ** 2)).sum()

    s, w = quad_edge(quad_order)
    for e in mesh.interior_edges():
        k1, k2 = mesh.edge_tris[e]
        L = mesh.edge_len[e]
        n = mesh.edge_n[e]
        l1 = _edge_lam(mesh, k1, e, s)
        l2 = _edge_lam(mesh, k2, e, s)
        dv = polys[k1](l1) - polys[k2](l2)
        dg = ((polys[k1].grad()(l1) - polys[k2].grad()(l2)) * n[None, :]).sum(axis=1)
        total += L ** -3 * L * (w * dv ** 2).sum()
        total += L ** -1 * L * (w * dg ** 2).sum()

    for e in mesh.boundary_edges():
        kind, _ = mesh.edge_label[e]
        if kind == "F":
            continue
        (k1,) = [kk for kk in mesh.edge_tris[e] if kk >= 0]
        L = mesh.edge_len[e]
        n = mesh.edge_n[e]
        a, b = mesh.verts[mesh.edges[e][0]], mesh.verts[mesh.edges[e][1]]
        xy = a[None, :] + s[:, None] * (b - a)[None, :]
        l1 = _edge_lam(mesh, k1, e, s)
        v = -polys[k1](l1)
        gvec = -polys[k1].grad()(l1)
        if branch is not None:
            sol = branch(k1)
            v = v + sol.w(xy[:, 0], xy[:, 1])
            gvec = gvec + sol.grad(xy[:, 0], xy[:, 1])
        total += L ** -3 * L * (w * v ** 2).sum()
        if kind == "C":
            dn = (gvec * n[None, :]).sum(axis=1)
            total += L ** -1 * L * (w * dn ** 2).sum()
    return np.sqrt(total)


def error_norms(disc, x_sigma, x_u, wstar=None):
    """Error norms against the exact solution; keys follow the history CSV:

    err_sigma_L2, err_sigma_Cinv, err_divdiv, err_w, err_Qw, err_Qw_2h,
    err_wstar_2h.
    """
    mesh = disc.mesh
    prob = disc.problem
    if not prob.has_exact:
        raise ValueError("problem has no exact solution")
    qp, qw = quad_triangle(min(disc.quad_order, 40))
    P11 = _pair_int_weights(1, 1)

    e_sig = e_cinv = e_dd = e_w = e_qw = 0.0
    qw_polys = []
    for k in range(mesh.n_tris):
        g = mesh.geom(k)
        xy = g.point(qp)
        sol = prob.branch(mesh, k)
        H = sol.hess(xy[:, 0], xy[:, 1])
        Q = disc.inv_matrix(k)
        C = np.linalg.inv(Q)
        hv = np.stack([H[..., 0, 0], H[..., 1, 1], H[..., 0, 1]], axis=-1)
        sig_ex = hv @ C.T
        S = disc.sigma_field(k, x_sigma)
        sv = np.stack([S.s11(qp), S.s22(qp), S.s12(qp)], axis=-1)
        d = sig_ex - sv
        frob = np.array([1.0, 1.0, 2.0])
        e_sig += g.area * (qw * ((d ** 2) @ frob)).sum()
        dq = d @ Q.T
        e_cinv += g.area * (qw * ((dq * d) @ frob)).sum()

        fv = prob.f(mesh, k)(xy[:, 0], xy[:, 1])
        dd = S.divdiv()(qp)
        e_dd += g.area * (qw * (fv - dd) ** 2).sum()

        wv = sol.w(xy[:, 0], xy[:, 1])
        wh = disc.u.element_field(k, x_u)
        e_w += g.area * (qw * (wv - wh(qp)) ** 2).sum()

        # P1 projection of the exact deflection
        mom = g.area * (qw * wv) @ qp
        c = np.linalg.solve(2.0 * g.area * P11, mom)
        dcoef = c - wh.coef
        e_qw += dcoef @ (2.0 * g.area * P11) @ dcoef
        qw_polys.append(Poly(g, 1, c - wh.coef))

    out = {
        "err_sigma_L2": np.sqrt(e_sig),
        "err_sigma_Cinv": np.sqrt(e_cinv),
        "err_divdiv": np.sqrt(e_dd),
        "err_w": np.sqrt(e_w),
        "err_Qw": np.sqrt(e_qw),
        "err_Qw_2h": norm_2h(mesh, qw_polys, quad_order=disc.quad_order),
    }
    if wstar is not None:
        out["err_wstar_2h"] = norm_2h(
            mesh, wstar, branch=lambda k: prob.branch(mesh, k),
            quad_order=disc.quad_order)
    else:
        out["err_wstar_2h"] = float("nan")
    return out
