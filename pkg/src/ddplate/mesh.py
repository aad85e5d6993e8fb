"""Conforming triangle meshes with boundary tags and newest vertex bisection.

Triangles are stored counterclockwise with a refinement-edge index (the local
index of the opposite vertex, i.e. the NVB peak).  Bisection-created vertices
remember the unit normal/tangent frame of the edge they bisected; this
metadata drives the extended bending-moment space.

Mesh file format (plain text, `#` comments, 0-based indices)::

    vertices N
    x y            (N lines)
    triangles M
    i j k          (M lines)
    boundary B
    i j LABEL comp (B lines, LABEL in {C, S, F})
"""

from __future__ import annotations

import numpy as np

from .poly import TriGeom

BOUNDARY_KINDS = ("C", "S", "F")


class MeshError(Exception):
    pass


def _edge_key(a, b):
    return (a, b) if a < b else (b, a)


class Triangulation:
    """Immutable conforming triangle mesh.

    Attributes
    ----------
    verts : (nv, 2) float array
    tris : (nt, 3) int array, counterclockwise
    refedge : (nt,) int array, local index of the NVB peak vertex
    generation : (nt,) int array
    vert_is_initial : (nv,) bool array
    vert_frame : dict vid -> (n_e, t_e) for bisection-created vertices
    edges : (ne, 2) int array; boundary edges are ordered along the outward
        tangent (t = rot90ccw(n)); interior edges have lower index first
    edge_label : list of (kind, comp) or None per edge
    """

    def __init__(self, verts, tris, refedge, generation, vert_is_initial,
                 vert_frame, boundary_labels):
        self.verts = np.asarray(verts, dtype=float)
        self.tris = np.asarray(tris, dtype=np.int64)
        self.refedge = np.asarray(refedge, dtype=np.int64)
        self.generation = np.asarray(generation, dtype=np.int64)
        self.vert_is_initial = np.asarray(vert_is_initial, dtype=bool)
        self.vert_frame = dict(vert_frame)
        self._validate_and_index(boundary_labels)
        self._geoms = [None] * len(self.tris)
        self.parent_tri = None  # set by refinement

    # -- construction ------------------------------------------------------

    def _validate_and_index(self, boundary_labels):
        nv = len(self.verts)
        if not np.all(np.isfinite(self.verts)):
            raise MeshError("non-finite vertex coordinates")
        if self.tris.min(initial=0) < 0 or self.tris.max(initial=-1) >= nv:
            raise MeshError("triangle references a missing vertex")
        # orientation and degeneracy (relative to each triangle's own size so
        # that deeply refined but shape-regular elements pass)
        v = self.verts
        a = v[self.tris[:, 1]] - v[self.tris[:, 0]]
        b = v[self.tris[:, 2]] - v[self.tris[:, 0]]
        c = b - a
        areas = 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
        scale2 = np.maximum(np.maximum((a * a).sum(axis=1), (b * b).sum(axis=1)),
                            (c * c).sum(axis=1))
        if np.any(areas <= 1e-12 * scale2):
            raise MeshError("degenerate or negatively oriented triangle")
        self.tri_area = areas

        # edge table: edge i of triangle K is opposite local vertex i
        edge_of = {}
        tri_edges = np.empty((len(self.tris), 3), dtype=np.int64)
        edge_list = []
        edge_tris = []
        for k, tri in enumerate(self.tris):
            for i in range(3):
                key = _edge_key(tri[(i + 1) % 3], tri[(i + 2) % 3])
                e = edge_of.get(key)
                if e is None:
                    e = len(edge_list)
                    edge_of[key] = e
                    edge_list.append(key)
                    edge_tris.append([k, -1])
                else:
                    if edge_tris[e][1] != -1:
                        raise MeshError("edge shared by more than two triangles")
                    edge_tris[e][1] = k
                tri_edges[k, i] = e
        self.tri_edges = tri_edges
        self.edge_tris = np.array(edge_tris, dtype=np.int64)
        edges = np.array(edge_list, dtype=np.int64).reshape(-1, 2)

        boundary = self.edge_tris[:, 1] == -1
        # hanging vertex check: every vertex must be an endpoint of its
        # incident triangles' edges only; conformity is implied by the edge
        # table plus the boundary loop check below.

        # labels
        label = [None] * len(edges)
        if boundary_labels:
            for (a, b, kind, comp) in boundary_labels:
                e = edge_of.get(_edge_key(a, b))
                if e is None:
                    raise MeshError(f"boundary label refers to missing edge {a}-{b}")
                if not boundary[e]:
                    raise MeshError(f"label on interior edge {a}-{b}")
                if kind not in BOUNDARY_KINDS:
                    raise MeshError(f"unknown boundary label {kind!r}")
                label[e] = (kind, int(comp))
        for e in range(len(edges)):
            if boundary[e] and label[e] is None:
                raise MeshError(f"unlabeled boundary edge {edges[e]}")

        # orient: boundary edges along outward tangent, interior lower-first
        for e in np.nonzero(boundary)[0]:
            k = self.edge_tris[e, 0]
            tri = self.tris[k]
            i = int(np.nonzero(tri_edges[k] == e)[0][0])
            # ccw triangle: traversal (i+1) -> (i+2) runs ccw along the boundary
            edges[e] = (tri[(i + 1) % 3], tri[(i + 2) % 3])
        self.edges = edges
        self.edge_label = label
        self.edge_is_boundary = boundary

        # unit frames per edge
        d = self.verts[edges[:, 1]] - self.verts[edges[:, 0]]
        ln = np.hypot(d[:, 0], d[:, 1])
        t = d / ln[:, None]
        self.edge_len = ln
        self.edge_t = t
        self.edge_n = np.column_stack([t[:, 1], -t[:, 0]])

        self._boundary_runs = None
        self._corners = None

    # -- basic queries -----------------------------------------------------

    @property
    def n_verts(self):
        return len(self.verts)

    @property
    def n_tris(self):
        return len(self.tris)

    @property
    def n_edges(self):
        return len(self.edges)

    def geom(self, k):
        g = self._geoms[k]
        if g is None:
            g = TriGeom(self.verts[self.tris[k]])
            self._geoms[k] = g
        return g

    def interior_edges(self):
        return np.nonzero(~self.edge_is_boundary)[0]

    def boundary_edges(self, kind=None):
        idx = np.nonzero(self.edge_is_boundary)[0]
        if kind is None:
            return idx
        return np.array([e for e in idx if self.edge_label[e][0] == kind], dtype=np.int64)

    def euler_characteristic(self):
        return self.n_verts - self.n_edges + self.n_tris

    def min_angle(self):
        v = self.verts[self.tris]
        angles = []
        for i in range(3):
            a = v[:, (i + 1) % 3] - v[:, i]
            b = v[:, (i + 2) % 3] - v[:, i]
            cosang = np.sum(a * b, axis=1) / (np.hypot(a[:, 0], a[:, 1]) * np.hypot(b[:, 0], b[:, 1]))
            angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
        return float(np.min(angles))

    def vertex_stars(self):
        """List of triangle index lists per vertex."""
        star = [[] for _ in range(self.n_verts)]
        for k, tri in enumerate(self.tris):
            for v in tri:
                star[v].append(k)
        return star

    def boundary_vertex_angle(self, v, star=None):
        """Interior angle of the domain at a boundary vertex."""
        if star is None:
            star = self.vertex_stars()
        total = 0.0
        for k in star[v]:
            tri = self.tris[k]
            i = int(np.nonzero(tri == v)[0][0])
            a = self.verts[tri[(i + 1) % 3]] - self.verts[v]
            b = self.verts[tri[(i + 2) % 3]] - self.verts[v]
            cosang = (a @ b) / (np.hypot(*a) * np.hypot(*b))
            total += float(np.arccos(np.clip(cosang, -1.0, 1.0)))
        return total

    def boundary_loop(self):
        """Boundary edges ordered counterclockwise around the domain."""
        nxt = {}
        for e in self.boundary_edges():
            a, b = self.edges[e]
            nxt[a] = (b, e)
        start = min(nxt)
        loop = []
        a = start
        while True:
            b, e = nxt[a]
            loop.append(e)
            a = b
            if a == start:
                break
        if len(loop) != len(nxt):
            raise MeshError("boundary is not a single closed loop")
        return loop

    def corner_vertices(self, kind):
        """Interior corner points of the given boundary kind (V_C or V_F).

        A vertex qualifies when both incident boundary edges carry the kind
        and the interior angle differs from pi.
        """
        if self._corners is None:
            self._corners = {}
        if kind in self._corners:
            return self._corners[kind]
        star = self.vertex_stars()
        loop = self.boundary_loop()
        out = []
        for j, e in enumerate(loop):
            e2 = loop[(j + 1) % len(loop)]
            v = self.edges[e][1]  # shared vertex between consecutive edges
            k1 = self.edge_label[e][0]
            k2 = self.edge_label[e2][0]
            if k1 == kind and k2 == kind:
                ang = self.boundary_vertex_angle(v, star)
                if abs(ang - np.pi) > 1e-8:
                    out.append((v, e, e2))
        self._corners[kind] = out
        return out

    def patches(self, x_e):
        """NVB patches (omega_plus, omega_minus) of a bisection vertex."""
        if x_e not in self.vert_frame:
            raise MeshError(f"vertex {x_e} is not a bisection vertex")
        n_e, _ = self.vert_frame[x_e]
        plus, minus = [], []
        for k, tri in enumerate(self.tris):
            if x_e in tri:
                mid = self.verts[tri].mean(axis=0)
                s = (mid - self.verts[x_e]) @ n_e
                (plus if s > 0 else minus).append(k)
        return plus, minus

    # -- refinement --------------------------------------------------------

    def bisect(self, marked):
        """Refine the marked triangles by newest vertex bisection with closure."""
        marked = set(int(m) for m in marked)
        if not marked:
            return self
        want = set()
        for k in marked:
            want.add(self.tri_edges[k, self.refedge[k]])
        return self._refine_edges(want)

    def uniform_refine(self):
        """Bisect every edge; each triangle splits into four."""
        return self._refine_edges(set(range(self.n_edges)))

    def red_refine(self):
        """Regular refinement: each triangle splits into four similar children
        by connecting the edge midpoints.  Children get longest-edge
        refinement edges; use this for structured uniform studies, bisection
        for everything adaptive."""
        verts = list(map(tuple, self.verts))
        vert_is_initial = list(self.vert_is_initial)
        vert_frame = dict(self.vert_frame)
        mid_of = {}
        for e in range(self.n_edges):
            a, b = self.edges[e]
            m = len(verts)
            verts.append(tuple(0.5 * (self.verts[a] + self.verts[b])))
            vert_is_initial.append(False)
            vert_frame[m] = (self.edge_n[e].copy(), self.edge_t[e].copy())
            mid_of[e] = m

        new_tris = []
        new_gen = []
        new_parent = []
        for k in range(self.n_tris):
            a, b, c = (int(x) for x in self.tris[k])
            mab = mid_of[self._edge_index(a, b)]
            mbc = mid_of[self._edge_index(b, c)]
            mca = mid_of[self._edge_index(c, a)]
            for child in ((a, mab, mca), (mab, b, mbc), (mca, mbc, c),
                          (mab, mbc, mca)):
                new_tris.append(child)
                new_gen.append(int(self.generation[k]) + 2)
                new_parent.append(k)

        new_labels = []
        for e in self.boundary_edges():
            a, b = (int(x) for x in self.edges[e])
            kind, comp = self.edge_label[e]
            m = mid_of[e]
            new_labels.append((a, m, kind, comp))
            new_labels.append((m, b, kind, comp))

        verts = np.array(verts)
        new_tris = np.array(new_tris)
        out = Triangulation(verts, new_tris, _assign_refedges(verts, new_tris),
                            np.array(new_gen), np.array(vert_is_initial),
                            vert_frame, new_labels)
        out.parent_tri = np.array(new_parent, dtype=np.int64)
        return out

    def _refine_edges(self, want):
        # closure: a triangle with any wanted edge must also bisect its
        # refinement edge
        changed = True
        while changed:
            changed = False
            for k in range(self.n_tris):
                re = self.tri_edges[k, self.refedge[k]]
                if re not in want and any(e in want for e in self.tri_edges[k]):
                    want.add(re)
                    changed = True

        verts = list(map(tuple, self.verts))
        vert_is_initial = list(self.vert_is_initial)
        vert_frame = dict(self.vert_frame)
        mid_of = {}
        for e in want:
            a, b = self.edges[e]
            m = len(verts)
            verts.append(tuple(0.5 * (self.verts[a] + self.verts[b])))
            vert_is_initial.append(False)
            vert_frame[m] = (self.edge_n[e].copy(), self.edge_t[e].copy())
            mid_of[e] = m

        new_tris = []
        new_ref = []
        new_gen = []
        new_parent = []
        new_labels = []

        def emit(tri, peak, gen, parent):
            new_tris.append(tri)
            new_ref.append(peak)
            new_gen.append(gen)
            new_parent.append(parent)

        def split(tri, peak_local, gen, parent):
            """Split tri at the edge opposite peak_local; recurse on children."""
            p = tri[peak_local]
            a = tri[(peak_local + 1) % 3]
            b = tri[(peak_local + 2) % 3]
            e = self._edge_index(a, b)
            m = mid_of[e]
            # ccw children (p, a, m) and (p, m, b), new peak at m
            for child, peak in (((p, a, m), 2), ((p, m, b), 1)):
                u = child[(peak + 1) % 3]
                v = child[(peak + 2) % 3]
                ce = self._edge_index_or_none(u, v)
                if ce is not None and ce in want:
                    split(child, peak, gen + 1, parent)
                else:
                    emit(child, peak, gen + 1, parent)

        for k in range(self.n_tris):
            tri = tuple(int(x) for x in self.tris[k])
            if any(e in want for e in self.tri_edges[k]):
                split(tri, int(self.refedge[k]), int(self.generation[k]), k)
            else:
                emit(tri, int(self.refedge[k]), int(self.generation[k]), k)

        # boundary labels: children of a split boundary edge inherit its label
        for e in self.boundary_edges():
            a, b = (int(x) for x in self.edges[e])
            kind, comp = self.edge_label[e]
            if e in want:
                m = mid_of[e]
                new_labels.append((a, m, kind, comp))
                new_labels.append((m, b, kind, comp))
            else:
                new_labels.append((a, b, kind, comp))

        out = Triangulation(np.array(verts), np.array(new_tris), np.array(new_ref),
                            np.array(new_gen), np.array(vert_is_initial),
                            vert_frame, new_labels)
        out.parent_tri = np.array(new_parent, dtype=np.int64)
        return out

    def _edge_index(self, a, b):
        e = self._edge_index_or_none(a, b)
        if e is None:
            raise MeshError(f"no edge {a}-{b}")
        return e

    def _edge_index_or_none(self, a, b):
        if not hasattr(self, "_edge_lookup"):
            self._edge_lookup = {_edge_key(*self.edges[e]): e for e in range(self.n_edges)}
        return self._edge_lookup.get(_edge_key(a, b))

    # -- io ----------------------------------------------------------------

    def to_text(self):
        lines = [f"vertices {self.n_verts}"]
        for x, y in self.verts:
            lines.append(f"{float(x)!r} {float(y)!r}")
        lines.append(f"triangles {self.n_tris}")
        for tri in self.tris:
            lines.append(f"{tri[0]} {tri[1]} {tri[2]}")
        bed = self.boundary_edges()
        lines.append(f"boundary {len(bed)}")
        for e in bed:
            a, b = self.edges[e]
            kind, comp = self.edge_label[e]
            lines.append(f"{a} {b} {kind} {comp}")
        return "\n".join(lines) + "\n"


def _assign_refedges(verts, tris):
    """Longest edge, ties broken by the smallest opposite-vertex index."""
    verts = np.asarray(verts, dtype=float)
    out = np.empty(len(tris), dtype=np.int64)
    for k, tri in enumerate(tris):
        lengths = []
        for i in range(3):
            a, b = verts[tri[(i + 1) % 3]], verts[tri[(i + 2) % 3]]
            lengths.append(np.hypot(*(b - a)))
        best = 0
        for i in (1, 2):
            if lengths[i] > lengths[best] + 1e-12 * max(lengths):
                best = i
            elif abs(lengths[i] - lengths[best]) <= 1e-12 * max(lengths) and tri[i] < tri[best]:
                best = i
        out[k] = best
    return out


def make_mesh(verts, tris, boundary_labels):
    """Build an initial Triangulation; fixes orientation and refinement edges."""
    verts = np.asarray(verts, dtype=float)
    tris = np.asarray(tris, dtype=np.int64).copy()
    for k in range(len(tris)):
        a = verts[tris[k, 1]] - verts[tris[k, 0]]
        b = verts[tris[k, 2]] - verts[tris[k, 0]]
        if a[0] * b[1] - a[1] * b[0] < 0:
            tris[k, 1], tris[k, 2] = tris[k, 2], tris[k, 1]
    ref = _assign_refedges(verts, tris)
    return Triangulation(verts, tris, ref, np.zeros(len(tris), dtype=np.int64),
                         np.ones(len(verts), dtype=bool), {}, boundary_labels)


def load_mesh(text):
    """Parse the plain-text mesh format."""
    tokens = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            tokens.append((ln, line.split()))
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(tokens):
            raise MeshError("unexpected end of mesh file")
        t = tokens[pos]
        pos += 1
        return t

    def expect_header(name):
        ln, parts = take()
        if len(parts) != 2 or parts[0] != name:
            raise MeshError(f"line {ln}: expected '{name} N'")
        try:
            return int(parts[1])
        except ValueError:
            raise MeshError(f"line {ln}: bad count in '{name}' header")

    nv = expect_header("vertices")
    verts = []
    for _ in range(nv):
        ln, parts = take()
        if len(parts) != 2:
            raise MeshError(f"line {ln}: expected 'x y'")
        try:
            verts.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise MeshError(f"line {ln}: bad coordinate")
    nt = expect_header("triangles")
    tris = []
    for _ in range(nt):
        ln, parts = take()
        if len(parts) != 3:
            raise MeshError(f"line {ln}: expected 'i j k'")
        try:
            tris.append(tuple(int(p) for p in parts))
        except ValueError:
            raise MeshError(f"line {ln}: bad vertex index")
    nb = expect_header("boundary")
    labels = []
    for _ in range(nb):
        ln, parts = take()
        if len(parts) != 4:
            raise MeshError(f"line {ln}: expected 'i j LABEL comp'")
        try:
            labels.append((int(parts[0]), int(parts[1]), parts[2], int(parts[3])))
        except ValueError:
            raise MeshError(f"line {ln}: bad boundary record")
    if pos != len(tokens):
        ln, _ = tokens[pos]
        raise MeshError(f"line {ln}: trailing content")
    return make_mesh(verts, tris, labels)


# -- built-in domains ------------------------------------------------------

def unit_square_mesh(label="C"):
    """Unit square split by the main diagonal, uniformly labeled."""
    verts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    tris = [(0, 1, 2), (0, 2, 3)]
    labels = [(0, 1, label, 0), (1, 2, label, 0), (2, 3, label, 0), (3, 0, label, 0)]
    return make_mesh(verts, tris, labels)


def square_mesh(corner0, corner1, label="C"):
    x0, y0 = corner0
    x1, y1 = corner1
    verts = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    tris = [(0, 1, 2), (0, 2, 3)]
    labels = [(0, 1, label, 0), (1, 2, label, 0), (2, 3, label, 0), (3, 0, label, 0)]
    return make_mesh(verts, tris, labels)
