"""Triangulated unit-sphere meshes and their discrete-calculus geometry.

Faces are oriented outward (counterclockwise seen from outside).  Edges carry
a canonical orientation (low vertex index to high); every interior edge is
shared by exactly one face traversing it positively and one negatively, which
is what makes the face-based divergence telescope exactly.
"""

import hashlib
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import DomainError, ResourceLimitError

MAX_LEVEL = 8


def icosahedron():
    t = (1.0 + 5.0 ** 0.5) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return verts, faces


def subdivide(vertices, faces):
    """One 4:1 midpoint subdivision with vertices pushed to the unit sphere."""
    a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
    pairs = np.concatenate([
        np.stack([a, b], axis=1), np.stack([b, c], axis=1),
        np.stack([c, a], axis=1)])
    pairs_sorted = np.sort(pairs, axis=1)
    uniq, inv = np.unique(pairs_sorted, axis=0, return_inverse=True)
    mids = vertices[uniq[:, 0]] + vertices[uniq[:, 1]]
    mids /= np.linalg.norm(mids, axis=1)[:, None]
    base = len(vertices)
    mid_idx = base + inv.reshape(3, -1)  # rows: ab, bc, ca
    ab, bc, ca = mid_idx[0], mid_idx[1], mid_idx[2]
    new_faces = np.concatenate([
        np.stack([a, ab, ca], axis=1),
        np.stack([b, bc, ab], axis=1),
        np.stack([c, ca, bc], axis=1),
        np.stack([ab, bc, ca], axis=1)])
    return np.vstack([vertices, mids]), new_faces


def solid_angles(pa, pb, pc):
    """Signed solid angles of spherical triangles (Van Oosterom-Strackee)."""
    triple = np.einsum("...i,...i->...", pa, np.cross(pb, pc))
    denom = (1.0 + np.einsum("...i,...i->...", pa, pb)
             + np.einsum("...i,...i->...", pb, pc)
             + np.einsum("...i,...i->...", pa, pc))
    return 2.0 * np.arctan2(triple, denom)


def _arc(u, v):
    """Geodesic distance between unit vectors, accurate for small angles."""
    cross = np.linalg.norm(np.cross(u, v), axis=-1)
    dot = np.einsum("...i,...i->...", u, v)
    return np.arctan2(cross, dot)


class SphereMesh:
    """Oriented triangulation of the unit sphere with DEC geometry attached.

    Immutable after construction: all arrays are marked read-only, so any
    number of concurrent readers (solvers, audits) can share one instance.
    """

    def __init__(self, vertices, faces, level=None, validate=True):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        faces = np.ascontiguousarray(faces, dtype=np.int64)
        norms = np.linalg.norm(vertices, axis=1)
        if validate and np.any(np.abs(norms - 1.0) > 1e-12):
            raise DomainError("mesh vertices must lie on the unit sphere")
        # enforce outward orientation
        det = np.einsum("ij,ij->i", vertices[faces[:, 0]],
                        np.cross(vertices[faces[:, 1]], vertices[faces[:, 2]]))
        flip = det < 0
        if np.any(flip):
            faces = faces.copy()
            faces[flip, 1], faces[flip, 2] = faces[flip, 2], faces[flip, 1]
        self.vertices = vertices
        self.faces = faces
        self.level = level
        self._build_combinatorics()
        self._build_geometry()
        if validate:
            self._check_invariants()
        for arr in (self.vertices, self.faces, self.edges, self.face_edges,
                    self.face_edge_signs, self.edge_faces, self.face_areas,
                    self.edge_lengths, self.dual_lengths, self.diamond_areas,
                    self.centroids, self.circumcenters):
            arr.flags.writeable = False

    def _build_combinatorics(self):
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        canonical = np.sort(directed, axis=1)
        edges, inv = np.unique(canonical, axis=0, return_inverse=True)
        signs = np.where(directed[:, 0] == canonical[:, 0], 1.0, -1.0)
        n_f = len(f)
        self.edges = edges
        self.face_edges = inv.reshape(3, n_f).T.copy()
        self.face_edge_signs = signs.reshape(3, n_f).T.copy()
        rows = np.repeat(np.arange(n_f), 3)
        cols = self.face_edges.ravel()
        data = self.face_edge_signs.ravel()
        self.d1 = sp.csr_matrix((data, (rows, cols)),
                                shape=(n_f, len(edges)))
        # per edge: [face traversing it negatively, positively]
        counts = np.zeros(len(edges), dtype=np.int64)
        edge_faces = np.full((len(edges), 2), -1, dtype=np.int64)
        order = np.argsort(cols, kind="stable")
        for slot in order:
            e = cols[slot]
            edge_faces[e, 0 if data[slot] < 0 else 1] = rows[slot]
            counts[e] += 1
        if np.any(counts != 2) or np.any(edge_faces < 0):
            raise DomainError("mesh is not a closed oriented surface")
        self.edge_faces = edge_faces

    def _build_geometry(self):
        v, f = self.vertices, self.faces
        self.face_areas = solid_angles(v[f[:, 0]], v[f[:, 1]], v[f[:, 2]])
        cent = v[f[:, 0]] + v[f[:, 1]] + v[f[:, 2]]
        self.centroids = cent / np.linalg.norm(cent, axis=1)[:, None]
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        n /= np.linalg.norm(n, axis=1)[:, None]
        sign = np.sign(np.einsum("ij,ij->i", n, self.centroids))
        self.circumcenters = n * sign[:, None]
        self.edge_lengths = _arc(v[self.edges[:, 0]], v[self.edges[:, 1]])
        self.dual_lengths = _arc(self.circumcenters[self.edge_faces[:, 0]],
                                 self.circumcenters[self.edge_faces[:, 1]])
        self.diamond_areas = 0.5 * self.edge_lengths * self.dual_lengths

    def _check_invariants(self):
        if self.n_vertices - self.n_edges + self.n_faces != 2:
            raise DomainError("Euler characteristic is not 2")
        if abs(self.face_areas.sum() - 4.0 * np.pi) > 1e-6:
            raise DomainError("face areas do not sum to the sphere area")
        if np.any(self.face_areas <= 0):
            raise DomainError("degenerate or inverted face")
        n_comp, _ = connected_components(self.face_adjacency_matrix,
                                         directed=False)
        if n_comp != 1:
            raise DomainError("dual graph is not connected")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_faces(self):
        return len(self.faces)

    @cached_property
    def face_adjacency_matrix(self):
        """Sparse face-face adjacency across shared edges (the dual graph)."""
        i, j = self.edge_faces[:, 0], self.edge_faces[:, 1]
        ones = np.ones(len(i))
        n = self.n_faces
        m = sp.coo_matrix((ones, (i, j)), shape=(n, n))
        return (m + m.T).tocsr()

    @cached_property
    def face_neighbors(self):
        """(F, 3) neighbor face index across each of the face's edges."""
        ef = self.edge_faces[self.face_edges]          # (F, 3, 2)
        own = np.arange(self.n_faces)[:, None]
        return np.where(ef[:, :, 0] == own, ef[:, :, 1], ef[:, :, 0])

    @cached_property
    def quad_points(self):
        """One-level refined quadrature: 4 sub-centroids and sub-areas per face.

        The sub-triangles partition each spherical triangle, so the sub-areas
        sum to the face solid angle exactly (up to roundoff).
        """
        v, f = self.vertices, self.faces
        a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]

        def mid(u, w):
            m = u + w
            return m / np.linalg.norm(m, axis=1)[:, None]

        mab, mbc, mca = mid(a, b), mid(b, c), mid(c, a)
        tris = [(a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca)]
        pts = np.empty((self.n_faces, 4, 3))
        areas = np.empty((self.n_faces, 4))
        for k, (pa, pb, pc) in enumerate(tris):
            cent = pa + pb + pc
            pts[:, k, :] = cent / np.linalg.norm(cent, axis=1)[:, None]
            areas[:, k] = solid_angles(pa, pb, pc)
        return pts, areas

    @cached_property
    def content_hash(self):
        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        h.update(self.faces.tobytes())
        return h.hexdigest()[:16]

    def to_off(self, path):
        with open(path, "w") as fh:
            fh.write("OFF\n")
            fh.write(f"{self.n_vertices} {self.n_faces} {self.n_edges}\n")
            for x, y, z in self.vertices:
                fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
            for a, b, c in self.faces:
                fh.write(f"3 {a} {b} {c}\n")

    @classmethod
    def from_off(cls, path, level=None):
        with open(path) as fh:
            tokens = []
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    tokens.extend(line.split())
        if tokens[0] != "OFF":
            raise DomainError("not an OFF file")
        nv, nf = int(tokens[1]), int(tokens[2])
        pos = 4
        verts = np.array(tokens[pos:pos + 3 * nv], dtype=np.float64)
        verts = verts.reshape(nv, 3)
        pos += 3 * nv
        faces = np.empty((nf, 3), dtype=np.int64)
        for i in range(nf):
            if tokens[pos] != "3":
                raise DomainError("only triangle faces are supported")
            faces[i] = [int(t) for t in tokens[pos + 1:pos + 4]]
            pos += 4
        return cls(verts, faces, level=level)


def build_icosphere(level):
    """Icosahedron subdivided ``level`` times, projected to the unit sphere.

    V = 10*4^level + 2, E = 30*4^level, F = 20*4^level.
    """
    if level != int(level) or level < 0:
        raise DomainError("subdivision level must be a nonnegative integer")
    level = int(level)
    if level > MAX_LEVEL:
        raise ResourceLimitError(
            f"subdivision level {level} exceeds the guard ({MAX_LEVEL})")
    verts, faces = icosahedron()
    for _ in range(level):
        verts, faces = subdivide(verts, faces)
    return SphereMesh(verts, faces, level=level)


class DeformedGeometry:
    """Flat-measure geometry of a mapped copy of a sphere mesh.

    Shares the base mesh combinatorics (faces, edges, incidence); areas and
    lengths come from the image vertices, so norms and flow problems can be
    posed on the deformed surface directly.
    """

    def __init__(self, base, vertices):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        if vertices.shape != base.vertices.shape:
            raise DomainError("image vertex array must match the base mesh")
        self.base = base
        self.vertices = vertices
        self.faces = base.faces
        self.edges = base.edges
        self.face_edges = base.face_edges
        self.face_edge_signs = base.face_edge_signs
        self.edge_faces = base.edge_faces
        self.d1 = base.d1
        f = base.faces
        ab = vertices[f[:, 1]] - vertices[f[:, 0]]
        ac = vertices[f[:, 2]] - vertices[f[:, 0]]
        cross = np.cross(ab, ac)
        self.face_areas = 0.5 * np.linalg.norm(cross, axis=1)
        if np.any(self.face_areas <= 0):
            raise DomainError("deformed mesh has a degenerate face")
        self.centroids = (vertices[f[:, 0]] + vertices[f[:, 1]]
                          + vertices[f[:, 2]]) / 3.0
        self.edge_lengths = np.linalg.norm(
            vertices[base.edges[:, 0]] - vertices[base.edges[:, 1]], axis=1)
        circ = _flat_circumcenters(vertices, f)
        self.dual_lengths = np.linalg.norm(
            circ[base.edge_faces[:, 0]] - circ[base.edge_faces[:, 1]], axis=1)
        self.diamond_areas = 0.5 * self.edge_lengths * self.dual_lengths
        self.content_hash = base.content_hash + "-deformed"

    @property
    def n_faces(self):
        return self.base.n_faces

    @property
    def n_edges(self):
        return self.base.n_edges

    @property
    def face_neighbors(self):
        return self.base.face_neighbors


def _flat_circumcenters(vertices, faces):
    a = vertices[faces[:, 0]]
    u = vertices[faces[:, 1]] - a
    v = vertices[faces[:, 2]] - a
    uu = np.einsum("ij,ij->i", u, u)
    vv = np.einsum("ij,ij->i", v, v)
    uv = np.einsum("ij,ij->i", u, v)
    denom = 2.0 * (uu * vv - uv * uv)
    s = (vv * (uu - uv)) / denom
    t = (uu * (vv - uv)) / denom
    return a + s[:, None] * u + t[:, None] * v
