"""Cochains on sphere meshes: norms, derivative operators, Poisson solves.

Conventions
-----------
A 2-cochain stores one number per face, the integral of the 2-form over that
face (flux units); densities are recovered by dividing by face area.  A
1-form cochain stores one number per edge, interpreted as the flow across
that edge between the two adjacent faces; ``codifferential`` is then the
dual-graph divergence, face by face.

The L^p quadrature for 1-forms uses the circumcentric edge mass
``len_e * dual_e`` (twice the kite area), corrected by the isotropic angular
factor ``kappa(p) = 2*Gamma((p+1)/2) / (sqrt(pi)*Gamma(p/2+1))`` so that a
field sampled through edge crossings carries the same norm as its continuum
counterpart regardless of edge direction statistics.  ``kappa(2) == 1``, and
with this mass the minimum-norm flow at p = 2 is exactly the gradient of the
face Poisson solution with weights ``len_e / dual_e`` (Hodge orthogonality).
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, InfeasibleError
from .spheremesh import DeformedGeometry, SphereMesh

DEGREE_TOL = 1e-3        # membership tolerance for integer total flux
POISSON_RTOL = 1e-12


def kappa(p):
    """Angular average 2*E|cos(theta)|^p over uniformly distributed angles."""
    if p <= 1:
        raise DomainError("p must exceed 1")
    return 2.0 * math.gamma((p + 1) / 2) / (math.sqrt(math.pi)
                                            * math.gamma(p / 2 + 1))


class TwoCochain:
    """Discrete 2-form: one face-integrated value per mesh face."""

    def __init__(self, mesh, values):
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.shape != (mesh.n_faces,):
            raise DomainError("value array does not match the mesh face count")
        self.mesh = mesh
        self.values = values

    def degree(self):
        return float(self.values.sum())

    def densities(self):
        return self.values / self.mesh.face_areas

    def is_integral(self, tol=DEGREE_TOL):
        d = self.degree()
        return abs(d - round(d)) <= tol

    def __add__(self, other):
        self._check(other)
        return TwoCochain(self.mesh, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return TwoCochain(self.mesh, self.values - other.values)

    def __mul__(self, scalar):
        return TwoCochain(self.mesh, self.values * float(scalar))

    __rmul__ = __mul__

    def _check(self, other):
        if other.mesh is not self.mesh:
            raise DomainError("cochains live on different meshes")


class OneFormCochain:
    """Discrete 1-form: one value per edge, a flow on the dual graph."""

    def __init__(self, mesh, values):
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.shape != (mesh.n_edges,):
            raise DomainError("value array does not match the mesh edge count")
        self.mesh = mesh
        self.values = values

    def __mul__(self, scalar):
        return OneFormCochain(self.mesh, self.values * float(scalar))

    __rmul__ = __mul__


def codifferential(alpha):
    """Dual-graph divergence of a 1-form: a 2-cochain with zero total.

    Every edge enters its two faces with opposite signs, so the degree of
    the result telescopes to zero exactly.
    """
    mesh = alpha.mesh
    return TwoCochain(mesh, mesh.d1 @ alpha.values)


def edge_norm_weights(mesh, p):
    """Weights w_e with ||alpha||_p^p = sum_e w_e |alpha_e|^p."""
    if p <= 1:
        raise DomainError("p must exceed 1")
    ln = mesh.edge_lengths
    return ln ** (1.0 - p) * mesh.dual_lengths / kappa(p)


def lp_norm(c, p):
    """L^p norm of a 2-cochain or a 1-form cochain.

    2-cochains: (sum |v_f/A_f|^p A_f)^(1/p).  1-forms: edge-crossing rule
    described in the module docstring.
    """
    if p <= 1:
        raise DomainError("p must exceed 1")
    if isinstance(c, TwoCochain):
        a = c.mesh.face_areas
        return float(np.sum(np.abs(c.values / a) ** p * a) ** (1.0 / p))
    if isinstance(c, OneFormCochain):
        w = edge_norm_weights(c.mesh, p)
        return float(np.sum(w * np.abs(c.values) ** p) ** (1.0 / p))
    raise DomainError(f"cannot take the norm of {type(c).__name__}")


def poisson_weights(mesh):
    """Finite-volume conductances len_e / dual_e of the dual graph."""
    return mesh.edge_lengths / mesh.dual_lengths


def face_laplacian(mesh, weights=None):
    if weights is None:
        weights = poisson_weights(mesh)
    d1 = mesh.d1
    return (d1 @ sp.diags(weights) @ d1.T).tocsr()


@dataclass
class PoissonResult:
    g: np.ndarray              # face potential, area-weighted mean zero
    alpha: OneFormCochain      # = weighted gradient of g
    residual: float            # relative residual of the linear solve


def solve_poisson(f, rtol=POISSON_RTOL):
    """Solve codifferential(alpha) = f with alpha the gradient flow of g.

    The conductances are len_e/dual_e, so alpha is simultaneously the
    minimum-L^2-norm flow with divergence f.  Requires degree(f) ~ 0
    (compatibility on a closed surface).
    """
    mesh = f.mesh
    deg = f.degree()
    if abs(deg) >= 1e-8 * max(1.0, float(np.abs(f.values).sum())):
        raise InfeasibleError(
            f"Poisson data must have zero total on the sphere, got {deg:g}")
    areas = mesh.face_areas
    b = f.values - deg * areas / areas.sum()
    lap = face_laplacian(mesh)
    g, info = spla.cg(lap, b, rtol=rtol, atol=0.0,
                      maxiter=20 * mesh.n_faces)
    if info != 0:
        raise InfeasibleError(f"Poisson CG did not converge (info={info})")
    g = g - np.average(g, weights=areas)
    alpha_vals = poisson_weights(mesh) * (mesh.d1.T @ g)
    bnorm = float(np.linalg.norm(b))
    res = float(np.linalg.norm(lap @ g - b)) / (bnorm if bnorm > 0 else 1.0)
    return PoissonResult(g=g, alpha=OneFormCochain(mesh, alpha_vals),
                         residual=res)


def legendre(ell, x):
    """P_ell(x) by the Bonnet recurrence."""
    p_prev = np.ones_like(x)
    if ell == 0:
        return p_prev
    p_cur = x
    for n in range(1, ell):
        p_prev, p_cur = p_cur, ((2 * n + 1) * x * p_cur - n * p_prev) / (n + 1)
    return p_cur


def harmonic_band(mesh, ell, axis=(0.0, 0.0, 1.0), p=None):
    """Zonal degree-ell band P_ell(axis . sigma) as a face-integrated cochain.

    For ell = 1 this is the projection of a coordinate function.  If ``p`` is
    given the result is normalized to unit L^p norm.
    """
    if ell < 1:
        raise DomainError("band degree must be >= 1")
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    pts, areas = mesh.quad_points
    dens = legendre(ell, pts @ axis)
    vals = np.sum(dens * areas, axis=1)
    c = TwoCochain(mesh, vals)
    if p is not None:
        n = lp_norm(c, p)
        if n == 0:
            raise DomainError("band vanished on this mesh")
        c = c * (1.0 / n)
    return c


def constant_cochain(mesh, degree):
    """Uniform-density cochain with the given total."""
    return TwoCochain(mesh, mesh.face_areas * (degree / mesh.face_areas.sum()))


class VertexMap:
    """Combinatorial map of a sphere mesh onto a deformed copy.

    Lipschitz constants are estimated from per-edge chord-length ratios;
    they bound the true constants from below, which is the honest direction
    for equivalence-interval audits.
    """

    def __init__(self, source, image_vertices):
        if not isinstance(source, SphereMesh):
            raise DomainError("source must be a SphereMesh")
        image_vertices = np.ascontiguousarray(image_vertices, dtype=np.float64)
        if image_vertices.shape != source.vertices.shape:
            raise DomainError("image vertices must match the source mesh")
        self.source = source
        self.image_vertices = image_vertices
        e = source.edges
        src = np.linalg.norm(source.vertices[e[:, 0]]
                             - source.vertices[e[:, 1]], axis=1)
        dst = np.linalg.norm(image_vertices[e[:, 0]]
                             - image_vertices[e[:, 1]], axis=1)
        if np.any(dst <= 0):
            raise DomainError("map collapses an edge")
        self.edge_ratios = dst / src
        self.lipschitz = float(self.edge_ratios.max())
        self.lipschitz_inv = float((1.0 / self.edge_ratios).max())

    @classmethod
    def identity(cls, mesh):
        return cls(mesh, mesh.vertices.copy())

    @classmethod
    def ellipsoid(cls, mesh, semi_axes):
        semi_axes = np.asarray(semi_axes, dtype=np.float64)
        if semi_axes.shape != (3,) or np.any(semi_axes <= 0):
            raise DomainError("semi_axes must be three positive numbers")
        return cls(mesh, mesh.vertices * semi_axes)

    def target_geometry(self):
        return DeformedGeometry(self.source, self.image_vertices)


def pullback(psi, c):
    """Pull a 2-cochain on the image surface back to the source mesh.

    Face-integrated values transport through the combinatorial identification
    unchanged, so the degree is preserved exactly.
    """
    host = c.mesh
    base = host.base if isinstance(host, DeformedGeometry) else host
    if base is not psi.source:
        raise DomainError("cochain does not live on the map's image surface")
    return TwoCochain(psi.source, c.values.copy())


def save_cochain_csv(c, path, p=None):
    """Write (face_id, value) rows plus a JSON sidecar with provenance."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["face_id", "value"])
        for i, v in enumerate(c.values):
            writer.writerow([i, repr(float(v))])
    sidecar = {
        "mesh_hash": c.mesh.content_hash,
        "p": p,
        "degree": c.degree(),
        "n_faces": int(c.mesh.n_faces),
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)


def load_cochain_csv(mesh, path, check_hash=True):
    try:
        with open(str(path) + ".json") as fh:
            sidecar = json.load(fh)
    except FileNotFoundError:
        sidecar = None
    if check_hash and sidecar is not None:
        if sidecar.get("mesh_hash") not in (None, mesh.content_hash):
            raise DomainError("cochain was written for a different mesh")
    vals = np.zeros(mesh.n_faces)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["face_id", "value"]:
            raise DomainError("unexpected cochain CSV header")
        for row in reader:
            idx = int(row[0])
            if not 0 <= idx < mesh.n_faces:
                raise DomainError("face id out of range for this mesh")
            vals[idx] = float(row[1])
    return TwoCochain(mesh, vals)
