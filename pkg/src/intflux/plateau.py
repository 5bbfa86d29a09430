"""Boundary-constrained L^p minimization over integer-flux grid fields.

The unit ball is discretized as the staircase region of grid cells whose
centers lie inside it.  Boundary data is a 2-cochain on a sphere mesh; each
staircase boundary face receives the density at its radial direction times
the exact solid angle it subtends from the origin, then a proportional
correction pins the total outflow to the integer degree, so the divergence
constraint is feasible in exact arithmetic.

The inner convex problem (fixed integer charges) minimizes the cell-averaged
p-energy over face fluxes with exact per-cell divergence and fixed boundary
fluxes.  Divergence-free updates are parametrized by discrete curls of
interior edge circulations, so every iterate satisfies the constraints to
solver precision; iteratively reweighted least squares over the circulation
unknowns does the minimization, and a Fenchel dual point assembled from the
cell multipliers certifies the gap.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cochains import TwoCochain
from .errors import ConvergenceError, DomainError, InfeasibleError
from .fields3d import GridField, _rect_solid_angle, default_mesh, \
    restrict_to_sphere
from .reports import AuditReport
from .slicedist import SliceOpts, slice_distance

_complex_cache = {}


def _cg(op, b, x0=None, rtol=1e-12, maxiter=2000, M=None):
    x, info = spla.cg(op, b, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter,
                      M=M)
    return x


class BallComplex:
    """Staggered-grid complex of the staircase unit ball at resolution n."""

    def __init__(self, n):
        self.n = n
        self.h = 2.0 / n
        self.origin = np.array([-1.0, -1.0, -1.0])
        idx = np.indices((n, n, n))
        centers = self.origin + (np.stack(idx, axis=-1) + 0.5) * self.h
        self.inside = np.linalg.norm(centers, axis=-1) < 1.0
        self.cell_centers = centers
        self.cell_id = -np.ones((n, n, n), dtype=np.int64)
        which = np.argwhere(self.inside)
        self.cells = which
        self.cell_id[tuple(which.T)] = np.arange(len(which))
        self.n_cells = len(which)
        self._build_faces()
        self._build_curl()

    # ---- faces ----------------------------------------------------------
    def _face_sides(self, axis):
        """Inside flags of the two cells adjacent to each face of an axis."""
        n = self.n
        shape = [n, n, n]
        shape[axis] += 1
        minus = np.zeros(shape, dtype=bool)
        plus = np.zeros(shape, dtype=bool)
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[axis] = slice(1, None)
        sl_hi[axis] = slice(0, -1)
        minus[tuple(sl_lo)] = self.inside
        plus[tuple(sl_hi)] = self.inside
        return minus, plus

    def _build_faces(self):
        n, h = self.n, self.h
        self.face_shape = [(n + 1, n, n), (n, n + 1, n), (n, n, n + 1)]
        self.face_interior_id = []
        self.face_boundary = []     # per axis: (indices array, outward sign)
        n_int = 0
        for axis in range(3):
            minus, plus = self._face_sides(axis)
            interior = minus & plus
            fid = -np.ones(self.face_shape[axis], dtype=np.int64)
            which = np.argwhere(interior)
            fid[tuple(which.T)] = n_int + np.arange(len(which))
            n_int += len(which)
            self.face_interior_id.append(fid)
            bnd_out = np.argwhere(minus & ~plus)   # inside cell on minus side
            bnd_in = np.argwhere(~minus & plus)    # inside cell on plus side
            self.face_boundary.append((bnd_out, bnd_in))
        self.n_interior_faces = n_int
        # divergence (plus-side face enters +1, minus-side -1) and the
        # face-to-cell averaging operator over interior faces
        d_rows, d_cols, d_data = [], [], []
        a_rows, a_cols, a_data = [], [], []
        for axis in range(3):
            fid = self.face_interior_id[axis]
            for sl_take, sign in ((slice(1, None), 1.0),
                                  (slice(0, -1), -1.0)):
                sl = [slice(None)] * 3
                sl[axis] = sl_take
                f_sub = fid[tuple(sl)]
                mask = self.inside & (f_sub >= 0)
                d_rows.append(self.cell_id[mask])
                d_cols.append(f_sub[mask])
                d_data.append(np.full(mask.sum(), sign))
                a_rows.append(3 * self.cell_id[mask] + axis)
                a_cols.append(f_sub[mask])
                a_data.append(np.full(mask.sum(), 0.5 / h ** 2))
        self.div = sp.csr_matrix(
            (np.concatenate(d_data), (np.concatenate(d_rows),
                                      np.concatenate(d_cols))),
            shape=(self.n_cells, n_int))
        self.avg = sp.csr_matrix(
            (np.concatenate(a_data), (np.concatenate(a_rows),
                                      np.concatenate(a_cols))),
            shape=(3 * self.n_cells, n_int))
        # boundary faces: solid angles from the origin, outward orientation
        self._build_boundary(h)

    def _build_boundary(self, h):
        segs = []
        for axis in range(3):
            for which, outward in ((0, 1.0), (1, -1.0)):
                idxs = self.face_boundary[axis][which]
                if len(idxs) == 0:
                    continue
                corners = self._corners(axis, idxs)
                omega = _rect_solid_angle(np.zeros(3), *corners) * outward
                cell_idx = idxs.copy()
                if which == 0:
                    cell_idx[:, axis] -= 1     # inside cell on minus side
                fcent = self._face_centers(axis, idxs)
                segs.append({"axis": axis, "idx": idxs,
                             "outward": outward,
                             "cell": self.cell_id[tuple(cell_idx.T)],
                             "omega": omega, "center": fcent})
        self.boundary = segs
        self.boundary_total_omega = sum(s["omega"].sum() for s in segs)

    def _corners(self, axis, idxs):
        au, av = [a for a in range(3) if a != axis]
        offsets = [(0, 0), (1, 0), (1, 1), (0, 1)]
        if axis == 1:
            offsets = [(0, 0), (0, 1), (1, 1), (1, 0)]
        out = []
        for du, dv in offsets:
            c = idxs.astype(np.float64).copy()
            c[:, au] += du
            c[:, av] += dv
            out.append(self.origin + c * self.h)
        return out

    def _face_centers(self, axis, idxs):
        au, av = [a for a in range(3) if a != axis]
        c = idxs.astype(np.float64).copy()
        c[:, au] += 0.5
        c[:, av] += 0.5
        return self.origin + c * self.h

    # ---- curls ----------------------------------------------------------
    def _build_curl(self):
        n = self.n
        edge_shape = [(n, n + 1, n + 1), (n + 1, n, n + 1), (n + 1, n + 1, n)]
        # an edge is usable if no boundary face of the complex contains it
        usable = [np.zeros(s, dtype=bool) for s in edge_shape]
        for axis in range(3):
            fid = self.face_interior_id[axis]
            which = np.argwhere(fid >= 0)
            for e_ax, offs in _face_edges(axis):
                for off in offs:
                    usable[e_ax][tuple((which + off).T)] = True
        for axis in range(3):
            for part in (0, 1):
                idxs = self.face_boundary[axis][part]
                if len(idxs) == 0:
                    continue
                for e_ax, offs in _face_edges(axis):
                    for off in offs:
                        usable[e_ax][tuple((idxs + off).T)] = False
        self.edge_id = []
        n_e = 0
        for e_ax in range(3):
            eid = -np.ones(edge_shape[e_ax], dtype=np.int64)
            which = np.argwhere(usable[e_ax])
            eid[tuple(which.T)] = n_e + np.arange(len(which))
            n_e += len(which)
            self.edge_id.append(eid)
        self.n_edges = n_e
        rows, cols, data = [], [], []
        for axis in range(3):
            fid = self.face_interior_id[axis]
            which = np.argwhere(fid >= 0)
            fids = fid[tuple(which.T)]
            for (e_ax, off), sign in zip(_face_edge_cycle(axis),
                                         (1.0, 1.0, -1.0, -1.0)):
                eids = self.edge_id[e_ax][tuple((which + off).T)]
                keep = eids >= 0
                rows.append(fids[keep])
                cols.append(eids[keep])
                data.append(np.full(keep.sum(), sign))
        self.curl = sp.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows),
                                    np.concatenate(cols))),
            shape=(self.n_interior_faces, n_e))

    # ---- assembly into full staggered arrays ----------------------------
    def scatter(self, u_int, boundary_vals):
        arrs = []
        for axis in range(3):
            arr = np.zeros(self.face_shape[axis])
            fid = self.face_interior_id[axis]
            mask = fid >= 0
            arr[mask] = u_int[fid[mask]]
            arrs.append(arr)
        for seg, vals in zip(self.boundary, boundary_vals):
            arr = arrs[seg["axis"]]
            arr[tuple(seg["idx"].T)] = vals * seg["outward"]
        return arrs


def _face_edges(axis):
    """Edge axes and corner offsets of the 4 edges of a face normal to axis."""
    if axis == 0:
        return [(1, [(0, 0, 0), (0, 0, 1)]), (2, [(0, 0, 0), (0, 1, 0)])]
    if axis == 1:
        return [(2, [(0, 0, 0), (1, 0, 0)]), (0, [(0, 0, 0), (0, 0, 1)])]
    return [(0, [(0, 0, 0), (0, 1, 0)]), (1, [(0, 0, 0), (1, 0, 0)])]


def _face_edge_cycle(axis):
    """Boundary edges of a face in circulation order with signs +,+,-,-."""
    if axis == 0:    # x-face: +y edge at k, +z at j+1, -y at k+1, -z at j
        return [(1, (0, 0, 0)), (2, (0, 1, 0)), (1, (0, 0, 1)), (2, (0, 0, 0))]
    if axis == 1:    # y-face: +z edge at i, +x at k+1, -z at i+1, -x at k
        return [(2, (0, 0, 0)), (0, (0, 0, 1)), (2, (1, 0, 0)), (0, (0, 0, 0))]
    return [(0, (0, 0, 0)), (1, (1, 0, 0)), (0, (0, 1, 0)), (1, (0, 0, 0))]


def ball_complex(n):
    if n not in _complex_cache:
        _complex_cache[n] = BallComplex(n)
    return _complex_cache[n]


# ---------------------------------------------------------------------------
# boundary data transfer

def transfer_boundary(cx, phi):
    """Boundary face fluxes from a sphere-mesh cochain, exact total.

    Each staircase face samples the density at its radial direction and is
    weighted by its exact solid angle; a proportional correction makes the
    total outflow equal the rounded degree exactly.
    """
    mesh = phi.mesh
    dens = phi.values / mesh.face_areas
    target = float(round(phi.degree()))
    vals = []
    total = 0.0
    omega_abs = 0.0
    for seg in cx.boundary:
        dirs = seg["center"] / np.linalg.norm(seg["center"], axis=1,
                                              keepdims=True)
        fidx = np.argmax(dirs @ mesh.centroids.T, axis=1)
        v = dens[fidx] * seg["omega"]
        vals.append(v)
        total += v.sum()
        omega_abs += np.abs(seg["omega"]).sum()
    correction = (target - total) / omega_abs
    vals = [v + correction * np.abs(seg["omega"])
            for v, seg in zip(vals, cx.boundary)]
    return vals


@dataclass
class ChargeConfig3:
    cells: list                   # (i, j, k) integer triples
    multiplicities: list          # nonzero integers

    def total(self):
        return int(sum(self.multiplicities))

    def positions(self, cx):
        return np.array([cx.origin + (np.array(c) + 0.5) * cx.h
                         for c in self.cells])

    def as_cell_values(self, cx):
        q = np.zeros(cx.n_cells)
        for c, m in zip(self.cells, self.multiplicities):
            cid = cx.cell_id[tuple(c)]
            if cid < 0:
                raise DomainError(f"charge cell {c} is outside the ball")
            q[cid] += m
        return q

    def key(self):
        return tuple(sorted((tuple(c), int(m))
                            for c, m in zip(self.cells, self.multiplicities)))


@dataclass
class InnerResult:
    field: GridField
    objective: float
    gap: float
    div_residual: float
    iterations: int
    lam: np.ndarray = field(repr=False, default=None)
    u: np.ndarray = field(repr=False, default=None)


def _chain_solve(cx, t_int, y0_flat):
    """Exact solution of avg.T y = t, componentwise closest to y0.

    Along every maximal run of inside cells in each axis direction the
    averaging equations (y_i + y_{i+1})/(2 h^2) = t_face form a first-order
    recursion with one free constant per run; the constant is chosen by
    least squares against the candidate y0.  Feasibility is exact up to
    roundoff, which is what makes the Fenchel dual value a true bound.
    """
    n, h = cx.n, cx.h
    y = np.zeros_like(y0_flat)
    for axis in range(3):
        fid = np.moveaxis(cx.face_interior_id[axis], axis, 0)
        inside = np.moveaxis(cx.inside, axis, 0)
        cid = np.moveaxis(cx.cell_id, axis, 0)
        shape = inside.shape[1:]
        part = np.zeros((n,) + shape)
        hom = np.zeros((n,) + shape)
        rid = -np.ones((n,) + shape, dtype=np.int64)
        counter = 0
        prev_p = np.zeros(shape)
        prev_h = np.zeros(shape)
        prev_r = -np.ones(shape, dtype=np.int64)
        for i in range(n):
            ins = inside[i]
            linked = (fid[i] >= 0)     # face below connects into a run
            start = ins & ~linked
            ns = int(start.sum())
            new_ids = np.full(shape, -1, dtype=np.int64)
            new_ids[start] = counter + np.arange(ns)
            counter += ns
            t_here = np.zeros(shape)
            t_here[linked] = t_int[fid[i][linked]]
            cur_p = np.where(start, 0.0, 2.0 * h * h * t_here - prev_p)
            cur_h = np.where(start, 1.0, -prev_h)
            cur_r = np.where(start, new_ids, prev_r)
            cur_p = np.where(ins, cur_p, 0.0)
            cur_h = np.where(ins, cur_h, 0.0)
            cur_r = np.where(ins, cur_r, -1)
            part[i], hom[i], rid[i] = cur_p, cur_h, cur_r
            prev_p, prev_h, prev_r = cur_p, cur_h, cur_r
        mask = rid >= 0
        y0_grid = np.zeros((n,) + shape)
        y0_grid[mask] = y0_flat[3 * cid[mask] + axis]
        num = np.zeros(counter)
        den = np.zeros(counter)
        np.add.at(num, rid[mask], hom[mask] * (y0_grid[mask] - part[mask]))
        np.add.at(den, rid[mask], hom[mask] ** 2)
        const = num / np.maximum(den, 1.0)
        vals = part[mask] + const[rid[mask]] * hom[mask]
        y[3 * cid[mask] + axis] = vals
    return y


def _dual_gap(cx, p, h3, u, v0, b, lam0=None):
    """Feasible dual point from the optimality structure; returns gap parts."""
    v = (cx.avg @ u + v0).reshape(-1, 3)
    mags = np.linalg.norm(v, axis=1)
    primal = h3 * float(np.sum(mags ** p))
    with np.errstate(divide="ignore"):
        fac = np.where(mags > 0, mags ** (p - 2.0), 0.0)
    y0 = (h3 * p * fac[:, None] * v).reshape(-1)
    bty = cx.avg.T @ y0
    AAT = cx.div @ cx.div.T
    rhs = cx.div @ bty
    lam = _cg(AAT + 1e-12 * sp.eye(cx.n_cells), rhs, x0=lam0, rtol=1e-10)
    y = _chain_solve(cx, cx.div.T @ lam, y0)
    yc = np.linalg.norm(y.reshape(-1, 3), axis=1)
    q = p / (p - 1.0)
    conj = float(np.sum((p - 1.0) * (yc / p) ** q * h3 ** (1.0 - q)))
    dual = float(b @ lam) + float(y @ v0) - conj
    gap = (primal - dual) / max(abs(dual), 1e-300)
    return primal, dual, gap, lam


def inner_solve(charges, phi, p, grid_n, tol=1e-5, max_iter=60,
                warm_w=None, verbose=False):
    """Minimum-p-energy staggered field with fixed charges and boundary data.

    Args:
        charges: ChargeConfig3 with total equal to the rounded degree of phi.
        phi: boundary 2-cochain on a sphere mesh.
        p: exponent in (1, 1.5].
        grid_n: cells per axis of the cubic grid over [-1, 1]^3.
        tol: relative duality gap target.

    Returns:
        InnerResult whose field satisfies the divergence and boundary
        constraints to projection accuracy (~1e-12).
    """
    if not (1.0 < p <= 1.5):
        raise DomainError("3D energies require p in (1, 1.5]")
    cx = ball_complex(grid_n)
    h3 = cx.h ** 3
    bvals = transfer_boundary(cx, phi)
    target = float(round(phi.degree()))
    if charges.total() != int(target):
        raise InfeasibleError(
            f"total charge {charges.total()} does not match the boundary "
            f"degree {int(target)}")
    q = charges.as_cell_values(cx)
    # outward boundary fluxes enter the divergence of their cells
    b = q.copy()
    for seg, vals in zip(cx.boundary, bvals):
        np.add.at(b, seg["cell"], -vals)
    # boundary contribution to the cell averages
    v0 = np.zeros(3 * cx.n_cells)
    for seg, vals in zip(cx.boundary, bvals):
        np.add.at(v0, 3 * seg["cell"] + seg["axis"],
                  0.5 * vals * seg["outward"] / cx.h ** 2)

    # particular solution: one cell-Poisson solve
    AAT = cx.div @ cx.div.T
    psi = _cg(AAT + 1e-12 * sp.eye(cx.n_cells), b, rtol=1e-13, maxiter=4000)
    u_part = cx.div.T @ psi
    w = np.zeros(cx.n_edges) if warm_w is None else warm_w.copy()

    def vectors(w):
        return (cx.avg @ (u_part + cx.curl @ w) + v0).reshape(-1, 3)

    def objective(w):
        v = vectors(w)
        return h3 * float(np.sum(np.linalg.norm(v, axis=1) ** p))

    v = vectors(w)
    scale = float(np.linalg.norm(v, axis=1).max()) or 1.0
    eps = (0.05 if warm_w is None else 1e-3) * scale
    obj = objective(w)
    lam = None
    best = None
    it_done = 0
    for it in range(1, max_iter + 1):
        it_done = it
        mags2 = np.einsum("ij,ij->i", v, v)
        wgt = (0.5 * p * h3) * (mags2 + eps * eps) ** (0.5 * p - 1.0)
        wdiag = np.repeat(wgt, 3)

        def op(x):
            t = cx.curl @ x
            t = cx.avg @ t
            t = wdiag * t
            t = cx.avg.T @ t
            return cx.curl.T @ t

        lin = spla.LinearOperator((cx.n_edges, cx.n_edges), matvec=op)
        rhs = -(cx.curl.T @ (cx.avg.T @ (wdiag * (cx.avg @ u_part + v0))))
        w_new = _cg(lin, rhs, x0=w, rtol=1e-8, maxiter=600)
        step = 1.0
        obj_new = objective(w_new)
        while obj_new > obj + 1e-14 * abs(obj) and step > 1e-4:
            step *= 0.5
            obj_new = objective(w + step * (w_new - w))
        w = w + step * (w_new - w)
        v = vectors(w)
        obj = objective(w)
        eps = max(0.5 * eps, 1e-12 * scale)
        if it % 3 == 0 or it == max_iter:
            u = u_part + cx.curl @ w
            primal, dual, gap, lam = _dual_gap(cx, p, h3, u, v0, b, lam)
            if verbose:
                print(f"  irls {it}: obj {obj:.8f} gap {gap:.2e}")
            if best is None or gap < best[0]:
                best = (gap, w.copy(), lam)
            if gap <= tol:
                break

    gap, w, lam = best
    u = u_part + cx.curl @ w
    # exact projection of the divergence constraint
    resid = b - cx.div @ u
    if np.abs(resid).max() > 0:
        mu = _cg(AAT + 1e-12 * sp.eye(cx.n_cells), resid, rtol=1e-13)
        u = u + cx.div.T @ mu
    primal, dual, gap, lam = _dual_gap(cx, p, h3, u, v0, b, lam)
    div_res = float(np.abs(b - cx.div @ u).max())
    arrs = cx.scatter(u, bvals)
    charges_full = np.zeros((grid_n,) * 3)
    for c, m in zip(charges.cells, charges.multiplicities):
        charges_full[tuple(c)] += m
    gf = GridField(cx.origin, cx.h, (grid_n,) * 3, *arrs,
                   charges=charges_full, p=p, provenance="plateau")
    # exterior cells absorb the boundary outflow; record their divergence
    div_all = gf.divergence()
    charges_full[~cx.inside] = div_all[~cx.inside]
    res = InnerResult(field=gf, objective=primal, gap=gap,
                      div_residual=div_res, iterations=it_done, lam=lam, u=u)
    if gap > tol:
        raise ConvergenceError(
            f"inner solve gap {gap:.2e} above tol {tol:g}", res)
    return res


# ---------------------------------------------------------------------------
# outer integer-charge search

@dataclass
class PlateauOpts:
    tol: float = 1e-5
    seed: int = 0
    restarts: int = 4
    explore_n: int = 24            # exploration grid resolution
    max_rounds: int = 12
    full_solves_per_round: int = 2


@dataclass
class PlateauResult:
    field: GridField
    charges: ChargeConfig3
    energy: float                  # lp_energy over the unit ball
    objective: float               # the discrete objective that was minimized
    gap: float
    div_residual: float
    trace: list = field(default_factory=list)
    wall_time: float = 0.0

    def summary(self, with_timings=True):
        out = {
            "energy": self.energy,
            "objective": self.objective,
            "gap": self.gap,
            "div_residual": self.div_residual,
            "charges": [[list(map(int, c)), int(m)] for c, m in
                        zip(self.charges.cells, self.charges.multiplicities)],
            "accepted_moves": list(self.trace),
        }
        if with_timings:
            out["wall_time_s"] = self.wall_time
        return out


def _centroid_cell(cx, phi_mesh_phi):
    cxphi = phi_mesh_phi
    mesh = cxphi.mesh
    dens = cxphi.values
    centroid = (dens @ mesh.centroids) / max(abs(dens.sum()), 1e-12)
    return _snap_inside(cx, centroid)


def _snap_inside(cx, point):
    idx = np.clip(np.floor((np.asarray(point) - cx.origin) / cx.h),
                  0, cx.n - 1).astype(int)
    if cx.inside[tuple(idx)]:
        return tuple(int(v) for v in idx)
    inside_cells = cx.cells
    centers = cx.origin + (inside_cells + 0.5) * cx.h
    best = int(np.argmin(np.linalg.norm(centers - np.asarray(point), axis=1)))
    return tuple(int(v) for v in inside_cells[best])


def _neighbors(cx, cell):
    out = []
    for axis in range(3):
        for step in (-1, 1):
            c = list(cell)
            c[axis] += step
            if 0 <= c[axis] < cx.n and cx.inside[tuple(c)]:
                out.append(tuple(c))
    return out


class _Search3:
    def __init__(self, phi, p, grid_n, tol):
        self.phi = phi
        self.p = p
        self.grid_n = grid_n
        self.tol = tol
        self.cx = ball_complex(grid_n)
        self.cache = {}
        self.trace = []

    def evaluate(self, cfg, warm_w=None):
        key = cfg.key()
        if key in self.cache:
            return self.cache[key]
        try:
            res = inner_solve(cfg, self.phi, self.p, self.grid_n,
                              tol=self.tol)
        except ConvergenceError as err:
            res = err.result
        self.cache[key] = res
        return res

    def candidates(self, cfg, lam):
        cands = []
        items = list(zip(cfg.cells, cfg.multiplicities))
        for ci, (cell, m) in enumerate(items):
            step = 1 if m > 0 else -1
            for nb in _neighbors(self.cx, cell):
                new = dict((tuple(c), mm) for c, mm in items)
                new[tuple(cell)] = new[tuple(cell)] - step
                new[nb] = new.get(nb, 0) + step
                cands.append({c: m for c, m in new.items() if m != 0})
        if lam is not None:
            hi = int(np.argmax(lam))
            lo = int(np.argmin(lam))
            if hi != lo:
                chi = tuple(int(v) for v in self.cx.cells[hi])
                clo = tuple(int(v) for v in self.cx.cells[lo])
                new = dict((tuple(c), mm) for c, mm in items)
                new[clo] = new.get(clo, 0) + 1
                new[chi] = new.get(chi, 0) - 1
                cands.append({c: m for c, m in new.items() if m != 0})
        pos = [c for c, m in items if m > 0]
        neg = [c for c, m in items if m < 0]
        for cp in pos:
            for cn in neg:
                new = dict((tuple(c), mm) for c, mm in items)
                new[tuple(cp)] -= 1
                new[tuple(cn)] += 1
                cands.append({c: m for c, m in new.items() if m != 0})
        if len(items) >= 2:
            for ci, (cell, m) in enumerate(items):
                for cj, (cell2, m2) in enumerate(items):
                    if ci != cj and np.sign(m) == np.sign(m2):
                        new = dict((tuple(c), mm) for c, mm in items)
                        new[tuple(cell)] -= np.sign(m)
                        new[tuple(cell2)] += np.sign(m)
                        cands.append({c: int(m) for c, m in new.items()
                                      if m != 0})
        uniq = {}
        for cand in cands:
            cfg2 = ChargeConfig3(cells=list(cand.keys()),
                                 multiplicities=list(cand.values()))
            uniq[cfg2.key()] = cfg2
        return list(uniq.values())

    def surrogate(self, cfg, base_cfg, lam):
        """Dual sensitivity estimate of the value change."""
        if lam is None:
            return 0.0
        delta = 0.0
        base = dict((tuple(c), m)
                    for c, m in zip(base_cfg.cells,
                                    base_cfg.multiplicities))
        new = dict((tuple(c), m)
                   for c, m in zip(cfg.cells, cfg.multiplicities))
        for cell in set(base) | set(new):
            dq = new.get(cell, 0) - base.get(cell, 0)
            if dq:
                delta += dq * lam[self.cx.cell_id[cell]]
        return delta

    def descend(self, cfg, max_rounds, per_round):
        res = self.evaluate(cfg)
        for _ in range(max_rounds):
            cands = self.candidates(cfg, res.lam)
            if not cands:
                break
            order = sorted(cands, key=lambda c: self.surrogate(c, cfg,
                                                               res.lam))
            improved = False
            for cand in order[:per_round]:
                warm = None
                cres = self.evaluate(cand, warm)
                if cres.objective < res.objective - 1e-10:
                    self.trace.append({"to": [[list(map(int, c)), int(m)]
                                              for c, m in
                                              zip(cand.cells,
                                                  cand.multiplicities)],
                                       "objective": cres.objective})
                    cfg, res = cand, cres
                    improved = True
                    break
            if not improved:
                break
        return cfg, res


def outer_search(phi, p, grid_n, opts=None):
    """Greedy integer-charge search wrapped around the convex inner solve.

    Exploration (initial placement, restarts, greedy moves) runs on a
    coarser grid; the best configuration found is mapped to the target
    resolution and polished by one more greedy round there.  The returned
    value is certified per configuration; global optimality over charge
    placements is only heuristic.
    """
    opts = opts or PlateauOpts()
    start = time.perf_counter()
    deg = phi.degree()
    if abs(deg - round(deg)) > 1e-3:
        raise DomainError(f"boundary datum degree {deg:g} is not integral")
    target = int(round(deg))
    rng = np.random.default_rng(opts.seed)
    n_e = min(opts.explore_n, grid_n)
    cx_e = ball_complex(n_e)
    search = _Search3(phi, p, n_e, opts.tol)
    inits = []
    if target == 0:
        inits.append(ChargeConfig3(cells=[], multiplicities=[]))
    else:
        sgn = 1 if target > 0 else -1
        cell0 = _centroid_cell(cx_e, phi)
        inits.append(ChargeConfig3(cells=[cell0],
                                   multiplicities=[target]))
        if abs(target) > 1:
            cells = [cell0]
            for nb in _neighbors(cx_e, cell0)[:abs(target) - 1]:
                cells.append(nb)
            inits.append(ChargeConfig3(
                cells=cells, multiplicities=[sgn] * len(cells)))
    for _ in range(opts.restarts):
        if target == 0:
            inits.append(ChargeConfig3(cells=[], multiplicities=[]))
            continue
        sgn = 1 if target > 0 else -1
        pick = rng.choice(len(cx_e.cells), size=abs(target))
        cells = {}
        for idx in pick:
            c = tuple(int(v) for v in cx_e.cells[idx])
            cells[c] = cells.get(c, 0) + sgn
        inits.append(ChargeConfig3(cells=list(cells.keys()),
                                   multiplicities=list(cells.values())))
    best_cfg, best = None, None
    for cfg in inits:
        cfg2, res = search.descend(cfg, opts.max_rounds,
                                   opts.full_solves_per_round)
        if best is None or res.objective < best.objective:
            best_cfg, best = cfg2, res
    # lift to the target resolution and polish
    scale = grid_n / n_e
    lifted_cells = {}
    for c, m in zip(best_cfg.cells, best_cfg.multiplicities):
        pos = cx_e.origin + (np.array(c) + 0.5) * cx_e.h
        cc = _snap_inside(ball_complex(grid_n), pos)
        lifted_cells[cc] = lifted_cells.get(cc, 0) + m
    cfg_full = ChargeConfig3(cells=list(lifted_cells.keys()),
                             multiplicities=list(lifted_cells.values()))
    full_search = _Search3(phi, p, grid_n, opts.tol)
    cfg_full, res_full = full_search.descend(cfg_full, max_rounds=2,
                                             per_round=1)
    from .energy import Ball, lp_energy
    energy = lp_energy(res_full.field, Ball((0.0, 0.0, 0.0), 1.0), p)
    return PlateauResult(
        field=res_full.field, charges=cfg_full, energy=energy,
        objective=res_full.objective, gap=res_full.gap,
        div_residual=res_full.div_residual,
        trace=search.trace + full_search.trace,
        wall_time=time.perf_counter() - start)


# ---------------------------------------------------------------------------
# boundary trace membership

@dataclass
class TraceProfile:
    rhos: np.ndarray
    distances: np.ndarray
    degrees: np.ndarray
    degree_target: int
    decay_exponent: float
    verdict: bool
    reason: str

    def rows(self):
        return np.stack([self.rhos, self.distances], axis=1)


def trace_profile(fld, phi, rho_grid, p=1.25, mesh=None, opts=None,
                  degree_tol=0.2, small_distance=5e-3, extrap_factor=8.0,
                  extrap_tol=0.02):
    """Slice distances to the boundary datum along shrinking interior radii.

    The verdict is membership of the field in the boundary class of phi:
    degrees of near-boundary slices must match phi's, and the power-law
    extrapolation of the distances one extrap_factor below the smallest
    sampled radius must fall under the declared tolerance (or the distances
    already sit at quadrature scale).  A trace converging to a positive
    constant fits a near-zero exponent and fails the extrapolation.
    """
    opts = opts or SliceOpts(integrality_tol=degree_tol, restarts=1)
    mesh = mesh if mesh is not None else phi.mesh
    deg_target = int(round(phi.degree()))
    rhos = np.sort(np.asarray(rho_grid, dtype=np.float64))[::-1]
    dists, degs = [], []
    for rho in rhos:
        sl = restrict_to_sphere(fld, (0.0, 0.0, 0.0), 1.0 - rho, mesh)
        degs.append(sl.degree())
        if abs(sl.degree() - deg_target) > degree_tol:
            return TraceProfile(
                rhos=rhos, distances=np.array([]), degrees=np.array(degs),
                degree_target=deg_target, decay_exponent=np.nan,
                verdict=False, reason="slice degree mismatch")
        dists.append(slice_distance(sl, phi, p, opts).value)
    dists = np.array(dists)
    if np.all(dists <= small_distance):
        return TraceProfile(rhos=rhos, distances=dists,
                            degrees=np.array(degs),
                            degree_target=deg_target, decay_exponent=np.inf,
                            verdict=True, reason="distances at floor")
    mask = dists > 1e-12
    A = np.stack([np.log(rhos[mask]), np.ones(int(mask.sum()))], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(dists[mask]), rcond=None)
    expo = float(coef[0])
    d_extrap = float(np.exp(coef[1] + expo
                            * np.log(rhos.min() / extrap_factor)))
    ok = d_extrap <= extrap_tol
    reason = (f"extrapolated distance {d_extrap:.3g} at rho="
              f"{rhos.min() / extrap_factor:.3g} vs tolerance {extrap_tol:g}")
    return TraceProfile(rhos=rhos, distances=dists, degrees=np.array(degs),
                        degree_target=deg_target, decay_exponent=expo,
                        verdict=bool(ok), reason=reason)


def membership_check(fld, phi, rho_grid=None, p=1.25, mesh=None, opts=None):
    """Boundary-class membership via the trace profile decay rule."""
    if rho_grid is None:
        rho_grid = np.geomspace(0.04, 0.25, 6)
    prof = trace_profile(fld, phi, rho_grid, p=p, mesh=mesh, opts=opts)
    return prof.verdict, prof
