"""Minimum-L^p-norm flows on the sphere mesh dual graph.

Solves min ||alpha||_p subject to codifferential(alpha) = f (optionally only
on a subset of faces).  Primary method is damped iteratively reweighted least
squares warm-started from the p = 2 solution; a Chambolle-Pock primal-dual
iteration takes over if IRLS stalls.  Every result carries a Fenchel duality
gap certificate: the dual bound is valid for any multiplier, so the reported
gap is an honest bound on suboptimality.
"""

import weakref
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cochains import OneFormCochain, TwoCochain, edge_norm_weights
from .errors import ConvergenceError, DomainError, InfeasibleError

FEAS_TOL = 1e-8

_MESH_CACHE = weakref.WeakKeyDictionary()


@dataclass
class FlowResult:
    alpha: OneFormCochain
    value: float               # ||alpha||_p
    gap: float                 # relative duality gap
    feasibility: float         # max face residual of the constraint
    iterations: int
    method: str
    lam: np.ndarray = field(repr=False, default=None)  # dual multipliers


class _Grounded:
    """Weighted face Laplacian with a constrained-face mask.

    Unconstrained faces are grounded (their multipliers pinned to zero), so
    the reduced system is nonsingular; with all faces constrained the system
    is singular but consistent and solved in the mean-zero complement.
    """

    def __init__(self, mesh, mask):
        self.mesh = mesh
        self.mask = mask
        self.all_constrained = bool(mask.all())
        e = mesh.edge_faces
        rows = np.concatenate([e[:, 0], e[:, 1], e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 0], e[:, 1], e[:, 1], e[:, 0]])
        self._rows, self._cols = rows, cols
        self._keep = None
        if self.all_constrained:
            # ground one node: fixes the constant kernel, consistent rhs only
            self._rows = np.concatenate([rows, [0]])
            self._cols = np.concatenate([cols, [0]])
        else:
            self.index = -np.ones(mesh.n_faces, dtype=np.int64)
            which = np.flatnonzero(mask)
            self.index[which] = np.arange(len(which))
            keep = mask[rows] & mask[cols]
            self._rows = self.index[rows[keep]]
            self._cols = self.index[cols[keep]]
            self._keep = keep
        self.n = int(mask.sum())

    def factor(self, conduct):
        data = np.concatenate([conduct, conduct, -conduct, -conduct])
        if self.all_constrained:
            data = np.concatenate([data, [1.0]])
        else:
            data = data[self._keep]
        lap = sp.coo_matrix((data, (self._rows, self._cols)),
                            shape=(self.n, self.n)).tocsc()
        return spla.splu(lap)

    def solve(self, lu, rhs_faces):
        if self.all_constrained:
            lam = lu.solve(rhs_faces)
            return lam - lam[0]
        lam = np.zeros(self.mesh.n_faces)
        lam[self.mask] = lu.solve(rhs_faces[self.mask])
        return lam


def _dual_value(f_vals, mask, lam, s, p, cost):
    """Fenchel dual: f.lam - sum_e conj(c_e |.|^p)((D^T lam)_e)."""
    q = p / (p - 1.0)
    conj = (p - 1.0) * np.abs(s / p) ** q * cost ** (1.0 - q)
    return float(f_vals[mask] @ lam[mask] - conj.sum())


def _project_feasible(mesh, grounded, lu2, w2, alpha, f_vals, mask):
    """Minimum-weighted-norm correction restoring the divergence constraint."""
    resid = f_vals - mesh.d1 @ alpha
    resid = np.where(mask, resid, 0.0)
    if np.abs(resid).max() == 0.0:
        return alpha
    mu = grounded.solve(lu2, resid)
    return alpha + (mesh.d1.T @ mu) / (2.0 * w2)


def convex_flow_min(f, p, tol=1e-6, max_iter=5000, mask=None, warm=None,
                    raise_on_stall=True, irls_budget=None):
    """Minimum-norm flow with prescribed divergence.

    Args:
        f: TwoCochain source; needs degree ~ 0 when all faces are constrained.
        p: exponent in (1, 2].
        tol: relative duality gap target.
        mask: optional boolean per-face array; the divergence constraint is
            enforced only where True.
        warm: optional (alpha_values, lam) pair to start from.

    Returns:
        FlowResult with a feasible alpha and certified gap.
    """
    if not (1.0 < p <= 2.0):
        raise DomainError("flow exponent must lie in (1, 2]")
    mesh = f.mesh
    f_vals = f.values
    if mask is None:
        mask = np.ones(mesh.n_faces, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
    if mask.all():
        deg = f.degree()
        if abs(deg) > FEAS_TOL * max(1.0, float(np.abs(f_vals).sum())):
            raise InfeasibleError(
                f"divergence data has nonzero total {deg:g}; no flow exists")
        f_vals = f_vals - deg * mesh.face_areas / mesh.face_areas.sum()

    cost = edge_norm_weights(mesh, p)
    w2 = edge_norm_weights(mesh, 2.0)
    if mask.all():
        per_mesh = _MESH_CACHE.setdefault(mesh, {})
        if "all" not in per_mesh:
            g = _Grounded(mesh, mask)
            per_mesh["all"] = (g, g.factor(0.5 / w2))
        grounded, lu2 = per_mesh["all"]
    else:
        grounded = _Grounded(mesh, mask)
        lu2 = grounded.factor(0.5 / w2)

    def objective(a):
        return float(np.sum(cost * np.abs(a) ** p))

    def finish(a, lam, its, method):
        a = _project_feasible(mesh, grounded, lu2, w2, a, f_vals, mask)
        prim = objective(a)
        dual = _dual_value(f_vals, mask, lam, mesh.d1.T @ lam, p, cost)
        gap = (prim - dual) / max(abs(dual), 1e-300)
        feas = float(np.abs(np.where(mask, f_vals - mesh.d1 @ a, 0.0)).max())
        alpha = OneFormCochain(mesh, a)
        return FlowResult(alpha=alpha, value=prim ** (1.0 / p), gap=gap,
                          feasibility=feas, iterations=its, method=method,
                          lam=lam)

    if not np.any(f_vals[mask]):
        zero = np.zeros(mesh.n_edges)
        return finish(zero, np.zeros(mesh.n_faces), 0, "trivial")

    # p = 2 solve; exact minimizer by Hodge orthogonality, also the warm start
    if warm is None or p == 2.0:
        lam = grounded.solve(lu2, f_vals)
        a = (mesh.d1.T @ lam) / (2.0 * w2)
        if p == 2.0:
            return finish(a, lam, 1, "poisson")
    else:
        # restore feasibility for this source before any line search
        a = _project_feasible(mesh, grounded, lu2, w2, warm[0].copy(),
                              f_vals, mask)
        lam = warm[1].copy()

    best = None

    def track(a, lam, its, method):
        nonlocal best
        res = finish(a, lam, its, method)
        if best is None or res.value < best.value or res.gap < best.gap:
            best = res
        return res

    # damped IRLS with epsilon continuation
    scale = float(np.abs(a).max()) or 1.0
    eps = (1e-4 if warm is not None else 0.25) * scale
    eps_floor = 1e-14 * scale
    prim = objective(a)
    stall = 0
    last_gap = np.inf
    budget = irls_budget if irls_budget is not None else max_iter
    for it in range(1, min(budget, max_iter) + 1):
        q = cost * p * 0.5 * (a * a + eps * eps) ** (0.5 * p - 1.0)
        lu = grounded.factor(0.25 / q * 2.0)
        lam = grounded.solve(lu, f_vals)
        a_new = (mesh.d1.T @ lam) / (2.0 * q)
        step = 1.0
        prim_new = objective(a_new)
        while prim_new > prim + 1e-15 * abs(prim) and step > 1e-4:
            step *= 0.5
            prim_new = objective(a + step * (a_new - a))
        a = a + step * (a_new - a)
        prim = objective(a)
        dual = _dual_value(f_vals, mask, lam, mesh.d1.T @ lam, p, cost)
        gap = (prim - dual) / max(abs(dual), 1e-300)
        eps = max(eps * 0.5, eps_floor)
        if gap <= 0.5 * tol:
            return track(a, lam, it, "irls")
        stall = stall + 1 if gap > 0.97 * last_gap else 0
        last_gap = min(last_gap, gap)
        if stall >= 12:
            break

    res = track(a, lam, max_iter, "irls")
    if res.gap <= tol or irls_budget is not None:
        # budgeted calls are screening solves: best effort, no fallback
        return best

    # Chambolle-Pock fallback for exponents near 1 where IRLS crawls
    res = _chambolle_pock(mesh, f_vals, mask, p, cost, tol, max_iter,
                          a, lam, finish)
    if best is None or res.gap < best.gap:
        best = res
    if best.gap <= tol:
        return best
    if raise_on_stall:
        raise ConvergenceError(
            f"flow solver gap {best.gap:.2e} above tol {tol:g}", best)
    return best


def quadratic_screen(mesh, alpha_vals, p, eps_rel=1e-3):
    """One-step IRLS model around an incumbent flow, for ranking sources.

    Returns a callable mapping face source values to the value of the
    incumbent-weighted quadratic flow problem; one sparse backsolve per
    call, monotone enough to shortlist candidate charge configurations.
    """
    cost = edge_norm_weights(mesh, p)
    scale = float(np.abs(alpha_vals).max()) or 1.0
    eps = eps_rel * scale
    q = cost * p * 0.5 * (alpha_vals * alpha_vals + eps * eps) \
        ** (0.5 * p - 1.0)
    mask = np.ones(mesh.n_faces, dtype=bool)
    grounded = _Grounded(mesh, mask)
    lu = grounded.factor(0.5 / q)
    areas = mesh.face_areas

    def model_value(f_vals):
        b = f_vals - f_vals.sum() * areas / areas.sum()
        lam = grounded.solve(lu, b)
        return 0.5 * float(lam @ b)

    return model_value


def _prox_power(z, tau_c, p, newton_iters=30):
    """prox of c|x|^p: solve t + tau*c*p*t^(p-1) = |z| elementwise."""
    az = np.abs(z)
    t = az.copy()
    cp = tau_c * p
    for _ in range(newton_iters):
        tp = np.maximum(t, 1e-300) ** (p - 1.0)
        h = t + cp * tp - az
        dh = 1.0 + cp * (p - 1.0) * np.maximum(t, 1e-300) ** (p - 2.0)
        t = np.maximum(t - h / dh, 0.0)
    return np.sign(z) * t


def _chambolle_pock(mesh, f_vals, mask, p, cost, tol, max_iter, a0, lam0,
                    finish):
    d1 = mesh.d1
    # operator norm of the masked incidence by power iteration
    v = np.ones(mesh.n_edges) / np.sqrt(mesh.n_edges)
    for _ in range(40):
        w = np.where(mask, d1 @ v, 0.0)
        v = d1.T @ w
        nv = np.linalg.norm(v)
        v /= nv
    opnorm = np.sqrt(nv)
    tau = 0.9 / opnorm
    sigma = 0.9 / opnorm
    a, lam = a0.copy(), lam0.copy()
    a_bar = a.copy()
    best = None
    check_every = 50
    for it in range(1, max_iter + 1):
        lam = lam + sigma * np.where(mask, d1 @ a_bar - f_vals, 0.0)
        a_prev = a
        a = _prox_power(a - tau * (d1.T @ lam), tau * cost, p)
        a_bar = 2.0 * a - a_prev
        if it % check_every == 0 or it == max_iter:
            res = finish(a, lam, it, "chambolle-pock")
            if best is None or res.gap < best.gap:
                best = res
            if best.gap <= tol:
                return best
    return best
