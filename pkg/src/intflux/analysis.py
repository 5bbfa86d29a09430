"""Slice regularity experiments: Hölder bounds, path planning, metrization.

The admissible set consists of balls B(x, r) with |x| <= 1/2 and
B(x, r) inside the unit ball.  A segment between two balls is usable when
the cone condition |x - x'| <= (r - r')/2 with r > r' holds after orienting
it from the smaller to the larger radius; under that condition the slice
distance between the endpoint slices is bounded by
2 |r - r'|^(1-1/p) (shell energy)^(1/p).

Paths between arbitrary admissible balls use at most four such segments:
a direct segment when the cone condition already holds, a single peak or
valley when one intermediate ball suffices, and otherwise a W profile
(descend, cross through a low-radius pass, ascend), which realizes the same
four-segment estimate as the boundary-hugging construction; every planned
path keeps the largest radius gap within twice the endpoint distance.
"""

from dataclasses import dataclass, field

import numpy as np

from .cochains import TwoCochain, lp_norm
from .energy import Ball, lp_energy
from .errors import DegenerateSliceError, DomainError
from .fields3d import default_mesh, restrict_to_sphere
from .flows import convex_flow_min
from .reports import AuditReport
from .slicedist import SliceOpts, slice_distance

ADMISSIBLE_CENTER = 0.5
HOLDER_CONSTANT = 16.0


def ball_center(b):
    return np.asarray(b.center, dtype=np.float64)


def is_admissible(b, tol=1e-12):
    x = np.linalg.norm(ball_center(b))
    return b.radius > 0 and x <= ADMISSIBLE_CENTER + tol \
        and x + b.radius <= 1.0 + tol


def ball_distance(b1, b2):
    """Distance in (center, radius) space, the modulus in the Hölder bound."""
    dx = np.linalg.norm(ball_center(b1) - ball_center(b2))
    return float(np.hypot(dx, b1.radius - b2.radius))


def hypothesis_H(b_small, b_large, tol=1e-12):
    """Cone condition: |x - x'| <= (r - r')/2 with r' < r <= 1."""
    dx = np.linalg.norm(ball_center(b_large) - ball_center(b_small))
    return (b_large.radius > b_small.radius
            and b_large.radius <= 1.0 + tol
            and dx <= 0.5 * (b_large.radius - b_small.radius) + tol)


@dataclass(frozen=True)
class Segment:
    lower: Ball                  # smaller radius
    upper: Ball

    @property
    def radius_gap(self):
        return self.upper.radius - self.lower.radius

    def valid(self):
        return hypothesis_H(self.lower, self.upper)


@dataclass
class SegmentPath:
    balls: list                  # waypoint balls, endpoints included
    shape: str

    def segments(self):
        out = []
        for a, b in zip(self.balls[:-1], self.balls[1:]):
            lo, hi = (a, b) if a.radius < b.radius else (b, a)
            out.append(Segment(lower=lo, upper=hi))
        return out

    @property
    def n_segments(self):
        return max(len(self.balls) - 1, 0)

    def max_radius_gap(self):
        segs = self.segments()
        return max((s.radius_gap for s in segs), default=0.0)

    def cost(self, p):
        return sum(s.radius_gap ** (1.0 - 1.0 / p) for s in self.segments())

    def validate(self):
        endpoints_dist = ball_distance(self.balls[0], self.balls[-1]) \
            if len(self.balls) >= 2 else 0.0
        return (all(s.valid() for s in self.segments())
                and all(is_admissible(b) for b in self.balls)
                and self.n_segments <= 4
                and self.max_radius_gap() <= 2.0 * endpoints_dist + 1e-12)


def _mid_point(x1, x2, d1):
    d = np.linalg.norm(x2 - x1)
    if d == 0:
        return x1.copy()
    return x1 + (d1 / d) * (x2 - x1)


def _dedupe(balls):
    out = [balls[0]]
    for b in balls[1:]:
        prev = out[-1]
        if (abs(b.radius - prev.radius) < 1e-14
                and np.allclose(ball_center(b), ball_center(prev),
                                atol=1e-14)):
            continue
        out.append(b)
    return out


def plan_path(b1, b2, p=1.25, floor=0.02):
    """Connect two admissible balls by at most four cone segments.

    Candidates: the direct segment, a single peak (climb to a common upper
    ball), a single valley (descend to a common lower ball), and the
    four-segment W through a low-radius pass; among the feasible ones the
    smallest sum of radius-gap^(1-1/p) wins.
    """
    for b in (b1, b2):
        if not is_admissible(b):
            raise DomainError(f"ball {b} lies outside the admissible set")
    x1, x2 = ball_center(b1), ball_center(b2)
    r1, r2 = b1.radius, b2.radius
    if np.allclose(x1, x2) and r1 == r2:
        return SegmentPath(balls=[], shape="empty")
    d = float(np.linalg.norm(x2 - x1))
    cands = []
    lo, hi = (b1, b2) if r1 < r2 else (b2, b1)
    if hypothesis_H(lo, hi):
        cands.append(SegmentPath(balls=[b1, b2], shape="segment"))
    if d > 0:
        # peak: climb to a balanced common upper ball
        d1 = 0.25 * (r2 - r1 + 2.0 * d)
        if 0.0 <= d1 <= d:
            rm = r1 + 2.0 * d1
            apex = Ball(tuple(_mid_point(x1, x2, d1)), rm)
            cands.append(SegmentPath(balls=_dedupe([b1, apex, b2]), shape="peak"))
        # valley: descend to a balanced common lower ball
        d1v = 0.25 * (r1 - r2 + 2.0 * d)
        rv = r1 - 2.0 * d1v
        if 0.0 <= d1v <= d and rv > 0:
            low = Ball(tuple(_mid_point(x1, x2, d1v)), rv)
            cands.append(SegmentPath(balls=_dedupe([b1, low, b2]), shape="valley"))
        # W: descend both ends toward each other, cross via a low pass; the
        # pass radius is capped so the crossing apex stays inside B_1
        rho = min(floor, r1, r2, 0.25 * (r1 + r2))
        for _ in range(4):
            s1, s2 = 0.5 * (r1 - rho), 0.5 * (r2 - rho)
            if s1 + s2 >= d or rho <= 0:
                break
            pm1 = _mid_point(x1, x2, s1)
            pm2 = _mid_point(x2, x1, s2)
            dmid = float(np.linalg.norm(pm2 - pm1))
            xm = _mid_point(pm1, pm2, 0.5 * dmid)
            head = 1.0 - np.linalg.norm(xm) - dmid + 1e-12
            if 2.0 * rho <= head:
                cands.append(SegmentPath(
                    balls=_dedupe([b1, Ball(tuple(pm1), rho),
                                   Ball(tuple(xm), rho + dmid),
                                   Ball(tuple(pm2), rho), b2]), shape="w"))
                break
            rho = 0.45 * head
        # through-center route: climb inward until the descent cone toward
        # a small ball at the origin opens, cross there, climb back out
        rho0 = min(floor, r1, r2)
        waypoints = [b1]
        ok = rho0 > 0
        for x, r, at_start in ((x1, r1, True), (x2, r2, False)):
            nx = float(np.linalg.norm(x))
            t_need = max((2.0 * nx - r + rho0) / 4.0, 0.0)
            t_cap = 1.0 - nx - r
            if t_need > t_cap + 1e-12:
                ok = False
                break
            stops = []
            if t_need > 1e-12:
                xa = x * (1.0 - t_need / nx) if nx > 0 else x
                stops.append(Ball(tuple(xa), r + 2.0 * t_need))
            stops.append(Ball((0.0, 0.0, 0.0), rho0))
            if at_start:
                waypoints.extend(stops)
            else:
                tail = stops[:-1][::-1] + [b2]
                waypoints.extend(tail)
        if ok:
            cands.append(SegmentPath(balls=_dedupe(waypoints), shape="m"))
    cands = [c for c in cands if c.validate()]
    if not cands:
        raise DomainError("no admissible path found; endpoints too extreme "
                          "for the configured radius floor")
    return min(cands, key=lambda c: c.cost(p))


def slice_of_ball(fld, b, mesh=None):
    return restrict_to_sphere(fld, ball_center(b), b.radius, mesh)


def shell_energy(fld, b_small, b_large, p):
    """Energy of the field over the shell between two nested balls."""
    e_big = lp_energy(fld, b_large, p)
    e_small = lp_energy(fld, b_small, p)
    return max(e_big - e_small, 0.0)


def segment_holder_bound(fld, b1, b2, p):
    """Single-segment bound 2 |dr|^(1-1/p) (shell energy)^(1/p).

    Requires the cone condition on the pair (in the orientation from the
    smaller to the larger radius).
    """
    lo, hi = (b1, b2) if b1.radius < b2.radius else (b2, b1)
    if b1.radius == b2.radius and np.allclose(ball_center(b1),
                                              ball_center(b2)):
        return 0.0
    if not hypothesis_H(lo, hi):
        raise DomainError("segment violates the cone condition")
    gap = hi.radius - lo.radius
    return 2.0 * gap ** (1.0 - 1.0 / p) * shell_energy(fld, lo, hi,
                                                       p) ** (1.0 / p)


def radial_average_competitor(fld, b1, b2, mesh=None, n_gauss=32):
    """Average of the slice densities along the connecting segment.

    The construction interpolates the sphere family between the two balls
    and averages the component of the field parallel to each sphere, which
    is the competitor whose norm controls the slice distance under the cone
    condition.
    """
    lo, hi = (b1, b2) if b1.radius < b2.radius else (b2, b1)
    if not hypothesis_H(lo, hi):
        raise DomainError("segment violates the cone condition")
    mesh = mesh if mesh is not None else default_mesh()
    x_lo, x_hi = ball_center(lo), ball_center(hi)
    nodes, wts = np.polynomial.legendre.leggauss(n_gauss)
    ts = 0.5 * (nodes + 1.0)
    tw = 0.5 * wts
    pts, awts = mesh.quad_points
    qpts = getattr(fld, "charge_points", None)
    vals = np.zeros(mesh.n_faces)
    for t, w in zip(ts, tw):
        xt = x_lo + t * (x_hi - x_lo)
        rt = lo.radius + t * (hi.radius - lo.radius)
        if qpts is not None and len(qpts()):
            dist = np.linalg.norm(qpts() - xt, axis=1)
            if np.any(np.abs(dist - rt) < 1e-2 * rt):
                raise DegenerateSliceError(
                    "charge inside the averaging tube")
        x = xt + rt * pts
        vec = fld.evaluate(x)
        dens = rt * rt * np.einsum("fqk,fqk->fq", vec, pts)
        vals += w * np.einsum("fq,fq->f", dens, awts)
    return TwoCochain(mesh, vals)


def holder_audit(fld, n_pairs, p, seed=0, mesh=None, opts=None,
                 min_separation=0.05, min_radius=0.08, check_segments=True):
    """Sampled check of the Hölder estimate for the slice function.

    For each admissible pair: the slice distance, the chained per-segment
    bound along the planned path, and the global bound
    16 ||F||_p |B - B'|^(1-1/p).  Ratios above one are failures.
    """
    rng = np.random.default_rng(seed)
    mesh = mesh if mesh is not None else default_mesh()
    opts = opts or SliceOpts(restarts=1, seed=seed, integrality_tol=5e-3)
    total_norm = lp_energy(fld, Ball((0.0, 0.0, 0.0), 1.0), p) ** (1.0 / p)
    qpts = fld.charge_points() if hasattr(fld, "charge_points") else None

    def clear_of_charges(b):
        if qpts is None or not len(qpts):
            return True
        dist = np.linalg.norm(qpts - ball_center(b), axis=1)
        return bool(np.abs(dist - b.radius).min() >= 0.1 * b.radius)

    def sample_ball():
        while True:
            x = rng.normal(size=3)
            x *= (ADMISSIBLE_CENTER * rng.uniform() ** (1 / 3)
                  / np.linalg.norm(x))
            rmax = 1.0 - np.linalg.norm(x)
            if rmax <= min_radius:
                continue
            b = Ball(tuple(x), float(rng.uniform(min_radius, rmax)))
            if clear_of_charges(b):
                return b

    rows = []
    failures = []
    attempts = 0
    while len(rows) < n_pairs and attempts < 50 * n_pairs:
        attempts += 1
        b1, b2 = sample_ball(), sample_ball()
        if ball_distance(b1, b2) < min_separation:
            continue
        try:
            h1 = slice_of_ball(fld, b1, mesh)
            h2 = slice_of_ball(fld, b2, mesh)
        except DegenerateSliceError:
            continue
        try:
            path = plan_path(b1, b2, p=p)
        except DomainError:
            continue
        dist = slice_distance(h1, h2, p, opts).value
        global_bound = HOLDER_CONSTANT * total_norm \
            * ball_distance(b1, b2) ** (1.0 - 1.0 / p)
        chained = 0.0
        seg_ratio = 0.0
        usable = True
        for seg in path.segments():
            bound = segment_holder_bound(fld, seg.lower, seg.upper, p)
            chained += bound
            if check_segments:
                if not (clear_of_charges(seg.lower)
                        and clear_of_charges(seg.upper)):
                    usable = False
                    break
                try:
                    hs1 = slice_of_ball(fld, seg.lower, mesh)
                    hs2 = slice_of_ball(fld, seg.upper, mesh)
                except DegenerateSliceError:
                    usable = False
                    break
                ds = slice_distance(hs1, hs2, p, opts).value
                seg_ratio = max(seg_ratio,
                                ds / bound if bound > opts.tol else 0.0)
        if not usable:
            continue
        row = {
            "distance": dist,
            "global_bound": global_bound,
            "global_ratio": dist / global_bound,
            "chained_bound": chained,
            "chained_ratio": dist / (chained + opts.tol),
            "segment_ratio": seg_ratio,
            "shape": path.shape,
            "n_segments": path.n_segments,
        }
        rows.append(row)
        if row["global_ratio"] > 1.0 or row["segment_ratio"] > 1.0:
            failures.append(row)
    ratios = np.array([r["global_ratio"] for r in rows])
    seg_ratios = np.array([r["segment_ratio"] for r in rows])
    return AuditReport(
        name="holder", passed=len(failures) == 0 and len(rows) == n_pairs,
        metrics={"n_pairs": len(rows),
                 "max_global_ratio": float(ratios.max()) if len(rows) else np.nan,
                 "max_segment_ratio": float(seg_ratios.max()) if len(rows) else np.nan,
                 "observed_constant": float(
                     (ratios * HOLDER_CONSTANT).max()) if len(rows) else np.nan},
        failures=failures,
        config={"p": p, "seed": seed, "n_pairs": n_pairs,
                "min_separation": min_separation,
                "mesh_level": mesh.level}), rows


def test_pairing(diff, probe):
    """L^2-type pairing of two cochains' densities."""
    a = diff.mesh.face_areas
    return float(np.sum(diff.values * probe.values / a))


def default_probes(mesh):
    from .cochains import harmonic_band
    probes = []
    axes = [(0, 0, 1), (1, 0, 0), (0, 1, 0), (1, 1, 0), (0, 1, 1), (1, 0, 1)]
    for i, ax in enumerate(axes):
        probes.append(harmonic_band(mesh, 1 + (i % 2), axis=ax, p=2.0))
    return probes


def metrization_experiment(h_star, band_indices, p, opts=None,
                           amplitude_exponent=0.0):
    """Distance-vs-weak-convergence table for band perturbations.

    Rows carry the band degree, the perturbed norm, the zero-charge distance
    to the base cochain, its product with the band degree, and pairings
    against six fixed probe cochains (the finite weak-convergence proxy).
    With amplitude_exponent > 0 the sequence is inflated by ell^a, breaking
    equiboundedness; the table then simply records the blow-up.
    """
    from .cochains import harmonic_band
    mesh = h_star.mesh
    probes = default_probes(mesh)
    rows = []
    for ell in band_indices:
        band = harmonic_band(mesh, ell, p=p)
        amp = float(ell) ** amplitude_exponent
        h_n = TwoCochain(mesh, h_star.values + amp * band.values)
        diff = TwoCochain(mesh, h_n.values - h_star.values)
        res = convex_flow_min(diff, p, tol=1e-7, raise_on_stall=False)
        rows.append({
            "ell": int(ell),
            "norm": lp_norm(h_n, p),
            "distance": res.value,
            "ell_times_distance": ell * res.value,
            "pairings": [test_pairing(diff, pr) for pr in probes],
        })
    return rows


def blowup_experiment(p, rho_grid, level=7, resolution_factor=2.5,
                      cap_angle=0.3):
    """Fit the growth exponent of the local slice energy near a point charge.

    Slices of the unit monopole along spheres through the near side of the
    charge; the fitted quantity is the slice p-energy (the p-th power of
    the norm) restricted to a fixed cap around the nearest point, whose
    growth exponent is 2 - 2p.  Away from the cap the slice is regular and
    would flatten the fit; radii below the mesh resolution (or inside the
    degenerate band) are excluded and reported.
    """
    from .fields3d import monopole
    if not (1.0 < p < 1.5):
        raise DomainError("blow-up experiment expects p in (1, 1.5)")
    mesh = default_mesh(level)
    h_edge = float(mesh.edge_lengths.mean())
    fld = monopole((0.0, 0.0, 0.0), 1)
    center = np.array([0.0, 0.0, 1.0])
    cap = mesh.centroids @ np.array([0.0, 0.0, -1.0]) >= np.cos(cap_angle)
    areas = mesh.face_areas
    rows, excluded = [], []
    for rho in sorted(float(r) for r in rho_grid):
        if rho < resolution_factor * h_edge:
            excluded.append({"rho": rho, "reason": "below mesh resolution"})
            continue
        try:
            sl = restrict_to_sphere(fld, center, 1.0 + rho, mesh)
        except DegenerateSliceError:
            excluded.append({"rho": rho, "reason": "degenerate slice"})
            continue
        dens = np.abs(sl.values[cap] / areas[cap])
        rows.append((rho, float(np.sum(dens ** p * areas[cap]))))
    if len(rows) < 3:
        raise DomainError("not enough resolved radii for a fit")
    logs = np.log([r for r, _ in rows])
    logn = np.log([v for _, v in rows])
    A = np.stack([logs, np.ones_like(logs)], axis=1)
    coef, res, _, _ = np.linalg.lstsq(A, logn, rcond=None)
    pred = A @ coef
    ss_tot = float(np.sum((logn - logn.mean()) ** 2))
    r2 = 1.0 - float(res[0]) / ss_tot if len(res) and ss_tot > 0 else 1.0
    return {
        "slope": float(coef[0]),
        "intercept": float(coef[1]),
        "r_squared": r2,
        "target": 2.0 - 2.0 * p,
        "rows": [{"rho": r, "cap_energy": v} for r, v in rows],
        "excluded": excluded,
        "config": {"p": p, "level": level, "cap_angle": cap_angle,
                   "resolution_factor": resolution_factor},
    }
