import numpy as np
import pytest

from intflux.analysis import (Ball, ball_distance, blowup_experiment,
                              holder_audit, hypothesis_H, is_admissible,
                              metrization_experiment, plan_path,
                              radial_average_competitor,
                              segment_holder_bound, slice_of_ball)
from intflux.cochains import constant_cochain, lp_norm
from intflux.errors import DegenerateSliceError, DomainError
from intflux.fields3d import AnalyticField, default_mesh, monopole
from intflux.slicedist import SliceOpts, slice_distance

MESH = default_mesh(3)
P = 1.25
MONO = monopole((0, 0, 0), 1)


def test_hypothesis_H():
    assert hypothesis_H(Ball((0, 0, 0), 0.3), Ball((0.05, 0, 0), 0.6))
    assert not hypothesis_H(Ball((0, 0, 0), 0.3), Ball((0.3, 0, 0), 0.6))
    # equal radii never satisfy the strict inequality
    assert not hypothesis_H(Ball((0, 0, 0), 0.3), Ball((0.01, 0, 0), 0.3))


def test_admissible_set():
    assert is_admissible(Ball((0.5, 0, 0), 0.5))
    assert not is_admissible(Ball((0.6, 0, 0), 0.2))
    assert not is_admissible(Ball((0.4, 0, 0), 0.8))


def test_plan_path_empty_and_direct():
    b = Ball((0.1, 0, 0), 0.4)
    assert plan_path(b, b).n_segments == 0
    p = plan_path(Ball((0, 0, 0), 0.3), Ball((0.05, 0, 0), 0.6))
    assert p.shape == "segment" and p.n_segments == 1


def test_plan_path_antipodal_boundary_pair():
    b1, b2 = Ball((0.5, 0, 0), 0.1), Ball((-0.5, 0, 0), 0.1)
    path = plan_path(b1, b2)
    assert path.n_segments == 4
    assert path.max_radius_gap() <= 2 * ball_distance(b1, b2)
    assert path.validate()


def test_plan_path_random_coverage():
    rng = np.random.default_rng(0)
    for _ in range(300):
        def rb():
            x = rng.normal(size=3)
            x *= 0.5 * rng.uniform() ** (1 / 3) / np.linalg.norm(x)
            return Ball(tuple(x),
                        float(rng.uniform(0.01, 1 - np.linalg.norm(x))))
        path = plan_path(rb(), rb())
        assert path.validate()
        assert path.n_segments <= 4


def test_plan_path_rejects_outside():
    with pytest.raises(DomainError):
        plan_path(Ball((0.7, 0, 0), 0.1), Ball((0, 0, 0), 0.2))


def test_segment_bound_zero_for_equal():
    b = Ball((0.1, 0, 0), 0.4)
    assert segment_holder_bound(MONO, b, b, P) == 0.0


def test_segment_bound_concentric_monopole():
    lo, hi = Ball((0, 0, 0), 0.3), Ball((0, 0, 0), 0.6)
    bound = segment_holder_bound(MONO, lo, hi, P)
    h_lo = slice_of_ball(MONO, lo, MESH)
    h_hi = slice_of_ball(MONO, hi, MESH)
    d = slice_distance(h_lo, h_hi, P, SliceOpts(restarts=1)).value
    # concentric slices of the monopole coincide: distance ~ 0 <= bound
    assert d < 1e-6
    assert bound > 0.1


def test_segment_bound_requires_H():
    with pytest.raises(DomainError):
        segment_holder_bound(MONO, Ball((0, 0, 0), 0.3),
                             Ball((0.4, 0, 0), 0.5), P)


def test_radial_average_zero_field():
    zero = AnalyticField([])
    comp = radial_average_competitor(zero, Ball((0, 0, 0), 0.3),
                                     Ball((0.02, 0, 0), 0.5), MESH)
    assert np.abs(comp.values).max() == 0.0


def test_radial_average_concentric_monopole():
    lo, hi = Ball((0, 0, 0), 0.4), Ball((0, 0, 0), 0.7)
    comp = radial_average_competitor(MONO, lo, hi, MESH)
    dens = comp.densities() * 4 * np.pi
    # slices share the constant density, so the average equals it
    assert np.abs(dens - 1).max() < 1e-9


def test_competitor_controls_distance():
    lo, hi = Ball((0.05, 0.02, 0), 0.35), Ball((0.0, 0.0, 0), 0.55)
    comp = radial_average_competitor(MONO, lo, hi, MESH)
    h_lo = slice_of_ball(MONO, lo, MESH)
    h_hi = slice_of_ball(MONO, hi, MESH)
    d = slice_distance(h_lo, h_hi, P, SliceOpts(restarts=1)).value
    assert d <= lp_norm(comp, P) + 1e-6


def test_radial_average_requires_H():
    with pytest.raises(DomainError):
        radial_average_competitor(MONO, Ball((0, 0, 0), 0.3),
                                  Ball((0.5, 0, 0), 0.4), MESH)


def test_radial_average_degenerate_tube():
    # a charge inside the swept shell crosses one of the averaged spheres
    off = monopole((0.45, 0, 0), 1)
    with pytest.raises(DegenerateSliceError):
        radial_average_competitor(off, Ball((0, 0, 0), 0.3),
                                  Ball((0, 0, 0), 0.6), MESH)


def test_holder_audit_small():
    rep, rows = holder_audit(MONO, 6, P, seed=11, mesh=MESH)
    assert rep.passed
    assert rep.metrics["max_global_ratio"] <= 1.0
    assert rep.metrics["max_segment_ratio"] <= 1.0


def test_metrization_rows():
    h_star = constant_cochain(MESH, 1.0)
    rows = metrization_experiment(h_star, [2, 4, 8], P)
    dists = [r["distance"] for r in rows]
    assert dists[0] > dists[1] > dists[2]
    prods = [r["ell_times_distance"] for r in rows]
    assert max(prods) <= 2.0 * prods[0]
    # weak-convergence proxy pairings decay
    first = np.abs(rows[0]["pairings"]).max()
    last = np.abs(rows[-1]["pairings"]).max()
    assert last <= first + 1e-9


def test_metrization_non_equibounded_reported():
    h_star = constant_cochain(MESH, 1.0)
    rows = metrization_experiment(h_star, [2, 8], P,
                                  amplitude_exponent=2 * P - 2)
    norms = [r["norm"] for r in rows]
    assert norms[-1] > norms[0]   # equiboundedness fails, and is visible


def test_closure_replay_integer_slices_of_limit():
    # charge positions converging: every field in the sequence and the
    # limit keep integer slice degrees almost everywhere
    from intflux.fields3d import integer_flux_audit
    for n in (2, 4, 8):
        f = monopole((1.0 / n, 0, 0), 1)
        rep = integer_flux_audit(f, 20, seed=n)
        assert rep.passed
    limit = monopole((0, 0, 0), 1)
    rep = integer_flux_audit(limit, 30, seed=99)
    assert rep.passed


def test_blowup_experiment_smoke():
    out = blowup_experiment(1.25, np.geomspace(0.02, 0.12, 8), level=6)
    assert out["slope"] < -0.3
    assert out["r_squared"] > 0.9
    assert any(e["reason"] == "below mesh resolution" for e in out["excluded"])
    with pytest.raises(DomainError):
        blowup_experiment(1.7, [0.05], level=4)
