import numpy as np
import pytest

from intflux.energy import (Ball, Box, blowup_invariance_error,
                            eps_regularity_experiment, jensen_constant,
                            lp_energy, monopole_ball_energy,
                            monotonicity_audit, rescaled_energy_profile)
from intflux.errors import DomainError
from intflux.fields3d import AnalyticField, TrigCurl, monopole, rasterize

P = 1.25


def test_centered_monopole_closed_form():
    f = monopole((0, 0, 0), 1)
    e = lp_energy(f, Ball((0, 0, 0), 1.0), P)
    assert abs(e - jensen_constant(P)) < 1e-10
    e2 = lp_energy(monopole((0, 0, 0), -2), Ball((0, 0, 0), 0.5), P)
    assert abs(e2 - monopole_ball_energy(2, 0.5, P)) < 1e-10


def test_zero_field_energy():
    z = AnalyticField([])
    assert lp_energy(z, Ball((0, 0, 0), 1.0), P) == 0.0


def test_two_far_charges_superpose():
    f = AnalyticField([((0.5, 0, 0), 1), ((-0.5, 0, 0), 1)])
    ball = Ball((0.5, 0, 0), 0.25)
    e = lp_energy(f, ball, P)
    single = monopole_ball_energy(1, 0.25, P)
    assert abs(e - single) / single < 0.02


def test_p_guard_and_warning():
    f = monopole((0, 0, 0), 1)
    with pytest.raises(DomainError):
        lp_energy(f, Ball((0, 0, 0), 1.0), 1.0)
    with pytest.warns(UserWarning):
        lp_energy(f, Ball((0, 0, 0), 1.0), 1.5)


def test_box_energy_brackets():
    f = monopole((0, 0, 0), 1)
    e = lp_energy(f, Box((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5)), P)
    assert monopole_ball_energy(1, 0.5, P) < e \
        < monopole_ball_energy(1, 0.5 * np.sqrt(3), P)


def test_grid_energy_96_cube():
    n = 96
    h = 2.0 / n
    f = monopole((h / 2, h / 2, h / 2), 1)
    g = rasterize(f, (-1, -1, -1), h, (n, n, n))
    e = lp_energy(g, Ball((h / 2, h / 2, h / 2), 1.0), P)
    assert abs(e - jensen_constant(P)) / jensen_constant(P) < 0.03


def test_rescaled_profile_constant_for_centered():
    f = monopole((0, 0, 0), 1)
    radii = np.geomspace(0.2, 0.9, 12)
    prof = rescaled_energy_profile(f, (0, 0, 0), radii, P)
    assert prof.rescaled.std() / prof.rescaled.mean() < 1e-10
    assert np.all(np.diff(prof.energy) > 0)
    assert np.abs(prof.surface_term).max() < 1e-10


def test_monotonicity_centered():
    f = monopole((0, 0, 0), 1)
    radii = 0.2 * (0.9 / 0.2) ** (np.arange(16) / 15)
    rep, prof = monotonicity_audit(f, (0, 0, 0), radii, P)
    assert rep.passed
    assert rep.metrics["max_rel_residual"] < 1e-6


def test_monotonicity_off_center():
    f = monopole((0.2, 0, 0), 1)
    radii = 0.3 * (0.9 / 0.3) ** (np.arange(16) / 15)
    rep, prof = monotonicity_audit(f, (0, 0, 0), radii, P)
    assert rep.passed
    assert rep.metrics["max_rel_residual"] < 0.05
    assert np.all(np.diff(prof.rescaled) > -1e-12)


def test_monotonicity_grid_guard():
    f = monopole((0, 0, 0), 1)
    with pytest.raises(DomainError):
        monotonicity_audit(f, (0, 0, 0), np.linspace(0.2, 0.8, 5), P)


def test_blowup_invariance():
    f = monopole((0, 0, 0), 1)
    err = blowup_invariance_error(f, [0.5, 0.25, 2.0],
                                  [(0.3, 0.2, 0.1), (0.5, -0.4, 0.2)])
    assert err == 0.0


def test_eps_regularity_monopole_equality_case():
    f = monopole((0, 0, 0), 1)
    rep = eps_regularity_experiment(f, P)
    assert abs(rep.metrics["energy_over_floor"] - 1.0) < 0.02
    assert rep.metrics["n_flagged"] == 1
    flagged = np.asarray(rep.metrics["flagged_points"])
    assert np.linalg.norm(flagged[0]) < 1e-12
    assert rep.passed


def test_eps_regularity_refuses_scaled_field():
    f = monopole((0, 0, 0), 1).scaled(0.5)
    rep = eps_regularity_experiment(f, P)
    assert not rep.passed
    assert rep.metrics.get("refused")


def test_eps_regularity_divergence_free():
    sm = AnalyticField([], TrigCurl(0.2, (1.0, 0.5, 0.0), (0, 0, 1)))
    rep = eps_regularity_experiment(sm, P)
    assert rep.passed
    assert rep.metrics["n_flagged"] == 0
    assert rep.metrics["energy_b1"] < jensen_constant(P)


def test_profile_csv(tmp_path):
    f = monopole((0, 0, 0), 1)
    prof = rescaled_energy_profile(f, (0, 0, 0), np.geomspace(0.3, 0.8, 8), P)
    path = tmp_path / "profile.csv"
    prof.save_csv(path)
    rows = open(path).read().splitlines()
    assert rows[0] == "r,energy,rescaled,surface_term"
    assert len(rows) == 9
