import numpy as np
import pytest

from intflux.errors import (DegenerateSliceError, DomainError,
                            SingularityError)
from intflux.fields3d import (AnalyticField, DipoleChain, GridField,
                              NeumannBallMonopole, TrigCurl, default_mesh,
                              dipole_chain, dipole_jensen_bounds, flux,
                              integer_flux_audit, monopole, property_P_scan,
                              rasterize, restrict_to_sphere)

MESH = default_mesh(3)


def test_monopole_fluxes():
    f = monopole((0, 0, 0), 1)
    assert abs(flux(f, (0, 0, 0), 0.5) - 1.0) < 1e-3
    assert abs(flux(f, (0.1, 0.2, 0.0), 0.6) - 1.0) < 1e-3
    assert abs(flux(f, (1.0, 0, 0), 0.3)) < 1e-3
    f2 = monopole((0.2, 0, 0), -2)
    assert abs(flux(f2, (0, 0, 0), 0.5) + 2.0) < 1e-3


def test_monopole_validation():
    with pytest.raises(DomainError):
        monopole((0, 0, 0), 0)
    f = monopole((0, 0, 0), 1)
    with pytest.raises(SingularityError):
        f.evaluate(np.zeros(3))


def test_centered_slice_constant_density():
    f = monopole((0, 0, 0), 1)
    sl = restrict_to_sphere(f, (0, 0, 0), 0.7, MESH)
    dens = sl.densities() * 4 * np.pi
    assert np.abs(dens - 1).max() < 1e-10
    assert abs(sl.degree() - 1) < 1e-12


def test_degenerate_band_rejected():
    f = monopole((0, 0, 0), 1)
    with pytest.raises(DegenerateSliceError):
        restrict_to_sphere(f, (0.5, 0, 0), 0.501, MESH)


def test_two_charge_slice():
    f = AnalyticField([((0.2, 0, 0), 1), ((-0.2, 0, 0), -1)])
    sl = restrict_to_sphere(f, (0, 0, 0), 0.6, MESH)
    assert abs(sl.degree()) < 1e-3
    assert np.abs(sl.densities()).max() > 1e-3   # nonconstant


def test_flux_equals_slice_degree():
    f = AnalyticField([((0.1, 0.2, -0.1), 2)])
    sl = restrict_to_sphere(f, (0, 0, 0), 0.7, MESH)
    assert flux(f, (0, 0, 0), 0.7, MESH) == sl.degree()


def test_integer_flux_audit_three_charges():
    fld = AnalyticField([((0.3, 0, 0), 1), ((-0.2, 0.1, 0), -1),
                         ((0, 0, 0.25), 2)])
    rep = integer_flux_audit(fld, 60, seed=1)
    assert rep.passed
    assert rep.metrics["max_deviation"] <= 1e-3


def test_audit_flags_half_integer():
    fld = AnalyticField([((0.1, 0, 0), 1), ((-0.3, 0, 0), 2)])
    rep = integer_flux_audit(fld.scaled(0.5), 30, seed=2)
    assert not rep.passed
    assert rep.metrics["max_deviation"] > 0.4


def test_audit_divergence_free():
    sm = AnalyticField([], TrigCurl(0.5, (2.0, 1.0, 0.0), (0, 0, 1)))
    rep = integer_flux_audit(sm, 25, seed=3)
    assert rep.passed
    assert rep.metrics["max_deviation"] < 1e-6


def test_property_p_scan():
    f = monopole((0, 0, 0), 1)
    scan = property_P_scan(f, [(0, 0, 0), (0.4, 0, 0), (0, 0.5, 0.2)],
                           np.geomspace(0.02, 0.3, 8))
    assert scan.singular.tolist() == [True, False, False]
    sm = AnalyticField([], TrigCurl(0.3, (1.0, 2.0, 0.0), (0, 0, 1)))
    scan2 = property_P_scan(sm, [(0, 0, 0), (0.3, 0.1, 0)],
                            np.geomspace(0.05, 0.3, 5))
    assert not scan2.singular.any()


def test_two_charge_scan_isolation():
    fld = AnalyticField([((0.3, 0, 0), 1), ((-0.3, 0, 0), -1)])
    scan = property_P_scan(fld, [(0.3, 0, 0), (0, 0, 0)],
                           np.geomspace(0.05, 0.25, 6))
    # only the neighborhood isolating a charge fails
    assert scan.singular.tolist() == [True, False]


def test_dipole_chain_invariants():
    p = 1.25
    ch = dipole_chain(p, 100)
    assert ch.radii.sum() <= 1.0 + 1e-12
    # pairwise disjoint balls on one axis
    gaps = np.diff(ch.centers[:, 0]) - (ch.radii[:-1] + ch.radii[1:])
    assert gaps.min() > -1e-12
    # partial sums follow c^(3-2p) H_n
    hn = np.cumsum(1.0 / np.arange(1, 101))
    expect = ch.c ** (3 - 2 * p) * hn
    assert np.abs(ch.partial_sums - expect).max() < 1e-12
    # per-ball sphere fluxes are integers (dipole sums to zero)
    mesh2 = default_mesh(2)
    mesh3 = default_mesh(3)
    for i in (0, 3):
        phi = flux(ch.field, ch.centers[i], ch.radii[i] * 0.9, mesh3)
        assert abs(phi - round(phi)) < 2e-3
    with pytest.raises(DomainError):
        dipole_chain(1.6, 10)
    with pytest.raises(DomainError):
        dipole_chain(1.25, 10 ** 5)


def test_dipole_jensen_partial_sums():
    ch = dipole_chain(1.25, 40)
    jb = dipole_jensen_bounds(ch, mesh_level=2, n_quad=10)
    assert abs(jb.sum() / ch.partial_sums[-1] - 1.0) < 0.05


def test_rasterize_exact_divergence():
    n = 20
    h = 2.0 / n
    f = AnalyticField([((h / 2, h / 2, h / 2), 1),
                       ((-0.4 + h / 3, 0.1 + h / 3, 0.02), -2)])
    g = rasterize(f, (-1, -1, -1), h, (n, n, n))
    div = g.divergence()
    assert np.abs(div - g.charges).max() < 1e-12
    assert abs(g.box_flux((0, 0, 0), (n, n, n)) + 1.0) < 1e-12
    assert abs(float(g.charges.sum()) + 1.0) < 1e-12


def test_rasterize_rejects_on_plane_charge():
    with pytest.raises(DomainError):
        rasterize(monopole((0.0, 0.0, 0.0), 1), (-1, -1, -1), 0.25,
                  (8, 8, 8))


def test_gridfield_io_roundtrip(tmp_path):
    n = 8
    h = 2.0 / n
    g = rasterize(monopole((h / 2, h / 2, h / 2), 1), (-1, -1, -1), h,
                  (n, n, n))
    g.p = 1.25
    path = tmp_path / "field.grid"
    g.save(path)
    g2 = GridField.load(path)
    assert g2.dims == g.dims
    assert np.abs(g2.fx - g.fx).max() == 0
    assert np.abs(g2.fz - g.fz).max() == 0
    assert np.abs(g2.charges - g.charges).max() == 0
    assert g2.p == 1.25


def test_gridfield_evaluate_matches_analytic():
    n = 32
    h = 2.0 / n
    f = monopole((h / 2, h / 2, h / 2), 1)
    g = rasterize(f, (-1, -1, -1), h, (n, n, n))
    pts = np.array([[0.5, 0.1, -0.2], [0.0, 0.55, 0.3]])
    approx = g.evaluate(pts)
    exact = f.evaluate(pts)
    rel = np.abs(approx - exact).max() / np.abs(exact).max()
    assert rel < 0.05


def test_analytic_field_json_roundtrip():
    fld = AnalyticField([((0.1, 0.2, 0.3), 2)],
                        TrigCurl(0.4, (1.0, 0.0, 2.0), (0, 1, 0)))
    d = fld.as_dict()
    fld2 = AnalyticField.from_dict(d)
    pts = np.array([[0.5, -0.2, 0.1]])
    assert np.abs(fld.evaluate(pts) - fld2.evaluate(pts)).max() < 1e-15


def test_neumann_ball_constant_trace():
    nb = NeumannBallMonopole((0.3, 0.1, 0), 1)
    sl = restrict_to_sphere(nb, (0, 0, 0), 0.9999, MESH)
    dens = sl.densities() * 4 * np.pi
    assert abs(sl.degree() - 1) < 1e-3
    assert dens.max() - dens.min() < 2e-3
    rep = integer_flux_audit(nb, 25, seed=5, region=((0, 0, 0), 1.0))
    assert rep.passed
    with pytest.raises(DomainError):
        NeumannBallMonopole((1.2, 0, 0), 1)
    with pytest.raises(DomainError):
        restrict_to_sphere(nb, (0.0, 0, 0), 1.2, MESH)
