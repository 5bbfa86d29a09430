import numpy as np
import pytest

from intflux.errors import DomainError, ResourceLimitError
from intflux.spheremesh import DeformedGeometry, SphereMesh, build_icosphere


@pytest.mark.parametrize("level,v,e,f", [(0, 12, 30, 20), (1, 42, 120, 80),
                                         (2, 162, 480, 320),
                                         (4, 2562, 7680, 5120)])
def test_icosphere_counts(level, v, e, f):
    m = build_icosphere(level)
    assert (m.n_vertices, m.n_edges, m.n_faces) == (v, e, f)
    assert m.n_vertices - m.n_edges + m.n_faces == 2


def test_vertices_unit_and_area():
    m = build_icosphere(2)
    assert np.abs(np.linalg.norm(m.vertices, axis=1) - 1).max() < 1e-12
    assert abs(m.face_areas.sum() - 4 * np.pi) < 1e-3
    m3 = build_icosphere(3)
    assert abs(m3.face_areas.sum() - 4 * np.pi) < 1e-6


def test_level_guard():
    with pytest.raises(ResourceLimitError):
        build_icosphere(9)
    with pytest.raises(DomainError):
        build_icosphere(-1)
    with pytest.raises(DomainError):
        build_icosphere(1.5)


def test_every_edge_has_two_faces_opposite_signs():
    m = build_icosphere(2)
    col_sums = np.asarray(np.abs(m.d1).sum(axis=0)).ravel()
    assert np.all(col_sums == 2)
    signed = np.asarray(m.d1.sum(axis=0)).ravel()
    assert np.all(signed == 0)


def test_diamond_areas_tile_sphere():
    m = build_icosphere(3)
    assert abs(m.diamond_areas.sum() / (4 * np.pi) - 1) < 2e-3


def test_quad_points_partition_faces():
    m = build_icosphere(2)
    pts, wts = m.quad_points
    assert np.abs(wts.sum(axis=1) - m.face_areas).max() < 1e-12
    assert np.abs(np.linalg.norm(pts, axis=2) - 1).max() < 1e-12


def test_face_neighbors_symmetric():
    m = build_icosphere(1)
    for f in range(m.n_faces):
        for nb in m.face_neighbors[f]:
            assert f in m.face_neighbors[nb]


def test_off_roundtrip(tmp_path):
    m = build_icosphere(1)
    path = tmp_path / "mesh.off"
    m.to_off(path)
    m2 = SphereMesh.from_off(path)
    assert np.array_equal(m.faces, m2.faces)
    assert np.abs(m.vertices - m2.vertices).max() == 0
    assert m.content_hash == m2.content_hash


def test_deformed_geometry_ellipsoid():
    m = build_icosphere(2)
    geo = DeformedGeometry(m, m.vertices * np.array([1.5, 1.0, 1.0]))
    assert geo.face_areas.min() > 0
    # ellipsoid surface area exceeds the sphere's
    assert geo.face_areas.sum() > 4 * np.pi
    assert geo.n_faces == m.n_faces
    # identity deformation reproduces flat measures close to spherical ones
    geo_id = DeformedGeometry(m, m.vertices.copy())
    assert np.abs(geo_id.edge_lengths / m.edge_lengths - 1).max() < 5e-3
