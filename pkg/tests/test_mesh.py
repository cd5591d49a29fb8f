import json

import numpy as np
import pytest

from diskpsc.errors import BoundsError, InvalidMeshError
from diskpsc.mesh import (
    DiskMesh,
    generate_disk_mesh,
    mesh_quality_report,
    prolongation_prefix,
    validate_mesh,
)


def test_level0_counts():
    m = generate_disk_mesh(0)
    assert (m.n_vertices, len(m.edges), m.n_triangles, len(m.boundary_loop)) == (7, 12, 6, 6)


def test_level1_counts():
    m = generate_disk_mesh(1)
    assert m.n_triangles == 24
    assert len(m.boundary_loop) == 12


@pytest.mark.parametrize("level", range(7))
def test_euler_and_boundary(level):
    m = generate_disk_mesh(level)
    assert m.n_vertices - len(m.edges) + m.n_triangles == 1
    assert len(m.boundary_edges) == 6 * 2**level
    assert np.all(m.signed_areas > 0)
    r = np.linalg.norm(m.vertices[m.boundary_loop], axis=1)
    assert np.abs(r - 1).max() <= 1e-12
    validate_mesh(m)


def test_boundary_loop_is_ccw_cycle():
    m = generate_disk_mesh(3)
    p = m.vertices[m.boundary_loop]
    ang = np.unwrap(np.arctan2(p[:, 1], p[:, 0]))
    assert np.all(np.diff(ang) > 0)
    assert len(set(m.boundary_loop.tolist())) == len(m.boundary_loop)


@pytest.mark.parametrize("level", range(6))
def test_nested(level):
    c, f = generate_disk_mesh(level), generate_disk_mesh(level + 1)
    assert prolongation_prefix(c, f) == c.n_vertices


def test_deterministic():
    a = generate_disk_mesh(4)
    generate_disk_mesh.cache_clear()
    b = generate_disk_mesh(4)
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.triangles, b.triangles)


@pytest.mark.parametrize("level", [-1, 11, 2.5])
def test_level_out_of_range(level):
    with pytest.raises(BoundsError):
        generate_disk_mesh(level)


def test_quality_level0_min_angle():
    # the six central triangles have a 60 degree apex and two equal unit sides
    q = mesh_quality_report(generate_disk_mesh(0))
    assert q.min_angle_deg == pytest.approx(60.0, abs=1e-9)
    assert q.max_angle_deg == pytest.approx(60.0, abs=1e-9)


@pytest.mark.parametrize("level", range(6))
def test_edge_length_shrinks(level):
    a = mesh_quality_report(generate_disk_mesh(level))
    b = mesh_quality_report(generate_disk_mesh(level + 1))
    assert b.min_edge_length > 0
    assert 0.4 <= b.min_edge_length / a.min_edge_length <= 0.6
    assert b.max_angle_deg < 90.0


def test_degenerate_triangle_rejected():
    m = generate_disk_mesh(1)
    tris = m.triangles.copy()
    tris[0] = tris[0][::-1]
    bad = DiskMesh(m.vertices, tris, m.boundary_loop, m.refinement_level)
    with pytest.raises(InvalidMeshError):
        mesh_quality_report(bad)
    with pytest.raises(InvalidMeshError):
        validate_mesh(bad)


def test_json_roundtrip(tmp_path):
    m = generate_disk_mesh(3)
    f = tmp_path / "m.json"
    m.save(f)
    data = json.loads(f.read_text())
    assert set(data) >= {"vertices", "triangles", "boundary_loop", "refinement_level"}
    back = DiskMesh.load(f)
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.boundary_loop, m.boundary_loop)
