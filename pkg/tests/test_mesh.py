import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from probescope.errors import GeometryError
from probescope.geometry import Disk, Ellipse, ImpedanceSpec, ObstacleSpec, Polygon
from probescope.mesh import (INTERFACE, OUTER, boundary_nodes, exterior_submesh, interior_submesh, mesh_domain,
                             read_mesh, refine_uniform, winding_number, write_mesh)


def test_conventions(coarse_mesh):
    m = coarse_mesh
    # outer nodes first (on the circle or on a chord of it), then exterior-only nodes, then nodes inside D
    r = np.hypot(*m.nodes[:m.n_outer].T)
    assert np.all(r <= 1 + 1e-12) and np.all(r >= 1 - 0.08**2 / 8 - 1e-12)
    ext = np.unique(m.triangles[m.triangle_tags == 0])
    assert ext.max() == m.n_exterior_nodes - 1 == len(ext) - 1
    assert np.all(m.areas > 0)
    assert m.euler_characteristic() == 1  # the full disk, obstacle included


def test_area_and_angle_quality(coarse_mesh):
    q = coarse_mesh.quality()
    assert math.degrees(q.min_angle) >= 29.9
    assert q.h_max <= 1.5 * 0.08
    # the polygonal area converges to pi with O(h^2) chord error
    assert coarse_mesh.area == pytest.approx(math.pi, rel=5e-3)


def test_interface_edges_follow_the_obstacle(coarse_mesh, disk_obstacle):
    e = coarse_mesh.tagged_edges(INTERFACE)
    c = np.asarray(disk_obstacle.components[0].center)
    r = np.hypot(*(coarse_mesh.nodes[e.ravel()] - c).T)
    # vertices of the input polygon, or Steiner points on its chords
    assert np.all(r <= 0.3 + 1e-12) and np.all(r >= 0.3 - 0.08**2 / (8 * 0.3) - 1e-12)
    loops = boundary_nodes(coarse_mesh, INTERFACE)
    assert len(loops) == 1 and loops[0].component == 0
    # left orientation: obstacle on the left means counter-clockwise around D
    assert winding_number(coarse_mesh.nodes[loops[0].nodes], c) == 1
    poly = disk_obstacle.components[0].polygonize(0.08)
    assert loops[0].length == pytest.approx(np.sum(np.hypot(*(np.roll(poly, -1, 0) - poly).T)), rel=1e-12)


def test_outer_loop_is_counter_clockwise(coarse_mesh):
    (loop,) = boundary_nodes(coarse_mesh, OUTER)
    assert winding_number(coarse_mesh.nodes[loop.nodes], (0, 0)) == 1


def test_submeshes_partition_the_triangles(coarse_mesh):
    ext = exterior_submesh(coarse_mesh)
    D = interior_submesh(coarse_mesh)
    assert ext.n_triangles + D.n_triangles == coarse_mesh.n_triangles
    assert ext.area + D.area == pytest.approx(coarse_mesh.area, rel=1e-13)
    poly = coarse_mesh.nodes[boundary_nodes(coarse_mesh, INTERFACE)[0].nodes]
    x, y = poly.T
    assert D.area == pytest.approx(0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y), rel=1e-12)
    assert D.area == pytest.approx(math.pi * 0.09, rel=2e-2)
    assert np.array_equal(ext.nodes, coarse_mesh.nodes[:ext.n_nodes])


def test_two_component_obstacle(unit_disk):
    obs = ObstacleSpec((Ellipse((-0.4, 0.0), (0.2, 0.1), 0.3),
                        Polygon(((0.2, -0.2), (0.5, -0.2), (0.5, 0.2), (0.2, 0.2)))), ImpedanceSpec(0.0, 1.0))
    m = mesh_domain(unit_disk, obs, 0.08, 0.03)
    assert m.n_components == 2
    for j, comp in enumerate(obs.components):
        D = interior_submesh(m, j)
        assert D.area == pytest.approx(comp.area, rel=2e-2)
        assert m.has_tag((INTERFACE, j))


def test_refine_uniform_quarters_triangles(coarse_mesh):
    r = refine_uniform(coarse_mesh)
    assert r.n_triangles == 4 * coarse_mesh.n_triangles
    assert r.area == pytest.approx(coarse_mesh.area, rel=1e-13)
    assert r.quality().h_max == pytest.approx(coarse_mesh.quality().h_max / 2, rel=1e-9)
    assert len(r.tagged_edges(INTERFACE)) == 2 * len(coarse_mesh.tagged_edges(INTERFACE))


def test_write_read_round_trip(tmp_path, coarse_mesh):
    p = tmp_path / "m.txt"
    write_mesh(coarse_mesh, p)
    m2 = read_mesh(p)
    assert np.array_equal(m2.nodes, coarse_mesh.nodes)
    assert np.array_equal(m2.triangles, coarse_mesh.triangles)
    assert np.array_equal(m2.edge_tags, coarse_mesh.edge_tags)


def test_invalid_geometry(unit_disk):
    with pytest.raises(GeometryError):
        mesh_domain(unit_disk, ObstacleSpec((Disk((0.95, 0.0), 0.2),)), 0.1)
    with pytest.raises(ValueError):
        mesh_domain(unit_disk, None, 0.0)


def test_locate_finds_containing_triangle(free_mesh, rng):
    pts = rng.uniform(-0.6, 0.6, (200, 2))
    t = free_mesh.locate(pts)
    assert np.all(t >= 0)
    p = free_mesh.nodes[free_mesh.triangles[t]]
    # barycentric coordinates all non-negative
    for q, tri in zip(pts, p):
        M = np.c_[tri[1] - tri[0], tri[2] - tri[0]]
        l = np.linalg.solve(M, q - tri[0])
        assert l.min() >= -1e-12 and l.sum() <= 1 + 1e-12
    assert free_mesh.locate([[2.0, 2.0]])[0] == -1


@given(st.floats(0.06, 0.2))
def test_h_max_tracks_target(h):
    m = mesh_domain(Disk((0, 0), 1.0), None, h)
    assert m.quality().h_max <= 1.5 * h
