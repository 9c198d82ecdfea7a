import numpy as np
import pytest

from vosub.errors import AssumptionViolation
from vosub.geometry import (Excitation, OrderField, Partition, ScalarField, boundary_point_index,
                            build_disk_mesh, build_partition_order, build_square_mesh, corner_values, lumped,
                            mesh_from_triangles, partition_of, read_mesh, tag_rings_sectors, write_mesh)


@pytest.mark.parametrize("level", [0, 1, 2, 3])
def test_disk_mesh_is_valid(level):
    m = build_disk_mesh(level)
    m.validate()
    K = 2 ** (level + 1)
    assert m.n_vertices == 1 + 3 * K * (K + 1)
    assert m.boundary_vertices.size == 6 * K
    assert np.allclose(np.hypot(*m.vertices[m.boundary_vertices].T), 1.0)
    # no obtuse angles
    assert m.max_angle() <= np.pi / 2 + 1e-12


def test_disk_area_matches_inscribed_polygon():
    m = build_disk_mesh(3)
    n = m.boundary_vertices.size
    assert m.areas.sum() == pytest.approx(0.5 * n * np.sin(2 * np.pi / n), rel=1e-12)


def test_mesh_size_halves():
    hs = [build_disk_mesh(l).h for l in (2, 3, 4)]
    assert hs[0] / hs[1] == pytest.approx(2, rel=0.05)
    assert hs[1] / hs[2] == pytest.approx(2, rel=0.05)
    assert hs[2] == pytest.approx(0.05, rel=0.3)


def test_boundary_normals_point_outward():
    m = build_disk_mesh(2)
    a, b = m.boundary_edges.T
    mid = 0.5 * (m.vertices[a] + m.vertices[b])
    assert np.all((m.boundary_normals * mid).sum(1) > 0.9 * np.hypot(*mid.T))


def test_square_mesh():
    m = build_square_mesh(4)
    m.validate()
    assert m.areas.sum() == pytest.approx(1.0)
    assert m.boundary_vertices.size == 16


def test_orientation_is_repaired():
    v = np.array([[0, 0], [1, 0], [0, 1.0]])
    m = mesh_from_triangles(v, [[0, 2, 1]])
    assert m.areas[0] == pytest.approx(0.5)


def test_tags_rings_sectors():
    m = tag_rings_sectors(build_disk_mesh(3), (0.5,), 2, 0.0)
    assert set(m.tags.tolist()) == {0, 1, 2, 3}
    c = m.centroids
    r = np.hypot(*c.T)
    assert np.all((m.triangle_tags >= 2) == (r >= 0.5))
    upper = np.isin(m.triangle_tags, [0, 2])
    assert np.all(c[upper, 1] >= 0) and np.all(c[~upper, 1] <= 0)
    assert sum(m.tag_area(t) for t in m.tags) == pytest.approx(m.areas.sum())


def test_boundary_point_index_ties_to_lowest():
    m = build_disk_mesh(2)
    i = boundary_point_index(m, (1.0, 0.0))
    assert np.allclose(m.vertices[i], [1, 0])
    # equidistant from two boundary vertices
    a, b = m.boundary_edges[0]
    mid = 0.5 * (m.vertices[a] + m.vertices[b]) * 1.5
    assert boundary_point_index(m, mid) == min(a, b)


def test_mesh_file_round_trip(tmp_path):
    m = tag_rings_sectors(build_disk_mesh(1), (0.5,), 3)
    write_mesh(m, tmp_path / "d")
    r = read_mesh(tmp_path / "d")
    assert np.array_equal(r.vertices, m.vertices)
    assert np.array_equal(r.triangle_tags, m.triangle_tags)
    assert r.areas.sum() == pytest.approx(m.areas.sum())


def test_mesh_file_bad_boundary_flag(tmp_path):
    m = build_disk_mesh(0)
    write_mesh(m, tmp_path / "d")
    node = (tmp_path / "d.node").read_text().replace("0 0.0 0.0 0", "0 0.0 0.0 1")
    (tmp_path / "d.node").write_text(node)
    with pytest.raises(ValueError, match="boundary flags"):
        read_mesh(tmp_path / "d")


def test_order_bounds():
    m = build_disk_mesh(1)
    OrderField.constant(m, 0.5)
    with pytest.raises(AssumptionViolation, match="max < 2\\*min"):
        build_partition_order(tag_rings_sectors(m, (), 2), Partition(((0, 0.3), (1, 0.7))))
    with pytest.raises(AssumptionViolation):
        OrderField.constant(m, 1.0)
    with pytest.raises(AssumptionViolation):
        OrderField.constant(m, 0.0)


def test_partition_round_trip():
    m = tag_rings_sectors(build_disk_mesh(2), (0.5,), 1)
    part = Partition(((1, 0.4), (0, 0.6)))
    a = build_partition_order(m, part)
    assert a.alpha_min == 0.4 and a.alpha_max == 0.6
    assert partition_of(m, a) == part
    with pytest.raises(ValueError):
        Partition(((0, 0.6), (1, 0.4)))


def test_order_power_is_elementwise():
    m = build_disk_mesh(1)
    a = OrderField.from_values(m, np.linspace(0.4, 0.7, m.n_triangles))
    assert np.allclose(a.power(0.3), 0.3 ** a.values)
    assert np.allclose(a.power(1.0), 1.0)


def test_excitation_transform():
    m = build_disk_mesh(1)
    nb = m.boundary_vertices.size
    e = Excitation(((3, np.full(nb, 2.0)), (2, np.ones(nb))))
    assert e.M == 3
    p = 0.7
    assert np.allclose(e.ghat(p), 2 / p**3 + 2 * 6 / p**4)
    h = 1e-6
    assert np.allclose(e.dghat_dp(p), (e.ghat(p + h) - e.ghat(p - h)) / (2 * h), rtol=1e-7)
    assert np.allclose(e.g(2.0), 4 + 16)
    with pytest.raises(AssumptionViolation):
        Excitation(((1, np.ones(nb)),))
    with pytest.raises(AssumptionViolation):
        Excitation(((2, np.zeros(nb)),)).check_assumptions()


def test_lumped_integrates_linear_exactly():
    m = build_square_mesh(5)
    f = m.vertices[:, 0] + 2 * m.vertices[:, 1]
    assert lumped(m, f).sum() == pytest.approx(1.5)
    assert corner_values(m, 2.0).shape == (m.n_triangles, 3)
    s = ScalarField.from_function(m, lambda x, y: x, "triangle")
    assert np.allclose(s.at_corners(m)[:, 0], m.centroids[:, 0])
