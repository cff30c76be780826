import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homog2d.mesh import (
    DIRICHLET,
    ROBIN,
    DomainSpec,
    GeometryError,
    boundary_distance,
    build_domain_mesh,
    build_unit_cell_mesh,
    export_mesh,
    unit_square,
)


@pytest.mark.parametrize("m", [2, 3, 4, 7])
def test_periodic_dof_count(m):
    mesh = build_unit_cell_mesh(m)
    assert mesh.n_dofs == m * m
    assert len(np.unique(mesh.dof_map)) == m * m


def test_periodic_twins_map_to_interior_representative():
    mesh = build_unit_cell_mesh(3)
    x = mesh.nodes
    for k, d in enumerate(mesh.dof_map):
        rep = x[np.flatnonzero(mesh.dof_map == d)]
        # all nodes sharing a DOF differ by integer shifts
        assert np.allclose(np.mod(rep - x[k] + 0.5, 1.0) - 0.5, 0.0)
    right = np.isclose(x[:, 0], 1.0) & ~np.isclose(x[:, 1], 1.0)
    left = np.isclose(x[:, 0], 0.0) & ~np.isclose(x[:, 1], 1.0)
    assert np.array_equal(np.sort(mesh.dof_map[right]), np.sort(mesh.dof_map[left]))


def test_periodic_invalid_resolution():
    with pytest.raises(ValueError, match="resolution"):
        build_unit_cell_mesh(1)


def test_prolongation_reproduces_periodic_functions():
    mesh = build_unit_cell_mesh(8)
    d = np.arange(mesh.n_dofs, dtype=float)
    nodal = mesh.prolongation @ d
    assert np.array_equal(nodal, d[mesh.dof_map])


def test_unit_square_counts():
    mesh = build_domain_mesh(unit_square(), 1 / 4)
    assert mesh.n_nodes == 25
    assert mesh.n_elements == 16
    assert len(mesh.boundary_facets) == 16
    assert np.all(mesh.facet_tags == DIRICHLET)


def test_robin_bottom_tags():
    mesh = build_domain_mesh(unit_square([0]), 1 / 4)
    facets = mesh.boundary_facets
    mid = mesh.nodes[facets].mean(axis=1)
    bottom = np.isclose(mid[:, 1], 0.0)
    assert np.all(mesh.facet_tags[bottom] == ROBIN)
    assert np.all(mesh.facet_tags[~bottom] == DIRICHLET)
    assert bottom.sum() == 4
    # bottom outward normal
    assert np.allclose(mesh.facet_normals[bottom], [0.0, -1.0])


def test_mesh_diameter():
    mesh = build_domain_mesh(unit_square(), 1 / 8)
    assert mesh.h == pytest.approx(np.sqrt(2) / 8, rel=1e-14)
    assert mesh.spacing == pytest.approx(1 / 8)


def test_dirichlet_nodes_exclude_robin_interior():
    mesh = build_domain_mesh(unit_square([0]), 1 / 4)
    y = mesh.nodes[mesh.dirichlet_nodes]
    # interior bottom nodes are free; the bottom corners touch Dirichlet edges
    free_bottom = np.isclose(mesh.nodes[:, 1], 0) & (mesh.nodes[:, 0] > 0) & (mesh.nodes[:, 0] < 1)
    assert not np.any(free_bottom[mesh.dirichlet_nodes])
    assert len(y) == 25 - 9 - 3


def test_boundary_distance_examples():
    sq = unit_square()
    assert boundary_distance(sq, (0.5, 0.5)) == pytest.approx(0.5)
    assert boundary_distance(sq, (0.1, 0.5)) == pytest.approx(0.1)


def test_strip_area():
    # |{x : d(x) < eps}| = 1 - (1 - 2 eps)^2
    eps = 0.1
    g = (np.arange(2000) + 0.5) / 2000
    X, Y = np.meshgrid(g, g)
    d = boundary_distance(unit_square(), np.stack([X.ravel(), Y.ravel()], axis=1))
    area = float(np.mean(d < eps))
    assert area == pytest.approx(1 - (1 - 2 * eps) ** 2, abs=1e-3)
    assert area == pytest.approx(0.36, abs=1e-3)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_boundary_distance_square_closed_form(x, y):
    d = boundary_distance(unit_square(), (x, y))
    assert d == pytest.approx(min(x, y, 1 - x, 1 - y), abs=1e-14)


def test_degenerate_polygon():
    with pytest.raises(GeometryError):
        DomainSpec(((0, 0), (1, 0), (2, 0)))
    with pytest.raises(GeometryError):
        DomainSpec(((0, 0), (1, 1), (1, 0), (0, 1)))


def test_only_convex_quadrilaterals_are_meshed():
    l_shape = DomainSpec(((0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)))
    with pytest.raises(GeometryError):
        build_domain_mesh(l_shape, 0.25)
    # distance still works for the L-shape
    assert boundary_distance(l_shape, (0.5, 0.5)) == pytest.approx(0.5)


def test_mapped_quadrilateral_area():
    quad = DomainSpec(((0, 0), (2, 0), (1.5, 1), (0.2, 1.2)))
    mesh = build_domain_mesh(quad, 0.1)
    from homog2d.fem import assemble_mass

    M = assemble_mass(mesh)
    ones = np.ones(mesh.n_nodes)
    assert ones @ M @ ones == pytest.approx(quad.area, rel=1e-12)


def test_locate_round_trip():
    mesh = build_domain_mesh(unit_square(), 1 / 7)
    rng = np.random.default_rng(0)
    p = rng.uniform(0, 1, (200, 2))
    e, s, t = mesh.locate(p)
    corners = mesh.nodes[mesh.elements[e]]
    lo = corners.min(axis=1)
    hi = corners.max(axis=1)
    assert np.all((p >= lo - 1e-12) & (p <= hi + 1e-12))
    assert np.all((s >= 0) & (s <= 1) & (t >= 0) & (t <= 1))


def test_export_mesh(tmp_path):
    mesh = build_domain_mesh(unit_square([0]), 1 / 2)
    path = tmp_path / "mesh.txt"
    export_mesh(mesh, path)
    text = path.read_text()
    lines = text.splitlines()
    assert len(lines) == 3 + 9 + 4 + 8
    assert sum(ln.startswith("facet") and "robin" in ln for ln in lines) == 2
    # repeated export is identical
    export_mesh(mesh, tmp_path / "again.txt")
    assert (tmp_path / "again.txt").read_text() == text
