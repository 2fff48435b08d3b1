from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmsm_uq.config import MU0, annulus_machine
from pmsm_uq.coupling import build_projectors, solve_step
from pmsm_uq.fem import (AssemblyError, assemble_current_source, assemble_magnet_source,
                         assemble_stiffness, domain_system, element_stiffness, magnet_orientations,
                         phase_currents, reluctivity, winding_layout, winding_matrix)
from pmsm_uq.geometry import COIL, MAGNET, build_mesh

coords = st.floats(-1.0, 1.0, allow_nan=False)


def test_unit_right_triangle_exact():
    K = element_stiffness(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    expected = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]], dtype=float)
    assert np.array_equal(K, expected)


def test_degenerate_triangle_rejected():
    with pytest.raises(AssemblyError):
        element_stiffness(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(pts=st.lists(st.tuples(coords, coords), min_size=3, max_size=3),
       angle=st.floats(0, 2 * np.pi), shift=st.tuples(coords, coords))
def test_element_stiffness_invariants(pts, angle, shift):
    p = np.array(pts)
    area2 = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1])
    if area2 < 1e-3:
        p = p[[0, 2, 1]]
        area2 = -area2
    if area2 < 1e-3:
        return
    K = element_stiffness(p)
    np.testing.assert_allclose(K, K.T, atol=1e-9)
    np.testing.assert_allclose(K.sum(axis=1), 0, atol=1e-8 * np.abs(K).max())
    assert np.linalg.eigvalsh(K).min() > -1e-8 * np.abs(K).max()
    R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    np.testing.assert_allclose(element_stiffness(p @ R.T + np.array(shift)), K,
                               atol=1e-8 * np.abs(K).max())


def test_assembly_independent_of_triangle_order(spec):
    m = build_mesh(spec, 0)
    dom = m.rotor
    nu = reluctivity(spec, dom.region)
    K1 = assemble_stiffness(dom.nodes, dom.triangles, nu, spec.axial_length)
    perm = np.random.default_rng(0).permutation(len(dom.triangles))
    K2 = assemble_stiffness(dom.nodes, dom.triangles[perm], nu[perm], spec.axial_length)
    assert (K1 != K2).nnz == 0


def test_winding_is_balanced(spec):
    phase, sign = winding_layout(spec)
    for k in range(3):
        assert np.sum(sign[phase == k]) == 0
        assert np.count_nonzero(phase == k) == 2 * spec.slot_count // 3


def test_winding_matrix_turns(spec):
    m = build_mesh(spec, 0)
    X = winding_matrix(spec, m.stator)
    # every coil side carries +-turns, so the absolute column sums count the sides
    coil_nodes = np.unique(m.stator.triangles[m.stator.region == COIL])
    assert np.allclose(X[np.setdiff1d(np.arange(m.stator.n_nodes), coil_nodes)], 0)
    np.testing.assert_allclose(X.sum(axis=0), 0, atol=1e-9)
    j, X2 = assemble_current_source(spec, m.stator, np.array([1.0, 0.0, 0.0]))
    np.testing.assert_array_equal(j, X2[:, 0])


def test_balanced_currents_sum_to_zero(spec):
    i = phase_currents(spec, np.linspace(0, 0.02, 17))
    np.testing.assert_allclose(i.sum(axis=1), 0, atol=1e-12)
    assert np.abs(i).max() == pytest.approx(spec.phase_current_amplitude, rel=1e-3)


def test_magnet_source_vanishes_for_uniform_magnetisation_interior():
    # a uniformly magnetised block only produces sources on its boundary
    x, y = np.meshgrid(np.linspace(0, 1, 5), np.linspace(0, 1, 5))
    nodes = np.column_stack([x.ravel(), y.ravel()])
    tris = []
    for i in range(4):
        for j in range(4):
            a, b, c, d = i * 5 + j, i * 5 + j + 1, (i + 1) * 5 + j, (i + 1) * 5 + j + 1
            tris += [[a, b, d], [a, d, c]]
    tris = np.array(tris)
    j = assemble_magnet_source(nodes, tris, np.tile([1.0, 0.0], (len(tris), 1)), 1.0)
    interior = [i * 5 + k for i in range(1, 4) for k in range(1, 4)]
    np.testing.assert_allclose(j[interior], 0, atol=1e-14)
    np.testing.assert_allclose(j.sum(), 0, atol=1e-14)


def test_magnets_alternate(spec):
    d = magnet_orientations(spec, 0)
    assert len(d) == 2 * spec.pole_pairs
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1)
    m = build_mesh(spec, 0)
    assert np.count_nonzero(m.rotor.region == MAGNET) > 0


def test_annulus_line_current_matches_closed_form():
    spec = annulus_machine()
    mesh = build_mesh(spec, 1)
    inner = mesh.rotor.ring(0)
    src = np.zeros(mesh.rotor.n_nodes)
    src[inner] = 1.0 / len(inner)
    stator = domain_system(spec, mesh, 0, nu=1 / MU0)
    rotor = domain_system(spec, mesh, 1, nu=1 / MU0, dirichlet=False, extra_source=src)
    sol = solve_step(stator, rotor, build_projectors(mesh, 0), np.zeros(3))

    def exact(p):
        return -MU0 / (2 * np.pi) * np.log(np.hypot(p[:, 0], p[:, 1]) / spec.stator_outer_radius)

    ref = exact(mesh.rotor.nodes).max()
    err = max(np.abs(sol.a_s - exact(mesh.stator.nodes)).max(), np.abs(sol.a_r - exact(mesh.rotor.nodes)).max())
    assert err / ref < 0.01
