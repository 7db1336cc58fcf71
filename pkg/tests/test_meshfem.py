import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracinv.errors import IncompatibleDataError, InvalidArgumentError
from fracinv.meshfem import (assemble_mass, assemble_neumann_load, assemble_stiffness, boundary_weights,
                             build_uniform_mesh, edge_values, export_mesh_text, interpolate,
                             solve_neumann_elliptic)

from conftest import disc_coefficient


def dense_stiffness(mesh, a):
    """Element-by-element loop with gradients from the inverse vertex matrix."""
    N = mesh.n_nodes
    K = np.zeros((N, N))
    for t, tri in enumerate(mesh.triangles):
        P = mesh.nodes[tri]
        C = np.linalg.inv(np.column_stack([np.ones(3), P]))  # rows: const, x, y coefficients
        grads = C[1:, :].T
        area = 0.5 * abs(np.linalg.det(np.column_stack([np.ones(3), P])))
        for i in range(3):
            for j in range(3):
                K[tri[i], tri[j]] += a[t] * area * grads[i] @ grads[j]
    return K


def midpoint_mass_product(mesh, u, v):
    """Edge-midpoint rule, exact for the quadratic product of two P1 functions."""
    total = 0.0
    for t, tri in enumerate(mesh.triangles):
        uu, vv = u[tri], v[tri]
        for a, b in ((0, 1), (1, 2), (2, 0)):
            total += mesh.areas[t] / 3.0 * 0.25 * (uu[a] + uu[b]) * (vv[a] + vv[b])
    return total


class TestMesh:
    def test_counts_n2(self):
        m = build_uniform_mesh(2)
        assert m.n_nodes == 9 and m.n_triangles == 8 and len(m.boundary_edges) == 8

    def test_paper_resolution(self):
        m = build_uniform_mesh(50)
        assert m.n_nodes == 2601 and m.h == pytest.approx(0.02)

    def test_area_partition(self):
        assert build_uniform_mesh(3).areas.sum() == pytest.approx(1.0, abs=1e-14)

    def test_orientation_and_boundary_walk(self):
        m = build_uniform_mesh(4)
        assert np.all(m.signed_areas > 0)
        b = m.nodes[m.boundary_nodes]
        assert np.allclose(b[0], [0, 0])
        # counter-clockwise: shoelace area of the boundary polygon is +1
        x, y = b[:, 0], b[:, 1]
        assert 0.5 * (x @ np.roll(y, -1) - y @ np.roll(x, -1)) == pytest.approx(1.0)

    @pytest.mark.parametrize("n", [0, 1, 2.5])
    def test_rejects_bad_n(self, n):
        with pytest.raises(InvalidArgumentError):
            build_uniform_mesh(n)

    def test_export(self, tmp_path):
        m = build_uniform_mesh(2)
        export_mesh_text(m, tmp_path / "m.txt")
        lines = (tmp_path / "m.txt").read_text().splitlines()
        assert lines[0] == "# nodes 9" and "# triangles 8" in lines


class TestMass:
    @pytest.mark.parametrize("n", [2, 5, 16])
    def test_total_mass(self, n):
        m = build_uniform_mesh(n)
        one = np.ones(m.n_nodes)
        assert one @ assemble_mass(m) @ one == pytest.approx(1.0, abs=1e-13)

    def test_constant_field(self):
        m = build_uniform_mesh(2)
        c = 3.7 * np.ones(m.n_nodes)
        assert c @ assemble_mass(m) @ c == pytest.approx(3.7 ** 2, rel=1e-14)

    def test_linear_field_exact(self):
        m = build_uniform_mesh(16)
        x = m.nodes[:, 0]
        M = assemble_mass(m)
        assert x @ M @ x == pytest.approx(1.0 / 3.0, abs=1e-13)
        assert x @ M @ x == pytest.approx(midpoint_mass_product(m, x, x), abs=1e-13)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 2 ** 31))
    def test_symmetric_positive(self, n, seed):
        m = build_uniform_mesh(n)
        M = assemble_mass(m)
        u = np.random.default_rng(seed).standard_normal(m.n_nodes)
        assert abs(M - M.T).max() == 0.0
        assert u @ M @ u > 0
        assert u @ M @ u == pytest.approx(midpoint_mass_product(m, u, u), rel=1e-12)


class TestStiffness:
    def test_linear_energy(self):
        m = build_uniform_mesh(7)
        x = m.nodes[:, 0]
        assert x @ assemble_stiffness(m, 1.0) @ x == pytest.approx(1.0, abs=1e-13)

    def test_linearity_in_a(self):
        m = build_uniform_mesh(5)
        K1 = assemble_stiffness(m, 1.0)
        K3 = assemble_stiffness(m, 3.0)
        assert abs(K3 - 3.0 * K1).max() < 1e-13

    def test_dense_oracle_disc(self):
        m = build_uniform_mesh(4)
        a = disc_coefficient(m)
        assert np.abs(assemble_stiffness(m, a).toarray() - dense_stiffness(m, a)).max() < 1e-12

    def test_constants_in_kernel(self, mesh8):
        a = disc_coefficient(mesh8)
        assert np.abs(assemble_stiffness(mesh8, a) @ np.ones(mesh8.n_nodes)).max() < 1e-12

    def test_rejects_nonpositive(self, mesh8):
        with pytest.raises(InvalidArgumentError):
            assemble_stiffness(mesh8, 0.0)
        with pytest.raises(InvalidArgumentError):
            assemble_stiffness(mesh8, np.ones(3))


class TestNeumannLoad:
    def test_constant_total(self, mesh8):
        b = assemble_neumann_load(mesh8, np.ones(len(mesh8.boundary_nodes)))
        assert b.sum() == pytest.approx(4.0, abs=1e-13)

    def test_cosine_mean_zero(self):
        m = build_uniform_mesh(20)
        p = m.nodes[m.boundary_nodes]
        eta = np.where(m.edge_side % 2 == 0, np.cos(2 * np.pi * p[:, 0]), np.cos(2 * np.pi * p[:, 1]))
        assert abs(assemble_neumann_load(m, eta).sum()) < 1e-12

    def test_hand_integrals_one_edge(self):
        m = build_uniform_mesh(2)
        ev = np.zeros((8, 2))
        ev[0] = [1.0, 2.0]  # bottom edge (0,0)-(0.5,0)
        ev[1] = [2.0, 0.0]  # bottom edge (0.5,0)-(1,0)
        exact = assemble_neumann_load(m, ev, quadrature="exact")
        trap = assemble_neumann_load(m, ev)
        assert exact[[0, 1, 2]] == pytest.approx([1 / 3, 3 / 4, 1 / 6], abs=1e-15)
        assert trap[[0, 1, 2]] == pytest.approx([1 / 4, 1.0, 0.0], abs=1e-15)
        assert np.all(exact[3:] == 0) and np.all(trap[3:] == 0)

    def test_weights_sum_to_perimeter(self, mesh8):
        assert boundary_weights(mesh8).sum() == pytest.approx(4.0)

    def test_bad_shape(self, mesh8):
        with pytest.raises(InvalidArgumentError):
            assemble_neumann_load(mesh8, np.ones(5))


class TestElliptic:
    def test_zero_data(self, mesh8):
        assert np.all(solve_neumann_elliptic(mesh8, 1.0, np.zeros(32)) == 0.0)

    def test_harmonic_linear(self):
        errs = []
        for n in (8, 16):
            m = build_uniform_mesh(n)
            eta = edge_values(m, lambda x, y, nx, ny: nx)  # nu . grad(x - 1/2)
            w = solve_neumann_elliptic(m, 1.0, eta)
            exact = m.nodes[:, 0] - 0.5
            errs.append(np.sqrt((w - exact) @ assemble_mass(m) @ (w - exact)))
        assert errs[1] < 1e-10 or errs[0] / errs[1] > 3.0

    def test_disc_inclusion_residual(self):
        m = build_uniform_mesh(16)
        a = disc_coefficient(m)
        p = m.nodes[m.boundary_nodes]
        eta = np.where(m.edge_side % 2 == 0, np.cos(2 * np.pi * p[:, 0]), np.cos(2 * np.pi * p[:, 1]))
        w = solve_neumann_elliptic(m, a, eta)
        r = assemble_stiffness(m, a) @ w - assemble_neumann_load(m, eta)
        assert np.linalg.norm(r) <= 1e-10
        assert abs(m.lumped_node_areas @ w) <= 1e-12

    def test_incompatible(self, mesh8):
        with pytest.raises(IncompatibleDataError) as ei:
            solve_neumann_elliptic(mesh8, 1.0, np.ones(32))
        assert ei.value.defect == pytest.approx(4.0)


def test_interpolate_and_gradient(mesh8):
    u = interpolate(mesh8, lambda x, y: 2 * x - 3 * y + 1)
    g = mesh8.gradient(u)
    assert np.allclose(g, [2.0, -3.0], atol=1e-12)
    assert math.isclose(mesh8.grid(u)[0, 8], 3.0)
