import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from fracinv.errors import InvalidArgumentError
from fracinv.meshfem import assemble_mass, assemble_stiffness, build_uniform_mesh, interpolate
from fracinv.spectral import caputo_of_power, mittag_leffler
from fracinv.timefrac import (BoundaryTrace, Excitation, FractionalSolver, RampProfile, StepProfile,
                              TimeGrid, backward_apply, caputo_apply, cq_weights, duality_gap,
                              graded_times, solve_adjoint, solve_forward, solve_semidiscrete,
                              trapezoid_time_weights)

from conftest import disc_coefficient


def dense_spacetime(mesh, a, alpha, N, T=1.0):
    """Block lower-triangular matrix of the stepping scheme for ``W^1..W^N``."""
    M = assemble_mass(mesh).toarray()
    K = assemble_stiffness(mesh, a).toarray()
    om = cq_weights(alpha, N, T / N).omega
    nn = mesh.n_nodes
    L = np.zeros((N * nn, N * nn))
    for n in range(N):
        L[n * nn:(n + 1) * nn, n * nn:(n + 1) * nn] = om[0] * M + K
        for j in range(1, n + 1):
            L[n * nn:(n + 1) * nn, (n - j) * nn:(n - j + 1) * nn] = om[j] * M
    return L


class TestWeights:
    def test_binomial_half(self):
        b = cq_weights(0.5, 5, 1.0).omega
        assert b[:5] == pytest.approx([1.0, -0.5, -0.125, -0.0625, -0.0390625], abs=1e-15)

    def test_first_order_limit(self):
        tau = 0.1
        w = cq_weights(1 - 1e-12, 6, tau).omega
        assert w[:2] == pytest.approx([1 / tau, -1 / tau], abs=1e-8)
        assert np.abs(w[2:]).max() < 1e-8

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.01, 0.99), st.integers(1, 300))
    def test_sign_and_partial_sums(self, alpha, N):
        b = cq_weights(alpha, N, 1.0).omega
        assert np.all(b[1:] < 0)
        s = np.cumsum(b)
        assert np.all(s > 0) and np.all(np.diff(s) < 0)

    @pytest.mark.parametrize("alpha,N", [(0.0, 4), (1.0, 4), (0.5, 0), (0.5, 2.5)])
    def test_rejects(self, alpha, N):
        with pytest.raises(InvalidArgumentError):
            cq_weights(alpha, N, 0.1)


class TestCaputo:
    def test_constant_is_zero(self):
        w = cq_weights(0.4, 20, 0.05)
        assert np.all(caputo_apply(w, np.full(21, 3.0)) == 0.0)

    @pytest.mark.parametrize("alpha", [0.3, 0.7])
    def test_linear_function_first_order(self, alpha):
        errs = []
        for N in (64, 128, 256):
            t = np.linspace(0, 1, N + 1)
            d = caputo_apply(cq_weights(alpha, N, 1.0 / N), t)
            errs.append(abs(d[-1] - caputo_of_power(alpha, 1.0, 1.0)))
        assert 1.8 < errs[0] / errs[1] < 2.2 and 1.8 < errs[1] / errs[2] < 2.2

    def test_power_alpha(self):
        alpha = 0.5
        errs = []
        for N in (100, 400, 1600):
            t = np.linspace(0, 1, N + 1)
            errs.append(abs(caputo_apply(cq_weights(alpha, N, 1.0 / N), t ** alpha)[-1] - special.gamma(1 + alpha)))
        assert errs[2] < errs[1] < errs[0] and errs[2] < 2e-3

    def test_relaxation_residual(self):
        alpha = 0.6
        res = []
        for N in (128, 256):
            t = np.linspace(0, 1, N + 1)
            u = mittag_leffler(alpha, 1.0, -t ** alpha)
            res.append(abs(caputo_apply(cq_weights(alpha, N, 1.0 / N), u)[-1] + u[-1]))
        assert res[1] < 0.6 * res[0] and res[1] < 5e-3

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.05, 0.95), st.integers(2, 40), st.integers(0, 2 ** 31))
    def test_linear_and_toeplitz(self, alpha, N, seed):
        rng = np.random.default_rng(seed)
        w = cq_weights(alpha, N, 1.0 / N)
        x, y = rng.standard_normal((2, N + 1))
        lhs = caputo_apply(w, 2 * x - 3 * y)
        assert np.allclose(lhs, 2 * caputo_apply(w, x) - 3 * caputo_apply(w, y), atol=1e-9 * np.abs(lhs).max())
        # direct convolution sum
        d = x - x[0]
        direct = [sum(w.omega[j] * d[n - j] for j in range(n + 1)) for n in range(N + 1)]
        assert np.allclose(caputo_apply(w, x), direct, rtol=1e-12, atol=1e-12)


class TestDuality:
    def test_zero(self):
        w = cq_weights(0.5, 10, 0.1)
        assert duality_gap(np.zeros(11), np.random.default_rng(0).standard_normal(11), w) == 0.0

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.05, 0.95), st.integers(2, 200), st.integers(0, 2 ** 31))
    def test_random_sequences(self, alpha, N, seed):
        rng = np.random.default_rng(seed)
        w = cq_weights(alpha, N, 1.0 / N)
        x = rng.standard_normal(N + 1)
        x[0] = 0.0
        v = rng.standard_normal(N + 1)
        scale = w.tau * np.abs(v).max() * np.abs(x).max() * np.abs(w.omega).sum() * N
        assert duality_gap(x, v, w) <= 1e-12 * scale

    def test_terminal_violation_detected(self):
        N = 20
        w = cq_weights(0.5, 2 * N, 0.05)
        rng = np.random.default_rng(1)
        x = np.concatenate([[0.0], rng.standard_normal(N)])
        v = rng.standard_normal(N + 1)
        gaps = []
        for eps in (0.0, 1e-3, 1e-1):
            tail = eps * np.ones(N)
            gaps.append(duality_gap(x, np.concatenate([v, tail]), w))
        assert gaps[0] < 1e-12 and gaps[1] > 1e-6 and gaps[2] > 50 * gaps[1]

    def test_requires_zero_start(self):
        with pytest.raises(InvalidArgumentError):
            duality_gap(np.ones(3), np.ones(3), cq_weights(0.5, 3, 0.1))

    def test_backward_is_transpose(self):
        w = cq_weights(0.3, 8, 0.1)
        E = np.eye(9)
        C = np.column_stack([caputo_apply(w, E[:, k], u0=0.0) for k in range(9)])
        B = np.column_stack([backward_apply(w, E[:, k]) for k in range(9)])
        assert np.allclose(C.T, B, atol=1e-14)


class TestForward:
    def test_constant_preserved(self, mesh8):
        a = disc_coefficient(mesh8)
        U = FractionalSolver(mesh8, a, 0.5, TimeGrid(1.0, 16)).forward(np.ones(mesh8.n_nodes))
        assert np.all(U == 1.0)

    def test_dense_oracle(self, mesh8):
        a = disc_coefficient(mesh8)
        N = 16
        L = dense_spacetime(mesh8, a, 0.6, N)
        rng = np.random.default_rng(3)
        F = rng.standard_normal((N + 1, mesh8.n_nodes))
        U = FractionalSolver(mesh8, a, 0.6, TimeGrid(1.0, N)).forward(loads=F)
        assert np.allclose(U[1:].ravel(), np.linalg.solve(L, F[1:].ravel()), rtol=1e-10, atol=1e-12)
        assert np.all(U[0] == 0.0)

    def test_excitation_off_before_activation(self):
        m = build_uniform_mesh(12)
        a = disc_coefficient(m)
        p = m.nodes[m.boundary_nodes]
        eta = np.cos(2 * np.pi * np.where(m.edge_side % 2 == 0, p[:, 0], p[:, 1]))
        exc = Excitation.single(eta, StepProfile(0.5))
        grid = TimeGrid(1.0, 32)
        u0 = interpolate(m, lambda x, y: x ** 2 * y ** 2 * (1 - x) ** 2 * (1 - y) ** 2)
        f = interpolate(m, lambda x, y: 1 + x + y)
        full = solve_forward(m, a, 0.8, u0, f, exc, grid)
        free = solve_forward(m, a, 0.8, u0, f, None, grid)
        t = grid.times
        assert np.all(full.trace.values[t <= 0.5] == free.trace.values[t <= 0.5])
        assert np.abs(full.trace.values[t > 0.5] - free.trace.values[t > 0.5]).max() > 1e-3

    def test_semidiscrete_limit(self, mesh8):
        """CQ converges at first order to the exact-in-time solution on the same mesh."""
        a = disc_coefficient(mesh8)
        u0 = interpolate(mesh8, lambda x, y: np.cos(np.pi * x) * y)
        ref = solve_semidiscrete(mesh8, a, 0.5, u0, None, [1.0])[0]
        errs = [np.abs(FractionalSolver(mesh8, a, 0.5, TimeGrid(1.0, N)).forward(u0)[-1] - ref).max()
                for N in (64, 128)]
        assert 1.7 < errs[0] / errs[1] < 2.3


class TestAdjoint:
    def test_zero_residual(self, mesh8):
        g = TimeGrid(1.0, 8)
        V = solve_adjoint(mesh8, 1.0, 0.5, BoundaryTrace(g.times, np.zeros((9, 32))), g)
        assert np.all(V.values == 0.0)

    def test_dense_transpose_oracle(self, mesh8):
        a = disc_coefficient(mesh8)
        N = 16
        L = dense_spacetime(mesh8, a, 0.4, N)
        G = np.random.default_rng(5).standard_normal((N + 1, mesh8.n_nodes))
        V = FractionalSolver(mesh8, a, 0.4, TimeGrid(1.0, N)).adjoint(G)
        ref = np.linalg.solve(L.T, G[1:].ravel())
        assert np.abs(V[1:].ravel() - ref).max() <= 1e-10 * np.abs(ref).max()
        assert np.all(V[0] == 0.0)

    @pytest.mark.parametrize("n,N", [(8, 16), (16, 64)])
    def test_full_map_transpose(self, n, N):
        m = build_uniform_mesh(n)
        a = disc_coefficient(m)
        rng = np.random.default_rng(n + N)
        s = FractionalSolver(m, a, 0.7, TimeGrid(1.0, N))
        u0, f = rng.standard_normal((2, m.n_nodes))
        F = rng.standard_normal((N + 1, m.n_nodes))
        G = rng.standard_normal((N + 1, m.n_nodes))
        U = s.forward(u0, f, F)
        ub, fb, V = s.adjoint_inputs(G)
        lhs = np.sum(U * G)
        rhs = u0 @ ub + f @ fb + np.sum(F[1:] * V[1:])
        assert abs(lhs - rhs) <= 1e-11 * max(abs(lhs), np.abs(U * G).sum() * 1e-3)


class TestContainers:
    def test_trace_csv_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        tr = BoundaryTrace(np.linspace(0, 1, 5), rng.standard_normal((5, 3)))
        tr.to_csv(tmp_path / "h.csv")
        back = BoundaryTrace.from_csv(tmp_path / "h.csv")
        assert (tmp_path / "h.csv").read_text().startswith("t,node_0,node_1,node_2")
        assert np.array_equal(back.values, tr.values) and np.array_equal(back.times, tr.times)

    def test_trace_norm_constant(self, mesh8):
        tr = BoundaryTrace(np.linspace(0, 2, 9), np.full((9, 32), 3.0))
        assert tr.norm(mesh8) == pytest.approx(3.0 * math.sqrt(4 * 2))

    def test_profiles(self):
        s = StepProfile(0.5, 2.0)
        assert list(s(np.array([0.4, 0.5, 0.6]))) == [0.0, 0.0, 2.0]
        r = RampProfile(0.2, 0.4)
        assert r(0.2) == 0.0 and r(0.3) == pytest.approx(0.5) and r(1.0) == 1.0
        with pytest.raises(InvalidArgumentError):
            RampProfile(0.4, 0.2)

    def test_incompatible_warning(self, mesh8):
        with pytest.warns(UserWarning):
            Excitation.single(np.ones(32), StepProfile(0.1)).check_compatibility(mesh8)

    def test_grids(self):
        g = TimeGrid(2.0, 4)
        assert g.tau == 0.5 and trapezoid_time_weights(g).sum() == pytest.approx(2.0)
        t = graded_times(1e-3, 10, 1e-9)
        assert t[0] == pytest.approx(1e-9) and np.all(np.diff(np.log(t)) > 0)
        with pytest.raises(InvalidArgumentError):
            TimeGrid(1.0, 0)
