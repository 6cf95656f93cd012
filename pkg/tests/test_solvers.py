"""Tests for the forward/backward solvers, residuals, duality, builders."""

import math

import numpy as np
import pytest

from volterra_chaos.simplex_grid import DomainError, Grid, simplex_count
from volterra_chaos.det_kernels import DetKernel, tabulate_fractional
from volterra_chaos.chaos_core import (AstKernel, ChaosProcess, StarKernel,
                                       inner_product, martingale_shift,
                                       random_ast_kernel, random_process,
                                       random_star_kernel)
from volterra_chaos.products import ast, bast, bstar, star
from volterra_chaos.resolvents import gaussian_star
from volterra_chaos.solvers import (LinearSystem, build_fractional_bs,
                                    build_noisy_memory, bsvie_residual,
                                    duality_gap, mean_trajectory,
                                    second_moment, solve_bsvie, solve_svie,
                                    svie_residual, z_component)
from volterra_chaos.mittag_leffler import e_alpha


def const_coeff(grid, arity, value, rows=1, cols=1):
    vals = np.full((simplex_count(grid, arity), rows, cols), float(value))
    return DetKernel(grid, arity, vals)


def zero_system(grid, n, d=1):
    j = AstKernel(grid, [DetKernel.zeros(grid, i + 2, d, d)
                         for i in range(n + 1)])
    k = StarKernel(ChaosProcess(grid, [DetKernel.zeros(grid, i + 1, d, d)
                                       for i in range(n + 1)]))
    return LinearSystem(j, k)


def small_system(grid, n, d=1, seed=0, scale=0.25):
    from volterra_chaos.chaos_core import j_norm, k_norm
    j = random_ast_kernel(grid, n, d=d, seed=seed)
    j = AstKernel(grid, [c.scaled(scale / max(j_norm(j), 1e-30))
                         for c in j.bcoeffs])
    raw = random_star_kernel(grid, n, d=d, seed=seed + 500)
    coeffs = [DetKernel.zeros(grid, 1, d, d)]
    coeffs += [c.scaled(scale / max(k_norm(raw), 1e-30))
               for c in raw.base.coeffs[1:]]
    k = StarKernel(ChaosProcess(grid, coeffs))
    return LinearSystem(j, k)


class TestSolveSvie:
    def test_zero_kernels(self):
        g = Grid(0.0, 1.0, 8)
        sys = zero_system(g, 2)
        phi = random_process(g, 2, seed=1)
        x = solve_svie(sys, phi)
        for a, b in zip(x.coeffs, phi.coeffs):
            assert np.allclose(a.to_dense().values, b.to_dense().values)

    def test_residual_by_construction(self):
        for seed in range(5):
            g = Grid(0.0, 1.0, 16)
            sys = small_system(g, 3, d=1 + seed % 2, seed=seed)
            phi = random_process(g, 3, rows=sys.d, cols=1, seed=seed + 40)
            x = solve_svie(sys, phi)
            assert svie_residual(sys, phi, x) <= 1e-10

    def test_fixed_point_equation(self):
        g = Grid(0.0, 1.0, 16)
        sys = small_system(g, 3, seed=9)
        phi = random_process(g, 3, seed=49)
        x = solve_svie(sys, phi)
        rhs_coeffs = []
        jx = ast(sys.j, x)
        kx = star(sys.k, x)
        for a, b, c in zip(phi.coeffs, jx.coeffs, kx.coeffs):
            rhs_coeffs.append(DetKernel(
                g, a.arity, a.to_dense().values + b.to_dense().values
                + c.to_dense().values))
        for a, b in zip(x.coeffs, rhs_coeffs):
            assert np.allclose(a.to_dense().values, b.values, atol=1e-11)

    def test_mu_zero_matches_gaussian_construction(self):
        # mu = 0 fractional BS: X's coefficients are x0 times the triangle
        # powers of the volatility kernel
        g = Grid(0.0, 1.0, 32)
        alpha, sigma, x0, n = 0.75, 0.4, 1.3, 4
        sys, phi = build_fractional_bs(alpha, 0.0, sigma, x0, g, n)
        x = solve_svie(sys, phi)
        k2 = tabulate_fractional(alpha, sigma, g)
        r = gaussian_star(k2, n)
        assert np.allclose(x.coeffs[0].to_dense().values, x0, atol=1e-10)
        for i in range(1, n + 1):
            want = x0 * r.base.coeffs[i].to_dense().values
            assert np.allclose(x.coeffs[i].to_dense().values, want,
                               atol=1e-10)

    def test_sigma_zero_mittag_leffler(self):
        # deterministic fractional ODE: mean = x0 E_alpha(mu t^alpha)
        from oracles import e_alpha_cell_avg
        g = Grid(0.0, 1.0, 128)
        alpha, mu, x0 = 0.75, 0.5, 1.2
        sys, phi = build_fractional_bs(alpha, mu, 0.0, x0, g, 3)
        x = solve_svie(sys, phi)
        mean = mean_trajectory(x)[:, 0]
        for c in x.coeffs[1:]:
            assert np.allclose(c.to_dense().values, 0.0)
        want = x0 * e_alpha_cell_avg(alpha, mu, g.h, g.m)
        assert np.max(np.abs(mean - want) / np.abs(want)) <= 0.02


class TestSvieResidual:
    def test_phi_defect(self):
        g = Grid(0.0, 1.0, 16)
        sys = small_system(g, 3, seed=10)
        phi = random_process(g, 3, seed=50)
        res = svie_residual(sys, phi, phi)
        jphi = ast(sys.j, phi)
        kphi = star(sys.k, phi)
        num = math.sqrt(
            inner_product(jphi, jphi) + 2 * inner_product(jphi, kphi)
            + inner_product(kphi, kphi))
        den = math.sqrt(inner_product(phi, phi))
        assert res == pytest.approx(num / den, rel=1e-8)
        assert res > 0

    def test_perturbation_continuity(self):
        g = Grid(0.0, 1.0, 16)
        sys = small_system(g, 2, seed=11)
        phi = random_process(g, 2, seed=51)
        x = solve_svie(sys, phi)
        base = svie_residual(sys, phi, x)
        for delta in (1e-6, 1e-8):
            vals = x.coeffs[0].to_dense().values.copy()
            vals[3] += delta
            pert = ChaosProcess(g, [DetKernel(g, 1, vals)]
                                + [c.to_dense() for c in x.coeffs[1:]])
            res = svie_residual(sys, phi, pert)
            assert abs(res - base) <= 100.0 * delta


class TestSolveBsvie:
    def test_zero_kernels(self):
        g = Grid(0.0, 1.0, 8)
        sys = zero_system(g, 2)
        psi = random_process(g, 2, seed=2)
        y = solve_bsvie(sys, psi)
        for a, b in zip(y.coeffs, psi.coeffs):
            assert np.allclose(a.to_dense().values, b.to_dense().values)

    def test_residual_by_construction(self):
        for seed in range(5):
            g = Grid(0.0, 1.0, 16)
            sys = small_system(g, 3, d=1 + seed % 2, seed=seed + 7)
            psi = random_process(g, 3, rows=sys.d, cols=1, seed=seed + 70)
            y = solve_bsvie(sys, psi)
            assert bsvie_residual(sys, psi, y) <= 1e-10

    def test_deterministic_backward_oracle(self):
        # deterministic psi and J, K = 0: Y solves the scalar backward
        # Volterra equation Y(t) = psi(t) + int_t^T j(s, t) Y(s) ds,
        # cross-checked against a backward quadrature recursion
        g = Grid(0.0, 1.0, 64)
        c = 0.9
        j = AstKernel(g, [const_coeff(g, 2, c), DetKernel.zeros(g, 3)])
        k = StarKernel(ChaosProcess(g, [DetKernel.zeros(g, 1),
                                        DetKernel.zeros(g, 2)]))
        sys = LinearSystem(j, k)
        psi = ChaosProcess(g, [const_coeff(g, 1, 1.0),
                               DetKernel.zeros(g, 2)])
        y = solve_bsvie(sys, psi)
        vals = y.coeffs[0].to_dense().values[:, 0, 0]
        # backward midpoint recursion on the same grid
        want = np.empty(g.m)
        for i in reversed(range(g.m)):
            want[i] = 1.0 + c * g.h * want[i + 1:].sum()
        assert np.max(np.abs(vals - want)) <= 1e-10
        # and the continuum solution e^{c (T - t)} up to O(h)
        mids = (np.arange(g.m) + 0.5) * g.h
        cont = np.exp(c * (1.0 - mids))
        assert np.max(np.abs(vals - cont)) <= 0.05

    def test_corollary_two_term_formula(self):
        # deterministic fractional J and Gaussian K: Y equals
        # psi + sum_n (k + q*k)^{tri n}(r, t)^T applied to the n-fold
        # martingale shifts of psi plus the deterministic q-part
        g = Grid(0.0, 1.0, 16)
        alpha, mu, sigma = 0.75, 0.5, 0.4
        n = 3
        sys, _ = build_fractional_bs(alpha, mu, sigma, 1.0, g, n)
        psi = random_process(g, n, seed=90)
        y = solve_bsvie(sys, psi)
        q, r, rep = sys.resolvent()
        assert rep.converged
        direct = bast(q.transposed(), psi)
        shifted = bstar(r.transposed(), psi)
        for a, b, c, dcf in zip(y.coeffs, psi.coeffs, direct.coeffs,
                                shifted.coeffs):
            want = (b.to_dense().values + c.to_dense().values
                    + dcf.to_dense().values)
            assert np.allclose(a.to_dense().values, want, atol=1e-10)


class TestZComponent:
    def test_matches_shift(self):
        g = Grid(0.0, 1.0, 8)
        y = random_process(g, 3, seed=3)
        for s in (3, 6):
            z = z_component(y, s)
            w = martingale_shift(y, 1, prefix=(s,))
            assert z.n_max == w.n_max
            for a, b in zip(z.coeffs, w.coeffs):
                assert np.array_equal(a.to_dense().values,
                                      b.to_dense().values)


class TestDualityGap:
    def test_random_instances(self):
        for seed in range(6):
            g = Grid(0.0, 1.0, 16)
            sys = small_system(g, 3, d=1 + seed % 2, seed=seed + 13)
            phi = random_process(g, 3, rows=sys.d, cols=1, seed=seed + 130)
            psi = random_process(g, 3, rows=sys.d, cols=1, seed=seed + 260)
            assert duality_gap(sys, phi, psi) <= 1e-10

    def test_phi_zero(self):
        g = Grid(0.0, 1.0, 16)
        sys = small_system(g, 2, seed=14)
        phi = ChaosProcess(g, [DetKernel.zeros(g, 1),
                               DetKernel.zeros(g, 2),
                               DetKernel.zeros(g, 3)])
        psi = random_process(g, 2, seed=140)
        assert duality_gap(sys, phi, psi) <= 1e-14

    def test_deterministic_volterra_duality(self):
        g = Grid(0.0, 1.0, 32)
        j = AstKernel(g, [const_coeff(g, 2, 0.8), DetKernel.zeros(g, 3)])
        k = StarKernel(ChaosProcess(g, [DetKernel.zeros(g, 1),
                                        DetKernel.zeros(g, 2)]))
        sys = LinearSystem(j, k)
        phi = random_process(g, 1, seed=15)
        psi = random_process(g, 1, seed=150)
        assert duality_gap(sys, phi, psi) <= 1e-10


class TestBuildFractionalBs:
    def test_alpha_one_constant_kernels(self):
        g = Grid(0.0, 1.0, 16)
        sys, phi = build_fractional_bs(1.0, 0.5, 0.3, 2.0, g, 2)
        assert np.allclose(sys.j.bcoeffs[0].to_dense().values, 0.5)
        assert np.allclose(sys.k.coeffs[1].to_dense().values, 0.3)
        assert np.allclose(phi.coeffs[0].to_dense().values, 2.0)

    def test_sigma_zero(self):
        g = Grid(0.0, 1.0, 16)
        sys, _ = build_fractional_bs(0.75, 0.5, 0.0, 1.0, g, 2)
        for c in sys.k.coeffs:
            assert np.allclose(c.to_dense().values, 0.0)

    def test_x0_zero(self):
        g = Grid(0.0, 1.0, 16)
        sys, phi = build_fractional_bs(0.75, 0.5, 0.4, 0.0, g, 3)
        x = solve_svie(sys, phi)
        for c in x.coeffs:
            assert np.allclose(c.to_dense().values, 0.0)

    def test_alpha_out_of_range(self):
        g = Grid(0.0, 1.0, 16)
        for alpha in (0.5, 0.3, 1.2):
            with pytest.raises(DomainError):
                build_fractional_bs(alpha, 0.5, 0.4, 1.0, g, 2)

    def test_layouts_agree(self):
        g = Grid(0.0, 1.0, 16)
        s1, p1 = build_fractional_bs(0.75, 0.5, 0.4, 1.0, g, 3,
                                     layout="dense")
        s2, p2 = build_fractional_bs(0.75, 0.5, 0.4, 1.0, g, 3,
                                     layout="chain")
        x1 = solve_svie(s1, p1)
        x2 = solve_svie(s2, p2)
        for a, b in zip(x1.coeffs, x2.coeffs):
            assert np.allclose(a.to_dense().values, b.to_dense().values,
                               atol=1e-11)


class TestBuildNoisyMemory:
    def test_degenerates_to_fractional(self):
        g = Grid(0.0, 1.0, 16)
        alpha, mu, sigma, x0 = 0.75, 0.5, 0.4, 1.1
        sys, phi = build_noisy_memory(mu, sigma, 0.0, 0.0, None, None, x0,
                                      alpha, g, 3)
        ref, pref = build_fractional_bs(alpha, mu, sigma, x0, g, 3)
        assert np.allclose(sys.j.bcoeffs[0].to_dense().values,
                           ref.j.bcoeffs[0].to_dense().values)
        assert np.allclose(sys.k.coeffs[1].to_dense().values,
                           ref.k.coeffs[1].to_dense().values)

    def test_l2_populates_order_two_only(self):
        g = Grid(0.0, 1.0, 16)
        sys, _ = build_noisy_memory(0.4, 0.3, 0.0, 0.6, None, None, 1.0,
                                    0.75, g, 4)
        assert not sys.k.coeffs[2].is_zero()
        for c in sys.k.coeffs[3:]:
            assert np.allclose(c.to_dense().values, 0.0)

    def test_constant_alpha_one_inner_integral(self):
        # alpha = 1, constant coefficients: F1[K](t, t1) = k + l2 (t - t1)
        from volterra_chaos.simplex_grid import components
        g = Grid(0.0, 1.0, 64)
        kc, l2c = 0.3, 0.7
        sys, _ = build_noisy_memory(0.0, kc, 0.0, l2c, None, None, 1.0,
                                    1.0, g, 3)
        vals = sys.k.coeffs[1].to_dense().values[:, 0, 0]
        comps = components(2, len(vals))
        mids = (comps + 0.5) * g.h
        want = kc + l2c * (mids[:, 0] - mids[:, 1])
        assert np.max(np.abs(vals - want)) <= 1.5 * l2c * g.h

    def test_solvable_with_duality(self):
        g = Grid(0.0, 1.0, 16)
        b = ChaosProcess(g, [const_coeff(g, 1, 1.0)])
        vol = ChaosProcess(g, [const_coeff(g, 1, 0.3)])
        sys, phi = build_noisy_memory(0.3, 0.25, 0.2, 0.15, b, vol, 1.0,
                                      0.75, g, 3)
        x = solve_svie(sys, phi)
        assert svie_residual(sys, phi, x) <= 1e-10
        psi = random_process(g, 3, seed=160)
        assert duality_gap(sys, phi, psi) <= 1e-10


class TestMoments:
    def test_mean_trajectory_shape(self):
        g = Grid(0.0, 1.0, 16)
        sys, phi = build_fractional_bs(1.0, 0.5, 0.3, 1.0, g, 2)
        x = solve_svie(sys, phi)
        mean = mean_trajectory(x)
        assert mean.shape == (16, 1)
        assert np.all(mean > 0)

    def test_second_moment_gbm(self):
        # alpha = 1: X is geometric Brownian motion; at T = 1 the chaos
        # second moment approaches x0^2 e^{2 mu + sigma^2} as N and m grow
        g = Grid(0.0, 1.0, 64)
        mu, sigma, x0, n = 0.35, 0.4, 1.2, 6
        sys, phi = build_fractional_bs(1.0, mu, sigma, x0, g, n,
                                       layout="chain")
        x = solve_svie(sys, phi, tol=1e-9)
        sm = second_moment(x)
        want = x0 ** 2 * math.exp(2 * mu + sigma ** 2)
        # geometric truncation tail of the chaos series
        q = sigma ** 2 / (1.0 + sigma ** 2)
        tail = want * q ** (n + 1) / (1 - q)
        assert abs(sm[-1] - want) <= 0.02 * want + tail
