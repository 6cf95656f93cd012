import io
import math

import numpy as np
import pytest

from volterra_chaos.simplex_grid import (DomainError, Grid, components,
                                         simplex_count)
from volterra_chaos.det_kernels import (ChainKernel, ChainTerm, DetKernel,
                                        as_chain, ast_contract, extend_kernel,
                                        kernel_add, kernel_inner, kernel_sub,
                                        l2_distance, l2_norm,
                                        lead_sq_profile, read_kernel_csv,
                                        restrict_kernel, tabulate_fractional,
                                        tri_product, v_norm,
                                        write_kernel_csv)


def const(grid, arity, c, rows=1, cols=1):
    return DetKernel.constant(grid, arity, np.full((rows, cols), float(c)))


def rand_kernel(grid, arity, d=1, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal((simplex_count(grid, arity), d, d)) * scale
    return DetKernel(grid, arity, vals)


class TestConstruction:
    def test_zero_kernel_is_lazy_and_zero(self):
        g = Grid(0.0, 1.0, 32)
        z = DetKernel.zeros(g, 4, 2, 2)
        assert z.is_zero()
        assert z.values.shape == (simplex_count(g, 4), 2, 2)
        assert l2_norm(z) == 0.0 and v_norm(z) == 0.0

    def test_nan_rejected(self):
        g = Grid(0.0, 1.0, 4)
        vals = np.ones((simplex_count(g, 2), 1, 1))
        vals[0] = np.nan
        with pytest.raises(DomainError):
            DetKernel(g, 2, vals)

    def test_wrong_count_rejected(self):
        g = Grid(0.0, 1.0, 4)
        with pytest.raises(DomainError):
            DetKernel(g, 2, np.ones((3, 1, 1)))


class TestTriProduct:
    def test_constants(self):
        g = Grid(0.0, 1.0, 4)
        f = const(g, 2, 2.0)
        w = const(g, 1, 3.0)
        out = tri_product(f, w)
        assert out.arity == 2
        assert np.allclose(out.to_dense().values, 6.0)

    def test_left_identity(self):
        g = Grid(0.0, 1.0, 8)
        ident = DetKernel.identity_coeff(g, 2)
        gk = rand_kernel(g, 3, d=2, seed=1)
        out = tri_product(ident, gk)
        assert np.allclose(out.to_dense().values, gk.values)

    def test_hand_value_midpoints(self):
        # f(t0,t1)=t0-t1, g(t1,t2)=t1-t2 on (0,1), m=4; value at cells
        # (3,1,0) is (0.875-0.375)*(0.375-0.125) = 0.125
        g = Grid(0.0, 1.0, 4)
        mids = g.midpoints
        comps2 = components(2, simplex_count(g, 2))
        diff = (mids[comps2[:, 0]] - mids[comps2[:, 1]])[:, None, None]
        f = DetKernel(g, 2, diff)
        out = tri_product(f, f)
        from volterra_chaos.simplex_grid import tuple_rank
        assert out.to_dense().values[tuple_rank((3, 1, 0)), 0, 0] == \
            pytest.approx(0.125)

    def test_pointwise_oracle(self):
        # brute-force: (f |> g)(t0..t3) = f(t0,t1,t2) g(t2,t3)
        g = Grid(0.0, 1.0, 6)
        f = rand_kernel(g, 3, seed=2)
        k = rand_kernel(g, 2, seed=3)
        out = tri_product(f, k).to_dense()
        comps = components(4, simplex_count(g, 4))
        from volterra_chaos.simplex_grid import tuple_rank
        for r in range(len(comps)):
            t0, t1, t2, t3 = comps[r]
            want = (f.values[tuple_rank((t0, t1, t2)), 0, 0]
                    * k.values[tuple_rank((t2, t3)), 0, 0])
            assert out.values[r, 0, 0] == pytest.approx(want, rel=1e-12)

    def test_associativity(self):
        g = Grid(0.0, 1.0, 8)
        a = rand_kernel(g, 2, d=2, seed=4)
        b = rand_kernel(g, 2, d=2, seed=5)
        c = rand_kernel(g, 1, d=2, seed=6)
        left = tri_product(tri_product(a, b), c).to_dense()
        right = tri_product(a, tri_product(b, c)).to_dense()
        assert np.allclose(left.values, right.values, rtol=1e-12, atol=1e-14)

    def test_dimension_mismatch(self):
        g = Grid(0.0, 1.0, 4)
        f = DetKernel.constant(g, 2, np.ones((2, 3)))
        k = DetKernel.constant(g, 1, np.ones((2, 2)))
        with pytest.raises(DomainError):
            tri_product(f, k)


class TestAstContract:
    def test_arity_one_right_oracle(self):
        # (j * w)(t0) = h * sum_{u < t0} j(t0, u) w(u): an arity-1 right
        # factor contracts j's trailing time over everything below the
        # surviving lead time, output arity 2 + 1 - 2 = 1
        g = Grid(0.0, 1.0, 8)
        j = rand_kernel(g, 2, seed=7)
        w = rand_kernel(g, 1, seed=8)
        out = ast_contract(j, w).to_dense()
        from volterra_chaos.simplex_grid import tuple_rank
        for t0 in range(g.m):
            want = g.h * sum(
                j.values[tuple_rank((t0, u)), 0, 0] * w.values[u, 0, 0]
                for u in range(t0))
            assert out.values[t0, 0, 0] == pytest.approx(want, abs=1e-14)

    def test_arity_two_right_oracle(self):
        # (j * g)(t0, t1) = h * sum_{t1 < u < t0} j(t0, u) g(u, t1): with
        # an arity >= 2 right factor the contraction range is strictly
        # between the neighbouring surviving times
        g = Grid(0.0, 1.0, 8)
        j = rand_kernel(g, 2, seed=7)
        k = rand_kernel(g, 2, seed=8)
        out = ast_contract(j, k).to_dense()
        from volterra_chaos.simplex_grid import tuple_rank
        comps = components(2, simplex_count(g, 2))
        for r in range(len(comps)):
            t0, t1 = comps[r]
            want = g.h * sum(
                j.values[tuple_rank((t0, u)), 0, 0]
                * k.values[tuple_rank((u, t1)), 0, 0]
                for u in range(t1 + 1, t0))
            assert out.values[r, 0, 0] == pytest.approx(want, abs=1e-14)

    def test_empty_range_is_zero(self):
        g = Grid(0.0, 1.0, 8)
        j = const(g, 2, 1.0)
        k = const(g, 2, 1.0)
        out = ast_contract(j, k).to_dense()
        from volterra_chaos.simplex_grid import tuple_rank
        # adjacent cells leave no strictly-between index
        assert out.values[tuple_rank((3, 2)), 0, 0] == 0.0

    def test_chain_matches_dense(self):
        g = Grid(0.0, 1.0, 8)
        j = rand_kernel(g, 2, seed=9)
        w = rand_kernel(g, 2, seed=10)
        dense = ast_contract(j, w).to_dense()
        chain = ast_contract(as_chain(j), w).to_dense()
        assert np.allclose(chain.values, dense.values, rtol=1e-12,
                           atol=1e-15)
        chain2 = ast_contract(as_chain(j), as_chain(w)).to_dense()
        assert np.allclose(chain2.values, dense.values, rtol=1e-12,
                           atol=1e-15)


class TestNorms:
    def test_v_norm_constant(self):
        g = Grid(0.0, 1.0, 8)
        assert v_norm(const(g, 1, -2.5)) == pytest.approx(2.5)

    def test_v_norm_fractional(self):
        # analytic: sqrt(1/(2a-1))/Gamma(a) = sqrt(2)/Gamma(0.75)
        g = Grid(0.0, 1.0, 256)
        k = tabulate_fractional(0.75, 1.0, g)
        want = math.sqrt(2.0) / math.gamma(0.75)
        # the cell-averaged tabulation smooths the (t - s)^{alpha - 1}
        # singularity, so the discrete norm converges from below at rate
        # O(h^{2 alpha - 1}); at m = 256 the deficit is about 2.3%
        assert v_norm(k) == pytest.approx(want, rel=0.03)
        assert v_norm(k) < want

    def test_v_norm_fractional_converges(self):
        # the discrete deficit shrinks as the grid refines
        want = math.sqrt(2.0) / math.gamma(0.75)
        errs = [abs(v_norm(tabulate_fractional(0.75, 1.0,
                                               Grid(0.0, 1.0, m))) - want)
                for m in (64, 256, 1024)]
        assert errs[0] > errs[1] > errs[2]

    def test_v_norm_zero(self):
        g = Grid(0.0, 1.0, 8)
        assert v_norm(DetKernel.zeros(g, 2)) == 0.0

    def test_v_norm_non_square(self):
        g = Grid(0.0, 1.0, 4)
        k = DetKernel.constant(g, 2, np.ones((1, 2)))
        with pytest.raises(DomainError):
            v_norm(k)

    def test_l2_norm_examples(self):
        g1 = Grid(0.0, 1.0, 8)
        assert l2_norm(const(g1, 1, 1.0)) == pytest.approx(1.0)
        g2 = Grid(0.0, 1.0, 64)
        assert l2_norm(const(g2, 2, 1.0)) == pytest.approx(
            math.sqrt(g2.h ** 2 * math.comb(64, 2)))
        assert l2_norm(DetKernel.zeros(g2, 3)) == 0.0

    def test_submultiplicativity(self):
        for seed in range(8):
            g = Grid(0.0, 1.0, 8)
            a = rand_kernel(g, 2, d=2, seed=seed, scale=0.7)
            b = rand_kernel(g, 3, d=2, seed=seed + 100, scale=0.7)
            assert v_norm(tri_product(a, b)) <= \
                v_norm(a) * v_norm(b) * (1 + 1e-12)

    def test_mixed_bound(self):
        g = Grid(0.0, 1.0, 8)
        k = rand_kernel(g, 2, d=2, seed=11)
        f = rand_kernel(g, 2, d=2, seed=12)
        assert l2_norm(tri_product(k, f)) <= \
            v_norm(k) * l2_norm(f) * (1 + 1e-12)

    def test_norm_comparison(self):
        for d in (1, 2):
            g = Grid(0.0, 1.0, 16)
            k = rand_kernel(g, 2, d=d, seed=13 + d)
            assert l2_norm(k) <= math.sqrt(d * 1.0) * v_norm(k) * (1 + 1e-12)

    def test_convolution_difference_bound(self):
        # kernel a1(t0-t1) a2(t1-t2): v_norm <= ||a1||_L2(0,1) ||a2||_L2(0,1)
        g = Grid(0.0, 1.0, 64)
        mids = g.midpoints
        comps2 = components(2, simplex_count(g, 2))

        def profile_kernel(fn):
            gaps = mids[comps2[:, 0]] - mids[comps2[:, 1]]
            return DetKernel(g, 2, fn(gaps)[:, None, None])

        a1 = profile_kernel(lambda u: np.exp(-u))
        a2 = profile_kernel(lambda u: 1.0 / (1.0 + u))
        k = tri_product(a1, a2)
        from scipy.integrate import quad
        n1 = math.sqrt(quad(lambda u: math.exp(-2 * u), 0, 1)[0])
        n2 = math.sqrt(quad(lambda u: (1 + u) ** -2, 0, 1)[0])
        assert v_norm(k) <= n1 * n2 * 1.05


class TestFractionalTabulation:
    def test_alpha_one_constant(self):
        g = Grid(0.0, 1.0, 16)
        k = tabulate_fractional(1.0, 0.7, g)
        assert np.allclose(k.values, 0.7)

    def test_adjacent_cell_average(self):
        g = Grid(0.0, 1.0, 256)
        k = tabulate_fractional(0.75, 1.0, g)
        h, a = g.h, 0.75
        want = h ** a * (1.5 ** a - 0.5 ** a) / (a * h * math.gamma(a))
        from volterra_chaos.simplex_grid import tuple_rank
        assert k.values[tuple_rank((10, 9)), 0, 0] == pytest.approx(want)

    def test_zero_scale(self):
        g = Grid(0.0, 1.0, 8)
        assert tabulate_fractional(0.6, 0.0, g).is_zero()

    def test_alpha_out_of_range(self):
        g = Grid(0.0, 1.0, 8)
        for alpha in (0.5, 0.2, 1.1):
            with pytest.raises(DomainError):
                tabulate_fractional(alpha, 1.0, g)


class TestChainKernels:
    def test_as_chain_roundtrip(self):
        g = Grid(0.0, 1.0, 8)
        k = rand_kernel(g, 2, seed=14)
        assert np.allclose(as_chain(k).to_dense().values, k.values)

    def test_tri_chain_matches_dense(self):
        g = Grid(0.0, 1.0, 8)
        a = rand_kernel(g, 2, seed=15)
        b = rand_kernel(g, 2, seed=16)
        dense = tri_product(a, b).to_dense()
        chain = tri_product(as_chain(a), as_chain(b))
        assert isinstance(chain, ChainKernel)
        assert np.allclose(chain.to_dense().values, dense.values,
                           rtol=1e-12, atol=1e-15)

    def test_dense_block_matches(self):
        g = Grid(0.0, 1.0, 10)
        a = rand_kernel(g, 2, seed=17)
        c3 = tri_product(as_chain(a), as_chain(a))
        d3 = c3.to_dense()
        for t0 in range(2, 10):
            assert np.allclose(c3.dense_block(t0),
                               d3.dense_block(t0)[:, 0, 0])

    def test_chain_inner_matches_dense(self):
        g = Grid(0.0, 1.0, 10)
        a = tri_product(as_chain(rand_kernel(g, 2, seed=18)),
                        as_chain(rand_kernel(g, 2, seed=19)))
        b = tri_product(as_chain(rand_kernel(g, 2, seed=20)),
                        as_chain(rand_kernel(g, 2, seed=21)))
        want = kernel_inner(a.to_dense(), b.to_dense())
        assert kernel_inner(a, b) == pytest.approx(want, rel=1e-10)

    def test_l2_distance_matches_norm_of_difference(self):
        g = Grid(0.0, 1.0, 12)
        a = tri_product(as_chain(rand_kernel(g, 2, seed=22)),
                        as_chain(rand_kernel(g, 2, seed=23)))
        b = tri_product(as_chain(rand_kernel(g, 2, seed=24)),
                        as_chain(rand_kernel(g, 2, seed=25)))
        want = l2_norm(kernel_sub(a.to_dense(), b.to_dense()))
        assert l2_distance(a, b) == pytest.approx(want, rel=1e-10)
        assert l2_distance(a, a) == 0.0

    def test_lead_sq_profile_matches_dense(self):
        g = Grid(0.0, 1.0, 10)
        c = tri_product(as_chain(rand_kernel(g, 2, seed=26)),
                        as_chain(rand_kernel(g, 2, seed=27)))
        want = lead_sq_profile(c.to_dense())
        got = lead_sq_profile(c)
        assert np.allclose(got, want, rtol=1e-10, atol=1e-14)


class TestRestrictExtend:
    def test_roundtrip(self):
        g = Grid(0.0, 1.0, 16)
        sub = Grid(0.25, 0.75, 8)
        k = rand_kernel(g, 2, seed=28)
        r = restrict_kernel(k, 4, 12, sub)
        back = extend_kernel(r, 4, 12, g)
        # extension is zero off the window, equal on it
        from volterra_chaos.simplex_grid import components as comp
        comps = comp(2, simplex_count(g, 2))
        inside = (comps[:, 1] >= 4) & (comps[:, 0] < 12)
        assert np.allclose(back.values[inside], k.values[inside])
        assert np.allclose(back.values[~inside], 0.0)


class TestCsv:
    def test_roundtrip(self):
        g = Grid(0.0, 1.0, 6)
        k = rand_kernel(g, 2, d=2, seed=29)
        buf = io.StringIO()
        write_kernel_csv(k, buf)
        buf.seek(0)
        k2 = read_kernel_csv(buf)
        assert k2.grid == g and k2.arity == 2
        assert np.array_equal(k2.values, k.values)

    def test_byte_identical(self):
        g = Grid(0.0, 1.0, 6)
        k = rand_kernel(g, 3, seed=30)
        a, b = io.StringIO(), io.StringIO()
        write_kernel_csv(k, a)
        write_kernel_csv(k, b)
        assert a.getvalue() == b.getvalue()


class TestAddSub:
    def test_add_mixed_layouts(self):
        g = Grid(0.0, 1.0, 8)
        a = rand_kernel(g, 2, seed=31)
        b = rand_kernel(g, 2, seed=32)
        s1 = kernel_add(a, b)
        s2 = kernel_add(as_chain(a), b)
        assert np.allclose(s1.to_dense().values, s2.to_dense().values,
                           rtol=1e-12, atol=1e-15)

    def test_sub_self_zero(self):
        g = Grid(0.0, 1.0, 8)
        a = rand_kernel(g, 2, seed=33)
        assert l2_norm(kernel_sub(a, a)) == 0.0
