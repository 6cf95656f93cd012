import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from volterra_chaos.simplex_grid import (DomainError, Grid, build_grid,
                                         components, integrate_simplex,
                                         lead_cells, rank_tuple,
                                         ranks_by_trail, simplex_count,
                                         trail_cells, tuple_rank,
                                         weighted_rank)


class TestGrid:
    def test_basic_fields(self):
        g = Grid(0.0, 2.0, 8)
        assert g.h == pytest.approx(0.25)
        assert g.node(0) == 0.0 and g.node(8) == 2.0
        assert np.allclose(g.midpoints, 0.125 + 0.25 * np.arange(8))

    def test_build_grid(self):
        assert build_grid(0, 1, 4) == Grid(0.0, 1.0, 4)

    def test_invalid(self):
        with pytest.raises(DomainError):
            Grid(1.0, 1.0, 4)
        with pytest.raises(DomainError):
            Grid(0.0, 1.0, 0)

    def test_node_index_roundtrip(self):
        g = Grid(0.0, 1.0, 16)
        for i in range(17):
            assert g.node_index(g.node(i)) == i
        with pytest.raises(DomainError):
            g.node_index(0.03)


class TestRanks:
    def test_simplex_count(self):
        g = Grid(0.0, 1.0, 8)
        assert simplex_count(g, 1) == 8
        assert simplex_count(g, 2) == 28
        assert simplex_count(g, 0) == 1

    def test_rank_of_smallest_tuple(self):
        assert tuple_rank((2, 1, 0)) == 0
        assert tuple_rank((1, 0)) == 0
        assert tuple_rank((0,)) == 0

    @given(st.integers(0, 5000), st.integers(1, 6))
    def test_rank_tuple_roundtrip(self, rank, arity):
        t = rank_tuple(rank, arity)
        assert len(t) == arity
        assert all(a > b for a, b in zip(t, t[1:]))
        assert tuple_rank(t) == rank

    def test_colex_enumeration_order(self):
        # ranks enumerate strictly decreasing tuples in lexicographic
        # order on the tuple itself (leading cell most significant), which
        # is colexicographic order on the increasing reversal
        tuples = [rank_tuple(r, 3) for r in range(math.comb(7, 3))]
        assert tuples == sorted(tuples)

    def test_nesting_prefix(self):
        # tuples with all cells < b occupy exactly ranks [0, C(b, arity))
        for b in range(3, 8):
            for r in range(math.comb(b, 3)):
                assert max(rank_tuple(r, 3)) < b
            assert max(rank_tuple(math.comb(b, 3), 3)) >= b

    def test_lead_trail_components_consistency(self):
        count = math.comb(9, 4)
        comps = components(4, count)
        assert np.array_equal(comps[:, 0], lead_cells(4, count))
        assert np.array_equal(comps[:, -1], trail_cells(4, count))
        for r in (0, 1, 17, count - 1):
            assert tuple(comps[r]) == rank_tuple(r, 4)

    def test_weighted_rank_is_rank_for_standard_lows(self):
        count = math.comb(8, 3)
        w = weighted_rank(3, (3, 2, 1), count)
        assert np.array_equal(w, np.arange(count))

    def test_ranks_by_trail_groups(self):
        order, offsets = ranks_by_trail(3, 8)
        count = math.comb(8, 3)
        tr = trail_cells(3, count)
        for q in range(8):
            grp = order[offsets[q]:offsets[q + 1]]
            assert all(tr[r] == q for r in grp)
            assert np.array_equal(grp, np.sort(grp))
        assert offsets[-1] == count


class TestQuadrature:
    def test_integrate_constant(self):
        g = Grid(0.0, 1.0, 16)
        vals = np.ones(simplex_count(g, 2))
        # integral of 1 over the discrete 2-simplex: h^2 * C(m,2) -> 1/2
        assert integrate_simplex(vals, g, 2) == pytest.approx(
            g.h ** 2 * math.comb(16, 2))

    def test_integrate_order_zero(self):
        g = Grid(0.0, 1.0, 4)
        assert float(integrate_simplex(np.array([3.5]), g, 0)) == 3.5
