"""Uniform time grid on (S,T) and index/quadrature machinery for tensors over
the open simplices of strictly decreasing time tuples.

A tuple (i0, i1, ..., in) of cell indices with i0 > i1 > ... > in is the
discrete image of a point of the open simplex; tensors over the simplex are
stored as flat arrays ordered by the colexicographic rank

    rank(i0, ..., in) = sum_l C(i_l, arity - l),

the combinatorial number system.  Rank systems are nested: the tuples whose
cells all lie below a bound b occupy exactly the ranks [0, C(b, arity)), in
the same order for every grid size.  All cached index arrays exploit this by
storing one master array per arity and slicing prefixes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_ARITY = 8  # arity n+1 <= 8, i.e. chaos order N <= 7


class DomainError(ValueError):
    """Invalid argument outside the documented domain."""


@dataclass(frozen=True)
class Grid:
    """Uniform partition of (s_start, t_end) into m cells of width h."""

    s_start: float
    t_end: float
    m: int
    h: float = field(init=False)

    def __post_init__(self):
        if not self.t_end > self.s_start:
            raise DomainError("grid requires t_end > s_start")
        if self.m < 1:
            raise DomainError("grid requires m >= 1")
        object.__setattr__(self, "h", (self.t_end - self.s_start) / self.m)

    @property
    def midpoints(self) -> np.ndarray:
        return self.s_start + (np.arange(self.m) + 0.5) * self.h

    def node(self, i: int) -> float:
        return self.s_start + i * self.h

    def node_index(self, t: float) -> int:
        """Index of the grid node at time t; DomainError if t is off-node."""
        x = (t - self.s_start) / self.h
        i = int(round(x))
        if i < 0 or i > self.m or abs(x - i) > 1e-9 * max(1, self.m):
            raise DomainError(f"time {t} is not a grid node")
        return i


def build_grid(s: float, t: float, m: int) -> Grid:
    return Grid(float(s), float(t), int(m))


def simplex_count(grid: Grid, arity: int) -> int:
    """Number of strictly decreasing `arity`-tuples of cells: C(m, arity)."""
    if arity < 0:
        raise DomainError("arity must be >= 0")
    return math.comb(grid.m, arity)


def integrate_simplex(values: np.ndarray, grid: Grid, arity: int):
    """Quadrature of a simplex tensor: h^arity times the sum of its entries.

    For arity 0 the tensor holds a single value, which is returned as is.
    """
    values = np.asarray(values)
    if arity == 0:
        return values.reshape(()) if values.size == 1 else values
    return grid.h ** arity * values.sum(axis=0)


# ---------------------------------------------------------------------------
# colex rank machinery


def tuple_rank(levels) -> int:
    """Colex rank of a strictly decreasing cell tuple."""
    p = len(levels)
    r = 0
    for l, t in enumerate(levels):
        r += math.comb(t, p - l)
    return r


def rank_tuple(rank: int, arity: int) -> tuple:
    """Inverse of tuple_rank (grid size is immaterial by nesting)."""
    out = []
    for pos in range(arity, 0, -1):
        t = pos - 1
        while math.comb(t + 1, pos) <= rank:
            t += 1
        out.append(t)
        rank -= math.comb(t, pos)
    return tuple(out)


_binom_rows = 0
_binom: np.ndarray | None = None


def _binom_table(n_max: int) -> np.ndarray:
    """Pascal table B[n, k] = C(n, k) for k <= MAX_ARITY+2, int64."""
    global _binom, _binom_rows
    if _binom is None or n_max >= _binom_rows:
        rows = max(n_max + 1, 2 * _binom_rows, 64)
        kmax = MAX_ARITY + 3
        b = np.zeros((rows, kmax), dtype=np.int64)
        b[:, 0] = 1
        for k in range(1, kmax):
            np.cumsum(b[:-1, k - 1], out=b[1:, k])
        _binom, _binom_rows = b, rows
    return _binom


_lead_cache: dict[int, np.ndarray] = {}
_trail_cache: dict[int, np.ndarray] = {}
_weighted_cache: dict[tuple, np.ndarray] = {}
_group_cache: dict[tuple, tuple] = {}
_comps_cache: dict[int, np.ndarray] = {}


def clear_caches():
    for c in (_lead_cache, _trail_cache, _weighted_cache, _group_cache,
              _comps_cache):
        c.clear()


def _grow_m(count: int, arity: int) -> int:
    """Smallest m with C(m, arity) >= count."""
    m = arity
    while math.comb(m, arity) < count:
        m += 1
    return m


def lead_cells(arity: int, count: int) -> np.ndarray:
    """Leading (largest) cell of each tuple, for ranks [0, count), uint16."""
    arr = _lead_cache.get(arity)
    if arr is None or len(arr) < count:
        m = _grow_m(max(count, (arr.size * 2) if arr is not None else 0), arity)
        parts = [np.full(math.comb(t0, arity - 1), t0, dtype=np.uint16)
                 for t0 in range(arity - 1, m)]
        arr = np.concatenate(parts) if parts else np.empty(0, np.uint16)
        _lead_cache[arity] = arr
    return arr[:count]


def trail_cells(arity: int, count: int) -> np.ndarray:
    """Trailing (smallest) cell of each tuple, for ranks [0, count), uint16."""
    arr = _trail_cache.get(arity)
    if arr is None or len(arr) < count:
        m = _grow_m(max(count, (arr.size * 2) if arr is not None else 0), arity)
        if arity == 1:
            arr = np.arange(m, dtype=np.uint16)
        else:
            sub = trail_cells(arity - 1, math.comb(m - 1, arity - 1))
            parts = [sub[:math.comb(t0, arity - 1)]
                     for t0 in range(arity - 1, m)]
            arr = np.concatenate(parts) if parts else np.empty(0, np.uint16)
        _trail_cache[arity] = arr
    return arr[:count]


def weighted_rank(arity: int, lows: tuple, count: int,
                  offset: int = 0) -> np.ndarray:
    """Array W over colex ranks with W[r] = sum_l C(t_l + offset, lows[l]).

    lows[l] == 0 makes position l contribute nothing.  With
    lows = (arity, arity-1, ..., 1) and offset=0 this is the rank itself;
    other choices give prefix contributions in larger rank systems.
    """
    key = (arity, lows, offset)
    arr = _weighted_cache.get(key)
    if arr is None or len(arr) < count:
        m = _grow_m(max(count, (arr.size * 2) if arr is not None else 0), arity)
        b = _binom_table(m + offset + 1)
        if arity == 1:
            t = np.arange(m)
            arr = (b[t + offset, lows[0]] if lows[0] > 0
                   else np.zeros(m, np.int64))
        else:
            sub = weighted_rank(arity - 1, lows[1:],
                                math.comb(m - 1, arity - 1), offset)
            parts = []
            for t0 in range(arity - 1, m):
                head = int(b[t0 + offset, lows[0]]) if lows[0] > 0 else 0
                parts.append(head + sub[:math.comb(t0, arity - 1)])
            arr = (np.concatenate(parts) if parts else np.empty(0, np.int64))
        _weighted_cache[key] = arr
    return arr[:count]


def shifted_prefix(arity: int, shift: int, count: int) -> np.ndarray:
    """Prefix contribution of whole tuples inside a rank system of arity
    `arity + shift`: sum_l C(t_l, arity + shift - l)."""
    lows = tuple(arity + shift - l for l in range(arity))
    return weighted_rank(arity, lows, count)


def drop_last_prefix(arity: int, target_arity: int, count: int) -> np.ndarray:
    """Prefix contribution of tuples with their trailing cell dropped, inside
    a rank system of arity `target_arity`."""
    lows = tuple(target_arity - l for l in range(arity - 1)) + (0,)
    return weighted_rank(arity, lows, count)


def ranks_by_trail(arity: int, m: int):
    """(order, offsets): ranks of arity-tuples over m cells grouped by their
    trailing cell; group for trail q is order[offsets[q]:offsets[q+1]],
    ascending within each group."""
    key = (arity, m)
    got = _group_cache.get(key)
    if got is None:
        count = math.comb(m, arity)
        tr = trail_cells(arity, count)
        order = np.argsort(tr, kind="stable").astype(np.int64)
        counts = np.bincount(tr, minlength=m)
        offsets = np.zeros(m + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        got = (order, offsets)
        _group_cache[key] = got
    return got


def components(arity: int, count: int) -> np.ndarray:
    """(count, arity) table of tuple components by rank.  Dense enumeration;
    guarded against oversized requests."""
    if count * arity > 200_000_000:
        raise MemoryError("components table too large; use streamed access")
    arr = _comps_cache.get(arity)
    if arr is None or len(arr) < count:
        m = _grow_m(count, arity)
        if arity == 1:
            arr = np.arange(m, dtype=np.int64)[:, None]
        else:
            sub = components(arity - 1, math.comb(m - 1, arity - 1))
            parts = []
            for t0 in range(arity - 1, m):
                c = math.comb(t0, arity - 1)
                block = np.empty((c, arity), dtype=np.int64)
                block[:, 0] = t0
                block[:, 1:] = sub[:c]
                parts.append(block)
            arr = (np.concatenate(parts) if parts
                   else np.empty((0, arity), np.int64))
        _comps_cache[arity] = arr
    return arr[:count]
