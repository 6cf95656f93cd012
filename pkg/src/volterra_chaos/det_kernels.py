"""Deterministic Volterra kernels on the discrete simplex.

Two interchangeable storage layouts:

* ``DetKernel`` — dense flat array over colex-ranked strictly decreasing cell
  tuples, matrix-valued.  The canonical layout.
* ``ChainKernel`` — a sum of product-form terms
  ``A1(t0,t1) A2(t1,t2) ... A(n)(t(n-1),tn) e(tn)`` with arity-2 profile
  matrices A_i and a tail vector e (scalar-valued only).  Exact for kernels
  that arise as iterated triangle products of arity-2 kernels (Gaussian
  resolvents, fractional systems); every operation evaluates the same
  midpoint-rule sums as the dense layout, at O(m^2) cost per order instead of
  C(m, arity).

Both support the triangle product, elementary star-contraction, the V-norm
(ess sup realized as a max over grid cells — a surrogate that may slightly
underestimate near-diagonal suprema of singular kernels; it affects only
norm-threshold checks, never algebraic identities) and the L2 norm.
"""

from __future__ import annotations

import math

import numpy as np

from .simplex_grid import (DomainError, Grid, drop_last_prefix, lead_cells,
                           ranks_by_trail, shifted_prefix, simplex_count,
                           trail_cells, weighted_rank, components, MAX_ARITY)

_DENSIFY_GUARD = 30_000_000  # max entries when silently densifying a chain
_EINSUM_CHUNK = 30_000_000


def _std_lows(arity: int) -> tuple:
    return tuple(arity - l for l in range(arity))


# ---------------------------------------------------------------------------
# dense kernels


class DetKernel:
    """Dense (n+1)-parameter Volterra kernel tabulated on the simplex."""

    __slots__ = ("grid", "arity", "rows", "cols", "values", "known_zero")

    def __init__(self, grid: Grid, arity: int, values, known_zero: bool = False):
        if arity < 1 or arity > MAX_ARITY:
            raise DomainError(f"arity must be in [1, {MAX_ARITY}]")
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None, None]
        if values.ndim != 3:
            raise DomainError("values must be (count, rows, cols)")
        count = simplex_count(grid, arity)
        if values.shape[0] != count:
            raise DomainError(
                f"expected {count} simplex entries, got {values.shape[0]}")
        if not known_zero and values.size and not np.isfinite(values).all():
            raise DomainError("kernel values must be finite")
        self.grid = grid
        self.arity = arity
        self.rows = values.shape[1]
        self.cols = values.shape[2]
        self.values = values
        self.known_zero = known_zero

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zeros(grid: Grid, arity: int, rows: int = 1, cols: int = 1):
        # Broadcast view: correct shape with O(1) storage, so zero
        # coefficients cost nothing even at high arity.
        count = simplex_count(grid, arity)
        vals = np.broadcast_to(np.zeros((1, rows, cols)),
                               (count, rows, cols))
        return DetKernel(grid, arity, vals, known_zero=True)

    @staticmethod
    def constant(grid: Grid, arity: int, value):
        value = np.atleast_2d(np.asarray(value, dtype=np.float64))
        count = simplex_count(grid, arity)
        vals = np.broadcast_to(value, (count,) + value.shape).copy()
        return DetKernel(grid, arity, vals)

    @staticmethod
    def identity_coeff(grid: Grid, d: int = 1):
        """Arity-1 kernel constantly equal to the d-by-d identity matrix."""
        return DetKernel.constant(grid, 1, np.eye(d))

    # -- basics ------------------------------------------------------------

    def is_zero(self) -> bool:
        return self.known_zero

    def copy(self):
        if self.known_zero:
            return DetKernel.zeros(self.grid, self.arity, self.rows,
                                   self.cols)
        return DetKernel(self.grid, self.arity, self.values.copy())

    def scaled(self, s: float):
        if self.known_zero or s == 0.0:
            return DetKernel.zeros(self.grid, self.arity, self.rows, self.cols)
        return DetKernel(self.grid, self.arity, self.values * s)

    def transposed(self):
        if self.known_zero:
            return DetKernel.zeros(self.grid, self.arity, self.cols,
                                   self.rows)
        return DetKernel(self.grid, self.arity,
                         np.ascontiguousarray(self.values.swapaxes(1, 2)))

    def to_dense(self):
        return self

    def dense_block(self, t0: int) -> np.ndarray:
        """Values of all tuples with leading cell t0 (contiguous in colex
        rank order), shape (C(t0, arity-1), rows, cols)."""
        start = math.comb(t0, self.arity)
        stop = math.comb(t0 + 1, self.arity)
        return self.values[start:stop]


# ---------------------------------------------------------------------------
# chain kernels


class ChainTerm:
    """One product-form term: factors [A1..A(n)] (m,m) and tail e (m,)."""

    __slots__ = ("factors", "tail", "_suffix")

    def __init__(self, factors, tail):
        self.factors = [np.asarray(a, dtype=np.float64) for a in factors]
        self.tail = np.asarray(tail, dtype=np.float64)
        self._suffix = None

    def suffix_dense(self) -> np.ndarray:
        """Cached dense values of A2...An e over all tuples with cells
        below m-1 (every dense_block slices a prefix of this, by colex
        nesting)."""
        if self._suffix is None:
            self._suffix = _chain_suffix_dense(self, len(self.tail) - 1)
        return self._suffix

    @property
    def arity(self) -> int:
        return len(self.factors) + 1


class ChainKernel:
    """Sum of product-form terms; scalar-valued (rows = cols = 1)."""

    __slots__ = ("grid", "arity", "rows", "cols", "terms")

    def __init__(self, grid: Grid, arity: int, terms):
        if arity < 1 or arity > MAX_ARITY:
            raise DomainError(f"arity must be in [1, {MAX_ARITY}]")
        terms = list(terms)
        for t in terms:
            if t.arity != arity:
                raise DomainError("chain term arity mismatch")
            if t.tail.shape != (grid.m,):
                raise DomainError("chain tail length mismatch")
            for a in t.factors:
                if a.shape != (grid.m, grid.m):
                    raise DomainError("chain factor shape mismatch")
        self.grid = grid
        self.arity = arity
        self.rows = self.cols = 1
        self.terms = terms

    @staticmethod
    def zeros(grid: Grid, arity: int, rows: int = 1, cols: int = 1):
        if rows != 1 or cols != 1:
            raise DomainError("chain kernels are scalar-valued")
        return ChainKernel(grid, arity, [])

    def is_zero(self) -> bool:
        return not self.terms

    def copy(self):
        return ChainKernel(self.grid, self.arity,
                           [ChainTerm(list(t.factors), t.tail)
                            for t in self.terms])

    def scaled(self, s: float):
        if s == 0.0:
            return ChainKernel(self.grid, self.arity, [])
        return ChainKernel(self.grid, self.arity,
                           [ChainTerm(list(t.factors), t.tail * s)
                            for t in self.terms])

    def transposed(self):
        return self  # scalar-valued

    # -- evaluation --------------------------------------------------------

    def eval_tuples(self, comps: np.ndarray) -> np.ndarray:
        """Values at the given (batch, arity) cell tuples."""
        comps = np.atleast_2d(comps)
        out = np.zeros(len(comps))
        for t in self.terms:
            v = t.tail[comps[:, -1]].copy()
            for l, a in enumerate(t.factors):
                v *= a[comps[:, l], comps[:, l + 1]]
            out += v
        return out

    def dense_values(self) -> np.ndarray:
        """Full flat value array over colex ranks (guarded size)."""
        count = simplex_count(self.grid, self.arity)
        if count > _DENSIFY_GUARD:
            raise MemoryError("chain too large to densify; use dense_block")
        out = np.zeros(count)
        for t in self.terms:
            out += _chain_term_dense(t, self.grid.m)
        return out

    def to_dense(self) -> DetKernel:
        if not self.terms:
            return DetKernel.zeros(self.grid, self.arity)
        vals = self.dense_values()
        return DetKernel(self.grid, self.arity, vals[:, None, None])

    def dense_block(self, t0: int) -> np.ndarray:
        """Dense values of all tuples with leading cell t0, i.e. the flat
        array over ranks [0, C(t0, arity-1)) of the remaining components."""
        p = self.arity
        if p == 1:
            return np.array([sum(t.tail[t0] for t in self.terms)
                             if self.terms else 0.0])
        cnt = math.comb(t0, p - 1)
        out = np.zeros(cnt)
        lead = lead_cells(p - 1, cnt)
        for t in self.terms:
            out += t.factors[0][t0, lead] * t.suffix_dense()[:cnt]
        return out


def _prepend_factor(a: np.ndarray, d: np.ndarray, arity_d: int,
                    mcap: int) -> np.ndarray:
    """Dense prepend: out[(c, rest)] = a[c, lead(rest)] * d[rest] over all
    tuples with cells < mcap."""
    out = np.empty(math.comb(mcap, arity_d + 1))
    for c in range(arity_d, mcap):
        cnt = math.comb(c, arity_d)
        start = math.comb(c, arity_d + 1)
        out[start:start + cnt] = a[c, lead_cells(arity_d, cnt)] * d[:cnt]
    return out


def _chain_term_dense(t: ChainTerm, m: int) -> np.ndarray:
    d = t.tail[:m].copy()
    ar = 1
    for a in reversed(t.factors):
        d = _prepend_factor(a, d, ar, m)
        ar += 1
    return d


def _chain_suffix_dense(t: ChainTerm, t0: int) -> np.ndarray:
    """Dense values of A2...An e over tuples with cells < t0."""
    d = t.tail[:t0].copy()
    ar = 1
    for a in reversed(t.factors[1:]):
        d = _prepend_factor(a, d, ar, t0)
        ar += 1
    return d


def as_chain(k) -> ChainKernel:
    """Convert an arity-<=2 scalar dense kernel (or chain) to chain form."""
    if isinstance(k, ChainKernel):
        return k
    if k.rows != 1 or k.cols != 1:
        raise DomainError("chain kernels are scalar-valued")
    m = k.grid.m
    if k.is_zero():
        return ChainKernel(k.grid, k.arity, [])
    if k.arity == 1:
        return ChainKernel(k.grid, 1, [ChainTerm([], k.values[:, 0, 0])])
    if k.arity == 2:
        a = np.zeros((m, m))
        lead = lead_cells(2, len(k.values))
        trail = trail_cells(2, len(k.values))
        a[lead, trail] = k.values[:, 0, 0]
        return ChainKernel(k.grid, 2, [ChainTerm([a], np.ones(m))])
    raise DomainError("only arity <= 2 dense kernels convert to chain form")


def _coerce_chain_operand(k):
    if isinstance(k, ChainKernel):
        return k
    if k.arity <= 2 and k.rows == 1 and k.cols == 1:
        return as_chain(k)
    return None


# ---------------------------------------------------------------------------
# triangle product


def tri_product(f, g):
    """Triangle product (f |> g): shares the pivot time between f's trailing
    and g's leading argument; value f(t0..tm) g(tm..t(m+n))."""
    if f.grid != g.grid:
        raise DomainError("tri_product requires a shared grid")
    if f.cols != g.rows:
        raise DomainError("tri_product dimension mismatch")
    out_arity = f.arity + g.arity - 1
    if out_arity > MAX_ARITY:
        raise DomainError("tri_product output arity exceeds cap")
    chain = isinstance(f, ChainKernel) or isinstance(g, ChainKernel)
    if chain:
        fc, gc = _coerce_chain_operand(f), _coerce_chain_operand(g)
        if fc is None or gc is None:
            big = f if fc is None else g
            other = gc if fc is None else fc
            if simplex_count(other.grid, other.arity) <= _DENSIFY_GUARD:
                return tri_product(f.to_dense(), g.to_dense())
            raise DomainError("cannot mix a large chain with a dense kernel "
                              f"of arity {big.arity}")
        return _tri_chain(fc, gc)
    return _tri_dense(f, g)


def _tri_chain(f: ChainKernel, g: ChainKernel) -> ChainKernel:
    out = []
    for tf in f.terms:
        for tg in g.terms:
            if tg.factors:
                b1 = tf.tail[:, None] * tg.factors[0]
                out.append(ChainTerm(tf.factors + [b1] + tg.factors[1:],
                                     tg.tail))
            else:
                out.append(ChainTerm(list(tf.factors), tf.tail * tg.tail))
    return ChainKernel(f.grid, f.arity + g.arity - 1, out)


def _tri_dense(f: DetKernel, g: DetKernel) -> DetKernel:
    grid, a, b = f.grid, f.arity, g.arity
    out_arity = a + b - 1
    if f.is_zero() or g.is_zero():
        return DetKernel.zeros(grid, out_arity, f.rows, g.cols)
    count = simplex_count(grid, out_arity)
    if a == 1:
        sel = f.values[lead_cells(b, count)]
        return DetKernel(grid, b, np.einsum("rij,rjk->rik", sel, g.values))
    if b == 1:
        sel = g.values[trail_cells(a, count)]
        return DetKernel(grid, a, np.einsum("rij,rjk->rik", f.values, sel))
    out = np.empty((count, f.rows, g.cols))
    order, offsets = ranks_by_trail(a, grid.m)
    pc = shifted_prefix(a, b - 1, len(f.values))
    for p in range(grid.m):
        lsel = order[offsets[p]:offsets[p + 1]]
        rp = math.comb(p, b - 1)
        if len(lsel) == 0 or rp == 0:
            continue
        gstart = math.comb(p, b)
        gblock = g.values[gstart:gstart + rp]
        pcs = pc[lsel]
        step = max(1, _EINSUM_CHUNK // max(rp, 1))
        for i0 in range(0, len(lsel), step):
            fs = f.values[lsel[i0:i0 + step]]
            pcss = pcs[i0:i0 + step]
            block = np.einsum("aij,bjk->abik", fs, gblock)
            idx = pcss[:, None] + np.arange(rp)[None, :]
            out[idx.ravel()] = block.reshape(-1, f.rows, g.cols)
    return DetKernel(grid, out_arity, out)


# ---------------------------------------------------------------------------
# elementary star-contraction (Lebesgue convolution)


def ast_contract(j, g):
    """Contract j's trailing time against g's leading time over the strictly
    between index range: h * sum_{max(v) < q < min(u)} j(u, q) g(q, v)."""
    if j.grid != g.grid:
        raise DomainError("ast_contract requires a shared grid")
    if isinstance(j, ChainKernel):
        if g.arity <= 2 and g.rows == 1 and g.cols == 1:
            return _ast_chain_left(j, g.to_dense())
        if simplex_count(j.grid, j.arity) <= _DENSIFY_GUARD:
            j = j.to_dense()
        else:
            raise DomainError("large chain left factor needs an arity <= 2 "
                              "right factor in ast_contract")
    if j.arity < 2:
        raise DomainError("left factor of ast_contract must have arity >= 2")
    if j.cols != g.rows:
        raise DomainError("ast_contract dimension mismatch")
    if isinstance(g, ChainKernel):
        if j.arity != 2:
            if simplex_count(g.grid, g.arity) <= _DENSIFY_GUARD:
                return ast_contract(j, g.to_dense())
            raise DomainError("large chain right factor needs arity-2 left")
        return _ast_chain(j, g)
    return _ast_dense(j, g)


def _ast_chain(j: DetKernel, g: ChainKernel) -> ChainKernel:
    m, h = j.grid.m, j.grid.h
    if j.is_zero() or g.is_zero():
        return ChainKernel(j.grid, g.arity, [])
    jmat = np.zeros((m, m))
    lead = lead_cells(2, len(j.values))
    trail = trail_cells(2, len(j.values))
    jmat[lead, trail] = j.values[:, 0, 0]
    out = []
    for t in g.terms:
        if t.factors:
            out.append(ChainTerm([h * (jmat @ t.factors[0])] + t.factors[1:],
                                 t.tail))
        else:
            out.append(ChainTerm([], h * (jmat @ t.tail)))
    return ChainKernel(j.grid, g.arity, out)


def _ast_chain_left(j: ChainKernel, g: DetKernel) -> ChainKernel:
    """Contract the trailing variable of a chain kernel against a scalar
    kernel of arity 1 or 2; the contraction folds into the last factor."""
    if j.arity < 2:
        raise DomainError("left factor of ast_contract must have arity >= 2")
    m, h = j.grid.m, j.grid.h
    if j.is_zero() or g.is_zero():
        return ChainKernel(j.grid, j.arity + g.arity - 2, [])
    if g.arity == 1:
        gv = g.values[:, 0, 0]
        out = []
        for t in j.terms:
            last = np.tril(t.factors[-1], -1)
            tail = h * (last @ (t.tail * gv))
            out.append(ChainTerm(t.factors[:-1], tail))
        return ChainKernel(j.grid, j.arity - 1, out)
    gmat = np.zeros((m, m))
    lead = lead_cells(2, len(g.values))
    trail = trail_cells(2, len(g.values))
    gmat[lead, trail] = g.values[:, 0, 0]
    out = []
    for t in j.terms:
        last = h * ((np.tril(t.factors[-1], -1) * t.tail[None, :]) @ gmat)
        out.append(ChainTerm(t.factors[:-1] + [last], np.ones(m)))
    return ChainKernel(j.grid, j.arity, out)


def _ast_dense(j: DetKernel, g: DetKernel) -> DetKernel:
    grid, a, b = j.grid, j.arity, g.arity
    out_arity = a + b - 2
    if out_arity > MAX_ARITY:
        raise DomainError("ast_contract output arity exceeds cap")
    if j.is_zero() or g.is_zero():
        return DetKernel.zeros(grid, out_arity, j.rows, g.cols)
    h = grid.h
    count = simplex_count(grid, out_arity)
    out = np.zeros((count, j.rows, g.cols))
    order, offsets = ranks_by_trail(a, grid.m)
    pc = drop_last_prefix(a, out_arity, len(j.values))
    for q in range(grid.m):
        jsel = order[offsets[q]:offsets[q + 1]]
        if len(jsel) == 0:
            continue
        jv = j.values[jsel]
        pcs = pc[jsel]
        if b == 1:
            out[pcs] += h * np.einsum("aij,jk->aik", jv, g.values[q])
            continue
        rq = math.comb(q, b - 1)
        if rq == 0:
            continue
        gstart = math.comb(q, b)
        gblock = g.values[gstart:gstart + rq]
        step = max(1, _EINSUM_CHUNK // max(rq, 1))
        for i0 in range(0, len(jsel), step):
            block = h * np.einsum("aij,bjk->abik", jv[i0:i0 + step], gblock)
            idx = pcs[i0:i0 + step][:, None] + np.arange(rq)[None, :]
            out[idx.ravel()] += block.reshape(-1, j.rows, g.cols)
    return DetKernel(grid, out_arity, out)


# ---------------------------------------------------------------------------
# norms


def _op_norms(vals: np.ndarray) -> np.ndarray:
    """Spectral norms of a batch of matrices: closed form for d <= 3,
    power method (tol 1e-12, 200 iterations) beyond."""
    d1, d2 = vals.shape[1], vals.shape[2]
    if d1 != d2:
        raise DomainError("operator norm requires square matrices")
    if d1 == 1:
        return np.abs(vals[:, 0, 0])
    if d1 == 2:
        e = np.einsum("rij,rij->r", vals, vals)
        det = vals[:, 0, 0] * vals[:, 1, 1] - vals[:, 0, 1] * vals[:, 1, 0]
        disc = np.sqrt(np.maximum(e * e - 4.0 * det * det, 0.0))
        return np.sqrt(np.maximum((e + disc) / 2.0, 0.0))
    if d1 == 3:
        mm = np.einsum("rji,rjk->rik", vals, vals)  # A^T A, symmetric PSD
        q = np.trace(mm, axis1=1, axis2=2) / 3.0
        dm = mm - q[:, None, None] * np.eye(3)
        p2 = np.einsum("rij,rij->r", dm, dm)
        p = np.sqrt(np.maximum(p2 / 6.0, 0.0))
        eig = np.empty(len(mm))
        small = p < 1e-300
        eig[small] = q[small]
        big = ~small
        if big.any():
            bmat = dm[big] / p[big, None, None]
            r = np.clip(np.linalg.det(bmat) / 2.0, -1.0, 1.0)
            phi = np.arccos(r) / 3.0
            eig[big] = q[big] + 2.0 * p[big] * np.cos(phi)
        return np.sqrt(np.maximum(eig, 0.0))
    out = np.empty(len(vals))
    rng = np.random.default_rng(0)
    for i, a in enumerate(vals):
        m = a.T @ a
        x = rng.standard_normal(d1)
        x /= np.linalg.norm(x) or 1.0
        lam = 0.0
        for _ in range(200):
            y = m @ x
            ny = np.linalg.norm(y)
            if ny == 0.0:
                lam = 0.0
                break
            x_new = y / ny
            if abs(ny - lam) <= 1e-12 * max(1.0, ny):
                lam = ny
                break
            lam, x = ny, x_new
        out[i] = math.sqrt(max(lam, 0.0))
    return out


def v_norm(k) -> float:
    """Discrete V-norm: max over trailing cells t of the quadrature sum of
    squared spectral norms over the leading simplex, square-rooted; for
    arity 1, the max spectral norm."""
    if isinstance(k, ChainKernel):
        return _v_norm_chain(k)
    if k.rows != k.cols:
        raise DomainError("v_norm requires square-valued kernels")
    if k.is_zero() or len(k.values) == 0:
        return 0.0
    ops = _op_norms(k.values)
    if k.arity == 1:
        return float(ops.max())
    sums = np.zeros(k.grid.m)
    np.add.at(sums, trail_cells(k.arity, len(ops)), ops * ops)
    return math.sqrt(k.grid.h ** (k.arity - 1) * sums.max())


def l2_norm(k) -> float:
    """L2 norm on the simplex: sqrt of the quadrature sum of squared
    Frobenius norms."""
    if isinstance(k, ChainKernel):
        return math.sqrt(max(chain_inner(k, k), 0.0))
    if k.is_zero():
        return 0.0
    return math.sqrt(k.grid.h ** k.arity *
                     float(np.einsum("rij,rij->", k.values, k.values)))


def _chain_pair_profile(tx: ChainTerm, ty: ChainTerm, m: int) -> np.ndarray:
    """For each trailing cell t: quadrature sum over the leading variables of
    the product of the two terms' factor chains (tails excluded)."""
    n = len(tx.factors)
    if n == 0:
        return np.ones(m)
    mat = tx.factors[0][:m, :m] * ty.factors[0][:m, :m]
    for ax, ay in zip(tx.factors[1:], ty.factors[1:]):
        mat = mat @ (ax[:m, :m] * ay[:m, :m])
    return mat.sum(axis=0)


def chain_inner(x: ChainKernel, y: ChainKernel) -> float:
    """L2 inner product of two chain kernels of equal arity (exact midpoint
    sums via the pairwise Gram recursion)."""
    if x.arity != y.arity or x.grid != y.grid:
        raise DomainError("chain_inner requires matching arity and grid")
    m, h = x.grid.m, x.grid.h
    total = 0.0
    for tx in x.terms:
        for ty in y.terms:
            prof = _chain_pair_profile(tx, ty, m)
            total += h ** x.arity * float(prof @ (tx.tail * ty.tail))
    return total


def _v_norm_chain(k: ChainKernel) -> float:
    if not k.terms:
        return 0.0
    m, h = k.grid.m, k.grid.h
    if k.arity == 1:
        tails = sum(t.tail for t in k.terms)
        return float(np.abs(tails).max())
    acc = np.zeros(m)
    for tx in k.terms:
        for ty in k.terms:
            acc += _chain_pair_profile(tx, ty, m) * (tx.tail * ty.tail)
    return math.sqrt(h ** (k.arity - 1) * max(float(acc.max()), 0.0))


_BLOCK_GUARD = 140_000_000  # max entries of one leading-cell block


def l2_distance(a, b) -> float:
    """L2 norm of a - b, computed on true entrywise differences.  Large
    chain kernels are densified one leading-cell block at a time, which
    avoids the cancellation floor of Gram-based norms of near-equal
    chains; if even one block is too large, falls back to the Gram form
    (accurate only down to ~sqrt(eps) relative)."""
    if a.grid != b.grid or a.arity != b.arity:
        raise DomainError("l2_distance requires matching grid and arity")
    grid, arity = a.grid, a.arity
    chain = isinstance(a, ChainKernel) or isinstance(b, ChainKernel)
    if not chain or simplex_count(grid, arity) <= _DENSIFY_GUARD:
        return l2_norm(kernel_sub(a.to_dense(), b.to_dense()))
    if math.comb(grid.m - 1, arity - 1) > _BLOCK_GUARD:
        gram = (kernel_inner(a, a) - 2.0 * kernel_inner(a, b)
                + kernel_inner(b, b))
        return math.sqrt(max(gram, 0.0))

    def block(k, t0):
        blk = k.dense_block(t0)
        if blk.ndim == 3:
            blk = blk[:, 0, 0]
        return blk

    total = 0.0
    for t0 in range(arity - 1, grid.m):
        diff = block(a, t0) - block(b, t0)
        total += float(diff @ diff)
    return math.sqrt(grid.h ** arity * total)


def lead_sq_profile(k) -> np.ndarray:
    """For each leading cell t, the quadrature sum over the trailing
    variables of the squared kernel values (Frobenius), including the
    h^(arity-1) weight; the building block of pointwise second moments."""
    grid = k.grid
    m, h = grid.m, grid.h
    out = np.zeros(m)
    if isinstance(k, ChainKernel):
        for tx in k.terms:
            for ty in k.terms:
                u = tx.tail * ty.tail
                for fx, fy in zip(reversed(tx.factors), reversed(ty.factors)):
                    u = np.tril(fx * fy, -1) @ u
                out += u
        return h ** (k.arity - 1) * out
    if k.is_zero():
        return out
    sq = np.einsum("rij,rij->r", k.values, k.values)
    np.add.at(out, lead_cells(k.arity, len(sq)), sq)
    return h ** (k.arity - 1) * out


def kernel_inner(x, y) -> float:
    """L2 inner product of two kernels of equal arity (either layout)."""
    if isinstance(x, ChainKernel) and isinstance(y, ChainKernel):
        return chain_inner(x, y)
    xd, yd = x.to_dense(), y.to_dense()
    if xd.arity != yd.arity or xd.grid != yd.grid:
        raise DomainError("kernel_inner requires matching arity and grid")
    if xd.is_zero() or yd.is_zero():
        return 0.0
    return xd.grid.h ** xd.arity * float(
        np.einsum("rij,rij->", xd.values, yd.values))


# ---------------------------------------------------------------------------
# arithmetic helpers


def kernel_add(a, b):
    """Sum of two kernels of equal arity (layout-polymorphic)."""
    if a.grid != b.grid or a.arity != b.arity:
        raise DomainError("kernel_add requires matching grid and arity")
    if a.is_zero():
        return b
    if b.is_zero():
        return a
    if isinstance(a, ChainKernel) and isinstance(b, ChainKernel):
        return ChainKernel(a.grid, a.arity, a.terms + b.terms)
    if isinstance(a, ChainKernel) or isinstance(b, ChainKernel):
        ch, de = (a, b) if isinstance(a, ChainKernel) else (b, a)
        if de.arity <= 2 and de.rows == 1 and de.cols == 1:
            return ChainKernel(a.grid, a.arity, ch.terms + as_chain(de).terms)
        return kernel_add(a.to_dense(), b.to_dense())
    if a.rows != b.rows or a.cols != b.cols:
        raise DomainError("kernel_add dimension mismatch")
    return DetKernel(a.grid, a.arity, a.values + b.values)


def kernel_sub(a, b):
    return kernel_add(a, b.scaled(-1.0))


# ---------------------------------------------------------------------------
# restriction / zero-extension


def restrict_kernel(k, iu: int, iv: int, subgrid: Grid):
    """Restrict to the sub-simplex of cells in [iu, iv), on the sub-grid."""
    if isinstance(k, ChainKernel):
        terms = []
        for t in k.terms:
            terms.append(ChainTerm([a[iu:iv, iu:iv] for a in t.factors],
                                   t.tail[iu:iv]))
        return ChainKernel(subgrid, k.arity, terms)
    cnt = simplex_count(subgrid, k.arity)
    granks = weighted_rank(k.arity, _std_lows(k.arity), cnt, offset=iu)
    return DetKernel(subgrid, k.arity, k.values[granks],
                     known_zero=k.known_zero)


def extend_kernel(k, iu: int, iv: int, fullgrid: Grid):
    """Zero-extend a sub-grid kernel back to the full grid."""
    if isinstance(k, ChainKernel):
        m = fullgrid.m
        terms = []
        for t in k.terms:
            facs = []
            for a in t.factors:
                fa = np.zeros((m, m))
                fa[iu:iv, iu:iv] = a
                facs.append(fa)
            tail = np.zeros(m)
            tail[iu:iv] = t.tail
            terms.append(ChainTerm(facs, tail))
        return ChainKernel(fullgrid, k.arity, terms)
    if k.is_zero():
        return DetKernel.zeros(fullgrid, k.arity, k.rows, k.cols)
    cnt = len(k.values)
    granks = weighted_rank(k.arity, _std_lows(k.arity), cnt, offset=iu)
    vals = np.zeros((simplex_count(fullgrid, k.arity), k.rows, k.cols))
    vals[granks] = k.values
    return DetKernel(fullgrid, k.arity, vals)


# ---------------------------------------------------------------------------
# fractional kernel tabulation


def tabulate_fractional(alpha: float, scale, grid: Grid) -> DetKernel:
    """Arity-2 kernel: exact cell average over the t-cell of
    (t - s)^(alpha-1) / Gamma(alpha) at s = midpoint of the trailing cell,
    times scale (scalar or square matrix)."""
    if not 0.5 < alpha <= 1.0:
        raise DomainError("tabulate_fractional requires 1/2 < alpha <= 1")
    count = simplex_count(grid, 2)
    i0 = lead_cells(2, count).astype(np.int64)
    i1 = trail_cells(2, count).astype(np.int64)
    smid = grid.s_start + (i1 + 0.5) * grid.h
    tlo = grid.s_start + i0 * grid.h
    thi = tlo + grid.h
    avg = ((thi - smid) ** alpha - (tlo - smid) ** alpha) / (
        alpha * grid.h * math.gamma(alpha))
    scale = np.atleast_2d(np.asarray(scale, dtype=np.float64))
    vals = avg[:, None, None] * scale[None, :, :]
    return DetKernel(grid, 2, vals, known_zero=not scale.any())


# ---------------------------------------------------------------------------
# CSV serialization


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_kernel_csv(k, fh) -> None:
    """Write a kernel: names row, values row, then one row per tuple with
    row-major matrix entries (17 significant digits)."""
    k = k.to_dense()
    g = k.grid
    fh.write("arity,rows,cols,m,s,t\n")
    fh.write(f"{k.arity},{k.rows},{k.cols},{g.m},{_fmt(g.s_start)},"
             f"{_fmt(g.t_end)}\n")
    comps = components(k.arity, len(k.values))
    flat = k.values.reshape(len(k.values), -1)
    for tup, row in zip(comps, flat):
        fh.write(",".join(str(int(c)) for c in tup) + "," +
                 ",".join(_fmt(v) for v in row) + "\n")


def read_kernel_csv(fh) -> DetKernel:
    header = fh.readline().strip()
    if header.split(",") != ["arity", "rows", "cols", "m", "s", "t"]:
        raise DomainError("bad kernel CSV header")
    arity_s, rows_s, cols_s, m_s, s_s, t_s = fh.readline().strip().split(",")
    arity, rows, cols, m = int(arity_s), int(rows_s), int(cols_s), int(m_s)
    grid = Grid(float(s_s), float(t_s), m)
    count = simplex_count(grid, arity)
    vals = np.zeros((count, rows, cols))
    from .simplex_grid import tuple_rank
    seen = 0
    while seen < count:
        line = fh.readline()
        if not line:
            raise DomainError("truncated kernel CSV block")
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        tup = tuple(int(x) for x in parts[:arity])
        entries = np.array([float(x) for x in parts[arity:]])
        vals[tuple_rank(tup)] = entries.reshape(rows, cols)
        seen += 1
    return DetKernel(grid, arity, vals)
