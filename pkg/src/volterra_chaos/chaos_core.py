"""Chaos-coefficient representations of adapted processes and the two kernel
spaces acting on them.

A ``ChaosProcess`` stores the coefficient list (F_0, ..., F_N), where F_n is a
deterministic kernel of arity n+1 (the order-n iterated-integral coefficient).
``StarKernel`` wraps a square-valued process together with cached V-norms;
``AstKernel`` stores the two-time coefficient list (bF_0, ..., bF_N), where
bF_n has arity n+2, with a cached L2-operator norm sum.
"""

from __future__ import annotations

import math

import numpy as np

from .simplex_grid import DomainError, Grid, MAX_ARITY, simplex_count
from .det_kernels import (ChainKernel, DetKernel, _op_norms, kernel_add,
                          kernel_inner, l2_norm, read_kernel_csv, v_norm,
                          write_kernel_csv)


def _validate_coeffs(grid: Grid, coeffs, base_arity: int):
    rows, cols = coeffs[0].rows, coeffs[0].cols
    for n, c in enumerate(coeffs):
        if c.grid != grid:
            raise DomainError("coefficient grid mismatch")
        if c.arity != n + base_arity:
            raise DomainError(
                f"order-{n} coefficient must have arity {n + base_arity}")
        if (c.rows, c.cols) != (rows, cols):
            raise DomainError("coefficient dimension mismatch")
    return rows, cols


class ChaosProcess:
    """Adapted process as a truncated chaos expansion (F_0, ..., F_N)."""

    __slots__ = ("grid", "n_max", "rows", "cols", "coeffs")

    def __init__(self, grid: Grid, coeffs):
        coeffs = list(coeffs)
        if not coeffs:
            raise DomainError("ChaosProcess needs at least the order-0 coeff")
        if len(coeffs) - 1 + 1 > MAX_ARITY:
            raise DomainError(f"truncation order must be <= {MAX_ARITY - 1}")
        self.rows, self.cols = _validate_coeffs(grid, coeffs, 1)
        self.grid = grid
        self.n_max = len(coeffs) - 1
        self.coeffs = coeffs

    @staticmethod
    def zeros(grid: Grid, n_max: int, rows: int = 1, cols: int = 1):
        return ChaosProcess(grid, [DetKernel.zeros(grid, n + 1, rows, cols)
                                   for n in range(n_max + 1)])

    @staticmethod
    def deterministic(grid: Grid, f0, n_max: int = 0):
        """Process with only an order-0 coefficient (given kernel or array)."""
        if not isinstance(f0, (DetKernel, ChainKernel)):
            f0 = np.asarray(f0, dtype=np.float64)
            if f0.ndim == 1:
                f0 = f0[:, None, None]
            f0 = DetKernel(grid, 1, f0)
        coeffs = [f0] + [DetKernel.zeros(grid, n + 1, f0.rows, f0.cols)
                         for n in range(1, n_max + 1)]
        return ChaosProcess(grid, coeffs)

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.coeffs)

    def scaled(self, s: float):
        return ChaosProcess(self.grid, [c.scaled(s) for c in self.coeffs])

    def transposed(self):
        return ChaosProcess(self.grid, [c.transposed() for c in self.coeffs])

    def truncated(self, n_max: int):
        if n_max >= self.n_max:
            coeffs = list(self.coeffs)
            coeffs += [DetKernel.zeros(self.grid, n + 1, self.rows, self.cols)
                       for n in range(self.n_max + 1, n_max + 1)]
            return ChaosProcess(self.grid, coeffs)
        return ChaosProcess(self.grid, self.coeffs[: n_max + 1])

    def norm(self) -> float:
        value = math.sqrt(max(sum(l2_norm(c) ** 2 for c in self.coeffs), 0.0))
        if math.isnan(value):
            raise DomainError("process norm is NaN")
        return value

    def densified(self):
        return ChaosProcess(self.grid, [c.to_dense() for c in self.coeffs])


def process_add(x: ChaosProcess, y: ChaosProcess) -> ChaosProcess:
    if x.grid != y.grid or (x.rows, x.cols) != (y.rows, y.cols):
        raise DomainError("process_add requires matching grid and dims")
    n = max(x.n_max, y.n_max)
    x, y = x.truncated(n), y.truncated(n)
    return ChaosProcess(x.grid, [kernel_add(a, b)
                                 for a, b in zip(x.coeffs, y.coeffs)])


def process_sub(x: ChaosProcess, y: ChaosProcess) -> ChaosProcess:
    return process_add(x, y.scaled(-1.0))


def inner_product(x: ChaosProcess, y: ChaosProcess) -> float:
    """L2 inner product via the chaos isometry: orders pair off, each order
    contributes the quadrature sum of entrywise coefficient products."""
    if x.grid != y.grid or (x.rows, x.cols) != (y.rows, y.cols):
        raise DomainError("inner_product requires matching grid and dims")
    total = 0.0
    for n in range(min(x.n_max, y.n_max) + 1):
        a, b = x.coeffs[n], y.coeffs[n]
        if a.is_zero() or b.is_zero():
            continue
        total += kernel_inner(a, b)
    return total


# ---------------------------------------------------------------------------
# star / ast kernel wrappers


class StarKernel:
    """Kernel of the triangle-convolution algebra, with cached V-norms."""

    __slots__ = ("base", "v_norms", "_k_norm")

    def __init__(self, base: ChaosProcess):
        if base.rows != base.cols:
            raise DomainError("StarKernel must be square-valued")
        self.base = base
        self.v_norms = tuple(v_norm(c) for c in base.coeffs)
        self._k_norm = float(sum(self.v_norms))
        if math.isnan(self._k_norm):
            raise DomainError("StarKernel norm is NaN")

    @property
    def grid(self) -> Grid:
        return self.base.grid

    @property
    def n_max(self) -> int:
        return self.base.n_max

    @property
    def d(self) -> int:
        return self.base.rows

    @property
    def coeffs(self):
        return self.base.coeffs

    def is_zero(self) -> bool:
        return self.base.is_zero()

    def scaled(self, s: float):
        return StarKernel(self.base.scaled(s))

    def transposed(self):
        return StarKernel(self.base.transposed())

    def truncated(self, n_max: int):
        return StarKernel(self.base.truncated(n_max))


def identity_star(grid: Grid, n_max: int, d: int = 1) -> StarKernel:
    """The unit of the star algebra: F_0 = I_d, higher orders zero."""
    base = ChaosProcess.deterministic(
        grid, DetKernel.identity_coeff(grid, d), n_max)
    return StarKernel(base)


def k_norm(k: StarKernel) -> float:
    """Algebra norm: sum over orders of the coefficient V-norms."""
    return k._k_norm


def _l2_op_norm(c) -> float:
    """L2 norm taken with the spectral norm inside: sqrt of the quadrature
    sum of squared operator norms."""
    if isinstance(c, ChainKernel):
        return l2_norm(c)  # scalar-valued: |.| is the operator norm
    if c.is_zero():
        return 0.0
    ops = _op_norms(c.values)
    return math.sqrt(c.grid.h ** c.arity * float(ops @ ops))


class AstKernel:
    """Kernel of the Lebesgue-convolution algebra: two-time coefficients
    (bF_0, ..., bF_N) of arities 2, ..., N+2."""

    __slots__ = ("grid", "n_max", "d", "bcoeffs", "_j_norm")

    def __init__(self, grid: Grid, bcoeffs):
        bcoeffs = list(bcoeffs)
        if not bcoeffs:
            raise DomainError("AstKernel needs at least the order-0 coeff")
        rows, cols = _validate_coeffs(grid, bcoeffs, 2)
        if rows != cols:
            raise DomainError("AstKernel must be square-valued")
        if len(bcoeffs) + 1 > MAX_ARITY:
            raise DomainError(f"AstKernel order must be <= {MAX_ARITY - 2}")
        self.grid = grid
        self.n_max = len(bcoeffs) - 1
        self.d = rows
        self.bcoeffs = bcoeffs
        self._j_norm = float(sum(_l2_op_norm(c) for c in bcoeffs))
        if math.isnan(self._j_norm):
            raise DomainError("AstKernel norm is NaN")

    @staticmethod
    def zeros(grid: Grid, n_max: int, d: int = 1):
        return AstKernel(grid, [DetKernel.zeros(grid, n + 2, d, d)
                                for n in range(n_max + 1)])

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.bcoeffs)

    def scaled(self, s: float):
        return AstKernel(self.grid, [c.scaled(s) for c in self.bcoeffs])

    def transposed(self):
        return AstKernel(self.grid, [c.transposed() for c in self.bcoeffs])

    def truncated(self, n_max: int):
        if n_max >= self.n_max:
            bc = list(self.bcoeffs)
            bc += [DetKernel.zeros(self.grid, n + 2, self.d, self.d)
                   for n in range(self.n_max + 1, n_max + 1)]
            return AstKernel(self.grid, bc)
        return AstKernel(self.grid, self.bcoeffs[: n_max + 1])


def j_norm(j: AstKernel) -> float:
    """Algebra norm: sum over orders of L2-with-operator-norm values."""
    return j._j_norm


def ast_add(a: AstKernel, b: AstKernel) -> AstKernel:
    if a.grid != b.grid or a.d != b.d:
        raise DomainError("ast_add requires matching grid and dimension")
    n = max(a.n_max, b.n_max)
    a, b = a.truncated(n), b.truncated(n)
    return AstKernel(a.grid, [kernel_add(x, y)
                              for x, y in zip(a.bcoeffs, b.bcoeffs)])


def star_add(a: StarKernel, b: StarKernel) -> StarKernel:
    return StarKernel(process_add(a.base, b.base))


# ---------------------------------------------------------------------------
# martingale representation operators


def martingale_shift(x: ChaosProcess, k: int, prefix=()) -> ChaosProcess:
    """Conditional-increment reindexing: the order-n coefficient of the
    result at (t0,...,tn) is F_{n+k}[x](prefix, t0,...,tn).

    The prefix is a strictly decreasing tuple of k cell indices; the result
    is meaningful on tuples below min(prefix) and zero elsewhere.
    """
    if k < 0 or k > x.n_max:
        raise DomainError("shift order must satisfy 0 <= k <= N")
    prefix = tuple(int(p) for p in prefix)
    if len(prefix) != k:
        raise DomainError("prefix must have exactly k entries")
    if any(prefix[i] <= prefix[i + 1] for i in range(k - 1)):
        raise DomainError("prefix must be strictly decreasing")
    if k == 0:
        return x
    pmin = prefix[-1]
    grid = x.grid
    out = []
    for n in range(x.n_max - k + 1):
        src = x.coeffs[n + k].to_dense()
        vals = np.zeros((simplex_count(grid, n + 1), x.rows, x.cols))
        cap = math.comb(pmin, n + 1)
        if cap > 0 and not src.is_zero():
            # rank(prefix, tail) = prefix offset + rank(tail), by nesting
            offset = sum(math.comb(p, n + 1 + k - l)
                         for l, p in enumerate(prefix))
            vals[:cap] = src.values[offset: offset + cap]
        out.append(DetKernel(grid, n + 1, vals))
    return ChaosProcess(grid, out)


def mean_coeff(x: ChaosProcess) -> DetKernel:
    """The order-0 coefficient, i.e. the pointwise mean of the process."""
    return x.coeffs[0].to_dense()


# ---------------------------------------------------------------------------
# random instances (for property tests) and serialization


def random_process(grid: Grid, n_max: int, rows: int = 1, cols: int = 1,
                   seed: int = 0) -> ChaosProcess:
    """Seeded random process with per-order magnitude decay 2^-n."""
    rng = np.random.default_rng(seed)
    coeffs = []
    for n in range(n_max + 1):
        count = simplex_count(grid, n + 1)
        vals = rng.standard_normal((count, rows, cols)) * 2.0 ** (-n)
        coeffs.append(DetKernel(grid, n + 1, vals))
    return ChaosProcess(grid, coeffs)


def random_star_kernel(grid: Grid, n_max: int, d: int = 1,
                       seed: int = 0) -> StarKernel:
    return StarKernel(random_process(grid, n_max, d, d, seed))


def random_ast_kernel(grid: Grid, n_max: int, d: int = 1,
                      seed: int = 0) -> AstKernel:
    rng = np.random.default_rng(seed)
    bcoeffs = []
    for n in range(n_max + 1):
        count = simplex_count(grid, n + 2)
        vals = rng.standard_normal((count, d, d)) * 2.0 ** (-n)
        bcoeffs.append(DetKernel(grid, n + 2, vals))
    return AstKernel(grid, bcoeffs)


def write_process_csv(x: ChaosProcess, fh) -> None:
    """One block per order: a header row ``order,n`` then the kernel block."""
    for n, c in enumerate(x.coeffs):
        fh.write(f"order,{n}\n")
        write_kernel_csv(c, fh)


def read_process_csv(fh) -> ChaosProcess:
    coeffs = []
    while True:
        line = fh.readline()
        if not line:
            break
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if parts[0] != "order" or int(parts[1]) != len(coeffs):
            raise DomainError("bad process CSV block header")
        coeffs.append(read_kernel_csv(fh))
    if not coeffs:
        raise DomainError("empty process CSV")
    return ChaosProcess(coeffs[0].grid, coeffs)
