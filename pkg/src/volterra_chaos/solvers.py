"""Variation-of-constants solvers for linear forward and Type-II backward
stochastic Volterra integral equations.

A linear system is the kernel pair (J, K).  The forward equation
X = phi + J*X + K(star)X is solved by X = phi + Q*phi + R(star)phi with
(Q, R) the combined resolvent of (J, K); the backward equation
Y = psi + J^T (bast) Y + K^T (bstar) Y by the transposed-resolvent
formula Y = psi + Q^T (bast) psi + R^T (bstar) psi.  The two are linked
by the duality <X, psi> = <phi, Y>.

Builders are provided for the two worked equation families: the
time-fractional Black-Scholes equation and the fractional equation with
delay and noisy memory.
"""

from __future__ import annotations

import math

import numpy as np

from .simplex_grid import DomainError, Grid, lead_cells, trail_cells
from .det_kernels import (ChainKernel, DetKernel, as_chain, ast_contract,
                          kernel_add, l2_distance, lead_sq_profile,
                          tabulate_fractional, tri_product)
from .chaos_core import (AstKernel, ChaosProcess, StarKernel, inner_product,
                         martingale_shift, process_add)
from .products import ast, bast, bstar, star
from .resolvents import (NonConvergenceError, ResolventReport,
                         aststar_resolvent)


class LinearSystem:
    """The kernel pair (J, K) of a linear (B)SVIE, with a provenance tag
    and a cache of computed combined resolvents."""

    def __init__(self, j: AstKernel, k: StarKernel, tag: str = "custom"):
        if j.grid != k.grid or j.d != k.d:
            raise DomainError("LinearSystem needs matching grid/dimension")
        n_max = max(j.n_max, k.n_max)
        self.j = j.truncated(n_max)
        self.k = k.truncated(n_max)
        self.tag = tag
        self._resolvents = {}

    @property
    def grid(self) -> Grid:
        return self.j.grid

    @property
    def d(self) -> int:
        return self.j.d

    @property
    def n_max(self) -> int:
        return self.j.n_max

    def resolvent(self, tol: float = 1e-10):
        """Combined (Q, R, report), cached per tolerance."""
        hit = self._resolvents.get(tol)
        if hit is None:
            hit = aststar_resolvent(self.j, self.k, tol)
            self._resolvents[tol] = hit
        return hit


def _common_order(sys: LinearSystem, x: ChaosProcess) -> int:
    return max(sys.n_max, x.n_max)


def solve_svie(sys: LinearSystem, phi: ChaosProcess,
               tol: float = 1e-10) -> ChaosProcess:
    """X = phi + Q*phi + R(star)phi, the unique fixed point of
    X = phi + J*X + K(star)X."""
    if phi.grid != sys.grid:
        raise DomainError("free term grid mismatch")
    n = _common_order(sys, phi)
    phi = phi.truncated(n)
    q, r, report = sys.resolvent(tol)
    if not report.converged:
        raise NonConvergenceError(
            "resolvent did not converge (residuals %.3g / %.3g)"
            % (report.residual_ast, report.residual_star))
    return process_add(phi, process_add(ast(q, phi), star(r, phi)))


def svie_residual(sys: LinearSystem, phi: ChaosProcess,
                  x: ChaosProcess) -> float:
    """Relative L2 norm of X - phi - J*X - K(star)X (absolute when
    x = 0)."""
    n = max(_common_order(sys, phi), x.n_max)
    phi, x = phi.truncated(n), x.truncated(n)
    rhs = process_add(phi, process_add(ast(sys.j, x), star(sys.k, x)))
    defect = math.sqrt(sum(l2_distance(a, b) ** 2
                           for a, b in zip(x.coeffs, rhs.coeffs)))
    scale = x.norm()
    return defect / scale if scale > 0.0 else defect


def solve_bsvie(sys: LinearSystem, psi: ChaosProcess,
                tol: float = 1e-10) -> ChaosProcess:
    """Y = psi + Q^T (bast) psi + R^T (bstar) psi, the unique solution of
    Y = psi + J^T (bast) Y + K^T (bstar) Y."""
    if psi.grid != sys.grid:
        raise DomainError("free term grid mismatch")
    n = _common_order(sys, psi)
    psi = psi.truncated(n)
    q, r, report = sys.resolvent(tol)
    if not report.converged:
        raise NonConvergenceError(
            "resolvent did not converge (residuals %.3g / %.3g)"
            % (report.residual_ast, report.residual_star))
    return process_add(psi, process_add(bast(q.transposed(), psi),
                                        bstar(r.transposed(), psi)))


def bsvie_residual(sys: LinearSystem, psi: ChaosProcess,
                   y: ChaosProcess) -> float:
    """Relative L2 norm of Y - psi - J^T (bast) Y - K^T (bstar) Y."""
    n = max(_common_order(sys, psi), y.n_max)
    psi, y = psi.truncated(n), y.truncated(n)
    rhs = process_add(psi, process_add(bast(sys.j.transposed(), y),
                                       bstar(sys.k.transposed(), y)))
    defect = math.sqrt(sum(l2_distance(a, b) ** 2
                           for a, b in zip(y.coeffs, rhs.coeffs)))
    scale = y.norm()
    return defect / scale if scale > 0.0 else defect


def z_component(y: ChaosProcess, s_cell: int) -> ChaosProcess:
    """First martingale-representation component Z(s, .) of the adapted
    M-solution associated with Y, at the cell index of the outer time."""
    return martingale_shift(y, 1, prefix=(s_cell,))


def duality_gap(sys: LinearSystem, phi: ChaosProcess, psi: ChaosProcess,
                tol: float = 1e-10) -> float:
    """|<X, psi> - <phi, Y>| / (1 + |<X, psi>|) with X, Y the forward and
    backward solutions."""
    x = solve_svie(sys, phi, tol)
    y = solve_bsvie(sys, psi, tol)
    a = inner_product(x, psi)
    b = inner_product(phi, y)
    return abs(a - b) / (1.0 + abs(a))


# ---------------------------------------------------------------------------
# observables

def mean_trajectory(x: ChaosProcess) -> np.ndarray:
    """Expected path: the order-0 coefficient, shape (m, rows)."""
    return x.coeffs[0].to_dense().values[:, :, 0]


def second_moment(x: ChaosProcess) -> np.ndarray:
    """Pointwise second moment E[|X(t)|^2] per cell via the chaos
    isometry: the sum over orders of the quadrature-weighted squared
    coefficients with the leading time fixed."""
    out = np.zeros(x.grid.m)
    for c in x.coeffs:
        out += lead_sq_profile(c)
    return out


# ---------------------------------------------------------------------------
# built-in systems

def _check_alpha(alpha: float):
    if not 0.5 < alpha <= 1.0:
        raise DomainError("alpha must lie in (1/2, 1]")


def build_fractional_bs(alpha: float, mu: float, sigma: float, x0: float,
                        grid: Grid, n_max: int,
                        layout: str = "dense") -> tuple:
    """Time-fractional Black-Scholes system: J and K both carry the
    fractional difference kernel (t-s)^(alpha-1)/Gamma(alpha), scaled by
    the drift mu and the volatility sigma; the free term is the constant
    x0.  layout='chain' stores K's coefficient in product form, which
    scales to large grids and truncation orders."""
    _check_alpha(alpha)
    if layout not in ("dense", "chain"):
        raise DomainError("layout must be 'dense' or 'chain'")
    if mu == 0.0:
        j0 = DetKernel.zeros(grid, 2)
    else:
        j0 = tabulate_fractional(alpha, mu, grid)
    j = AstKernel(grid, [j0] + [DetKernel.zeros(grid, n + 2)
                                for n in range(1, n_max + 1)])
    if sigma == 0.0:
        k1 = DetKernel.zeros(grid, 2)
    else:
        k1 = tabulate_fractional(alpha, sigma, grid)
    if layout == "chain" and not k1.is_zero():
        k1 = as_chain(k1)
    k = StarKernel(ChaosProcess(grid, [DetKernel.zeros(grid, 1), k1]
                                + [DetKernel.zeros(grid, n + 1)
                                   for n in range(2, n_max + 1)]))
    phi = ChaosProcess.deterministic(
        grid, np.full((grid.m, 1, 1), float(x0)), n_max)
    return LinearSystem(j, k, "fractional-bs"), phi


def _coerce_coeff(grid: Grid, table, arity: int, d: int) -> DetKernel:
    if table is None:
        return DetKernel.zeros(grid, arity, d, d)
    if isinstance(table, (DetKernel, ChainKernel)):
        k = table.to_dense()
        if k.grid != grid or k.arity != arity or (k.rows, k.cols) != (d, d):
            raise DomainError("coefficient table shape/grid mismatch")
        return k
    vals = np.asarray(table, dtype=np.float64)
    if vals.ndim == 0:
        from .simplex_grid import simplex_count
        vals = np.broadcast_to(
            float(vals) * np.eye(d), (simplex_count(grid, arity), d, d))
    return DetKernel(grid, arity, np.ascontiguousarray(vals))


def _frac_matrix(alpha: float, grid: Grid, d: int) -> DetKernel:
    frac = tabulate_fractional(alpha, 1.0, grid)
    if d == 1:
        return frac
    vals = frac.values[:, 0, 0][:, None, None] * np.eye(d)
    return DetKernel(grid, 2, vals)


def build_noisy_memory(j, k, l1, l2, b, sigma, x0, alpha: float, grid: Grid,
                       n_max: int, d: int = 1) -> tuple:
    """Fractional system with a delay (l1) and a noisy memory (l2).
    After the Fubini rewrite, the Lebesgue kernel J gains a stochastic
    order-1 part from l1, K's order-1 coefficient gains the inner
    time-integral of l2, K's order-2 coefficient carries l2 itself, and
    all higher K coefficients vanish.  j, k are one-time coefficient
    tables (arity 1), l1, l2 two-time tables (arity 2); b and sigma are
    free-term processes (None for zero)."""
    _check_alpha(alpha)
    if n_max < 2:
        raise DomainError("noisy-memory systems need n_max >= 2")
    jt = _coerce_coeff(grid, j, 1, d)
    kt = _coerce_coeff(grid, k, 1, d)
    l1t = _coerce_coeff(grid, l1, 2, d)
    l2t = _coerce_coeff(grid, l2, 2, d)
    frac = _frac_matrix(alpha, grid, d)
    count2 = len(frac.values)
    trail = trail_cells(2, count2)

    def frac_times_trail(table: DetKernel) -> DetKernel:
        vals = np.einsum("rij,rjk->rik", frac.values, table.values[trail])
        return DetKernel(grid, 2, vals)

    bf0 = kernel_add(frac_times_trail(jt), ast_contract(frac, l1t))
    bf1 = tri_product(frac, l1t)
    jker = AstKernel(grid, [bf0, bf1] + [DetKernel.zeros(grid, n + 2, d, d)
                                         for n in range(2, n_max + 1)])
    f1 = kernel_add(frac_times_trail(kt), ast_contract(frac, l2t))
    f2 = tri_product(frac, l2t)
    kker = StarKernel(ChaosProcess(
        grid, [DetKernel.zeros(grid, 1, d, d), f1, f2]
        + [DetKernel.zeros(grid, n + 1, d, d) for n in range(3, n_max + 1)]))

    phi = ChaosProcess.deterministic(
        grid, np.broadcast_to(np.asarray(x0, dtype=np.float64).reshape(-1),
                              (grid.m, d)).reshape(grid.m, d, 1).copy(),
        n_max)
    frac_ast = AstKernel(grid, [frac]).truncated(n_max)
    frac_star = StarKernel(ChaosProcess(
        grid, [DetKernel.zeros(grid, 1, d, d), frac]
        + [DetKernel.zeros(grid, n + 1, d, d)
           for n in range(2, n_max + 1)]))
    if b is not None and not b.is_zero():
        phi = process_add(phi, ast(frac_ast, b.truncated(n_max)))
    if sigma is not None and not sigma.is_zero():
        phi = process_add(phi, star(frac_star, sigma.truncated(n_max)))
    return LinearSystem(jker, kker, "noisy-memory"), phi
