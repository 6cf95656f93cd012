"""Resolvent kernels for the two convolution algebras.

The star-resolvent R of a star-kernel K solves R = K + K (star) R
= K + R (star) K; it exists whenever K can be partitioned into
subintervals of norm < 1 (Neumann series plus concatenation).  The
ast-resolvent Q of an ast-kernel J solves Q = J + J * Q = J + Q * J and
always exists: exponential scaling of the coefficients shrinks the norm
below 1/2, after which the Neumann series converges.  The combined
(ast,star)-resolvent (Q, R) solves the four coupled equations

    Q = J + J*Q + K(star)Q = J + Q*J + R(star)J,
    R = K + J*R + K(star)R = K + Q*K + R(star)K,

and is built from the two single-algebra resolvents by either of two
compositions, which are cross-checked against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .simplex_grid import (DomainError, Grid, build_grid, lead_cells,
                           simplex_count, trail_cells)
from .det_kernels import (ChainKernel, DetKernel, _DENSIFY_GUARD, as_chain,
                          ast_contract, extend_kernel, kernel_add,
                          l2_distance, l2_norm, restrict_kernel, tri_product,
                          v_norm)
from .chaos_core import (AstKernel, ChaosProcess, StarKernel, ast_add,
                         j_norm, k_norm, star_add)
from .products import ast_jj, ast_jk, star_kernel, star_kj


class PreconditionError(ValueError):
    """A checked precondition of a resolvent routine was violated."""


class ExistenceUndeterminedError(ArithmeticError):
    """No subdivision brings the kernel norm below 1; existence of the
    star-resolvent is undetermined in this regime."""


class InternalConsistencyError(ArithmeticError):
    """Two independent constructions of the same object disagree."""


class NonConvergenceError(ArithmeticError):
    """An iterative construction stopped without reaching tolerance."""


@dataclass(frozen=True)
class ResolventReport:
    converged: bool
    iterations: int
    residual_star: float
    residual_ast: float
    sigma: float = 0.0
    partition: tuple = ()

    def csv_row(self) -> str:
        part = ";".join("%.17g" % p for p in self.partition)
        return "%s,%d,%.17g,%.17g,%.17g,%s" % (
            "true" if self.converged else "false", self.iterations,
            self.residual_star, self.residual_ast, self.sigma, part)


REPORT_CSV_HEADER = "converged,iterations,residual_star,residual_ast,sigma,partition"


def write_report_csv(report: ResolventReport, fh) -> None:
    fh.write(REPORT_CSV_HEADER + "\n")
    fh.write(report.csv_row() + "\n")


# ---------------------------------------------------------------------------
# residuals

def _star_sub(a: StarKernel, b: StarKernel) -> StarKernel:
    return star_add(a, b.scaled(-1.0))


def _ast_sub(a: AstKernel, b: AstKernel) -> AstKernel:
    return ast_add(a, b.scaled(-1.0))


def _star_l2(k: StarKernel) -> float:
    return k.base.norm()


def _ast_l2(j: AstKernel) -> float:
    return math.sqrt(sum(l2_norm(c) ** 2 for c in j.bcoeffs))


def _star_distance(a: StarKernel, b: StarKernel) -> float:
    n = max(a.n_max, b.n_max)
    a, b = a.truncated(n), b.truncated(n)
    return math.sqrt(sum(l2_distance(x, y) ** 2
                         for x, y in zip(a.coeffs, b.coeffs)))


def _ast_distance(a: AstKernel, b: AstKernel) -> float:
    n = max(a.n_max, b.n_max)
    a, b = a.truncated(n), b.truncated(n)
    return math.sqrt(sum(l2_distance(x, y) ** 2
                         for x, y in zip(a.bcoeffs, b.bcoeffs)))


def star_residual(k: StarKernel, r: StarKernel) -> float:
    """Relative L2 residual of both star-resolvent equations."""
    scale = 1.0 + _star_l2(k) + _star_l2(r)
    lhs = _star_distance(r, star_add(k, star_kernel(k, r)))
    rhs = _star_distance(r, star_add(k, star_kernel(r, k)))
    return max(lhs, rhs) / scale


def ast_residual(j: AstKernel, q: AstKernel) -> float:
    """Relative L2 residual of both ast-resolvent equations."""
    scale = 1.0 + _ast_l2(j) + _ast_l2(q)
    lhs = _ast_distance(q, ast_add(j, ast_jj(j, q)))
    rhs = _ast_distance(q, ast_add(j, ast_jj(q, j)))
    return max(lhs, rhs) / scale


def aststar_residuals(j: AstKernel, k: StarKernel, q: AstKernel,
                      r: StarKernel) -> tuple:
    """(ast, star) relative residuals of the four combined equations."""
    jscale = 1.0 + _ast_l2(j) + _ast_l2(q)
    kscale = 1.0 + _star_l2(k) + _star_l2(r)
    q1 = _ast_distance(q, ast_add(ast_add(j, ast_jj(j, q)),
                                  star_kj(k, q)))
    q2 = _ast_distance(q, ast_add(ast_add(j, ast_jj(q, j)),
                                  star_kj(r, j)))
    r1 = _star_distance(r, star_add(star_add(k, ast_jk(j, r)),
                                    star_kernel(k, r)))
    r2 = _star_distance(r, star_add(star_add(k, ast_jk(q, k)),
                                    star_kernel(r, k)))
    return max(q1, q2) / jscale, max(r1, r2) / kscale


# ---------------------------------------------------------------------------
# star-resolvents

def neumann_star(k: StarKernel, tol: float = 1e-10,
                 max_terms: int = 64) -> tuple:
    """Partial sums of K^(star n); requires k_norm(k) < 1."""
    kn = k_norm(k)
    if kn >= 1.0:
        raise PreconditionError(
            "k_norm = %.6g >= 1; use concat_star with a partition from "
            "auto_partition" % kn)
    r = k
    power = k
    stop = tol * (1.0 - kn)
    iterations = 1
    converged = k_norm(power) < stop
    while not converged and iterations < max_terms:
        power = star_kernel(k, power)
        r = star_add(r, power)
        iterations += 1
        converged = k_norm(power) < stop
    residual = star_residual(k, r)
    report = ResolventReport(converged=converged and residual <= tol,
                             iterations=iterations,
                             residual_star=residual, residual_ast=0.0,
                             partition=(k.grid.s_start, k.grid.t_end))
    return r, report


def gaussian_star(k2, n_max: int) -> StarKernel:
    """Exact star-resolvent of the order-1 (Gaussian) kernel with
    coefficient k2: the order-n coefficient is the n-fold triangle power
    of k2, with zero order-0 part.  No norm condition needed."""
    if k2.arity != 2 or k2.rows != k2.cols:
        raise DomainError("gaussian_star needs a square arity-2 kernel")
    grid = k2.grid
    d = k2.rows
    coeffs = [DetKernel.zeros(grid, 1, d, d), k2]
    for _ in range(2, n_max + 1):
        coeffs.append(tri_product(k2, coeffs[-1]))
    coeffs = coeffs[: n_max + 1]
    return StarKernel(ChaosProcess(grid, coeffs))


def _node_index(grid: Grid, t: float) -> int:
    try:
        return grid.node_index(t)
    except DomainError:
        raise DomainError("time %r is not a grid node of %r" % (t, grid))


def restrict_star(k: StarKernel, u: float, v: float) -> StarKernel:
    """Restriction to the sub-simplices of (u, v); grid-node aligned."""
    iu, iv = _node_index(k.grid, u), _node_index(k.grid, v)
    if not 0 <= iu < iv <= k.grid.m:
        raise DomainError("restriction interval must satisfy S <= u < v <= T")
    subgrid = build_grid(k.grid.node(iu), k.grid.node(iv), iv - iu)
    coeffs = [restrict_kernel(c, iu, iv, subgrid) for c in k.coeffs]
    return StarKernel(ChaosProcess(subgrid, coeffs))


def _extend_star(k: StarKernel, iu: int, iv: int,
                 fullgrid: Grid) -> StarKernel:
    coeffs = [extend_kernel(c, iu, iv, fullgrid) for c in k.coeffs]
    return StarKernel(ChaosProcess(fullgrid, coeffs))


def _merge_two(k_full: StarKernel, r_left: StarKernel,
               r_right: StarKernel) -> StarKernel:
    """Two-interval concatenation: R = K + K(star)R1 + R2(star)K
    + R2(star)K(star)R1 with R1/R2 the zero-extended left/right
    subinterval resolvents."""
    kr1 = star_kernel(k_full, r_left)
    r2k = star_kernel(r_right, k_full)
    r2kr1 = star_kernel(r_right, kr1)
    return star_add(star_add(k_full, kr1), star_add(r2k, r2kr1))


def concat_star(k: StarKernel, partition, tol: float = 1e-10,
                max_terms: int = 64) -> tuple:
    """Star-resolvent on (S, T) built by concatenating subinterval
    resolvents over a grid-node-aligned partition, merged pairwise left
    to right.  Subintervals whose restricted norm is still >= 1 are
    recursively subdivided via auto_partition."""
    grid = k.grid
    idx = [_node_index(grid, t) for t in partition]
    if idx[0] != 0 or idx[-1] != grid.m or any(
            b <= a for a, b in zip(idx, idx[1:])):
        raise DomainError("partition must increase from S to T along nodes")
    total_iters = 0
    nodes_used = [grid.node(0)]
    pieces = []  # (iu, iv, resolvent on the sub-grid)
    for iu, iv in zip(idx, idx[1:]):
        sub = restrict_star(k, grid.node(iu), grid.node(iv))
        if k_norm(sub) < 1.0:
            r_sub, rep = neumann_star(sub, tol, max_terms)
            sub_nodes = [grid.node(iv)]
        else:
            try:
                refined = auto_partition(sub, 0.5)
            except ExistenceUndeterminedError:
                report = ResolventReport(
                    converged=False, iterations=total_iters,
                    residual_star=math.inf, residual_ast=0.0,
                    partition=tuple(nodes_used))
                return k, report
            r_sub, rep = concat_star(sub, refined, tol, max_terms)
            sub_nodes = list(rep.partition)[1:]
        total_iters += rep.iterations
        if not rep.converged:
            report = ResolventReport(
                converged=False, iterations=total_iters,
                residual_star=rep.residual_star, residual_ast=0.0,
                partition=tuple(nodes_used))
            return k, report
        nodes_used.extend(sub_nodes)
        pieces.append((iu, iv, r_sub))
    # pairwise merge left to right
    lo, hi, acc = pieces[0]
    for iu, iv, r_sub in pieces[1:]:
        merged_grid = build_grid(grid.node(lo), grid.node(iv), iv - lo)
        k_cur = restrict_star(k, grid.node(lo), grid.node(iv))
        r1 = _extend_star(acc, 0, hi - lo, merged_grid)
        r2 = _extend_star(r_sub, iu - lo, iv - lo, merged_grid)
        acc = _merge_two(k_cur, r1, r2)
        hi = iv
    residual = star_residual(k, acc)
    report = ResolventReport(converged=residual <= tol,
                             iterations=total_iters,
                             residual_star=residual, residual_ast=0.0,
                             partition=tuple(nodes_used))
    return acc, report


def auto_partition(k: StarKernel, target: float = 0.5) -> list:
    """Greedy left-to-right search for grid-node boundaries such that
    each restricted kernel has k_norm <= target."""
    if not 0.0 < target < 1.0:
        raise DomainError("target must lie in (0, 1)")
    grid = k.grid
    f0_max = v_norm(k.coeffs[0])
    if f0_max >= 1.0:
        raise ExistenceUndeterminedError(
            "order-0 coefficient has sup operator norm %.6g >= 1; "
            "restriction cannot reduce it" % f0_max)
    nodes = [grid.node(0)]
    iu = 0
    while iu < grid.m:
        def fits(iv):
            sub = restrict_star(k, grid.node(iu), grid.node(iv))
            return k_norm(sub) <= target
        if fits(grid.m):
            nodes.append(grid.node(grid.m))
            break
        if not fits(iu + 1):
            raise ExistenceUndeterminedError(
                "restricted norm exceeds %.3g on the single cell "
                "[%g, %g]" % (target, grid.node(iu), grid.node(iu + 1)))
        lo, hi = iu + 1, grid.m  # fits(lo), not fits(hi)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if fits(mid):
                lo = mid
            else:
                hi = mid
        nodes.append(grid.node(lo))
        iu = lo
    return nodes


def star_resolvent(k: StarKernel, tol: float = 1e-10,
                   max_terms: int = 64, target: float = 0.5) -> tuple:
    """Star-resolvent via the cheapest applicable route: direct Neumann
    series when the norm allows, otherwise auto-partitioned
    concatenation."""
    if k_norm(k) < 1.0:
        return neumann_star(k, tol, max_terms)
    # A single cell can carry norm above the preferred target (the order-0
    # coefficient does not shrink with interval length) while still being
    # Neumann-summable; loosen the target before giving up.
    last = None
    for tgt in (target, 0.9, 0.99):
        if tgt < target:
            continue
        try:
            partition = auto_partition(k, tgt)
        except ExistenceUndeterminedError as exc:
            last = exc
            continue
        return concat_star(k, partition, tol, max_terms)
    raise last


# ---------------------------------------------------------------------------
# ast-resolvents

def _exp_scaled(j: AstKernel, sigma: float) -> AstKernel:
    """Multiply each coefficient by exp(-sigma (t_lead - t_trail)) over
    tuple midpoints; sigma < 0 undoes the scaling."""
    mids = j.grid.midpoints
    out = []
    for n, c in enumerate(j.bcoeffs):
        c = c.to_dense()
        arity = n + 2
        if c.is_zero():
            out.append(DetKernel.zeros(j.grid, arity, c.rows, c.cols))
            continue
        count = c.values.shape[0]
        gap = (mids[lead_cells(arity, count)]
               - mids[trail_cells(arity, count)])
        out.append(DetKernel(j.grid, arity,
                             c.values * np.exp(-sigma * gap)[:, None, None]))
    return AstKernel(j.grid, out)


def ast_resolvent(j: AstKernel, tol: float = 1e-10,
                  max_terms: int = 64) -> tuple:
    """Ast-resolvent Q with Q = J + J*Q = J + Q*J; always exists.
    Exponential scaling with doubling sigma shrinks the norm below 1/2,
    then the Neumann series is summed and unscaled."""
    if j.is_zero():
        report = ResolventReport(converged=True, iterations=0,
                                 residual_star=0.0, residual_ast=0.0)
        return AstKernel.zeros(j.grid, j.n_max, j.d), report
    sigma = 0.0
    scaled = j
    if j_norm(scaled) > 0.5:
        sigma = 1.0
        while True:
            scaled = _exp_scaled(j, sigma)
            if j_norm(scaled) <= 0.5:
                break
            sigma *= 2.0
            if sigma > 2.0 ** 60:
                report = ResolventReport(
                    converged=False, iterations=0, residual_star=0.0,
                    residual_ast=math.inf, sigma=sigma)
                return j, report
    jn = j_norm(scaled)
    q = scaled
    power = scaled
    # unscaling multiplies truncated tail terms by up to e^{sigma (T - S)},
    # so the series must be summed that much deeper
    amp = math.exp(sigma * (j.grid.t_end - j.grid.s_start))
    stop = tol * (1.0 - jn) / amp
    iterations = 1
    converged = j_norm(power) < stop
    while not converged and iterations < max_terms:
        power = ast_jj(scaled, power)
        q = ast_add(q, power)
        iterations += 1
        converged = j_norm(power) < stop
    if sigma:
        q = _exp_scaled(q, -sigma)
    residual = ast_residual(j, q)
    report = ResolventReport(converged=converged and residual <= tol,
                             iterations=iterations, residual_star=0.0,
                             residual_ast=residual, sigma=sigma)
    return q, report


# ---------------------------------------------------------------------------
# combined (ast,star)-resolvents

def _is_gaussian_pair(j: AstKernel, k: StarKernel) -> bool:
    """Deterministic scalar J plus an order-1-only K: the regime where the
    combined resolvent has the closed Gaussian form and the chain layout
    keeps every coefficient in product form."""
    return (j.d == 1
            and all(c.is_zero() for c in j.bcoeffs[1:])
            and k.coeffs[0].is_zero()
            and all(c.is_zero() for c in k.coeffs[2:]))


def _aststar_gaussian(j: AstKernel, k: StarKernel, tol: float) -> tuple:
    """Closed-form combined resolvent for a deterministic J and an
    order-1 K: with q the scalar ast-resolvent of J's order-0 part,
    K + Q*K = W1[k + q*k], so R is the exact n-fold triangle power of
    k + q*k and Q = q + R(star)q.  Chain coefficients stay in product
    form, so this scales to large grids and truncation orders where the
    dense two-construction cross-check is infeasible; the returned pair
    is instead verified through the four resolvent equations."""
    grid, n_max = j.grid, j.n_max
    j0 = j.bcoeffs[0].to_dense()
    q0, rep_q = ast_resolvent(AstKernel(grid, [j0]), tol)
    if not rep_q.converged:
        return j, k, rep_q
    k2 = k.coeffs[1]
    chain = isinstance(k2, ChainKernel)
    kq = kernel_add(k2, ast_contract(q0.bcoeffs[0], k2))
    if not isinstance(kq, ChainKernel) and (
            chain or simplex_count(grid, n_max + 1) > _DENSIFY_GUARD):
        kq = as_chain(kq)
    r = gaussian_star(kq, n_max)
    q_pad = q0.truncated(n_max)
    q = ast_add(q_pad, star_kj(r, q_pad))
    res_ast, res_star = aststar_residuals(j, k, q, r)
    report = ResolventReport(
        converged=max(res_ast, res_star) <= tol,
        iterations=rep_q.iterations, residual_star=res_star,
        residual_ast=res_ast, sigma=rep_q.sigma,
        partition=(grid.s_start, grid.t_end))
    return q, r, report


def aststar_resolvent(j: AstKernel, k: StarKernel,
                      tol: float = 1e-10) -> tuple:
    """Combined resolvent (Q, R) of the pair (J, K), built two ways and
    cross-checked:

    (i)  Q1 = ast-resolvent of J; R1 = star-resolvent of K + Q1*K;
         (Q, R) = (Q1 + R1(star)Q1, R1).
    (ii) R2 = star-resolvent of K; Q2 = ast-resolvent of J + R2(star)J;
         (Q, R) = (Q2, R2 + Q2*R2).

    By uniqueness the two must agree; disagreement (which occurs for
    kernels whose order-0 star-coefficient is nonzero) raises an
    internal-consistency error rather than returning a wrong pair.
    """
    if j.grid != k.grid or j.d != k.d:
        raise DomainError("aststar_resolvent needs matching grid/dimension")
    n_max = max(j.n_max, k.n_max)
    j = j.truncated(n_max)
    k = k.truncated(n_max)
    if j.is_zero():
        r, rep = star_resolvent(k, tol)
        return AstKernel.zeros(j.grid, n_max, j.d), r, rep
    if k.is_zero():
        q, rep = ast_resolvent(j, tol)
        return q, StarKernel(ChaosProcess.zeros(k.grid, n_max, k.d, k.d)), rep
    if _is_gaussian_pair(j, k):
        return _aststar_gaussian(j, k, tol)

    q1, rep_q1 = ast_resolvent(j, tol)
    if not rep_q1.converged:
        return q1, k, rep_q1
    r1, rep_r1 = star_resolvent(star_add(k, ast_jk(q1, k)), tol)
    if not rep_r1.converged:
        return q1, r1, rep_r1
    q_i = ast_add(q1, star_kj(r1, q1))
    r_i = r1

    r2, rep_r2 = star_resolvent(k, tol)
    if not rep_r2.converged:
        return q_i, r_i, rep_r2
    q2, rep_q2 = ast_resolvent(ast_add(j, star_kj(r2, j)), tol)
    if not rep_q2.converged:
        return q_i, r_i, rep_q2
    q_ii = q2
    r_ii = star_add(r2, ast_jk(q2, r2))

    q_scale = 1.0 + _ast_l2(q_i) + _ast_l2(q_ii)
    r_scale = 1.0 + _star_l2(r_i) + _star_l2(r_ii)
    q_gap = _ast_distance(q_i, q_ii) / q_scale
    r_gap = _star_distance(r_i, r_ii) / r_scale
    if max(q_gap, r_gap) > 10.0 * tol:
        raise InternalConsistencyError(
            "the two resolvent constructions disagree (Q gap %.3g, R gap "
            "%.3g > %.3g); the combined resolvent equations have no "
            "solution reachable this way" % (q_gap, r_gap, 10.0 * tol))

    res_ast, res_star = aststar_residuals(j, k, q_i, r_i)
    report = ResolventReport(
        converged=max(res_ast, res_star) <= tol,
        iterations=rep_q1.iterations + rep_r1.iterations
        + rep_r2.iterations + rep_q2.iterations,
        residual_star=res_star, residual_ast=res_ast,
        sigma=rep_q1.sigma, partition=rep_r1.partition)
    return q_i, r_i, report
