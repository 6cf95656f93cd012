"""Pathwise Monte Carlo verification.

Simulates Brownian paths, evaluates iterated Ito integrals of kernel
coefficients, reconstructs chaos processes per path, and runs a direct
left-point Euler scheme for the SVIE as an independent oracle.  All
stochastic sums use left-point (Ito) evaluation; comparisons are paired
on shared increments so common noise cancels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .simplex_grid import DomainError, Grid, components
from .det_kernels import ChainKernel, DetKernel
from .chaos_core import ChaosProcess

_MAX_MC_ORDER = 4
_PATH_BLOCK = 50_000
_DENSE_TUPLE_GUARD = 2_000_000


@dataclass(frozen=True)
class PathBatch:
    """A batch of Brownian increments on a refinement of the grid.

    increments has shape (paths, steps) with steps = m * refine; entries
    are sqrt(dt)-scaled normals drawn from a single counter-ordered
    Philox stream keyed by the seed, so the batch is bitwise
    reproducible regardless of worker threads.
    """

    grid: Grid
    refine: int
    paths: int
    seed: int
    increments: np.ndarray

    @property
    def steps(self) -> int:
        return self.grid.m * self.refine

    @property
    def dt(self) -> float:
        return self.grid.h / self.refine

    def cell_increments(self) -> np.ndarray:
        """(paths, m) increments aggregated per grid cell."""
        return self.increments.reshape(
            self.paths, self.grid.m, self.refine).sum(axis=2)


def simulate_paths(grid: Grid, refine: int, p: int, seed: int) -> PathBatch:
    if p < 1:
        raise DomainError("need at least one path")
    if refine < 1:
        raise DomainError("refine must be >= 1")
    steps = grid.m * refine
    dt = grid.h / refine
    rng = np.random.Generator(np.random.Philox(key=seed))
    incr = rng.standard_normal((p, steps)) * math.sqrt(dt)
    return PathBatch(grid, refine, p, seed, incr)


def _check_order(n: int):
    if n > _MAX_MC_ORDER:
        raise DomainError(
            "iterated-integral orders above %d are unsupported in Monte "
            "Carlo evaluation" % _MAX_MC_ORDER)


def _eval_chain(f: ChainKernel, dw: np.ndarray, t_cell: int) -> np.ndarray:
    # Backward matrix recursion over the product-form factors; V holds,
    # per inner cell c and path, the partial iterated integral with the
    # current level's time in cell c.
    p = dw.shape[0]
    out = np.zeros(p)
    for term in f.terms:
        v = term.tail[:, None] * dw.T
        for a in reversed(term.factors[1:]):
            v = dw.T * (np.tril(a, -1) @ v)
        out += term.factors[0][t_cell, :t_cell] @ v[:t_cell]
    return out


def _eval_dense(f: DetKernel, dw: np.ndarray, t_cell: int) -> np.ndarray:
    n = f.arity - 1
    vals = f.dense_block(t_cell)[:, 0, 0]
    cnt = vals.shape[0]
    if cnt > _DENSE_TUPLE_GUARD:
        raise DomainError(
            "dense iterated-integral evaluation too large "
            "(%d tuples); store the coefficient in chain form" % cnt)
    tuples = components(n, cnt)
    out = np.empty(dw.shape[0])
    # keep the (paths, tuples) working array under ~25M doubles
    block = max(1, min(_PATH_BLOCK, 25_000_000 // max(cnt, 1)))
    for lo in range(0, dw.shape[0], block):
        blk = dw[lo:lo + block]
        w = blk[:, tuples[:, 0]].copy()
        for col in range(1, n):
            w *= blk[:, tuples[:, col]]
        out[lo:lo + block] = w @ vals
    return out


def eval_iterated(f, batch: PathBatch, t_cell: int) -> np.ndarray:
    """Per-path iterated Ito integral of the order-n coefficient f
    (arity n+1) at the cell t_cell: the nested left-point sum over
    strictly decreasing cell tuples below t_cell, which is exact for
    cell-averaged integrands on distinct cells."""
    if f.grid != batch.grid:
        raise DomainError("coefficient grid does not match the path batch")
    if (f.rows, f.cols) != (1, 1):
        raise DomainError("Monte Carlo evaluation is scalar-valued")
    if not 0 <= t_cell < batch.grid.m:
        raise DomainError("t_cell out of range")
    n = f.arity - 1
    _check_order(n)
    if n == 0:
        return np.full(batch.paths, float(f.to_dense().values[t_cell, 0, 0]))
    if f.is_zero():
        return np.zeros(batch.paths)
    dw = batch.cell_increments()
    if isinstance(f, ChainKernel):
        return _eval_chain(f, dw, t_cell)
    return _eval_dense(f, dw, t_cell)


def reconstruct(x: ChaosProcess, batch: PathBatch, t_cell: int) -> np.ndarray:
    """Per-path value of the chaos process at the cell t_cell: the sum
    over orders of the iterated integrals of its coefficients."""
    _check_order(x.n_max)
    out = np.zeros(batch.paths)
    for c in x.coeffs:
        out += eval_iterated(c, batch, t_cell)
    return out


# ---------------------------------------------------------------------------
# direct Euler oracle

def fractional_step_matrix(alpha: float, scale: float,
                           batch: PathBatch) -> np.ndarray:
    """(steps, steps) strictly lower-triangular tabulation of the
    fractional kernel scale * (t - s)^(alpha-1) / Gamma(alpha) on the
    refined step grid, averaged exactly in s over each step."""
    if not 0.5 < alpha <= 1.0:
        raise DomainError("fractional_step_matrix requires 1/2 < alpha <= 1")
    steps, dt = batch.steps, batch.dt
    i = np.arange(steps, dtype=np.float64)
    gap = i[:, None] - i[None, :]
    with np.errstate(invalid="ignore"):
        vals = ((gap * dt) ** alpha - ((gap - 1.0) * dt) ** alpha) / (
            alpha * dt * math.gamma(alpha))
    return scale * np.tril(np.nan_to_num(vals, nan=0.0), -1)


def euler_svie(j_mat: np.ndarray, k_mat: np.ndarray, phi,
               batch: PathBatch, step: int = None) -> np.ndarray:
    """Explicit left-point recursion for the scalar SVIE
    X_i = phi_i + sum_{l<i} j(t_i,t_l) X_l dt + sum_{l<i} k(t_i,t_l) X_l dW_l
    on the refined step grid; returns the per-path samples at the given
    step (default: the last step).  j_mat, k_mat are (steps, steps)
    strictly lower-triangular tabulations; phi is a scalar, a (steps,)
    array, or a (paths, steps) array of free-term samples."""
    steps, dt = batch.steps, batch.dt
    if j_mat.shape != (steps, steps) or k_mat.shape != (steps, steps):
        raise DomainError("kernel tabulations must be (steps, steps)")
    if step is None:
        step = steps - 1
    if not 0 <= step < steps:
        raise DomainError("step out of range")
    phi_arr = np.asarray(phi, dtype=np.float64)
    if phi_arr.ndim == 0:
        phi_arr = np.full(steps, float(phi_arr))
    out = np.empty(batch.paths)
    jt = np.ascontiguousarray(j_mat[: step + 1, : step + 1] * dt)
    kt = np.ascontiguousarray(k_mat[: step + 1, : step + 1])
    for lo in range(0, batch.paths, _PATH_BLOCK):
        hi = min(lo + _PATH_BLOCK, batch.paths)
        dw = batch.increments[lo:hi]
        pb = hi - lo
        x = np.empty((pb, step + 1))
        xw = np.empty((pb, step + 1))
        for i in range(step + 1):
            base = (phi_arr[i] if phi_arr.ndim == 1
                    else phi_arr[lo:hi, i])
            if i == 0:
                x[:, 0] = base
            else:
                x[:, i] = (base + x[:, :i] @ jt[i, :i]
                           + xw[:, :i] @ kt[i, :i])
            xw[:, i] = x[:, i] * dw[:, i]
        out[lo:hi] = x[:, step]
    return out


# ---------------------------------------------------------------------------
# paired moment comparison

@dataclass(frozen=True)
class MomentReport:
    quantity: str
    chaos_value: float
    mc_value: float
    diff: float
    stderr: float
    allowance: float
    passed: bool

    def csv_row(self) -> str:
        return "%s,%.17g,%.17g,%.17g,%s" % (
            self.quantity, self.chaos_value, self.mc_value, self.stderr,
            "true" if self.passed else "false")


MOMENT_CSV_HEADER = "quantity,chaos_value,mc_value,stderr,pass"


def compare_moments(a: np.ndarray, b: np.ndarray, quantity: str = "mean",
                    bias: float = 0.0) -> MomentReport:
    """Paired comparison of per-path samples: pass iff the mean of a - b
    is within 3 standard errors plus the bias allowance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError("paired samples need matching 1-d shapes")
    diff = a - b
    mean = float(diff.mean())
    stderr = float(diff.std(ddof=1) / math.sqrt(len(diff))) if len(diff) > 1 \
        else 0.0
    passed = abs(mean) <= 3.0 * stderr + bias
    return MomentReport(quantity, float(a.mean()), float(b.mean()), mean,
                        stderr, bias, passed)


def write_moment_csv(reports, fh) -> None:
    fh.write(MOMENT_CSV_HEADER + "\n")
    for r in reports:
        fh.write(r.csv_row() + "\n")
