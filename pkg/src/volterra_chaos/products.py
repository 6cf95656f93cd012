"""The four bilinear products on chaos representations.

Forward products (star, ast and their kernel-kernel variants) are graded
convolutions over coefficient orders: the order-n output depends only on
input orders <= n, so truncation at N commutes with them.  Backward products
(bstar, bast) sum input orders k >= n; they terminate at N because truncated
inputs vanish above N, and are exact for such inputs.

All products use the single midpoint quadrature over strictly decreasing cell
tuples, so the Fubini-type algebra identities hold exactly in floating point.
"""

from __future__ import annotations

import math

import numpy as np

from .simplex_grid import (DomainError, ranks_by_trail, shifted_prefix,
                           drop_last_prefix, simplex_count, lead_cells)
from .det_kernels import (DetKernel, ast_contract, kernel_add, tri_product)
from .chaos_core import (AstKernel, ChaosProcess, StarKernel)


def _graded_conv(op, left, right, grid, rows, cols):
    """out_n = sum_{a+b=n} op(left_a, right_b) with zero-coefficient skips."""
    n_out = max(len(left), len(right)) - 1
    drop = 1 if op is tri_product else 2  # arity lost to the contraction
    out = []
    for n in range(n_out + 1):
        acc = None
        for a in range(n + 1):
            b = n - a
            if a >= len(left) or b >= len(right):
                continue
            la, rb = left[a], right[b]
            if la.is_zero() or rb.is_zero():
                continue
            term = op(la, rb)
            acc = term if acc is None else kernel_add(acc, term)
        if acc is None:
            arity = n + left[0].arity + right[0].arity - drop
            acc = DetKernel.zeros(grid, arity, rows, cols)
        out.append(acc)
    return out


def star(k: StarKernel, x: ChaosProcess) -> ChaosProcess:
    """Forward star product K * x (triangle convolution over orders)."""
    if k.grid != x.grid or k.d != x.rows:
        raise DomainError("star requires matching grid and dimensions")
    coeffs = _graded_conv(tri_product, k.coeffs, x.coeffs, x.grid,
                          k.d, x.cols)
    return ChaosProcess(x.grid, coeffs)


def star_kernel(k1: StarKernel, k2: StarKernel) -> StarKernel:
    """Kernel-kernel star product; the algebra's composition."""
    if k1.grid != k2.grid or k1.d != k2.d:
        raise DomainError("star_kernel requires matching grid and dimension")
    coeffs = _graded_conv(tri_product, k1.coeffs, k2.coeffs, k1.grid,
                          k1.d, k2.d)
    return StarKernel(ChaosProcess(k1.grid, coeffs))


def ast(j: AstKernel, x: ChaosProcess) -> ChaosProcess:
    """Forward ast product J * x: order-n coefficient sums the elementary
    Lebesgue contractions of bF_{n-r}[J] against F_r[x]."""
    if j.grid != x.grid or j.d != x.rows:
        raise DomainError("ast requires matching grid and dimensions")
    coeffs = _graded_conv(ast_contract, j.bcoeffs, x.coeffs, x.grid,
                          j.d, x.cols)
    return ChaosProcess(x.grid, coeffs)


def ast_jj(j1: AstKernel, j2: AstKernel) -> AstKernel:
    """Kernel-kernel ast product (associative, no unit)."""
    if j1.grid != j2.grid or j1.d != j2.d:
        raise DomainError("ast_jj requires matching grid and dimension")
    bcoeffs = _graded_conv(ast_contract, j1.bcoeffs, j2.bcoeffs, j1.grid,
                           j1.d, j2.d)
    return AstKernel(j1.grid, bcoeffs)


def ast_jk(j: AstKernel, k: StarKernel) -> StarKernel:
    """Mixed product J * K, landing in the star algebra."""
    if j.grid != k.grid or j.d != k.d:
        raise DomainError("ast_jk requires matching grid and dimension")
    coeffs = _graded_conv(ast_contract, j.bcoeffs, k.coeffs, j.grid,
                          j.d, k.d)
    return StarKernel(ChaosProcess(j.grid, coeffs))


def star_kj(k: StarKernel, j: AstKernel) -> AstKernel:
    """Mixed product K * J (triangle composition), landing in the ast
    algebra."""
    if j.grid != k.grid or j.d != k.d:
        raise DomainError("star_kj requires matching grid and dimension")
    bcoeffs = _graded_conv(tri_product, k.coeffs, j.bcoeffs, j.grid,
                           k.d, j.d)
    return AstKernel(j.grid, bcoeffs)


# ---------------------------------------------------------------------------
# backward products


def bstar(k: StarKernel, x: ChaosProcess) -> ChaosProcess:
    """Backward star product: order-n output at (t0, tail) integrates
    F_r[K](s, t0) against F_{r+n}[x](s, t0, tail) over leading simplices
    s above t0, summed over r <= N - n."""
    if k.grid != x.grid or k.d != x.rows:
        raise DomainError("bstar requires matching grid and dimensions")
    grid = x.grid
    m, h = grid.m, grid.h
    out = []
    for n in range(x.n_max + 1):
        count = simplex_count(grid, n + 1)
        acc = np.zeros((count, k.d, x.cols))
        nonzero = False
        for r in range(min(k.n_max, x.n_max - n) + 1):
            kr = k.coeffs[r]
            xr = x.coeffs[r + n]
            if kr.is_zero() or xr.is_zero():
                continue
            kr, xr = kr.to_dense(), xr.to_dense()
            nonzero = True
            if r == 0:
                sel = kr.values[lead_cells(n + 1, count)]
                acc += np.einsum("rij,rjk->rik", sel, xr.values)
                continue
            order, offsets = ranks_by_trail(r + 1, m)
            pc = shifted_prefix(r + 1, n, len(kr.values))
            hr = h ** r
            for t0 in range(m - r):
                ksel = order[offsets[t0]:offsets[t0 + 1]]
                bt = math.comb(t0, n)
                if len(ksel) == 0 or bt == 0:
                    continue
                idx = pc[ksel][:, None] + np.arange(bt)[None, :]
                xg = xr.values[idx.ravel()].reshape(len(ksel), bt,
                                                    x.rows, x.cols)
                block = hr * np.einsum("aij,abjk->bik", kr.values[ksel], xg)
                start = math.comb(t0, n + 1)
                acc[start:start + bt] += block
        out.append(DetKernel(grid, n + 1, acc, known_zero=not nonzero))
    return ChaosProcess(grid, out)


def bast(j: AstKernel, x: ChaosProcess) -> ChaosProcess:
    """Backward ast product: order-n output at (t0, tail) integrates
    bF_r[J](s, t0) against F_{r+n}[x](s, tail) over leading simplices s of
    arity r+1 above t0, with quadrature weight h^(r+1)."""
    if j.grid != x.grid or j.d != x.rows:
        raise DomainError("bast requires matching grid and dimensions")
    grid = x.grid
    m, h = grid.m, grid.h
    out = []
    for n in range(x.n_max + 1):
        count = simplex_count(grid, n + 1)
        acc = np.zeros((count, j.d, x.cols))
        nonzero = False
        for r in range(min(j.n_max, x.n_max - n) + 1):
            jr = j.bcoeffs[r]
            xr = x.coeffs[r + n]
            if jr.is_zero() or xr.is_zero():
                continue
            jr, xr = jr.to_dense(), xr.to_dense()
            nonzero = True
            order, offsets = ranks_by_trail(r + 2, m)
            pc = drop_last_prefix(r + 2, r + n + 1, len(jr.values))
            hr = h ** (r + 1)
            for t0 in range(m - r - 1):
                jsel = order[offsets[t0]:offsets[t0 + 1]]
                bt = math.comb(t0, n)
                if len(jsel) == 0 or bt == 0:
                    continue
                idx = pc[jsel][:, None] + np.arange(bt)[None, :]
                xg = xr.values[idx.ravel()].reshape(len(jsel), bt,
                                                    x.rows, x.cols)
                block = hr * np.einsum("aij,abjk->bik", jr.values[jsel], xg)
                start = math.comb(t0, n + 1)
                acc[start:start + bt] += block
        out.append(DetKernel(grid, n + 1, acc, known_zero=not nonzero))
    return ChaosProcess(grid, out)
