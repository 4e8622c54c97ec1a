"""Compiled particle kernels.

All kernels are deterministic: parallel sections either write disjoint
per-particle outputs or accumulate into per-chunk buffers that are reduced
in a fixed order afterwards.  Coordinates may be passed unwrapped; the
kernels fold them into the periodic lattice via integer index arithmetic,
which also realizes the minimum-image convention for shape evaluations
(and sums periodic images when a support exceeds the box).

Structured tensor grids are described per direction by ``ncells``, the
number of in-cell points ``q`` and their fractional offsets ``eta`` (a
padded (3, qmax) array); point ``(c, g)`` sits at ``(c + eta[d, g]) * h[d]``
and maps to flat index ``c * q[d] + g``.  Greville lattices use q = 1.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange


# ----------------------------------------------------------------------
# scalar spline helpers
# ----------------------------------------------------------------------


@njit(cache=True, inline="always")
def _bsp_vals(p, u, out):
    """out[r] = B_p(u + p - r) for r = 0..p (increasing basis index)."""
    b = np.zeros(p + 2)
    b[0] = 1.0
    for d in range(1, p + 1):
        for s in range(d, -1, -1):
            v = 0.0
            if s <= d - 1:
                v += (u + s) / d * b[s]
            if s >= 1:
                v += (d + 1 - u - s) / d * b[s - 1]
            b[s] = v
    for r in range(p + 1):
        out[r] = b[p - r]


@njit(cache=True, inline="always")
def _bsp_vals_ders(p, u, vals, ders):
    """Values and d/du derivatives of the p+1 nonzero N-splines."""
    if p == 0:
        vals[0] = 1.0
        ders[0] = 0.0
        return
    b = np.zeros(p + 2)
    b[0] = 1.0
    for d in range(1, p):
        for s in range(d, -1, -1):
            v = 0.0
            if s <= d - 1:
                v += (u + s) / d * b[s]
            if s >= 1:
                v += (d + 1 - u - s) / d * b[s - 1]
            b[s] = v
    # b[s] = B_{p-1}(u+s) for s = 0..p-1
    for r in range(p + 1):
        s = p - r
        hi = b[s] if s <= p - 1 else 0.0
        lo = b[s - 1] if s >= 1 else 0.0
        ders[r] = hi - lo
        v = 0.0
        if s <= p - 1:
            v += (u + s) / p * b[s]
        if s >= 1:
            v += (p + 1 - u - s) / p * b[s - 1]
        vals[r] = v


@njit(cache=True, inline="always")
def _shape_val(k, y):
    """Centered cardinal B-spline S_k(y)."""
    t = y + 0.5 * (k + 1)
    if t <= 0.0 or t >= k + 1.0:
        return 0.0
    J = int(math.floor(t))
    if J > k:
        J = k
    u = t - J
    b = np.zeros(k + 2)
    b[0] = 1.0
    for d in range(1, k + 1):
        for s in range(d, -1, -1):
            v = 0.0
            if s <= d - 1:
                v += (u + s) / d * b[s]
            if s >= 1:
                v += (d + 1 - u - s) / d * b[s - 1]
            b[s] = v
    return b[J]


@njit(cache=True, inline="always")
def _shape_val_der(k, y, out):
    """out[0] = S_k(y), out[1] = S_k'(y) (requires k >= 1)."""
    t = y + 0.5 * (k + 1)
    if t <= 0.0 or t >= k + 1.0:
        out[0] = 0.0
        out[1] = 0.0
        return
    J = int(math.floor(t))
    if J > k:
        J = k
    u = t - J
    b = np.zeros(k + 2)
    b[0] = 1.0
    for d in range(1, k):
        for s in range(d, -1, -1):
            v = 0.0
            if s <= d - 1:
                v += (u + s) / d * b[s]
            if s >= 1:
                v += (d + 1 - u - s) / d * b[s - 1]
            b[s] = v
    # b[s] = B_{k-1}(u+s); value via one more level, derivative by differences
    hi = b[J] if J <= k - 1 else 0.0
    lo = b[J - 1] if J >= 1 else 0.0
    out[1] = hi - lo
    v = 0.0
    if J <= k - 1:
        v += (u + J) / k * b[J]
    if J >= 1:
        v += (k + 1 - u - J) / k * b[J - 1]
    out[0] = v


# ----------------------------------------------------------------------
# shape-function support enumeration on a structured grid
# ----------------------------------------------------------------------


@njit(cache=True, inline="always")
def _support_points(x, kd, hd, nd, qd, eta_d, idx, val, der, with_der):
    """Collect flat point indices and (scaled) shape values/derivatives of
    S((t - x)/h)/h over all grid points t in the particle's support.

    Returns the number of entries written.  Periodic images accumulate as
    separate entries with the same wrapped index.
    """
    half = 0.5 * (kd + 1) * hd
    c_lo = int(math.floor((x - half) / hd))
    c_hi = int(math.floor((x + half) / hd))
    m = 0
    sd = np.empty(2)
    for c in range(c_lo, c_hi + 1):
        base = (c % nd) * qd
        for g in range(qd):
            t = (c + eta_d[g]) * hd
            y = (t - x) / hd
            if with_der:
                _shape_val_der(kd, y, sd)
                v = sd[0] / hd
                dv = sd[1] / (hd * hd)
            else:
                v = _shape_val(kd, y) / hd
                dv = 0.0
            if v != 0.0 or dv != 0.0:
                idx[m] = base + g
                val[m] = v
                der[m] = dv
                m += 1
    return m


@njit(cache=True)
def _deposit_range(pos, w, lo, hi, kdeg, h, ncells, q, eta, out):
    cap = 0
    for d in range(3):
        c = (kdeg[d] + 3) * q[d]
        if c > cap:
            cap = c
    idx1 = np.empty(cap, dtype=np.int64)
    idx2 = np.empty(cap, dtype=np.int64)
    idx3 = np.empty(cap, dtype=np.int64)
    v1 = np.empty(cap)
    v2 = np.empty(cap)
    v3 = np.empty(cap)
    dummy = np.empty(cap)
    for k in range(lo, hi):
        m1 = _support_points(pos[k, 0], kdeg[0], h[0], ncells[0], q[0], eta[0], idx1, v1, dummy, False)
        m2 = _support_points(pos[k, 1], kdeg[1], h[1], ncells[1], q[1], eta[1], idx2, v2, dummy, False)
        m3 = _support_points(pos[k, 2], kdeg[2], h[2], ncells[2], q[2], eta[2], idx3, v3, dummy, False)
        wk = w[k]
        for i in range(m1):
            wi = wk * v1[i]
            for j in range(m2):
                wij = wi * v2[j]
                for l in range(m3):
                    out[idx1[i], idx2[j], idx3[l]] += wij * v3[l]


@njit(parallel=True, cache=True)
def deposit_grid(pos, w, kdeg, h, ncells, q, eta, nchunks):
    """n(x_j) = sum_k w_k S(x_j - x_k) on a structured tensor grid."""
    K = pos.shape[0]
    g1 = ncells[0] * q[0]
    g2 = ncells[1] * q[1]
    g3 = ncells[2] * q[2]
    bufs = np.zeros((nchunks, g1, g2, g3))
    for c in prange(nchunks):
        lo = c * K // nchunks
        hi = (c + 1) * K // nchunks
        _deposit_range(pos, w, lo, hi, kdeg, h, ncells, q, eta, bufs[c])
    out = np.zeros((g1, g2, g3))
    for c in range(nchunks):
        out += bufs[c]
    return out


@njit(parallel=True, cache=True)
def gather_grad_shape(pos, psi, kdeg, h, ncells, q, eta):
    """out[k] = sum_j psi[j] * grad S(x_j - x_k) over the structured grid."""
    K = pos.shape[0]
    out = np.zeros((K, 3))
    nchunks = min(64, K) if K > 0 else 0
    for c in prange(nchunks):
        lo = c * K // nchunks
        hi = (c + 1) * K // nchunks
        cap = 0
        for d in range(3):
            cd = (kdeg[d] + 3) * q[d]
            if cd > cap:
                cap = cd
        idx1 = np.empty(cap, dtype=np.int64)
        idx2 = np.empty(cap, dtype=np.int64)
        idx3 = np.empty(cap, dtype=np.int64)
        v1 = np.empty(cap)
        v2 = np.empty(cap)
        v3 = np.empty(cap)
        d1 = np.empty(cap)
        d2 = np.empty(cap)
        d3 = np.empty(cap)
        for k in range(lo, hi):
            m1 = _support_points(pos[k, 0], kdeg[0], h[0], ncells[0], q[0], eta[0], idx1, v1, d1, True)
            m2 = _support_points(pos[k, 1], kdeg[1], h[1], ncells[1], q[1], eta[1], idx2, v2, d2, True)
            m3 = _support_points(pos[k, 2], kdeg[2], h[2], ncells[2], q[2], eta[2], idx3, v3, d3, True)
            g0 = 0.0
            g1_ = 0.0
            g2_ = 0.0
            for i in range(m1):
                for j in range(m2):
                    vij = v1[i] * v2[j]
                    dij = d1[i] * v2[j]
                    eij = v1[i] * d2[j]
                    for l in range(m3):
                        p = psi[idx1[i], idx2[j], idx3[l]]
                        g0 += p * dij * v3[l]
                        g1_ += p * eij * v3[l]
                        g2_ += p * vij * d3[l]
            out[k, 0] = g0
            out[k, 1] = g1_
            out[k, 2] = g2_
    return out


# ----------------------------------------------------------------------
# 1-form evaluation and moment accumulation at particle positions
# ----------------------------------------------------------------------


@njit(cache=True, inline="always")
def _basis_1d(x, p, hd, nd, ncols, dcols, nvals, nders, dvals, dders):
    """Wrapped indices, values and physical derivatives of the nonzero
    N-splines (p+1 entries) and D-splines (p entries) at coordinate x."""
    t = x / hd
    J = int(math.floor(t))
    u = t - J
    _bsp_vals_ders(p, u, nvals, nders)
    for r in range(p + 1):
        ncols[r] = (J - p + r) % nd
        nders[r] = nders[r] / hd
    if p >= 2:
        _bsp_vals_ders(p - 1, u, dvals, dders)
        for r in range(p):
            dcols[r] = (J - (p - 1) + r) % nd
            dvals[r] = dvals[r] / hd
            dders[r] = dders[r] / (hd * hd)
    else:
        dcols[0] = J % nd
        dvals[0] = 1.0 / hd
        dders[0] = 0.0


@njit(parallel=True, cache=True)
def eval_1form_particles(pos, a1, a2, a3, p, h, ncells, want_jac):
    """A_h (and optionally its Jacobian) at each particle position.

    a1/a2/a3 are the component coefficient blocks shaped like the cell
    lattice; returns (A, J) with J[k, c, d] = dA_c/dx_d (zeros if not
    requested).
    """
    K = pos.shape[0]
    A = np.zeros((K, 3))
    Jac = np.zeros((K, 3, 3))
    pmax = max(p[0], p[1], p[2])
    nchunks = min(64, K) if K > 0 else 0
    for cch in prange(nchunks):
        lo = cch * K // nchunks
        hi = (cch + 1) * K // nchunks
        ncols = np.empty((3, pmax + 1), dtype=np.int64)
        dcols = np.empty((3, pmax + 1), dtype=np.int64)
        nvals = np.empty((3, pmax + 1))
        nders = np.empty((3, pmax + 1))
        dvals = np.empty((3, pmax + 1))
        dders = np.empty((3, pmax + 1))
        for k in range(lo, hi):
            for d in range(3):
                _basis_1d(
                    pos[k, d], p[d], h[d], ncells[d],
                    ncols[d], dcols[d], nvals[d], nders[d], dvals[d], dders[d],
                )
            for comp in range(3):
                if comp == 0:
                    coef = a1
                elif comp == 1:
                    coef = a2
                else:
                    coef = a3
                m1 = p[0] if comp == 0 else p[0] + 1
                m2 = p[1] if comp == 1 else p[1] + 1
                m3 = p[2] if comp == 2 else p[2] + 1
                c1 = dcols[0] if comp == 0 else ncols[0]
                c2 = dcols[1] if comp == 1 else ncols[1]
                c3 = dcols[2] if comp == 2 else ncols[2]
                f1 = dvals[0] if comp == 0 else nvals[0]
                f2 = dvals[1] if comp == 1 else nvals[1]
                f3 = dvals[2] if comp == 2 else nvals[2]
                g1 = dders[0] if comp == 0 else nders[0]
                g2 = dders[1] if comp == 1 else nders[1]
                g3 = dders[2] if comp == 2 else nders[2]
                val = 0.0
                dx1 = 0.0
                dx2 = 0.0
                dx3 = 0.0
                for i in range(m1):
                    for j in range(m2):
                        fij = f1[i] * f2[j]
                        for l in range(m3):
                            cc = coef[c1[i], c2[j], c3[l]]
                            val += cc * fij * f3[l]
                            if want_jac:
                                dx1 += cc * g1[i] * f2[j] * f3[l]
                                dx2 += cc * f1[i] * g2[j] * f3[l]
                                dx3 += cc * fij * g3[l]
                A[k, comp] = val
                if want_jac:
                    Jac[k, comp, 0] = dx1
                    Jac[k, comp, 1] = dx2
                    Jac[k, comp, 2] = dx3
    return A, Jac


@njit(cache=True)
def _moments_range(pos, vec, lo, hi, p, h, ncells, out1, out2, out3):
    pmax = max(p[0], p[1], p[2])
    ncols = np.empty((3, pmax + 1), dtype=np.int64)
    dcols = np.empty((3, pmax + 1), dtype=np.int64)
    nvals = np.empty((3, pmax + 1))
    nders = np.empty((3, pmax + 1))
    dvals = np.empty((3, pmax + 1))
    dders = np.empty((3, pmax + 1))
    for k in range(lo, hi):
        for d in range(3):
            _basis_1d(
                pos[k, d], p[d], h[d], ncells[d],
                ncols[d], dcols[d], nvals[d], nders[d], dvals[d], dders[d],
            )
        for comp in range(3):
            ck = vec[k, comp]
            if ck == 0.0:
                continue
            if comp == 0:
                out = out1
            elif comp == 1:
                out = out2
            else:
                out = out3
            m1 = p[0] if comp == 0 else p[0] + 1
            m2 = p[1] if comp == 1 else p[1] + 1
            m3 = p[2] if comp == 2 else p[2] + 1
            c1 = dcols[0] if comp == 0 else ncols[0]
            c2 = dcols[1] if comp == 1 else ncols[1]
            c3 = dcols[2] if comp == 2 else ncols[2]
            f1 = dvals[0] if comp == 0 else nvals[0]
            f2 = dvals[1] if comp == 1 else nvals[1]
            f3 = dvals[2] if comp == 2 else nvals[2]
            for i in range(m1):
                w1 = ck * f1[i]
                for j in range(m2):
                    w12 = w1 * f2[j]
                    for l in range(m3):
                        out[c1[i], c2[j], c3[l]] += w12 * f3[l]


@njit(parallel=True, cache=True)
def v1_moments_particles(pos, vec, p, h, ncells, nchunks):
    """out_c[i] = sum_k vec[k, c] * Lambda^1_{c, i}(x_k) as 3 blocks."""
    K = pos.shape[0]
    n1, n2, n3 = ncells[0], ncells[1], ncells[2]
    bufs = np.zeros((nchunks, 3, n1, n2, n3))
    for c in prange(nchunks):
        lo = c * K // nchunks
        hi = (c + 1) * K // nchunks
        _moments_range(pos, vec, lo, hi, p, h, ncells, bufs[c, 0], bufs[c, 1], bufs[c, 2])
    out = np.zeros((3, n1, n2, n3))
    for c in range(nchunks):
        out += bufs[c]
    return out
