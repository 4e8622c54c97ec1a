"""Uniform periodic B-spline primitives.

All field spaces are built from two families on a uniform periodic knot
sequence with n cells of size h:

* N-splines  ``N_j(x) = B_p(x/h - j)``            (degree p, partition of unity)
* D-splines  ``D_j(x) = B_{p-1}(x/h - j) / h``    (degree p-1, unit integral)

where ``B_p`` is the cardinal B-spline supported on ``[0, p+1]``.  The
derivative identity ``N_j' = D_j - D_{j+1}`` makes the discrete gradient a
cyclic backward difference on the coefficients.

Smoothed particle shapes use the centered cardinal spline
``S_k(u) = B_k(u + (k+1)/2)`` supported on ``[-(k+1)/2, (k+1)/2]``.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import lu_factor


def bspline_values(p: int, u):
    """Nonzero N-spline values at local coordinate u in [0, 1).

    Returns an array of shape (..., p+1): entry r is the value of basis
    j = J - p + r where J is the knot span, i.e. ``B_p(u + p - r)``.
    """
    u = np.asarray(u, dtype=float)
    b = np.zeros(u.shape + (p + 1,))
    b[..., 0] = 1.0
    for d in range(1, p + 1):
        for s in range(d, -1, -1):
            v = np.zeros_like(u)
            if s <= d - 1:
                v = v + (u + s) / d * b[..., s]
            if s >= 1:
                v = v + (d + 1 - u - s) / d * b[..., s - 1]
            b[..., s] = v
    return b[..., ::-1]


def bspline_values_and_derivs(p: int, u):
    """Values and d/du derivatives of the p+1 nonzero N-splines.

    Ordering matches :func:`bspline_values`.  Derivatives are with respect
    to the cell-local coordinate; divide by h for physical derivatives.
    """
    u = np.asarray(u, dtype=float)
    if p == 0:
        return np.ones(u.shape + (1,)), np.zeros(u.shape + (1,))
    low = bspline_values(p - 1, u)  # B_{p-1}(u + p-1-r), r = 0..p-1
    # in "s" order: c[s] = B_{p-1}(u+s)
    c = low[..., ::-1]
    vals = np.zeros(u.shape + (p + 1,))
    ders = np.zeros(u.shape + (p + 1,))
    for r in range(p + 1):
        s = p - r
        hi = c[..., s] if s <= p - 1 else 0.0
        lo = c[..., s - 1] if s >= 1 else 0.0
        ders[..., r] = hi - lo
        v = np.zeros_like(u)
        if s <= p - 1:
            v = v + (u + s) / p * c[..., s]
        if s >= 1:
            v = v + (p + 1 - u - s) / p * c[..., s - 1]
        vals[..., r] = v
    return vals, ders


def centered_bspline(k: int, y):
    """Centered cardinal B-spline S_k(y); zero outside |y| > (k+1)/2."""
    y = np.asarray(y, dtype=float)
    t = y + 0.5 * (k + 1)
    inside = (t > 0.0) & (t < k + 1.0)
    tc = np.where(inside, t, 0.5)
    J = np.floor(tc).astype(int)
    J = np.clip(J, 0, k)
    u = tc - J
    vals = bspline_values(k, u)  # entry r: B_k(u + k - r)
    out = np.take_along_axis(vals, (k - J)[..., None], axis=-1)[..., 0]
    return np.where(inside, out, 0.0)


def centered_bspline_deriv(k: int, y):
    """d/dy of the centered cardinal B-spline (k >= 1)."""
    if k < 1:
        raise ValueError("degree-0 shape has no derivative")
    return centered_bspline(k - 1, np.asarray(y) + 0.5) - centered_bspline(
        k - 1, np.asarray(y) - 0.5
    )


def gauss_cell(q: int):
    """Gauss-Legendre nodes/weights mapped to the unit cell [0, 1]."""
    x, w = leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


class SplineBasis1D:
    """One periodic direction: n cells of size h, N-splines of degree p.

    Basis functions are periodized over the n-cell lattice, which keeps
    the spaces well defined even for n < p + 1 (each periodic basis
    function then accumulates several translates of the cardinal spline).
    """

    def __init__(self, n: int, p: int, length: float):
        if n < 1:
            raise ValueError(f"need at least one cell, got {n}")
        if p < 1:
            raise ValueError(f"spline degree must be >= 1, got {p}")
        if length <= 0:
            raise ValueError(f"period length must be positive, got {length}")
        self.n = int(n)
        self.p = int(p)
        self.L = float(length)
        self.h = self.L / self.n
        # Greville abscissae (i + (p+1)/2) h, stored by fractional offset so
        # the point lattice is (m + gamma) h for m = 0..n-1.
        self.greville_offset = 0.5 * (p + 1) % 1.0
        self.greville = (np.arange(self.n) + self.greville_offset) * self.h

    # -- pointwise basis collocation -------------------------------------

    def _local(self, x):
        t = np.mod(np.asarray(x, dtype=float), self.L) / self.h
        J = np.floor(t).astype(int)
        u = t - J
        J = np.mod(J, self.n)
        return J, u

    def collocation_N(self, x) -> np.ndarray:
        """Dense matrix A[m, j] = N_j(x_m) with periodization."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        J, u = self._local(x)
        vals = bspline_values(self.p, u)
        A = np.zeros((x.size, self.n))
        for r in range(self.p + 1):
            cols = np.mod(J - self.p + r, self.n)
            np.add.at(A, (np.arange(x.size), cols), vals[:, r])
        return A

    def collocation_D(self, x) -> np.ndarray:
        """Dense matrix A[m, j] = D_j(x_m) with periodization."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        J, u = self._local(x)
        vals = bspline_values(self.p - 1, u) if self.p >= 1 else np.ones((x.size, 1))
        q = vals.shape[1]
        A = np.zeros((x.size, self.n))
        for r in range(q):
            cols = np.mod(J - (q - 1) + r, self.n)
            np.add.at(A, (np.arange(x.size), cols), vals[:, r] / self.h)
        return A

    def collocation_N_deriv(self, x) -> np.ndarray:
        """Dense matrix A[m, j] = N_j'(x_m)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        J, u = self._local(x)
        _, ders = bspline_values_and_derivs(self.p, u)
        A = np.zeros((x.size, self.n))
        for r in range(self.p + 1):
            cols = np.mod(J - self.p + r, self.n)
            np.add.at(A, (np.arange(x.size), cols), ders[:, r] / self.h)
        return A

    def collocation_D_deriv(self, x) -> np.ndarray:
        """Dense matrix A[m, j] = D_j'(x_m)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        A = np.zeros((x.size, self.n))
        if self.p < 2:
            return A
        J, u = self._local(x)
        _, ders = bspline_values_and_derivs(self.p - 1, u)
        for r in range(self.p):
            cols = np.mod(J - (self.p - 1) + r, self.n)
            np.add.at(A, (np.arange(x.size), cols), ders[:, r] / self.h**2)
        return A

    # -- projector systems ------------------------------------------------

    def interpolation_matrix(self) -> np.ndarray:
        """Collocation of N-splines at the Greville lattice (circulant)."""
        return self.collocation_N(self.greville)

    def histopolation_matrix(self, q: int | None = None) -> np.ndarray:
        """H[m, j] = integral of D_j over [greville_m, greville_{m+1}]."""
        if q is None:
            q = self.p + 1
        eta, wts = gauss_cell(q)
        A = np.zeros((self.n, self.n))
        for m in range(self.n):
            x = self.greville[m] + eta * self.h
            A[m] = (wts * self.h) @ self.collocation_D(x)
        return A

    # -- mass matrices -----------------------------------------------------

    def mass_N(self, q: int) -> np.ndarray:
        """1D mass matrix of the N-splines by q-point Gauss per cell."""
        return self._mass(self.collocation_N, q)

    def mass_D(self, q: int) -> np.ndarray:
        """1D mass matrix of the D-splines by q-point Gauss per cell."""
        return self._mass(self.collocation_D, q)

    def _mass(self, colloc, q: int) -> np.ndarray:
        eta, wts = gauss_cell(q)
        M = np.zeros((self.n, self.n))
        for c in range(self.n):
            x = (c + eta) * self.h
            A = colloc(x)
            M += A.T @ (wts[:, None] * self.h * A)
        return M

    def quad_points(self, q: int):
        """All Gauss points/weights over the period, cell-major order."""
        eta, wts = gauss_cell(q)
        pts = ((np.arange(self.n)[:, None] + eta[None, :]) * self.h).ravel()
        w = np.tile(wts * self.h, self.n)
        return pts, w


def lu(A: np.ndarray):
    return lu_factor(A)
