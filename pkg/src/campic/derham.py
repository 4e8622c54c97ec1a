"""Tensor-product periodic B-spline de Rham complex V0 -> V1 -> V2 -> V3.

Scalar 0-forms live in N x N x N, the three components of 1-forms carry a
D-basis in their own direction, 2-form components carry D-bases in the two
transverse directions, and 3-forms are D x D x D.  With that arrangement
the discrete grad/curl/div are integer incidence matrices G, C, D acting on
stacked coefficient vectors, and C@G = 0, D@C = 0 hold exactly.

Coefficient layout: C-order ravel over (n1, n2, n3) per component; vector
spaces stack their three component blocks [c1; c2; c3].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lu_factor, lu_solve

from .splines import SplineBasis1D, gauss_cell


@dataclass(frozen=True)
class Grid3:
    """Periodic box [0,L1] x [0,L2] x [0,L3] with n_d uniform cells."""

    lengths: tuple[float, float, float]
    cells: tuple[int, int, int]

    def __post_init__(self):
        if any(L <= 0 for L in self.lengths):
            raise ValueError(f"domain lengths must be positive: {self.lengths}")
        if any(n < 1 for n in self.cells):
            raise ValueError(f"cell counts must be >= 1: {self.cells}")

    @property
    def h(self) -> np.ndarray:
        return np.array(self.lengths) / np.array(self.cells)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))


# basis kind per direction for each space/component ('N' or 'D')
V1_KINDS = [("D", "N", "N"), ("N", "D", "N"), ("N", "N", "D")]
V2_KINDS = [("N", "D", "D"), ("D", "N", "D"), ("D", "D", "N")]


def _kron3(A, B, C):
    return sp.kron(sp.kron(sp.csr_matrix(A), sp.csr_matrix(B)), sp.csr_matrix(C)).tocsr()


class DeRhamComplex:
    """Assembled discrete complex on a :class:`Grid3`.

    Parameters
    ----------
    grid : Grid3
    degrees : degrees of the V0 splines per direction (>= 1).
    quad_counts : Gauss points per cell and direction for mass assembly.
        Must integrate products of two V0 splines exactly (q_d >= p_d + 1).
    """

    def __init__(self, grid: Grid3, degrees, quad_counts=None):
        degrees = tuple(int(p) for p in degrees)
        if any(p < 1 for p in degrees):
            raise ValueError(f"spline degrees must be >= 1: {degrees}")
        if quad_counts is None:
            quad_counts = tuple(p + 1 for p in degrees)
        quad_counts = tuple(int(q) for q in quad_counts)
        bad = [d for d in range(3) if quad_counts[d] < degrees[d] + 1]
        if bad:
            raise ValueError(
                f"quadrature counts {quad_counts} too low for exact spline "
                f"products with degrees {degrees} in directions {bad}"
            )
        self.grid = grid
        self.degrees = degrees
        self.quad_counts = quad_counts
        self.bases = [
            SplineBasis1D(grid.cells[d], degrees[d], grid.lengths[d]) for d in range(3)
        ]
        n1, n2, n3 = grid.cells
        self.nscalar = n1 * n2 * n3
        self.N0 = self.nscalar
        self.N1 = 3 * self.nscalar
        self.N2 = 3 * self.nscalar
        self.N3 = self.nscalar

        self._build_incidence()
        self._build_mass()
        self._build_projector_factors()

    # ------------------------------------------------------------------
    # assembly
    # ------------------------------------------------------------------

    def _build_incidence(self):
        n1, n2, n3 = self.grid.cells
        eyes = [sp.identity(n, format="csr") for n in (n1, n2, n3)]

        def diff(n):
            # backward cyclic difference: (d c)_i = c_i - c_{i-1}
            if n == 1:
                return sp.csr_matrix((1, 1))
            return (sp.identity(n) - sp.diags(np.ones(n - 1), -1) - sp.diags([1.0], n - 1)).tocsr()

        D1 = _kron3(diff(n1), eyes[1], eyes[2])
        D2 = _kron3(eyes[0], diff(n2), eyes[2])
        D3 = _kron3(eyes[0], eyes[1], diff(n3))
        Z = sp.csr_matrix((self.nscalar, self.nscalar))

        self.G = sp.vstack([D1, D2, D3]).tocsr()
        self.C = sp.bmat([[Z, -D3, D2], [D3, Z, -D1], [-D2, D1, Z]]).tocsr()
        self.D = sp.hstack([D1, D2, D3]).tocsr()
        # exactness as matrix identities (kept for invariant checks)
        self.CG = (self.C @ self.G).tocsr()
        self.CG.eliminate_zeros()
        self.DC = (self.D @ self.C).tocsr()
        self.DC.eliminate_zeros()

    def _build_mass(self):
        q = self.quad_counts
        self._m1d = {
            ("N", d): self.bases[d].mass_N(q[d]) for d in range(3)
        }
        self._m1d.update({("D", d): self.bases[d].mass_D(q[d]) for d in range(3)})
        self._m1d_lu = {k: lu_factor(v) for k, v in self._m1d.items()}

        def kron_kinds(kinds):
            return _kron3(*(self._m1d[(kinds[d], d)] for d in range(3)))

        self.M0 = kron_kinds(("N", "N", "N"))
        self.M1 = sp.block_diag([kron_kinds(k) for k in V1_KINDS]).tocsr()
        self.M2 = sp.block_diag([kron_kinds(k) for k in V2_KINDS]).tocsr()
        self.M3 = kron_kinds(("D", "D", "D"))

    def _build_projector_factors(self):
        self._interp_lu = [lu_factor(b.interpolation_matrix()) for b in self.bases]
        self._histo_lu = [lu_factor(b.histopolation_matrix()) for b in self.bases]

    # ------------------------------------------------------------------
    # coefficient bookkeeping
    # ------------------------------------------------------------------

    def split_vector(self, coeffs, space: int):
        """Split a stacked V1/V2 coefficient vector into three 3D blocks."""
        if space not in (1, 2):
            raise ValueError("split_vector applies to vector-valued spaces 1, 2")
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (3 * self.nscalar,):
            raise ValueError(
                f"expected {3 * self.nscalar} coefficients, got {coeffs.shape}"
            )
        n = self.nscalar
        shape = self.grid.cells
        return [coeffs[c * n : (c + 1) * n].reshape(shape) for c in range(3)]

    def stack_blocks(self, blocks):
        return np.concatenate([np.asarray(b, dtype=float).ravel() for b in blocks])

    def dim(self, space: int) -> int:
        return (self.N0, self.N1, self.N2, self.N3)[space]

    def mass(self, space: int):
        return (self.M0, self.M1, self.M2, self.M3)[space]

    # ------------------------------------------------------------------
    # mass apply / solve
    # ------------------------------------------------------------------

    def mass_apply(self, space: int, x):
        x = np.asarray(x, dtype=float)
        M = self.mass(space)
        if x.shape != (M.shape[1],):
            raise ValueError(f"coefficient length {x.shape} != dim {M.shape[1]}")
        return M @ x

    def _tensor_solve(self, kinds, rhs3d):
        """Solve (m1 kron m2 kron m3) x = rhs using the 1D LU factors."""
        X = np.asarray(rhs3d, dtype=float)
        for d in range(3):
            lu = self._m1d_lu[(kinds[d], d)]
            Xm = np.moveaxis(X, d, 0)
            flat = Xm.reshape(Xm.shape[0], -1)
            sol = lu_solve(lu, flat)
            X = np.moveaxis(sol.reshape(Xm.shape), 0, d)
        return X

    def mass_solve(self, space: int, rhs):
        """Apply M_space^{-1} via per-direction factorizations (exact)."""
        rhs = np.asarray(rhs, dtype=float)
        shape = self.grid.cells
        if space == 0:
            return self._tensor_solve(("N", "N", "N"), rhs.reshape(shape)).ravel()
        if space == 3:
            return self._tensor_solve(("D", "D", "D"), rhs.reshape(shape)).ravel()
        kinds = V1_KINDS if space == 1 else V2_KINDS
        blocks = self.split_vector(rhs, space)
        return self.stack_blocks(
            [self._tensor_solve(kinds[c], blocks[c]) for c in range(3)]
        )

    def l2_project_to_V1(self, rhs, tol: float = 1e-12):
        """Return M1^{-1} rhs for a V1 moment vector, with a residual check."""
        rhs = np.asarray(rhs, dtype=float)
        x = self.mass_solve(1, rhs)
        res = np.linalg.norm(self.M1 @ x - rhs)
        scale = max(np.linalg.norm(rhs), 1.0)
        if res > 1e3 * tol * scale:
            raise RuntimeError(
                f"L2 projection residual {res:.3e} exceeds tolerance "
                f"(|rhs| = {scale:.3e})"
            )
        return x

    # ------------------------------------------------------------------
    # commuting projectors
    # ------------------------------------------------------------------

    @property
    def greville_points(self):
        """Per-direction Greville lattices (interpolation nodes of Pi0)."""
        return [b.greville for b in self.bases]

    def greville_mesh(self):
        g = self.greville_points
        return np.meshgrid(g[0], g[1], g[2], indexing="ij")

    def _interp_solve(self, values):
        X = np.asarray(values, dtype=float)
        for d in range(3):
            Xm = np.moveaxis(X, d, 0)
            flat = Xm.reshape(Xm.shape[0], -1)
            sol = lu_solve(self._interp_lu[d], flat)
            X = np.moveaxis(sol.reshape(Xm.shape), 0, d)
        return X

    def v0_coeffs_from_grid(self, values):
        """Pi0 coefficients from scalar samples on the Greville lattice."""
        if tuple(np.shape(values)) != self.grid.cells:
            raise ValueError(
                f"expected Greville grid of shape {self.grid.cells}, got {np.shape(values)}"
            )
        return self._interp_solve(values).ravel()

    def project_V0(self, fn):
        """Interpolate a scalar callable fn(x, y, z) at the Greville lattice."""
        X, Y, Z = self.greville_mesh()
        return self.v0_coeffs_from_grid(np.asarray(fn(X, Y, Z), dtype=float))

    def _component_dof_values(self, fn_c, kinds, q: int):
        """Degrees of freedom of one vector component: point samples in 'N'
        directions, integrals between consecutive Greville points in 'D'."""
        pts, wts = [], []
        for d in range(3):
            b = self.bases[d]
            if kinds[d] == "N":
                pts.append(b.greville)
                wts.append(None)
            else:
                eta, w = gauss_cell(q)
                pts.append((b.greville[:, None] + eta[None, :] * b.h).reshape(-1))
                wts.append(np.tile(w * b.h, b.n))
        X, Y, Z = np.meshgrid(pts[0], pts[1], pts[2], indexing="ij")
        vals = np.asarray(fn_c(X, Y, Z), dtype=float)
        for d in range(3):
            if wts[d] is not None:
                n = self.bases[d].n
                shape = list(vals.shape)
                shape[d : d + 1] = [n, len(wts[d]) // n]
                vals = vals.reshape(shape)
                w = wts[d].reshape(n, -1)[0]
                # contract the quadrature sub-axis; remaining axes keep order
                vals = np.tensordot(vals, w, axes=([d + 1], [0]))
        return vals

    def _histo_interp_solve(self, values, kinds):
        X = np.asarray(values, dtype=float)
        for d in range(3):
            lu = self._histo_lu[d] if kinds[d] == "D" else self._interp_lu[d]
            Xm = np.moveaxis(X, d, 0)
            flat = Xm.reshape(Xm.shape[0], -1)
            sol = lu_solve(lu, flat)
            X = np.moveaxis(sol.reshape(Xm.shape), 0, d)
        return X

    def project_V1(self, fns, q: int | None = None):
        """Pi1: histopolation along the component direction, interpolation
        across.  ``fns`` is a sequence of three callables."""
        q = q or max(self.degrees) + 2
        blocks = []
        for c in range(3):
            vals = self._component_dof_values(fns[c], V1_KINDS[c], q)
            blocks.append(self._histo_interp_solve(vals, V1_KINDS[c]))
        return self.stack_blocks(blocks)

    def project_V2(self, fns, q: int | None = None):
        """Pi2: histopolation across the component direction."""
        q = q or max(self.degrees) + 2
        blocks = []
        for c in range(3):
            vals = self._component_dof_values(fns[c], V2_KINDS[c], q)
            blocks.append(self._histo_interp_solve(vals, V2_KINDS[c]))
        return self.stack_blocks(blocks)

    # ------------------------------------------------------------------
    # field evaluation
    # ------------------------------------------------------------------

    def _colloc(self, d: int, kind: str, x, deriv: bool = False):
        b = self.bases[d]
        if kind == "N":
            return b.collocation_N_deriv(x) if deriv else b.collocation_N(x)
        return b.collocation_D_deriv(x) if deriv else b.collocation_D(x)

    def eval_1form(self, coeffs, points):
        """A_h at arbitrary points; points (..., 3), returns (..., 3)."""
        return self._eval_vector(coeffs, points, V1_KINDS)

    def eval_2form(self, coeffs, points):
        """B_h at arbitrary points; points (..., 3), returns (..., 3)."""
        return self._eval_vector(coeffs, points, V2_KINDS)

    def _eval_vector(self, coeffs, points, kinds_table):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        blocks = self.split_vector(coeffs, 1 if kinds_table is V1_KINDS else 2)
        out = np.zeros((pts.shape[0], 3))
        for c in range(3):
            kinds = kinds_table[c]
            mats = [self._colloc(d, kinds[d], pts[:, d]) for d in range(3)]
            out[:, c] = np.einsum("mi,mj,mk,ijk->m", mats[0], mats[1], mats[2], blocks[c])
        if np.asarray(points).ndim == 1:
            return out[0]
        return out

    def jac_1form(self, coeffs, points):
        """Jacobian dA_h/dx at points; returns (..., 3, 3), J[c, d] = dA_c/dx_d."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        blocks = self.split_vector(coeffs, 1)
        out = np.zeros((pts.shape[0], 3, 3))
        for c in range(3):
            kinds = V1_KINDS[c]
            vals = [self._colloc(d, kinds[d], pts[:, d]) for d in range(3)]
            ders = [self._colloc(d, kinds[d], pts[:, d], deriv=True) for d in range(3)]
            for d in range(3):
                mats = [ders[e] if e == d else vals[e] for e in range(3)]
                out[:, c, d] = np.einsum(
                    "mi,mj,mk,ijk->m", mats[0], mats[1], mats[2], blocks[c]
                )
        if np.asarray(points).ndim == 1:
            return out[0]
        return out

    # ------------------------------------------------------------------
    # grid transforms (tensor-product collocation on structured grids)
    # ------------------------------------------------------------------

    def collocation_matrices(self, pts_1d, kinds):
        """Per-direction dense collocation matrices at given 1D points."""
        return [self._colloc(d, kinds[d], pts_1d[d]) for d in range(3)]

    @staticmethod
    def apply_mats(block3d, mats, transpose=False):
        """Apply (M1 kron M2 kron M3) (or its transpose) to a 3D array."""
        X = np.asarray(block3d, dtype=float)
        for d in range(3):
            M = mats[d].T if transpose else mats[d]
            X = np.moveaxis(np.tensordot(M, np.moveaxis(X, d, 0), axes=(1, 0)), 0, d)
        return X


def build_complex(grid: Grid3, degrees, quad_counts=None) -> DeRhamComplex:
    """Assemble the discrete de Rham complex (spec of the build operation)."""
    return DeRhamComplex(grid, degrees, quad_counts)
