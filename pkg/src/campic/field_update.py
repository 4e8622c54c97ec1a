"""Potential update with frozen particles (the energy-conserving subsystem).

The weak form couples the coefficient velocity to the energy gradient
through an antisymmetric matrix built from the magnetic field over the
deposited density,

    F_ij = int (B0 + curl A_h) . (Lambda^1_j x Lambda^1_i) / n_h dx ,

so the quadratic (in a) energy is conserved by the implicit midpoint rule
up to the linear-solver residual.  Two equivalent realizations are
provided: an explicit sparse F with exact constructional antisymmetry, and
a matrix-free operator applying the same quadrature transform (used inside
GMRES at scale).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .derham import DeRhamComplex, V1_KINDS, V2_KINDS
from .particles import (
    ParticleEnsemble,
    QuadGrid,
    ShapeFunction,
    deposit_on_grid,
    eval_field_at_particles,
    v1_moments,
)
from .state import DensityPositivityError, PicardConvergenceError, SimState

# component pairs (row, col) of the strict upper block triangle and the
# cross-product weight component with its Levi-Civita sign:
# F_{(nu,i),(mu,j)} = eps_{mu nu sigma} int W_sigma Lambda^(nu)_i Lambda^(mu)_j
_UPPER_BLOCKS = [(0, 1, 2, -1.0), (0, 2, 1, +1.0), (1, 2, 0, -1.0)]


class GridCoupling:
    """Collocation of the V1/V2 bases on a coupling quadrature grid."""

    def __init__(self, derham: DeRhamComplex, quad: QuadGrid):
        self.derham = derham
        self.quad = quad
        pts = quad.points_1d
        self.EN = [derham._colloc(d, "N", pts[d]) for d in range(3)]
        self.ED = [derham._colloc(d, "D", pts[d]) for d in range(3)]

    def _mats(self, kinds):
        return [self.EN[d] if kinds[d] == "N" else self.ED[d] for d in range(3)]

    def eval_1form_grid(self, a) -> list[np.ndarray]:
        blocks = self.derham.split_vector(a, 1)
        return [
            self.derham.apply_mats(blocks[c], self._mats(V1_KINDS[c]))
            for c in range(3)
        ]

    def eval_2form_grid(self, b) -> list[np.ndarray]:
        blocks = self.derham.split_vector(b, 2)
        return [
            self.derham.apply_mats(blocks[c], self._mats(V2_KINDS[c]))
            for c in range(3)
        ]

    def v1_moments_grid(self, fields) -> np.ndarray:
        """Stacked vector of int f_c Lambda^1_{c,i}; quadrature weights must
        already be folded into the field values."""
        return self.derham.stack_blocks(
            [
                self.derham.apply_mats(fields[c], self._mats(V1_KINDS[c]), transpose=True)
                for c in range(3)
            ]
        )

    def sparse_basis(self, space: int, comp: int) -> sp.csr_matrix:
        """Explicit (n_points x nscalar) collocation of one component."""
        kinds = V1_KINDS[comp] if space == 1 else V2_KINDS[comp]
        mats = self._mats(kinds)
        return sp.kron(sp.kron(sp.csr_matrix(mats[0]), sp.csr_matrix(mats[1])), sp.csr_matrix(mats[2])).tocsr()


def magnetic_weight_grids(coupling: GridCoupling, a_mid, b0, n_grid, fold_weights=True):
    """(B0 + curl A_h) / n_h per component on the quadrature grid."""
    if n_grid.min() <= 0.0:
        bad = np.unravel_index(int(np.argmin(n_grid)), n_grid.shape)
        raise DensityPositivityError(
            f"deposited density nonpositive at quadrature point {bad}: "
            f"{n_grid.min():.3e}; the coupling integrand divides by n_h"
        )
    b = coupling.derham.C @ a_mid + b0
    B = coupling.eval_2form_grid(b)
    scale = coupling.quad.weight_grid / n_grid if fold_weights else 1.0 / n_grid
    return [Bc * scale for Bc in B]


def assemble_F(
    derham: DeRhamComplex,
    a_mid,
    b0,
    ensemble: ParticleEnsemble,
    shape: ShapeFunction,
    quad: QuadGrid,
    coupling: GridCoupling | None = None,
    n_grid=None,
    nchunks: int = 1,
) -> sp.csr_matrix:
    """Explicit sparse coupling matrix, antisymmetric by construction.

    Only the strict upper block triangle is assembled; the lower triangle
    is its bitwise negation, so ``F + F.T`` vanishes identically.
    """
    if ensemble.K == 0:
        raise DensityPositivityError("coupling matrix undefined without markers (n_h = 0)")
    coupling = coupling or GridCoupling(derham, quad)
    if n_grid is None:
        n_grid = deposit_on_grid(ensemble, shape, quad, nchunks=nchunks)
    W = magnetic_weight_grids(coupling, a_mid, b0, n_grid)
    n = derham.nscalar
    parts = []
    for nu, mu, sigma, sign in _UPPER_BLOCKS:
        Bnu = coupling.sparse_basis(1, nu)
        Bmu = coupling.sparse_basis(1, mu)
        block = (Bnu.T @ sp.diags(W[sigma].ravel()) @ Bmu) * sign
        block = block.tocoo()
        parts.append((block.row + nu * n, block.col + mu * n, block.data))
    rows = np.concatenate([p[0] for p in parts] + [p[1] for p in parts])
    cols = np.concatenate([p[1] for p in parts] + [p[0] for p in parts])
    data = np.concatenate([p[2] for p in parts] + [-p[2] for p in parts])
    return sp.coo_matrix((data, (rows, cols)), shape=(derham.N1, derham.N1)).tocsr()


class CouplingOperator(spla.LinearOperator):
    """Matrix-free F(a_mid): v -> moments of (W x V_h) on the quad grid.

    Identical bilinear form as :func:`assemble_F` (same quadrature), so the
    operator is antisymmetric up to roundoff.
    """

    def __init__(self, coupling: GridCoupling, W_folded):
        self.coupling = coupling
        self.W = W_folded
        N1 = coupling.derham.N1
        super().__init__(dtype=float, shape=(N1, N1))

    def _matvec(self, v):
        V = self.coupling.eval_1form_grid(np.asarray(v, dtype=float).ravel())
        W = self.W
        X = [
            W[1] * V[2] - W[2] * V[1],
            W[2] * V[0] - W[0] * V[2],
            W[0] * V[1] - W[1] * V[0],
        ]
        return self.coupling.v1_moments_grid(X)

    def _rmatvec(self, v):
        return -self._matvec(v)


def energy_gradient_pieces(state: SimState, nchunks: int = 1):
    """Constant pieces of grad_a H during one field step.

    Returns (apply_Q, r) with ``grad_a H(a) = Q a - r`` where
    Q = P1^T W P1 + C^T M2 C and r = P1^T W P - C^T M2 b0.
    """
    derham = state.derham
    ens = state.ensemble
    CtM2 = derham.C.T @ derham.M2

    def apply_Q(u):
        Au = eval_field_at_particles(derham, u, ens.X)
        part = v1_moments(derham, ens.X, ens.W[:, None] * Au, nchunks=nchunks)
        return part + CtM2 @ (derham.C @ u)

    r = v1_moments(derham, ens.X, ens.W[:, None] * ens.P, nchunks=nchunks) - CtM2 @ state.b0
    return apply_Q, r


def solve_a_step(
    state: SimState,
    dt: float,
    picard,
    shape: ShapeFunction,
    quad: QuadGrid,
    method: str = "gmres",
    linear_tol: float | None = None,
    coupling: GridCoupling | None = None,
    nchunks: int = 1,
) -> SimState:
    """Advance the potential by the energy-conserving midpoint scheme.

        (a' - a)/dt = M1^{-1} F(a_mid) M1^{-1) [Q a_mid - r]

    Outer Picard freezes F at the current midpoint iterate; the remaining
    linear system is solved in M1-preconditioned form by GMRES (or a dense
    direct factorization at desk scale).  Markers are untouched.
    """
    derham = state.derham
    if state.ensemble.K == 0:
        raise DensityPositivityError("field step undefined without markers (n_h = 0)")
    b_test = derham.C @ state.a + state.b0
    if np.abs(b_test).max() == 0.0:
        # B = 0 is a fixed point: the bracket weight vanishes identically for
        # the consistent midpoint solution, so the potential cannot move.
        return state.copy()
    coupling = coupling or GridCoupling(derham, quad)
    n_grid = deposit_on_grid(state.ensemble, shape, quad, nchunks=nchunks)
    apply_Q, r = energy_gradient_pieces(state, nchunks=nchunks)
    a0 = state.a
    lin_rtol = linear_tol if linear_tol is not None else picard.tol / 10.0
    u = a0.copy()
    residuals = []
    for it in range(picard.max_iters):
        a_mid = 0.5 * (a0 + u)
        W = magnetic_weight_grids(coupling, a_mid, state.b0, n_grid)
        Fop = CouplingOperator(coupling, W)

        def apply_S(v):
            # S v = M1^{-1} F M1^{-1} v
            return derham.mass_solve(1, Fop @ derham.mass_solve(1, v))

        rhs = a0 + dt * apply_S(0.5 * apply_Q(a0) - r)

        if method == "direct":
            u_new = _direct_solve(derham, apply_S, apply_Q, dt, rhs)
        else:
            Lmat = spla.LinearOperator(
                (derham.N1, derham.N1),
                matvec=lambda v: v - 0.5 * dt * apply_S(apply_Q(v)),
            )
            u_new, info = spla.gmres(
                Lmat, rhs, x0=u, rtol=lin_rtol, atol=0.0, maxiter=200
            )
            if info != 0:
                raise PicardConvergenceError(
                    f"inner GMRES failed (info={info}) at Picard sweep {it}",
                    residuals,
                )
        res = np.abs(u_new - u).max()
        residuals.append(res)
        u = u_new
        if res <= picard.tol:
            out = state.copy()
            out.a = u
            return out
    raise PicardConvergenceError(
        f"field step did not reach tol {picard.tol} in {picard.max_iters} sweeps",
        residuals,
    )


def _direct_solve(derham, apply_S, apply_Q, dt, rhs):
    N1 = derham.N1
    if N1 > 4096:
        raise ValueError("direct field solve is meant for desk-scale problems")
    L = np.eye(N1)
    for j in range(N1):
        e = np.zeros(N1)
        e[j] = 1.0
        L[:, j] -= 0.5 * dt * apply_S(apply_Q(e))
    return np.linalg.solve(L, rhs)
