"""Particle-containing split propagators.

``push_xp``   canonical Hamiltonian particle push with the electron-pressure
              kick; the vector potential is frozen (gauge where the pressure
              gradient acts on particles directly).
``push_xpa``  coupled particle push and curl-free potential update in the
              zero-scalar-potential gauge; the deposited density (optionally
              binomially filtered) drives the potential through ln n.
``rotate_b0`` exact rotation of p - A about a uniform background field.

All implicit midpoint systems are solved by damped Picard fixed-point
iteration; the residual is the max-norm over particle coordinates and (for
push_xpa) field coefficients of successive updates.  The initial sweep from
the unperturbed state doubles as an explicit Euler predictor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .filters import FilterSpec, apply_filter
from .particles import (
    ParticleEnsemble,
    QuadGrid,
    ShapeFunction,
    deposit_on_grid,
    eval_field_at_particles,
    greville_grid,
)
from .state import DensityPositivityError, PicardConvergenceError, SimState

log = logging.getLogger(__name__)


@dataclass
class PicardConfig:
    tol: float = 1e-11
    max_iters: int = 100
    damping: float = 1.0

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("Picard tolerance must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


def _check_monotone(residuals, label):
    r = np.asarray(residuals)
    if len(r) > 2 and np.any(np.diff(r[1:]) > 0):
        log.warning("%s: non-monotone Picard residuals %s", label, residuals)


def _pressure_kick(state, shape, quad, positions, nchunks):
    """-(1/w_k) grad_{x_k} H_e at the given (midpoint) positions.

    Expands to ``T sum_j w_j (1 + ln n_h(x_j)) grad S(x_j - x_k)`` over the
    coupling quadrature grid.
    """
    n = deposit_on_grid(state.ensemble, shape, quad, positions=positions, nchunks=nchunks)
    psi = np.where(n > 0.0, state.T_e * quad.weight_grid * (1.0 + np.log(np.where(n > 0.0, n, 1.0))), 0.0)
    return kernels.gather_grad_shape(
        np.ascontiguousarray(positions),
        psi,
        np.array(shape.degrees, dtype=np.int64),
        np.asarray(shape.h),
        quad.ncells,
        quad.q,
        quad.eta,
    )


def push_xp(
    state: SimState,
    dt: float,
    picard: PicardConfig,
    shape: ShapeFunction,
    quad: QuadGrid,
    nchunks: int = 1,
) -> SimState:
    """Implicit-midpoint canonical push with frozen potential.

    Midpoint system per marker (A_h held at the old time level):

        (x' - x)/dt = p_mid - A_h(x_mid)
        (p' - p)/dt = -J_A(x_mid)^T (A_h(x_mid) - p_mid) + kick(x_mid)

    The symplectic midpoint rule preserves quadratic invariants; with the
    pressure kick the map is the exact midpoint discretization of the
    per-marker Hamiltonian system of the discrete energy.
    """
    if state.T_e > 0 and any(k < 1 for k in shape.degrees):
        raise ValueError(
            "pressure kick needs shape degrees >= 1 in every direction "
            f"(got {shape.degrees}): the degree-0 hat has no gradient"
        )
    derham = state.derham
    ens = state.ensemble
    X0, P0 = ens.X, ens.P
    X1, P1 = X0.copy(), P0.copy()
    residuals = []
    for it in range(picard.max_iters):
        Xm = 0.5 * (X0 + X1)
        Pm = 0.5 * (P0 + P1)
        A, J = eval_field_at_particles(derham, state.a, Xm, want_jac=True)
        force = -np.einsum("kcd,kc->kd", J, A - Pm)
        if state.T_e > 0:
            force = force + _pressure_kick(state, shape, quad, Xm, nchunks)
        Xn = X0 + dt * (Pm - A)
        Pn = P0 + dt * force
        res = max(np.abs(Xn - X1).max(), np.abs(Pn - P1).max())
        residuals.append(res)
        d = picard.damping
        X1 = X1 + d * (Xn - X1)
        P1 = P1 + d * (Pn - P1)
        if res <= picard.tol:
            _check_monotone(residuals, "push_xp")
            out = state.copy()
            out.ensemble.X[:] = X1
            out.ensemble.P[:] = P1
            out.ensemble.wrap()
            return out
    raise PicardConvergenceError(
        f"push_xp did not reach tol {picard.tol} in {picard.max_iters} iterations",
        residuals,
    )


def push_xpa(
    state: SimState,
    dt: float,
    picard: PicardConfig,
    shape: ShapeFunction,
    quad: QuadGrid,
    filter_spec: FilterSpec | None = None,
    density_floor: float | None = None,
    nchunks: int = 1,
) -> SimState:
    """Coupled midpoint update of markers and the curl-free potential part.

    Markers see the time-centered potential; the potential gains
    ``dt * T * G  Pi0~( ln F(n_h) )`` with the density deposited at the
    Greville lattice from midpoint positions and F the binomial filter
    chain.  The increment lies in the range of the discrete gradient, so
    the magnetic field never changes here.
    """
    if filter_spec is None:
        filter_spec = FilterSpec()
    derham = state.derham
    ens = state.ensemble
    gg = greville_grid(derham)
    X0, P0, a0 = ens.X, ens.P, state.a
    X1, P1, a1 = X0.copy(), P0.copy(), a0.copy()
    residuals = []
    for it in range(picard.max_iters):
        Xm = 0.5 * (X0 + X1)
        Pm = 0.5 * (P0 + P1)
        am = 0.5 * (a0 + a1)
        A, J = eval_field_at_particles(derham, am, Xm, want_jac=True)
        Xn = X0 + dt * (Pm - A)
        Pn = P0 - dt * np.einsum("kcd,kc->kd", J, A - Pm)
        if state.T_e > 0:
            n = deposit_on_grid(ens, shape, gg, positions=Xm, nchunks=nchunks)
            n = apply_filter(filter_spec, n)
            if density_floor is not None:
                n = np.maximum(n, density_floor)
            elif n.min() <= 0.0:
                bad = np.unravel_index(int(np.argmin(n)), n.shape)
                raise DensityPositivityError(
                    f"filtered density nonpositive at Greville point {bad}: "
                    f"{n.min():.3e}; refusing ln of a nonpositive value"
                )
            c0 = derham.v0_coeffs_from_grid(np.log(n))
            an = a0 + dt * state.T_e * (derham.G @ c0)
        else:
            an = a0.copy()
        res = max(
            np.abs(Xn - X1).max(),
            np.abs(Pn - P1).max(),
            np.abs(an - a1).max(),
        )
        residuals.append(res)
        d = picard.damping
        X1 = X1 + d * (Xn - X1)
        P1 = P1 + d * (Pn - P1)
        a1 = a1 + d * (an - a1)
        if res <= picard.tol:
            _check_monotone(residuals, "push_xpa")
            out = state.copy()
            out.ensemble.X[:] = X1
            out.ensemble.P[:] = P1
            out.ensemble.wrap()
            out.a = a1
            return out
    raise PicardConvergenceError(
        f"push_xpa did not reach tol {picard.tol} in {picard.max_iters} iterations",
        residuals,
    )


def rotate_b0(state: SimState, dt: float) -> SimState:
    """Exact gyration about the uniform background field.

    With positions and the potential frozen the kinetic velocity
    ``v = p - A_h(x)`` obeys ``dv/dt = v x B0`` (unit charge and mass), a
    rigid rotation by angle ``-dt |B0|`` about the field axis; |v| and the
    parallel component are preserved exactly.
    """
    bnorm = float(np.linalg.norm(state.b0_vec))
    if bnorm == 0.0:
        return state.copy()
    axis = state.b0_vec / bnorm
    theta = -dt * bnorm
    A = eval_field_at_particles(state.derham, state.a, state.ensemble.X)
    v = state.ensemble.P - A
    cross = np.cross(np.broadcast_to(axis, v.shape), v)
    par = np.outer(v @ axis, axis)
    vrot = v * np.cos(theta) + cross * np.sin(theta) + par * (1.0 - np.cos(theta))
    out = state.copy()
    out.ensemble.P[:] = A + vrot
    return out
