"""Simulation state shared by the split propagators."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .derham import DeRhamComplex
from .particles import ParticleEnsemble


class PicardConvergenceError(RuntimeError):
    """Fixed-point iteration failed; carries the residual trace."""

    def __init__(self, message, residuals):
        super().__init__(f"{message}; residual trace: {list(residuals)}")
        self.residuals = list(residuals)


class DensityPositivityError(RuntimeError):
    """A deposited (or filtered) density was nonpositive where 1/n or ln n
    is required."""


@dataclass
class SimState:
    """(particles, vector-potential coefficients, background field, time)."""

    derham: DeRhamComplex
    ensemble: ParticleEnsemble
    a: np.ndarray
    b0: np.ndarray
    b0_vec: np.ndarray
    T_e: float
    t: float = 0.0
    step: int = 0

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b0 = np.asarray(self.b0, dtype=float)
        self.b0_vec = np.asarray(self.b0_vec, dtype=float)
        if self.a.shape != (self.derham.N1,):
            raise ValueError(f"a has {self.a.shape}, expected ({self.derham.N1},)")
        if self.b0.shape != (self.derham.N2,):
            raise ValueError(f"b0 has {self.b0.shape}, expected ({self.derham.N2},)")
        if self.T_e < 0:
            raise ValueError("electron temperature must be >= 0")

    def copy(self) -> "SimState":
        return replace(
            self,
            ensemble=self.ensemble.copy(),
            a=self.a.copy(),
            b0=self.b0.copy(),
            b0_vec=self.b0_vec.copy(),
        )


def make_state(derham: DeRhamComplex, ensemble: ParticleEnsemble, T_e: float,
               b0_vec=(0.0, 0.0, 0.0), a=None) -> SimState:
    """Assemble an initial state; the uniform background field is projected
    into V2 once (exact for constants)."""
    b0_vec = np.asarray(b0_vec, dtype=float)
    if np.any(b0_vec != 0.0):
        b0 = derham.project_V2(
            [lambda x, y, z, v=b0_vec[c]: v + 0.0 * x for c in range(3)]
        )
    else:
        b0 = np.zeros(derham.N2)
    if a is None:
        a = np.zeros(derham.N1)
    return SimState(derham, ensemble, a, b0, b0_vec, float(T_e))
