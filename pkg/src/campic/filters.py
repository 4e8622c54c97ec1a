"""Binomial smoothing of grid-sampled densities with a compensation step.

One pass is the periodic three-point stencil
``phi_j^f = alpha phi_j + (1 - alpha)(phi_{j-1} + phi_{j+1}) / 2``
with gain ``g(alpha, k dx) = alpha + (1 - alpha) cos(k dx)``.  A chain of m
passes plus the compensation pass ``alpha_{m+1} = m + 1 - sum(alpha_i)``
has total gain ``1 + O((k dx)^4)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FilterSpec:
    """m smoothing passes plus an automatic compensation pass.

    ``passes = 0`` is the identity.  ``alphas`` overrides the default 0.5
    smoothing coefficients; the compensation coefficient is always derived
    so the O(k^2) attenuation cancels.
    """

    passes: int = 0
    alphas: tuple = ()
    axes: tuple = (0, 1, 2)

    def __post_init__(self):
        if self.passes < 0:
            raise ValueError("pass count must be >= 0")
        if self.alphas and len(self.alphas) != self.passes:
            raise ValueError(
                f"{len(self.alphas)} coefficients given for {self.passes} passes"
            )
        if any(a < 0 or a > 2 for a in self.axes):
            raise ValueError(f"axes must be in 0..2: {self.axes}")

    @property
    def smoothing_alphas(self) -> tuple:
        return self.alphas if self.alphas else (0.5,) * self.passes

    @property
    def compensation(self) -> float:
        return self.passes + 1 - sum(self.smoothing_alphas)

    @property
    def chain(self) -> tuple:
        """All m+1 coefficients in application order (identity if m = 0)."""
        if self.passes == 0:
            return ()
        return self.smoothing_alphas + (self.compensation,)


def filter_pass_1d(values, alpha: float, axis: int = -1) -> np.ndarray:
    """Single periodic three-point pass along one axis."""
    values = np.asarray(values, dtype=float)
    if values.shape[axis] < 3:
        raise ValueError(
            f"filtering needs at least 3 points along axis {axis}, "
            f"got {values.shape[axis]}"
        )
    left = np.roll(values, 1, axis=axis)
    right = np.roll(values, -1, axis=axis)
    return alpha * values + (1.0 - alpha) * 0.5 * (left + right)


def apply_filter(spec: FilterSpec, values) -> np.ndarray:
    """Full compensated chain along every enabled axis."""
    out = np.asarray(values, dtype=float)
    if spec.passes == 0:
        return out
    for axis in spec.axes:
        for alpha in spec.chain:
            out = filter_pass_1d(out, alpha, axis=axis)
    return out


def pass_gain(alpha: float, kdx) -> np.ndarray:
    """Single-pass gain g(alpha, k dx) on the periodic lattice."""
    return alpha + (1.0 - alpha) * np.cos(kdx)


def chain_gain(spec: FilterSpec, kdx) -> np.ndarray:
    """Total gain of the compensated chain at dimensionless wavenumber."""
    g = np.ones_like(np.asarray(kdx, dtype=float))
    for alpha in spec.chain:
        g = g * pass_gain(alpha, kdx)
    return g
