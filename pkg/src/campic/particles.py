"""Particle ensemble, Maxwellian loading, shape functions and deposition.

Markers carry positions X, canonical momenta P and constant weights W with
the normalization ``sum(w_k) = |Omega|`` so a unit continuum density maps
to ``n_h ~ 1``.  Deposition uses tensor-product centered B-spline shapes
with the periodic minimum-image convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels
from .derham import DeRhamComplex, Grid3, V1_KINDS, V2_KINDS
from .splines import centered_bspline, centered_bspline_deriv, gauss_cell


@dataclass
class ParticleEnsemble:
    """K markers on the periodic box; arrays are (K, 3) / (K,)."""

    X: np.ndarray
    P: np.ndarray
    W: np.ndarray
    lengths: tuple[float, float, float]

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=float)
        self.P = np.ascontiguousarray(self.P, dtype=float)
        self.W = np.ascontiguousarray(self.W, dtype=float)
        if self.X.shape != self.P.shape or self.X.shape != (self.W.size, 3):
            raise ValueError("inconsistent ensemble array shapes")
        if np.any(self.W <= 0):
            raise ValueError("all marker weights must be positive")
        self.wrap()

    @property
    def K(self) -> int:
        return self.W.size

    def wrap(self):
        L = np.asarray(self.lengths)
        self.X -= L * np.floor(self.X / L)

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.X.copy(), self.P.copy(), self.W.copy(), self.lengths)

    def flat(self, arr) -> np.ndarray:
        """Component-major 3K vector (x-block, y-block, z-block)."""
        return np.asarray(arr).T.ravel()

    @property
    def weight_matrix(self) -> sp.dia_matrix:
        """W = I_3 kron diag(w) acting on component-major 3K vectors."""
        return sp.kron(sp.identity(3), sp.diags(self.W)).todia()


@dataclass(frozen=True)
class ShapeFunction:
    """Tensor product of centered B-splines, unit integral.

    ``S(r) = prod_d S_{k_d}(r_d / h_d) / h_d`` with support
    ``|r_d| <= h_d (k_d + 1) / 2``.
    """

    degrees: tuple[int, int, int]
    h: tuple[float, float, float]

    def __post_init__(self):
        if any(k < 0 for k in self.degrees):
            raise ValueError(f"shape degrees must be >= 0: {self.degrees}")
        if any(hd <= 0 for hd in self.h):
            raise ValueError(f"cell sizes must be positive: {self.h}")

    @classmethod
    def for_grid(cls, grid: Grid3, degrees) -> "ShapeFunction":
        return cls(tuple(int(k) for k in degrees), tuple(grid.h))

    @property
    def support_halfwidth(self) -> np.ndarray:
        return np.array([h * (k + 1) / 2 for k, h in zip(self.degrees, self.h)])

    def eval(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        out = np.ones(r.shape[:-1])
        for d in range(3):
            out = out * centered_bspline(self.degrees[d], r[..., d] / self.h[d]) / self.h[d]
        return out

    def grad(self, r) -> np.ndarray:
        """Exact gradient; requires degree >= 1 in every direction."""
        if any(k < 1 for k in self.degrees):
            raise ValueError(
                f"shape gradient needs degrees >= 1 in all directions, got {self.degrees}"
            )
        r = np.asarray(r, dtype=float)
        vals = [
            centered_bspline(self.degrees[d], r[..., d] / self.h[d]) / self.h[d]
            for d in range(3)
        ]
        ders = [
            centered_bspline_deriv(self.degrees[d], r[..., d] / self.h[d]) / self.h[d] ** 2
            for d in range(3)
        ]
        out = np.empty(r.shape)
        for d in range(3):
            g = ders[d]
            for e in range(3):
                if e != d:
                    g = g * vals[e]
            out[..., d] = g
        return out


class QuadGrid:
    """Tensor Gauss-Legendre grid over all cells (coupling quadrature).

    Holds the per-direction structure used by the compiled kernels plus
    flattened point/weight arrays; ``sum(w_j) = |Omega|``.
    """

    def __init__(self, grid: Grid3, counts):
        counts = tuple(int(q) for q in counts)
        if any(q < 1 for q in counts):
            raise ValueError(f"quadrature counts must be >= 1: {counts}")
        self.grid = grid
        self.counts = counts
        self.ncells = np.array(grid.cells, dtype=np.int64)
        self.q = np.array(counts, dtype=np.int64)
        qmax = max(counts)
        self.eta = np.zeros((3, qmax))
        self.h = grid.h
        pts_1d, wts_1d = [], []
        for d in range(3):
            eta, w = gauss_cell(counts[d])
            self.eta[d, : counts[d]] = eta
            pts = ((np.arange(grid.cells[d])[:, None] + eta[None, :]) * self.h[d]).ravel()
            pts_1d.append(pts)
            wts_1d.append(np.tile(w * self.h[d], grid.cells[d]))
        self.points_1d = pts_1d
        self.weights_1d = wts_1d
        self.weight_grid = np.einsum("i,j,k->ijk", *wts_1d)
        self.shape = self.weight_grid.shape

    @property
    def points(self) -> np.ndarray:
        """Flattened (M, 3) point list, C-order over the tensor grid."""
        X, Y, Z = np.meshgrid(*self.points_1d, indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    @property
    def weights(self) -> np.ndarray:
        return self.weight_grid.ravel()


def greville_grid(complex: DeRhamComplex) -> QuadGrid:
    """The Greville lattice packaged with the structured-grid interface."""
    g = QuadGrid.__new__(QuadGrid)
    g.grid = complex.grid
    g.counts = (1, 1, 1)
    g.ncells = np.array(complex.grid.cells, dtype=np.int64)
    g.q = np.array([1, 1, 1], dtype=np.int64)
    g.eta = np.array([[b.greville_offset] for b in complex.bases])
    g.h = complex.grid.h
    g.points_1d = [b.greville for b in complex.bases]
    g.weights_1d = [np.full(b.n, b.h) for b in complex.bases]
    g.weight_grid = np.einsum("i,j,k->ijk", *g.weights_1d)
    g.shape = g.weight_grid.shape
    return g


# ----------------------------------------------------------------------
# loading
# ----------------------------------------------------------------------


def load_maxwellian(
    K: int,
    grid: Grid3,
    drift=(0.0, 0.0, 0.0),
    thermal=(1.0, 1.0, 1.0),
    seed: int = 0,
    positions: str = "uniform",
) -> ParticleEnsemble:
    """Sample K markers: uniform positions, anisotropic Maxwellian momenta.

    Momenta follow ``f ~ exp(-sum_d (p_d - u_d)^2 / v_d^2)``, i.e. each
    component is Gaussian with variance ``v_d^2 / 2``.  Weights are
    ``|Omega| / K``.  The Philox counter-based generator makes loads
    reproducible for a given seed.
    """
    if K < 1:
        raise ValueError("need at least one marker")
    thermal = np.asarray(thermal, dtype=float)
    if np.any(thermal <= 0):
        raise ValueError(f"thermal widths must be positive: {thermal}")
    rng = np.random.Generator(np.random.Philox(seed))
    L = np.asarray(grid.lengths)
    if positions == "uniform":
        X = rng.random((K, 3)) * L
    elif positions == "halton":
        from scipy.stats import qmc

        sampler = qmc.Halton(d=3, scramble=True, seed=rng)
        X = sampler.random(K) * L
    else:
        raise ValueError(f"unknown position sampling '{positions}'")
    P = np.asarray(drift) + (thermal / np.sqrt(2.0)) * rng.standard_normal((K, 3))
    W = np.full(K, grid.volume / K)
    return ParticleEnsemble(X, P, W, tuple(grid.lengths))


def load_lattice(
    per_cell,
    grid: Grid3,
    drift=(0.0, 0.0, 0.0),
    thermal=None,
    seed: int = 0,
) -> ParticleEnsemble:
    """Uniform sublattice load (m_d markers per cell and direction).

    Shifted-B-spline partition of unity makes the deposited density exactly
    constant for any such lattice; useful for quiet starts and tests.
    """
    m = tuple(int(v) for v in per_cell)
    pts = []
    for d in range(3):
        npts = grid.cells[d] * m[d]
        pts.append((np.arange(npts) + 0.5) * grid.lengths[d] / npts)
    X1, X2, X3 = np.meshgrid(*pts, indexing="ij")
    X = np.stack([X1.ravel(), X2.ravel(), X3.ravel()], axis=1)
    K = X.shape[0]
    if thermal is None:
        P = np.broadcast_to(np.asarray(drift, dtype=float), (K, 3)).copy()
    else:
        rng = np.random.Generator(np.random.Philox(seed))
        P = np.asarray(drift) + (np.asarray(thermal) / np.sqrt(2.0)) * rng.standard_normal((K, 3))
    W = np.full(K, grid.volume / K)
    return ParticleEnsemble(X, P, W, tuple(grid.lengths))


# ----------------------------------------------------------------------
# deposition
# ----------------------------------------------------------------------


def deposit_density(ensemble: ParticleEnsemble, shape: ShapeFunction, points) -> np.ndarray:
    """Reference smoothed density at arbitrary points (direct O(M K) sum).

    ``n_h(x) = sum_k w_k S(x - x_k)`` with periodic minimum image.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    L = np.asarray(ensemble.lengths)
    out = np.zeros(pts.shape[0])
    for m in range(pts.shape[0]):
        r = pts[m] - ensemble.X
        r -= L * np.round(r / L)
        out[m] = np.dot(ensemble.W, shape.eval(r))
    if np.asarray(points).ndim == 1:
        return out[0]
    return out


def deposit_on_grid(
    ensemble: ParticleEnsemble,
    shape: ShapeFunction,
    qgrid: QuadGrid,
    positions: np.ndarray | None = None,
    nchunks: int = 1,
) -> np.ndarray:
    """Fast structured-grid deposition (compiled kernel)."""
    pos = ensemble.X if positions is None else np.ascontiguousarray(positions)
    return kernels.deposit_grid(
        pos,
        ensemble.W,
        np.array(shape.degrees, dtype=np.int64),
        np.asarray(shape.h),
        qgrid.ncells,
        qgrid.q,
        qgrid.eta,
        nchunks,
    )


# ----------------------------------------------------------------------
# basis-evaluation matrices P_n(X)
# ----------------------------------------------------------------------


def basis_matrix(complex: DeRhamComplex, ensemble: ParticleEnsemble, space: int) -> sp.csr_matrix:
    """Sparse P_n(X), n in {1, 2}: block-diagonal over components, so that
    ``P_n^T a`` stacks the per-particle field components component-major."""
    if space not in (1, 2):
        raise ValueError("basis matrices are defined for spaces 1 and 2")
    kinds_table = V1_KINDS if space == 1 else V2_KINDS
    K = ensemble.K
    n = complex.nscalar
    blocks = []
    for c in range(3):
        kinds = kinds_table[c]
        mats = [complex._colloc(d, kinds[d], ensemble.X[:, d]) for d in range(3)]
        # row index within the component block: ravel over (n1, n2, n3)
        vals = np.einsum("ki,kj,kl->kijl", mats[0], mats[1], mats[2])
        n1, n2, n3 = complex.grid.cells
        rows = (
            np.arange(n1)[None, :, None, None] * n2 * n3
            + np.arange(n2)[None, None, :, None] * n3
            + np.arange(n3)[None, None, None, :]
        )
        rows = np.broadcast_to(rows, vals.shape)
        cols = np.broadcast_to(np.arange(K)[:, None, None, None], vals.shape)
        blocks.append(
            sp.coo_matrix(
                (vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, K)
            ).tocsr()
        )
    return sp.block_diag(blocks).tocsr()


def eval_field_at_particles(complex, coeffs, positions, want_jac=False):
    """Kernel-backed A_h (and Jacobian) at particle positions."""
    blocks = complex.split_vector(coeffs, 1)
    A, J = kernels.eval_1form_particles(
        np.ascontiguousarray(positions),
        np.ascontiguousarray(blocks[0]),
        np.ascontiguousarray(blocks[1]),
        np.ascontiguousarray(blocks[2]),
        np.array(complex.degrees, dtype=np.int64),
        complex.grid.h,
        np.array(complex.grid.cells, dtype=np.int64),
        want_jac,
    )
    return (A, J) if want_jac else A


def v1_moments(complex, positions, vec, nchunks: int = 1) -> np.ndarray:
    """Stacked V1 vector ``sum_k vec[k, c] Lambda^1_{c,i}(x_k)`` (kernel)."""
    out = kernels.v1_moments_particles(
        np.ascontiguousarray(positions),
        np.ascontiguousarray(vec),
        np.array(complex.degrees, dtype=np.int64),
        complex.grid.h,
        np.array(complex.grid.cells, dtype=np.int64),
        nchunks,
    )
    return out.reshape(3, -1).ravel()


# ----------------------------------------------------------------------
# snapshots
# ----------------------------------------------------------------------

_SNAPSHOT_LAYOUT = (
    "int64 K | X[3K] | P[3K] | W[K]; all little-endian 64-bit; "
    "X and P are component-major (x_1..x_K, y_1..y_K, z_1..z_K)"
)


def write_particles(path, ensemble: ParticleEnsemble, meta: dict | None = None):
    """Binary marker dump plus plain-text sidecar (``<path>.meta``)."""
    path = str(path)
    with open(path, "wb") as f:
        np.array([ensemble.K], dtype="<i8").tofile(f)
        ensemble.flat(ensemble.X).astype("<f8").tofile(f)
        ensemble.flat(ensemble.P).astype("<f8").tofile(f)
        ensemble.W.astype("<f8").tofile(f)
    lines = [f"format = {_SNAPSHOT_LAYOUT}", f"K = {ensemble.K}"]
    lines.append("lengths = " + " ".join(f"{v!r}" for v in ensemble.lengths))
    for key, val in (meta or {}).items():
        lines.append(f"{key} = {val}")
    with open(path + ".meta", "w") as f:
        f.write("\n".join(lines) + "\n")


def read_particles(path, lengths) -> ParticleEnsemble:
    path = str(path)
    with open(path, "rb") as f:
        K = int(np.fromfile(f, dtype="<i8", count=1)[0])
        X = np.fromfile(f, dtype="<f8", count=3 * K).reshape(3, K).T
        P = np.fromfile(f, dtype="<f8", count=3 * K).reshape(3, K).T
        W = np.fromfile(f, dtype="<f8", count=K)
    return ParticleEnsemble(X, P, W, tuple(lengths))
