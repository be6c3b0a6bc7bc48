"""Proper orthogonal decomposition by the method of snapshots."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import GridError, StructuredGrid

EIG_CUTOFF = 1e-12


class PodError(ValueError):
    pass


@dataclass
class BoundaryLift:
    """Boundary functions ``g_i`` (``(q, ..., N)``) and their values ``b_i``.

    The bundled cases absorb steady boundary data into the mean field, so the
    lift is empty there; it is kept so that time-varying boundary values can
    be added without touching the reconstruction code.
    """

    functions: np.ndarray
    values: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.functions) != len(self.values):
            raise PodError("one boundary value per boundary function")
        if self.labels and len(self.labels) != len(self.values):
            raise PodError("one label per boundary function")

    def field(self) -> np.ndarray:
        return np.tensordot(self.values, self.functions, axes=1)


@dataclass
class PodBasis:
    """Mean, orthonormal modes and eigenvalue spectrum of one variable.

    ``modes`` has shape ``(r, N)`` for scalars or ``(r, d, N)`` for vector
    variables; ``eigenvalues`` holds the full sorted spectrum (length M).
    """

    variable: str
    mean: np.ndarray
    modes: np.ndarray
    eigenvalues: np.ndarray
    grid: StructuredGrid = field(repr=False)
    lift: BoundaryLift | None = None

    @property
    def rank(self) -> int:
        return int(self.modes.shape[0])

    @property
    def weights(self) -> np.ndarray:
        return self.grid.cell_volumes

    def truncate(self, rank: int) -> "PodBasis":
        if rank < 0 or rank > self.rank:
            raise PodError(f"rank {rank} not in [0, {self.rank}]")
        return PodBasis(self.variable, self.mean, self.modes[:rank], self.eigenvalues, self.grid, self.lift)

    def gram(self) -> np.ndarray:
        m = self.modes.reshape(self.rank, -1)
        w = np.broadcast_to(self.weights, self.modes.shape[1:]).reshape(-1)
        return (m * w) @ m.T


@dataclass
class ModalTrajectory:
    """Coefficients ``a_i(t_j)`` stored as ``(n_times, r)``."""

    variable: str
    times: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.coefficients = np.atleast_2d(np.asarray(self.coefficients, dtype=float))
        if self.coefficients.shape[0] != self.times.size:
            raise PodError("one coefficient row per time required")

    @property
    def rank(self) -> int:
        return self.coefficients.shape[1]


def _weighted(grid: StructuredGrid, shape) -> np.ndarray:
    return np.broadcast_to(grid.cell_volumes, shape).reshape(-1)


def compute_mean(snapshots: np.ndarray) -> np.ndarray:
    """Temporal mean of an ``(M, ...)`` snapshot stack."""
    snapshots = np.asarray(snapshots, dtype=float)
    if snapshots.shape[0] < 1:
        raise PodError("cannot average an empty ensemble")
    return snapshots.mean(axis=0)


def pod_modes(snapshots: np.ndarray, grid: StructuredGrid, variable: str = "u",
              max_rank: int | None = None) -> PodBasis:
    """POD of a snapshot stack ``(M, N)`` or ``(M, d, N)``.

    The temporal correlation matrix ``C_jk = (w'_j, w'_k) / M`` of the
    mean-subtracted snapshots is diagonalised; modes are the normalised
    snapshot combinations.  Modes whose eigenvalue is below ``1e-12`` of the
    largest are discarded.  A final weighted QR pass restores orthonormality
    lost to round-off in low-energy modes, and each mode's sign is fixed so
    that its largest-magnitude entry is positive.
    """
    X = np.asarray(snapshots, dtype=float)
    m = X.shape[0]
    if m < 2:
        raise PodError("POD needs at least two snapshots")
    if X.shape[-1] != grid.n_fluid:
        raise GridError("snapshot size does not match the grid")
    mean = X.mean(axis=0)
    fluct = (X - mean).reshape(m, -1)
    w = _weighted(grid, X.shape[1:])
    corr = (fluct * w) @ fluct.T / m
    corr = 0.5 * (corr + corr.T)
    lam, vec = np.linalg.eigh(corr)
    order = np.argsort(lam)[::-1]
    lam, vec = lam[order], vec[:, order]
    lam1 = lam[0] if lam[0] > 0 else 0.0
    lam = np.where(lam < 0, 0.0, lam)
    keep = int(np.sum(lam > EIG_CUTOFF * lam1)) if lam1 > 0 else 0
    keep = min(keep, m - 1)
    if max_rank is not None:
        keep = min(keep, int(max_rank))
    if keep:
        modes = (vec[:, :keep].T @ fluct) / np.sqrt(m * lam[:keep])[:, None]
        sw = np.sqrt(w)
        q, r = np.linalg.qr((modes * sw).T)
        q = q * np.sign(np.diag(r))
        modes = (q / sw[:, None]).T
        big = np.argmax(np.abs(modes), axis=1)
        modes *= np.sign(modes[np.arange(keep), big])[:, None]
    else:
        modes = np.zeros((0, fluct.shape[1]))
    return PodBasis(variable, mean, modes.reshape((keep,) + X.shape[1:]), lam, grid)


def project_coefficients(values: np.ndarray, basis: PodBasis) -> np.ndarray:
    """``a_i = (values - mean, phi_i)``; accepts a single field or a stack."""
    values = np.asarray(values, dtype=float)
    if values.shape[-basis.mean.ndim:] != basis.mean.shape:
        raise GridError(f"field shape {values.shape} does not match basis {basis.mean.shape}")
    lead = values.shape[: values.ndim - basis.mean.ndim]
    fl = (values - basis.mean).reshape(lead + (-1,))
    w = _weighted(basis.grid, basis.mean.shape)
    return (fl * w) @ basis.modes.reshape(basis.rank, -1).T


def reconstruct(basis: PodBasis, coefficients: np.ndarray) -> np.ndarray:
    """``mean + sum_i a_i phi_i`` (plus the boundary lift when present)."""
    a = np.asarray(coefficients, dtype=float)
    if a.shape[-1] != basis.rank:
        raise PodError(f"expected {basis.rank} coefficients, got {a.shape[-1]}")
    out = basis.mean + np.tensordot(a, basis.modes, axes=(-1, 0))
    if basis.lift is not None:
        out = out + basis.lift.field()
    return out


def project_trajectory(snapshots: np.ndarray, times: np.ndarray, basis: PodBasis) -> ModalTrajectory:
    return ModalTrajectory(basis.variable, times, project_coefficients(snapshots, basis))


def energy_fraction(eigenvalues: np.ndarray) -> np.ndarray:
    lam = np.asarray(eigenvalues, dtype=float)
    total = lam.sum()
    return np.cumsum(lam) / total if total > 0 else np.ones_like(lam)


def choose_rank(basis: PodBasis, energy: float | None = None, rank: int | None = None) -> int:
    """Smallest rank reaching the energy fraction, or an explicit rank clamped to the available modes."""
    if (energy is None) == (rank is None):
        raise PodError("give exactly one of energy or rank")
    if rank is not None:
        if rank < 0:
            raise PodError("rank must be non-negative")
        return min(int(rank), basis.rank)
    if not 0.0 < energy <= 1.0:
        raise PodError(f"energy fraction {energy} outside (0, 1]")
    if basis.rank == 0:
        return 0
    if energy == 1.0:
        return basis.rank
    frac = energy_fraction(basis.eigenvalues)
    r = int(np.searchsorted(frac, energy - 1e-15) + 1)
    return min(r, basis.rank)
