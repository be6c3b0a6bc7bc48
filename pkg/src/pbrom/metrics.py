"""Evaluation metrics: per-mode RMSE, body forces and field deviations."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Field, GridError, StructuredGrid
from .pod import ModalTrajectory


class MetricsError(ValueError):
    pass


@dataclass
class RmseReport:
    """Per-mode RMSE for each variable, over ``n_t`` aligned samples."""

    variant: str
    rmse: dict[str, np.ndarray]
    n_t: int

    def __post_init__(self):
        if self.n_t < 1:
            raise MetricsError("RMSE needs at least one sample")

    def total(self, variable: str) -> float:
        return float(np.sum(self.rmse[variable]))

    def merged(self, other: "RmseReport") -> "RmseReport":
        if other.n_t != self.n_t:
            raise MetricsError("cannot merge reports over different sample counts")
        return RmseReport(self.variant, {**self.rmse, **other.rmse}, self.n_t)


def align(pred_times: np.ndarray, exact_times: np.ndarray) -> np.ndarray:
    """Index of the nearest exact sample for every predicted time.

    A mismatch larger than half the exact sample spacing is an error.
    """
    pred_times = np.asarray(pred_times, dtype=float)
    exact_times = np.asarray(exact_times, dtype=float)
    spacing = float(exact_times[1] - exact_times[0]) if exact_times.size > 1 else 0.0
    idx = np.clip(np.searchsorted(exact_times, pred_times), 0, exact_times.size - 1)
    lower = np.clip(idx - 1, 0, exact_times.size - 1)
    pick = np.where(np.abs(exact_times[lower] - pred_times) <= np.abs(exact_times[idx] - pred_times), lower, idx)
    gap = np.abs(exact_times[pick] - pred_times)
    tol = 0.5 * spacing * (1 + 1e-9) if spacing else 1e-12 * max(1.0, float(np.max(np.abs(pred_times))))
    if np.any(gap > tol):
        worst = int(np.argmax(gap))
        raise MetricsError(f"predicted time {pred_times[worst]:.6g} has no snapshot within half a spacing")
    return pick


def rmse_per_mode(predicted: ModalTrajectory, exact: ModalTrajectory, variant: str = "") -> RmseReport:
    """``sqrt(mean_j (a_P - a_E)^2)`` per mode, exact samples matched to predicted times."""
    if predicted.rank != exact.rank:
        raise MetricsError(f"rank mismatch: predicted {predicted.rank}, exact {exact.rank}")
    pick = align(predicted.times, exact.times)
    diff = predicted.coefficients - exact.coefficients[pick]
    rmse = np.sqrt(np.mean(diff ** 2, axis=0))
    return RmseReport(variant, {predicted.variable: rmse}, predicted.times.size)


# ---------------------------------------------------------------- forces
@dataclass
class ForceSeries:
    """Pressure and viscous body force per unit depth at each time."""

    times: np.ndarray
    pressure: np.ndarray  # (n, 2)
    viscous: np.ndarray
    p_ref: float = 0.0
    label: str = "body"

    @property
    def total(self) -> np.ndarray:
        return self.pressure + self.viscous

    def rows(self):
        for t, fp, fv in zip(self.times, self.pressure, self.viscous):
            yield [t, *fp, *fv, *(fp + fv)]


FORCE_HEADER = ["time", "Fp_x", "Fp_y", "Fv_x", "Fv_y", "F_x", "F_y"]


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, Field) else np.asarray(f, dtype=float)


def compute_forces(pressure, velocity, nu_e, grid: StructuredGrid, body: str = "body",
                   rho: float = 1.0, p_ref: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Pressure and viscous force on a solid body.

    ``F_p = rho sum_f s_f (p_f - p_ref)`` with ``s_f`` the area vector from
    the fluid into the body and ``p_f`` the adjacent cell pressure
    (kinematic).  ``F_v = rho sum_f s_f . (nu_E R_f)`` where ``R_f`` is minus
    the deviatoric rate-of-strain tensor, from one-sided gradients between
    the no-slip face and the adjacent cell centre.
    """
    faces = grid.solid_faces(body)
    p = _values(pressure)
    vel = np.stack([_values(c) for c in velocity]) if isinstance(velocity, (tuple, list)) else np.asarray(velocity)
    nu = np.broadcast_to(_values(nu_e), (grid.n_fluid,))
    d = grid.ndim
    fp = np.zeros(d)
    fv = np.zeros(d)
    for face in faces:
        s = np.asarray(face.area[:d], dtype=float)
        c = face.cell
        fp += s * (p[c] - p_ref)
        area = float(np.linalg.norm(s))
        n = s / area
        h = grid.dx if abs(n[0]) > 0 else grid.dy
        # du_k/dx_m = -n_m u_k / (h/2): wall value zero, centre half a cell into the fluid
        G = -np.outer(vel[:, c], n) / (0.5 * h)
        S = G + G.T
        R = -(S - np.trace(S) / d * np.eye(d))
        fv += s @ (nu[c] * R)
    return rho * fp, rho * fv


def force_series(times, pressures, velocities, nu_e, grid, body="body", rho=1.0, p_ref=0.0) -> ForceSeries:
    """Forces for a stack of fields; ``nu_e`` is one field/scalar or one per time."""
    nu_e = np.asarray(nu_e, dtype=float)
    per_time = nu_e.ndim == 2
    fps, fvs = [], []
    for j in range(len(times)):
        fp, fv = compute_forces(pressures[j], velocities[j], nu_e[j] if per_time else nu_e, grid, body, rho, p_ref)
        fps.append(fp)
        fvs.append(fv)
    return ForceSeries(np.asarray(times, dtype=float), np.array(fps), np.array(fvs), p_ref, body)


# ---------------------------------------------------------------- deviations
@dataclass
class Deviation:
    values: np.ndarray
    stats: dict = field(default_factory=dict)


def field_deviation(reconstructed, exact, scale: float, grid: StructuredGrid | None = None) -> Deviation:
    """Normalised deviation ``(reconstructed - exact) / scale`` with max/mean/rms over fluid cells.

    Vector fields ``(d, N)`` are reduced to their pointwise magnitude for the
    statistics.  Volume weighting is used for the mean and rms.
    """
    if isinstance(reconstructed, Field) and isinstance(exact, Field) and reconstructed.grid != exact.grid:
        raise GridError("fields live on different grids")
    grid = grid or (exact.grid if isinstance(exact, Field) else None)
    r, e = _values(reconstructed), _values(exact)
    if r.shape != e.shape:
        raise GridError(f"field shapes differ: {r.shape} vs {e.shape}")
    if not scale > 0:
        raise MetricsError("normalisation scale must be positive")
    dev = (r - e) / scale
    mag = np.sqrt(np.sum(dev ** 2, axis=0)) if dev.ndim == 2 else np.abs(dev)
    w = grid.cell_volumes if grid is not None else np.ones(mag.size)
    stats = {
        "max": float(np.max(mag)),
        "mean": float(np.sum(w * mag) / np.sum(w)),
        "rms": float(np.sqrt(np.sum(w * mag ** 2) / np.sum(w))),
    }
    return Deviation(dev, stats)
