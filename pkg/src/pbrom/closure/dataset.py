"""Residual training data for the closures: ``target = (u_t, phi) - R(a)``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from ..galerkin import GalerkinOperators, ViscosityModelSpec, eval_rhs
from ..pod import PodBasis, project_coefficients


class DatasetError(ValueError):
    pass


DERIVATIVES = ("spline", "central2")


def time_derivative(a: np.ndarray, times: np.ndarray, scheme: str = "spline") -> np.ndarray:
    """Time derivative of a sampled trajectory ``(M, r)``.

    ``spline`` differentiates a not-a-knot cubic spline through the samples
    (fourth order at the knots); ``central2`` is second-order central
    differencing with one-sided second-order ends.
    """
    if scheme == "spline":
        return CubicSpline(times, a, axis=0).derivative()(times)
    if scheme == "central2":
        return np.gradient(a, times, axis=0, edge_order=2)
    raise DatasetError(f"unknown derivative scheme {scheme!r}; expected one of {DERIVATIVES}")


@dataclass
class ResidualDataset:
    """Inputs ``R`` and targets ``R~``, both ``(r, M)`` with one column per snapshot."""

    times: np.ndarray
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.inputs.shape != self.targets.shape:
            raise DatasetError("inputs and targets must have the same shape")
        if self.inputs.shape[1] != self.times.size:
            raise DatasetError("one column per snapshot time required")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise DatasetError("columns must be time ordered")

    @property
    def n_features(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[1]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def build_residual_dataset(velocity: np.ndarray, times: np.ndarray, u_basis: PodBasis,
                           ops: GalerkinOperators, visc: ViscosityModelSpec,
                           derivative: str = "spline") -> ResidualDataset:
    """Residual dataset from velocity snapshots ``(M, d, N)``.

    Coefficients are projected and differentiated in time (see
    :func:`time_derivative`); the projected right-hand side, with pressure
    coefficients from the reduced Poisson solve, is subtracted.
    """
    times = np.asarray(times, dtype=float)
    if times.size < 3:
        raise DatasetError("time differentiation needs at least three snapshots")
    a = project_coefficients(velocity, u_basis)
    dadt = time_derivative(a, times, derivative)
    R = np.empty_like(a)
    for j, t in enumerate(times):
        s = visc.a1(t)
        R[j] = eval_rhs(ops, a[j], ops.solve_pressure(a[j], s), t, visc)
    return ResidualDataset(times, R.T.copy(), (dadt - R).T.copy())
