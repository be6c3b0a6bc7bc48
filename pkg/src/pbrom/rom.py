"""Reduced-model variants and their time integration.

A variant combines a turbulent-viscosity model with an optional closure:

=======  =========  =======
variant  viscosity  closure
=======  =========  =======
A        1          none
A1       1          ELM
B        2          none
C        3          none
D        2          ELM
E        3          ELM
F        2          NARX
=======  =========  =======
"""
from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np

from .closure import ElmModel, NarxModel, elm_predict, narx_predict
from .fom import SnapshotEnsemble
from .galerkin import GalerkinOperators, ReducedSystem, ViscosityModelSpec
from .pod import PodBasis, project_coefficients

VARIANTS = {
    "A": (1, None),
    "A1": (1, "elm"),
    "B": (2, None),
    "C": (3, None),
    "D": (2, "elm"),
    "E": (3, "elm"),
    "F": (2, "narx"),
}
DIVERGENCE_FACTOR = 1e6
SUBSTEPS = 20


class RomError(ValueError):
    pass


@dataclass
class RomModel:
    """A validated reduced model ready for integration."""

    variant: str
    operators: GalerkinOperators
    viscosity: ViscosityModelSpec
    closure: ElmModel | NarxModel | None = None
    _system: ReducedSystem | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise RomError(f"unknown variant {self.variant!r}; expected one of {sorted(VARIANTS)}")
        visc_variant, kind = VARIANTS[self.variant]
        if self.viscosity.variant != visc_variant:
            raise RomError(f"variant {self.variant} needs viscosity model {visc_variant}, "
                           f"got {self.viscosity.variant}")
        if self.operators.viscosity_variant != visc_variant:
            raise RomError(f"operators were built for viscosity model {self.operators.viscosity_variant}, "
                           f"variant {self.variant} needs {visc_variant}")
        got = None if self.closure is None else self.closure.kind
        if got != kind:
            raise RomError(f"variant {self.variant} needs closure {kind or 'none'}, got {got or 'none'}")
        if self.closure is not None and self.closure.n_features != self.operators.rank:
            raise RomError(f"closure has {self.closure.n_features} features, operators rank {self.operators.rank}")

    @property
    def rank(self) -> int:
        return self.operators.rank

    @property
    def pressure_rank(self) -> int:
        return self.operators.pressure_rank

    @property
    def system(self) -> ReducedSystem:
        if self._system is None:
            self._system = self.operators.folded()
        return self._system

    def a1(self, t: float) -> float:
        return self.viscosity.a1(t) if self.system.time_dependent else 0.0

    def resolved_rhs(self, a: np.ndarray, t: float) -> np.ndarray:
        """Galerkin right-hand side with the pressure eliminated."""
        system = self.system
        return system.rhs(a, self.viscosity.a1(t)) if system.time_dependent else system.rhs(a)


def assemble_model(variant: str, operators: GalerkinOperators, viscosity: ViscosityModelSpec,
                   closure: ElmModel | NarxModel | None = None, closure_meta: dict | None = None) -> RomModel:
    """Validate artifacts against each other and build a :class:`RomModel`.

    ``closure_meta`` carries the case hash and rank stored with a closure
    file; they must match the operator bundle.
    """
    if closure_meta is not None:
        want = operators.meta.get("case_hash")
        got = closure_meta.get("case_hash")
        if want is not None and got is not None and want != got:
            raise RomError(f"case hash mismatch: operators {want[:12]}, closure {got[:12]}")
        if "rank" in closure_meta and int(closure_meta["rank"]) != operators.rank:
            raise RomError(f"closure rank {closure_meta['rank']} differs from operator rank {operators.rank}")
    return RomModel(variant, operators, viscosity, closure)


def spline_a1vt(spec: ViscosityModelSpec, t: float) -> float:
    """Spline value of the first turbulent-viscosity coefficient at time ``t``."""
    if spec.a1_times is None or len(spec.a1_times) == 0:
        raise RomError("no a1 knots: the viscosity model is not the mean-plus-mode-1 variant")
    return float(spec.spline(t))


@dataclass
class RomTrajectory:
    """Output-time history of a reduced simulation.

    ``diverged`` marks a run stopped early; ``failure_time`` is the first
    time the state left the admissible range and the arrays hold the
    outputs recorded before it.
    """

    variant: str
    times: np.ndarray
    a_u: np.ndarray
    a_p: np.ndarray
    closure: np.ndarray
    step_cost: float
    dt: float
    diverged: bool = False
    failure_time: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return self.a_u.shape[1]


def _closure_stage(model: RomModel):
    if isinstance(model.closure, ElmModel):
        elm = model.closure

        def f(a, t):
            r = model.resolved_rhs(a, t)
            return r + elm_predict(elm, r)
        return f
    return model.resolved_rhs


def integrate(model: RomModel, a0: np.ndarray, t_span: tuple[float, float], dt: float | None = None,
              output_dt: float | None = None) -> RomTrajectory:
    """Classical RK4 on ``da/dt = R(a) + R~(R(a))``.

    The ELM closure is evaluated at every stage.  The NARX closure is held
    fixed over each closure interval (its training sample spacing) and
    updated at the start of the interval from the resolved right-hand side
    there, feeding back its previous output.  Outputs are recorded every
    ``output_dt`` (default: the operators' snapshot spacing); ``dt``
    defaults to ``output_dt / 20``.
    """
    a0 = np.asarray(a0, dtype=float)
    if a0.shape != (model.rank,):
        raise RomError(f"initial state has length {a0.size}, model rank is {model.rank}")
    t0, t1 = map(float, t_span)
    if output_dt is None:
        output_dt = float(model.operators.meta.get("dt_snapshot", 0.0)) or (t1 - t0)
    if dt is None:
        dt = output_dt / SUBSTEPS
    if not dt > 0 or not output_dt > 0 or not t1 > t0:
        raise RomError("dt, output_dt and the time span must be positive")
    per_out = int(round(output_dt / dt))
    if per_out < 1 or abs(per_out * dt - output_dt) > 1e-9 * output_dt:
        raise RomError(f"output interval {output_dt} is not a multiple of dt {dt}")
    n_out = int(round((t1 - t0) / output_dt))
    if abs(n_out * output_dt - (t1 - t0)) > 1e-9 * (t1 - t0):
        raise RomError(f"time span {t1 - t0} is not a multiple of the output interval {output_dt}")

    narx = model.closure if isinstance(model.closure, NarxModel) else None
    per_closure = 1
    if narx is not None:
        per_closure = int(round(narx.sample_dt / dt))
        if per_closure < 1 or abs(per_closure * dt - narx.sample_dt) > 1e-9 * narx.sample_dt:
            raise RomError(f"NARX sample interval {narx.sample_dt} is not a multiple of dt {dt}")
    f = _closure_stage(model)
    r = model.rank
    limit = DIVERGENCE_FACTOR * max(float(np.linalg.norm(a0)), 1e-300)

    times = t0 + output_dt * np.arange(n_out + 1)
    A = np.full((n_out + 1, r), np.nan)
    C = np.zeros((n_out + 1, r))
    AP = np.full((n_out + 1, model.pressure_rank), np.nan)

    a = a0.copy()
    held = np.zeros(r)
    r_prev = rt_prev = None

    def record(k, t, a):
        A[k] = a
        AP[k] = model.operators.solve_pressure(a, model.a1(t))
        if narx is not None:
            C[k] = held
        elif model.closure is not None:
            C[k] = elm_predict(model.closure, model.resolved_rhs(a, t))

    def narx_update(a, t):
        nonlocal held, r_prev, rt_prev
        r_now = model.resolved_rhs(a, t)
        if r_prev is None:
            r_prev, rt_prev = r_now, np.zeros(r)
        held = narx_predict(narx, r_now, r_prev, rt_prev)
        r_prev, rt_prev = r_now, held

    if narx is not None:
        narx_update(a, t0)
    record(0, t0, a)
    diverged, failure = False, None
    n_steps = n_out * per_out
    start = _time.perf_counter()
    k = 0
    for n in range(n_steps):
        t = t0 + n * dt
        if narx is not None:
            if n and n % per_closure == 0:
                narx_update(a, t)
            k1 = f(a, t) + held
            k2 = f(a + 0.5 * dt * k1, t + 0.5 * dt) + held
            k3 = f(a + 0.5 * dt * k2, t + 0.5 * dt) + held
            k4 = f(a + dt * k3, t + dt) + held
        else:
            k1 = f(a, t)
            k2 = f(a + 0.5 * dt * k1, t + 0.5 * dt)
            k3 = f(a + 0.5 * dt * k2, t + 0.5 * dt)
            k4 = f(a + dt * k3, t + dt)
        a = a + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        # a NaN makes the comparison false, so one reduction covers both cases
        if not np.abs(a).max() <= limit:
            diverged, failure = True, t + dt
            n_steps = n + 1
            break
        if (n + 1) % per_out == 0:
            k = (n + 1) // per_out
            record(k, times[k], a)
    elapsed = _time.perf_counter() - start
    keep = k + 1
    meta = {"substeps": per_out}
    if model.viscosity.variant == 3 and model.viscosity.a1_times is not None:
        ext = model.viscosity.spline.extrapolated(np.array([t0, t1]))
        meta["a1_extrapolated"] = bool(ext.any())
        meta["a1_period"] = model.viscosity.spline.period
    return RomTrajectory(model.variant, times[:keep], A[:keep], AP[:keep], C[:keep],
                         elapsed / max(n_steps, 1), dt, diverged, failure, meta)


def initial_coefficients(ensemble: SnapshotEnsemble, basis: PodBasis, t0: float) -> np.ndarray:
    """Projection of the snapshot at ``t0`` onto the velocity basis."""
    j = ensemble.index_of(t0)
    return project_coefficients(ensemble.velocity()[j], basis)
