"""Desk-scale full-order solvers that generate snapshot ensembles.

Three cases are bundled:

* ``burgers1d`` -- periodic viscous Burgers, RK4 in time;
* ``ns2d_periodic`` -- doubly periodic incompressible Navier-Stokes;
* ``ns2d_obstacle`` -- channel flow past a square block.

The 2D solver is a fractional-step projection method: each SSP-RK3 stage
advances convection and effective-viscosity diffusion explicitly, then the
stage velocity is made discretely divergence-free by a pressure-Poisson
solve and a gradient correction.  The Poisson matrix is exactly
``div o grad`` of the grid module, so the corrected velocity is
divergence-free to solver precision.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Mapping

import numpy as np
import scipy.sparse.linalg as spla

from . import grid as gf
from .grid import BC, FluidConstants, ScalarBC, StructuredGrid

log = logging.getLogger(__name__)

CASES = ("burgers1d", "ns2d_periodic", "ns2d_obstacle")


class FomError(RuntimeError):
    """Full-order solver failure."""


class StabilityError(FomError):
    """Time step violates the explicit stability limit."""


class PoissonError(FomError):
    """Pressure solve did not converge."""


# ---------------------------------------------------------------- boundary sets
@dataclass(frozen=True)
class FlowBCs:
    """Boundary conditions of every flow variable."""

    velocity: tuple[ScalarBC, ...]
    p: ScalarBC
    nu_t: ScalarBC

    @classmethod
    def periodic(cls, ndim: int) -> "FlowBCs":
        per = ScalarBC.periodic()
        return cls((per,) * ndim, per, per)

    @classmethod
    def channel(cls, u_in: float) -> "FlowBCs":
        """Inflow west, outflow east, slip walls south/north, no-slip bodies."""
        zg = gf.ZERO_GRADIENT
        wall = BC("fixed", 0.0)
        u = ScalarBC(BC("fixed", u_in), zg, zg, zg, gf.NO_SLIP)
        v = ScalarBC(wall, zg, wall, wall, gf.NO_SLIP)
        p = ScalarBC(zg, BC("fixed", 0.0), zg, zg, zg)
        return cls((u, v), p, ScalarBC())

    def to_json(self) -> dict:
        names = "uvw"
        out = {names[d]: bc.to_json() for d, bc in enumerate(self.velocity)}
        out["p"] = self.p.to_json()
        out["nu_t"] = self.nu_t.to_json()
        return out

    @classmethod
    def from_json(cls, d: Mapping, ndim: int) -> "FlowBCs":
        vel = tuple(ScalarBC.parse(d["uvw"[k]]) for k in range(ndim))
        return cls(vel, ScalarBC.parse(d.get("p", {})), ScalarBC.parse(d.get("nu_t", {})))


# ---------------------------------------------------------------- config/state
@dataclass
class FomConfig:
    """Full-order run configuration.

    Times are in seconds, ``dt_snapshot`` is the ensemble interval and
    ``t_end`` the collection horizon (measured after ``spin_up``).
    """

    case: str
    grid: dict
    nu_m: float
    dt: float
    dt_snapshot: float
    t_end: float
    rho: float = 1.0
    u_in: float = 0.0
    smagorinsky_cs: float = 0.17
    spin_up: float = 0.0
    initial: dict = field(default_factory=dict)
    seed: int = 0
    convection: str = "skew"
    bcs: dict | None = None
    poisson_tol: float = 1e-8
    poisson_maxiter: int = 10_000

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}; expected one of {CASES}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        _steps(self.dt_snapshot, self.dt, "dt_snapshot")
        _steps(self.t_end, self.dt_snapshot, "t_end")
        _steps(self.spin_up, self.dt, "spin_up", allow_zero=True)

    def make_grid(self) -> StructuredGrid:
        return StructuredGrid.from_dict(self.grid)

    def flow_bcs(self, grid: StructuredGrid | None = None) -> FlowBCs:
        grid = grid or self.make_grid()
        if self.bcs is not None:
            return FlowBCs.from_json(self.bcs, grid.ndim)
        if self.case == "ns2d_obstacle":
            return FlowBCs.channel(self.u_in)
        return FlowBCs.periodic(grid.ndim)

    def constants(self) -> FluidConstants:
        return FluidConstants(self.rho, self.nu_m)

    @property
    def n_snapshots(self) -> int:
        return _steps(self.t_end, self.dt_snapshot, "t_end") + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "FomConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


def _steps(total: float, step: float, name: str, allow_zero: bool = False) -> int:
    n = total / step
    k = int(round(n))
    if abs(n - k) > 1e-9 * max(1.0, n) or k < (0 if allow_zero else 1):
        raise ValueError(f"{name}={total} must be a positive integer multiple of {step}")
    return k


@dataclass
class FomState:
    """Solver state: time [s], velocity ``(d, N)``, kinematic pressure and nu_t ``(N,)``."""

    time: float
    velocity: np.ndarray
    pressure: np.ndarray | None = None
    nu_t: np.ndarray | None = None

    def copy(self) -> "FomState":
        return FomState(self.time, self.velocity.copy(),
                        None if self.pressure is None else self.pressure.copy(),
                        None if self.nu_t is None else self.nu_t.copy())


@dataclass
class SnapshotEnsemble:
    """Uniformly spaced snapshots of every flow variable.

    ``data`` maps variable labels (``u``, ``v``, ``p``, ``nu_t``) to arrays of
    shape ``(M, N)``.
    """

    grid: StructuredGrid
    times: np.ndarray
    data: dict[str, np.ndarray]
    constants: FluidConstants
    bcs: FlowBCs
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        m = self.times.size
        if m < 1:
            raise ValueError("empty ensemble")
        if m > 1:
            steps = np.diff(self.times)
            if np.any(np.abs(steps - steps[0]) > 1e-9 * max(1.0, abs(steps[0]))) or steps[0] <= 0:
                raise ValueError("snapshot times must be uniformly spaced and increasing")
        for name, arr in self.data.items():
            if arr.shape != (m, self.grid.n_fluid):
                raise ValueError(f"variable {name!r} has shape {arr.shape}, expected {(m, self.grid.n_fluid)}")

    @property
    def n_snapshots(self) -> int:
        return self.times.size

    @property
    def dt_snapshot(self) -> float:
        return float(self.times[1] - self.times[0]) if self.n_snapshots > 1 else 0.0

    @property
    def velocity_labels(self) -> tuple[str, ...]:
        return tuple("uvw"[: self.grid.ndim])

    def velocity(self) -> np.ndarray:
        """Velocity snapshots stacked as ``(M, d, N)``."""
        return np.stack([self.data[c] for c in self.velocity_labels], axis=1)

    def variable(self, name: str) -> np.ndarray:
        """Snapshots of a scalar variable ``(M, N)`` or ``"velocity"`` as ``(M, d, N)``."""
        if name == "velocity":
            return self.velocity()
        if name not in self.data:
            raise KeyError(f"ensemble has no variable {name!r}")
        return self.data[name]

    def index_of(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"t={t} is not a snapshot time")
        return j


# ---------------------------------------------------------------- physics
def momentum_rhs(grid: StructuredGrid, vel: np.ndarray, nu, bcs: FlowBCs,
                 scheme: str = "skew", homogeneous: bool = False) -> np.ndarray:
    """Semi-discrete momentum right-hand side without pressure:
    ``-(u.grad)u + div(nu grad u)`` for every velocity component."""
    conv = gf.vector_convection(grid, vel, vel, bcs.velocity, scheme=scheme,
                                vel_homogeneous=homogeneous, f_homogeneous=homogeneous)
    diff = np.stack([gf.diffusion(grid, nu, vel[..., d, :], bcs.velocity[d], homogeneous)
                     for d in range(vel.shape[-2])], axis=-2)
    return diff - conv


def smagorinsky_nu_t(grid: StructuredGrid, vel: np.ndarray, bcs, cs: float = 0.17) -> np.ndarray:
    """Smagorinsky eddy viscosity ``(cs Delta)^2 sqrt(2 S_ij S_ij)``.

    ``bcs`` is the sequence of velocity-component boundary conditions (or a
    :class:`FlowBCs`).  ``Delta = sqrt(dx dy)`` in 2D and ``dx`` in 1D.
    """
    vbcs = bcs.velocity if isinstance(bcs, FlowBCs) else bcs
    vel = np.asarray(vel, dtype=float)
    d = grid.ndim
    grads = np.stack([gf.gradient(grid, vel[..., k, :], vbcs[k]) for k in range(d)], axis=-3)
    # grads[..., k, m, :] = d u_k / d x_m
    strain = 0.5 * (grads + np.swapaxes(grads, -3, -2))
    mag = np.sqrt(2.0 * np.sum(strain ** 2, axis=(-3, -2)))
    delta = math.sqrt(grid.dx * grid.dy) if d == 2 else grid.dx
    return (cs * delta) ** 2 * mag


def step_burgers(grid: StructuredGrid, state: FomState, dt: float, nu_e, bcs: FlowBCs | None = None) -> FomState:
    """One RK4 step of ``u_t = -u u_x + div(nu_e grad u)`` on a periodic 1D grid."""
    if grid.ndim != 1 or not grid.periodic_x:
        raise ValueError("step_burgers needs a periodic 1D grid")
    bcs = bcs or FlowBCs.periodic(1)
    u = state.velocity
    umax = float(np.max(np.abs(u))) if u.size else 0.0
    if dt * umax / grid.dx > 1.0:
        raise StabilityError(f"CFL number {dt * umax / grid.dx:.3g} exceeds 1")

    def rhs(w):
        return momentum_rhs(grid, w, nu_e, bcs)

    k1 = rhs(u)
    k2 = rhs(u + 0.5 * dt * k1)
    k3 = rhs(u + 0.5 * dt * k2)
    k4 = rhs(u + dt * k3)
    new = u + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    nu_t = state.nu_t if state.nu_t is not None else np.zeros(grid.n_fluid)
    return FomState(state.time + dt, new, None, nu_t)


class PressureSolver:
    """Solves ``div_h(grad p) = rhs`` with the grid module's discrete operators.

    The matrix is symmetric negative semi-definite whenever each boundary
    pairs a fixed-value velocity rule with a zero-gradient pressure rule (or
    vice versa).  If the pressure has a fixed value somewhere the system is
    factorised once (sparse LU); fully periodic systems are singular and are
    solved by conjugate gradients on the consistent right-hand side.
    """

    def __init__(self, grid: StructuredGrid, bcs: FlowBCs, tol: float = 1e-8, maxiter: int = 10_000):
        self.grid, self.bcs = grid, bcs
        self.tol, self.maxiter = tol, maxiter
        G = gf.gradient_matrices(grid, bcs.p)
        D = gf.divergence_matrices(grid, bcs.velocity)
        self.matrix = sum(Dk @ Gk for Dk, Gk in zip(D, G)).tocsc()
        has_dirichlet = any(bcs.p.side(s).kind == "fixed" for s in gf.SIDES)
        self._lu = spla.splu(-self.matrix) if has_dirichlet else None
        self._last = np.zeros(grid.n_fluid)
        self._null = None if has_dirichlet else _parity_null_space(grid)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._lu is not None:
            return -self._lu.solve(rhs)
        # singular case: drop the components along the null space so the system is consistent
        rhs = rhs - self._null.T @ (self._null @ rhs)
        norm = np.linalg.norm(rhs)
        if norm == 0.0:
            return np.zeros_like(rhs)
        sol, info = spla.cg(-self.matrix, -rhs, x0=self._last, rtol=self.tol, atol=0.0, maxiter=self.maxiter)
        if info != 0:
            res = np.linalg.norm(self.matrix @ sol - rhs) / norm
            raise PoissonError(f"pressure CG did not converge in {self.maxiter} iterations (relative residual {res:.3e})")
        self._last = sol
        return sol


def _parity_null_space(grid: StructuredGrid) -> np.ndarray:
    """Orthonormal basis of the kernel of the central gradient on a periodic grid.

    Central differences skip the adjacent cell, so on an even periodic grid
    each parity sub-lattice carries its own constant.
    """
    px = 2 if grid.periodic_x and grid.nx % 2 == 0 else 1
    py = 2 if grid.periodic_y and grid.ny % 2 == 0 else 1
    rows = []
    for a in range(px):
        for b in range(py):
            v = ((grid.ii % px == a) & (grid.jj % py == b)).astype(float)
            rows.append(v / np.linalg.norm(v))
    return np.array(rows)


class NavierStokes2D:
    """Fractional-step projection solver for the 2D cases."""

    def __init__(self, config: FomConfig):
        self.config = config
        self.grid = config.make_grid()
        if self.grid.ndim != 2:
            raise ValueError("NavierStokes2D needs a 2D grid")
        self.bcs = config.flow_bcs(self.grid)
        self.nu_m = config.nu_m
        self.cs = config.smagorinsky_cs
        self.scheme = config.convection
        self.poisson = PressureSolver(self.grid, self.bcs, config.poisson_tol, config.poisson_maxiter)

    def nu_t(self, vel: np.ndarray) -> np.ndarray:
        if self.cs == 0.0:
            return np.zeros(self.grid.n_fluid)
        return smagorinsky_nu_t(self.grid, vel, self.bcs.velocity, self.cs)

    def rhs(self, vel: np.ndarray) -> np.ndarray:
        nu = self.nu_m + self.nu_t(vel)
        return momentum_rhs(self.grid, vel, nu, self.bcs, self.scheme)

    def divergence(self, vel: np.ndarray, homogeneous: bool = False) -> np.ndarray:
        return gf.divergence(self.grid, vel, self.bcs.velocity, homogeneous)

    def grad_p(self, p: np.ndarray) -> np.ndarray:
        return gf.gradient(self.grid, p, self.bcs.p, homogeneous=True)

    def project(self, vel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Remove the discrete-divergent part; returns the corrected velocity and the potential."""
        phi = self.poisson.solve(self.divergence(vel))
        return vel - self.grad_p(phi), phi

    def pressure(self, vel: np.ndarray) -> np.ndarray:
        """Kinematic pressure consistent with ``vel``: ``div_h grad p = div_h F(vel)``."""
        return self.poisson.solve(self.divergence(self.rhs(vel), homogeneous=True))

    def step(self, state: FomState, dt: float) -> FomState:
        u0 = state.velocity
        umax = float(np.max(np.abs(u0)))
        cfl = dt * umax * (1 / self.grid.dx + 1 / self.grid.dy)
        if cfl > 1.5 or not np.isfinite(cfl):
            raise StabilityError(f"CFL number {cfl:.3g} exceeds 1.5")
        u1, _ = self.project(u0 + dt * self.rhs(u0))
        u2, _ = self.project(0.75 * u0 + 0.25 * (u1 + dt * self.rhs(u1)))
        u3, phi = self.project(u0 / 3.0 + 2.0 / 3.0 * (u2 + dt * self.rhs(u2)))
        return FomState(state.time + dt, u3, phi * 1.5 / dt, self.nu_t(u3))


def step_ns2d(state: FomState, dt: float, config: FomConfig | NavierStokes2D) -> FomState:
    """One projection step of the 2D solver (convenience wrapper)."""
    solver = config if isinstance(config, NavierStokes2D) else NavierStokes2D(config)
    return solver.step(state, dt)


# ---------------------------------------------------------------- initial data
def initial_state(config: FomConfig, solver: NavierStokes2D | None = None) -> FomState:
    grid = solver.grid if solver else config.make_grid()
    rng = np.random.default_rng(config.seed)
    init = dict(config.initial)
    kind = init.get("kind")
    if config.case == "burgers1d":
        x = grid.centres[0]
        u = np.zeros(grid.n_fluid)
        for k, amp, phase in init.get("modes", [[1, 1.0, 0.0]]):
            u += amp * np.sin(k * x + phase)
        noise = init.get("noise", 0.0)
        if noise:
            u += noise * rng.standard_normal(grid.n_fluid)
        return FomState(0.0, u[None, :], None, np.zeros(grid.n_fluid))

    if config.case == "ns2d_periodic" and kind in (None, "taylor_green"):
        x, y = grid.centres
        amp = init.get("amplitude", 1.0)
        vel = amp * np.stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)])
    elif config.case == "ns2d_periodic" and kind == "random":
        vel = _random_solenoidal(grid, rng, init.get("amplitude", 1.0), init.get("k_max", 4))
    elif config.case == "ns2d_obstacle":
        vel = np.zeros((2, grid.n_fluid))
        vel[0] = config.u_in
        pert = init.get("perturbation", 0.1)
        if pert:
            vel[1] = pert * config.u_in * rng.standard_normal(grid.n_fluid)
    else:
        raise ValueError(f"unsupported initial condition {init!r} for case {config.case!r}")
    if solver is not None:
        vel, _ = solver.project(vel)
        return FomState(0.0, vel, solver.pressure(vel), solver.nu_t(vel))
    return FomState(0.0, vel, None, None)


def _random_solenoidal(grid, rng, amplitude, k_max):
    x, y = grid.centres
    lx, ly = grid.nx * grid.dx, grid.ny * grid.dy
    psi = np.zeros(grid.n_fluid)
    for kx in range(0, k_max + 1):
        for ky in range(-k_max, k_max + 1):
            if kx == 0 and ky <= 0:
                continue
            k2 = kx * kx + ky * ky
            if k2 > k_max * k_max:
                continue
            a, ph = rng.standard_normal(), rng.uniform(0, 2 * np.pi)
            psi += a / k2 * np.cos(2 * np.pi * (kx * x / lx + ky * y / ly) + ph)
    g = gf.gradient(grid, psi, ScalarBC.periodic())
    vel = np.stack([g[1], -g[0]])
    return amplitude * vel / np.sqrt(np.mean(vel ** 2))


# ---------------------------------------------------------------- driver
def run_and_collect(config: FomConfig, progress: bool = False) -> SnapshotEnsemble:
    """Run the configured case and record all variables every ``dt_snapshot``."""
    grid = config.make_grid()
    bcs = config.flow_bcs(grid)
    n_snap = config.n_snapshots
    per_snap = _steps(config.dt_snapshot, config.dt, "dt_snapshot")
    n_spin = _steps(config.spin_up, config.dt, "spin_up", allow_zero=True)
    dt = config.dt

    if config.case == "burgers1d":
        names = ("u", "nu_t")
        state = initial_state(config)
        solver = None

        def advance(s):
            return step_burgers(grid, s, dt, config.nu_m, bcs)

        def record(s):
            return {"u": s.velocity[0].copy(), "nu_t": np.zeros(grid.n_fluid)}
    else:
        names = ("u", "v", "p", "nu_t")
        solver = NavierStokes2D(config)
        state = initial_state(config, solver)

        def advance(s):
            return solver.step(s, dt)

        def record(s):
            return {"u": s.velocity[0].copy(), "v": s.velocity[1].copy(),
                    "p": solver.pressure(s.velocity), "nu_t": solver.nu_t(s.velocity)}

    def guarded(s):
        try:
            new = advance(s)
        except FomError as exc:
            raise type(exc)(f"{exc} (t={s.time:.6g} s)") from exc
        if not np.all(np.isfinite(new.velocity)):
            raise FomError(f"non-finite velocity at t={new.time:.6g} s")
        return new

    for k in range(n_spin):
        state = guarded(state)
        if progress and k % 500 == 0:
            log.info("spin-up t=%.3f", state.time)
    t0 = state.time
    data = {name: np.empty((n_snap, grid.n_fluid)) for name in names}
    for j in range(n_snap):
        if j:
            for _ in range(per_snap):
                state = guarded(state)
        for name, val in record(state).items():
            data[name][j] = val
        if progress and j % 50 == 0:
            log.info("snapshot %d/%d t=%.3f", j + 1, n_snap, state.time - t0)
    times = np.arange(n_snap) * config.dt_snapshot
    meta = {"config": config.to_dict(), "spin_up": config.spin_up, "case": config.case}
    return SnapshotEnsemble(grid, times, data, config.constants(), bcs, meta)
