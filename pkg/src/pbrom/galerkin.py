"""Galerkin projection of the momentum and pressure-Poisson equations onto POD bases.

With ``u = u_mean + sum_j a_j phi_j`` and ``p = p_mean + sum_l b_l psi_l``
the projected momentum equation reads::

    da_i/dt = c_i + L_ij a_j + Q_ijk a_j a_k + P_il b_l + s(t) (c1_i + L1_ij a_j)

where ``s(t)`` is the online coefficient of the first turbulent-viscosity
mode (zero unless the mean-plus-mode-1 viscosity model is used).  The
pressure coefficients come from the projected Poisson equation::

    A_lm b_m = cp_l + Lp_lj a_j + Qp_ljk a_j a_k + s(t) (cp1_l + Lp1_lj a_j)

Every spatial operator is the grid module's discrete operator, so the
tensors reproduce a direct grid evaluation to round-off.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import grid as gf
from .fom import FlowBCs, momentum_rhs
from .grid import StructuredGrid
from .pod import PodBasis, pod_modes
from .spline import KnotSpline

VISCOSITY_VARIANTS = {
    1: "spatio_temporal_mean",
    2: "temporal_mean",
    3: "temporal_mean_plus_mode1",
}


class GalerkinError(ValueError):
    pass


class DegenerateViscosityError(GalerkinError):
    """The mean-plus-mode-1 model was requested on fluctuation-free data."""


@dataclass
class ViscosityModelSpec:
    """Effective viscosity ``nu_E = nu_M + model`` used by the reduced model.

    variant 1: space-time mean scalar ``nu_bar``; variant 2: temporal-mean
    field ``nu_mean``; variant 3: ``nu_mean + a1(t) * mode``, with ``a1``
    interpolated by a natural cubic spline through its training values.
    """

    variant: int
    nu_m: float
    nu_bar: float = 0.0
    nu_mean: np.ndarray | None = None
    mode: np.ndarray | None = None
    a1_times: np.ndarray | None = None
    a1_values: np.ndarray | None = None
    degenerate: bool = False
    min_training_nu_e: float = float("nan")
    _spline: KnotSpline | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.variant not in VISCOSITY_VARIANTS:
            raise GalerkinError(f"unknown viscosity variant {self.variant!r}")
        if self.variant >= 2 and self.nu_mean is None:
            raise GalerkinError("variants 2 and 3 need the temporal-mean field")
        if self.variant == 3 and (self.mode is None or self.a1_times is None):
            raise GalerkinError("variant 3 needs the first viscosity mode and its coefficients")

    @property
    def name(self) -> str:
        return VISCOSITY_VARIANTS[self.variant]

    @property
    def spline(self) -> KnotSpline | None:
        if self.variant != 3:
            return None
        if self._spline is None:
            self._spline = KnotSpline(self.a1_times, self.a1_values)
        return self._spline

    def a1(self, t: float) -> float:
        """Online coefficient of the viscosity mode (0 unless variant 3)."""
        return 0.0 if self.variant != 3 else float(self.spline(t))

    def static(self):
        """Time-independent part of ``nu_E``: a scalar (variant 1) or a field."""
        if self.variant == 1:
            return self.nu_m + self.nu_bar
        if np.all(self.nu_mean == self.nu_mean[0]):
            # uniform field: same arithmetic path as the scalar model
            return self.nu_m + float(self.nu_mean[0])
        return self.nu_m + self.nu_mean

    def evaluate(self, t: float):
        nu = self.static()
        if self.variant == 3:
            nu = nu + self.a1(t) * self.mode
        return nu


def build_viscosity_model(nu_t: np.ndarray, times: np.ndarray, grid: StructuredGrid,
                          nu_m: float, variant: int, strict: bool = False) -> ViscosityModelSpec:
    """Build a turbulent-viscosity model from an ``(M, N)`` nu_t ensemble.

    With ``strict=True`` a variant-3 request on data without fluctuations
    raises :class:`DegenerateViscosityError`; otherwise the fluctuation term
    is set to exactly zero and ``degenerate`` is flagged.
    """
    nu_t = np.asarray(nu_t, dtype=float)
    if nu_t.shape != (len(times), grid.n_fluid):
        raise GalerkinError("nu_t ensemble is not aligned with the snapshot times")
    if not nu_m > 0:
        raise GalerkinError("nu_m must be positive")
    vol = grid.cell_volumes
    nu_mean = nu_t.mean(axis=0)
    nu_bar = float(np.sum(vol * nu_mean) / vol.sum())
    if variant == 1:
        spec = ViscosityModelSpec(1, nu_m, nu_bar=nu_bar)
    elif variant == 2:
        spec = ViscosityModelSpec(2, nu_m, nu_bar=nu_bar, nu_mean=nu_mean)
    elif variant == 3:
        if len(times) >= 2:
            basis = pod_modes(nu_t, grid, "nu_t", max_rank=1)
        else:
            basis = None
        if basis is None or basis.rank == 0:
            if strict:
                raise DegenerateViscosityError("nu_t has no fluctuations; mode 1 is undefined")
            mode = np.zeros(grid.n_fluid)
            a1 = np.zeros(len(times))
            degenerate = True
        else:
            mode = basis.modes[0]
            a1 = (nu_t - basis.mean) @ (vol * mode)
            degenerate = False
        spec = ViscosityModelSpec(3, nu_m, nu_bar=nu_bar, nu_mean=nu_mean, mode=mode,
                                  a1_times=np.asarray(times, dtype=float), a1_values=a1,
                                  degenerate=degenerate)
    else:
        raise GalerkinError(f"unknown viscosity variant {variant!r}")
    spec.min_training_nu_e = float(np.min([np.min(spec.evaluate(t)) for t in times]))
    if spec.min_training_nu_e < 0:
        raise GalerkinError(f"effective viscosity reaches {spec.min_training_nu_e:.3e} < 0 at a training time")
    return spec


@dataclass
class GalerkinOperators:
    """Offline tensors of the projected momentum and pressure equations.

    Shapes: ``c (r,)``, ``L (r, r)``, ``Q (r, r, r)``, ``P (r, rp)``,
    ``A_p (rp, rp)``, ``c_p (rp,)``, ``L_p (rp, r)``, ``Q_p (rp, r, r)``.
    The ``*1`` entries multiply the online viscosity-mode coefficient.
    """

    c: np.ndarray
    L: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    A_p: np.ndarray
    c_p: np.ndarray
    L_p: np.ndarray
    Q_p: np.ndarray
    c1: np.ndarray
    L1: np.ndarray
    c_p1: np.ndarray
    L_p1: np.ndarray
    viscosity_variant: int = 2
    meta: dict = field(default_factory=dict)
    _lu: tuple | None = field(default=None, repr=False, compare=False)

    ARRAYS = ("c", "L", "Q", "P", "A_p", "c_p", "L_p", "Q_p", "c1", "L1", "c_p1", "L_p1")

    @property
    def rank(self) -> int:
        return self.c.shape[0]

    @property
    def pressure_rank(self) -> int:
        return self.A_p.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.ARRAYS}

    def check(self) -> None:
        for name, arr in self.arrays().items():
            if not np.all(np.isfinite(arr)):
                raise GalerkinError(f"operator {name} has non-finite entries")
        if self.pressure_rank:
            s = np.linalg.svd(self.A_p, compute_uv=False)
            if s[-1] <= 1e-12 * s[0]:
                raise GalerkinError(f"pressure matrix is singular (sigma_min/sigma_max = {s[-1] / s[0]:.2e})")

    def solve_pressure(self, a: np.ndarray, s: float = 0.0) -> np.ndarray:
        """Pressure coefficients from the projected Poisson equation."""
        if not self.pressure_rank:
            return np.zeros(0)
        if self._lu is None:
            self._lu = sla.lu_factor(self.A_p)
        rhs = self.c_p + self.L_p @ a + np.einsum("ljk,j,k->l", self.Q_p, a, a)
        if s:
            rhs = rhs + s * (self.c_p1 + self.L_p1 @ a)
        return sla.lu_solve(self._lu, rhs)

    def folded(self) -> "ReducedSystem":
        """Eliminate the pressure coefficients into a single quadratic system."""
        r = self.rank
        if self.pressure_rank:
            coupling = self.P @ np.linalg.solve(self.A_p, np.eye(self.pressure_rank))
        else:
            coupling = np.zeros((r, 0))
        c = self.c + coupling @ self.c_p
        L = self.L + coupling @ self.L_p
        Q = self.Q + np.einsum("il,ljk->ijk", coupling, self.Q_p)
        c1 = self.c1 + coupling @ self.c_p1
        L1 = self.L1 + coupling @ self.L_p1
        return ReducedSystem(c, L, np.ascontiguousarray(Q), c1, L1, bool(np.any(c1) or np.any(L1)))


@dataclass
class ReducedSystem:
    """Pressure-eliminated velocity system ``c + L a + Q(a, a) + s (c1 + L1 a)``."""

    c: np.ndarray
    L: np.ndarray
    Q: np.ndarray
    c1: np.ndarray
    L1: np.ndarray
    time_dependent: bool

    def __post_init__(self):
        r = self.c.shape[0]
        # (i*r + j, k) layout: one matrix-vector product contracts k
        self._Qk = np.ascontiguousarray(self.Q.reshape(r * r, r))

    def rhs(self, a: np.ndarray, s: float = 0.0) -> np.ndarray:
        r = a.shape[0]
        out = self.c + (self.L + (self._Qk @ a).reshape(r, r)) @ a
        if s:
            out = out + s * (self.c1 + self.L1 @ a)
        return out


# ------------------------------------------------------------ projection
class _Projector:
    """Grid images of the operators applied to mean fields and modes."""

    def __init__(self, u_basis: PodBasis, p_basis: PodBasis | None, bcs: FlowBCs, scheme: str):
        self.grid = u_basis.grid
        self.ub, self.pb = u_basis, p_basis
        self.bcs, self.scheme = bcs, scheme
        self.phi = u_basis.modes  # (r, d, N)
        if self.phi.ndim != 3:
            raise GalerkinError("velocity basis must be vector valued (r, d, N)")
        if self.phi.shape[1] != self.grid.ndim:
            raise GalerkinError("velocity basis components do not match the grid")
        self.w = self.grid.cell_volumes

    def test_velocity(self, images: np.ndarray) -> np.ndarray:
        """``(phi_i, image)`` for images of shape ``(..., d, N)``."""
        return np.einsum("idn,...dn->...i", self.phi * self.w, images)

    def test_pressure(self, images: np.ndarray) -> np.ndarray:
        return np.einsum("ln,...n->...l", self.pb.modes * self.w, images)

    def conv(self, vel, f, vel_h, f_h):
        return gf.vector_convection(self.grid, vel, f, self.bcs.velocity, scheme=self.scheme,
                                    vel_homogeneous=vel_h, f_homogeneous=f_h)

    def diff(self, nu, f, homogeneous):
        return gf.vector_diffusion(self.grid, nu, f, self.bcs.velocity, homogeneous)

    def grad_p(self, p):
        return gf.gradient(self.grid, p, self.bcs.p, homogeneous=True)

    def div_h(self, vel):
        return gf.divergence(self.grid, vel, self.bcs.velocity, homogeneous=True)

    def images(self, visc: ViscosityModelSpec) -> dict[str, np.ndarray]:
        ubar, phi = self.ub.mean, self.phi
        nu_s = visc.static()
        out = {
            "mean": momentum_rhs(self.grid, ubar, nu_s, self.bcs, self.scheme),
            "lin": (self.diff(nu_s, phi, True) - self.conv(ubar, phi, False, True)
                    - self.conv(phi, ubar, True, False)),
        }
        if visc.variant == 3:
            out["mean1"] = self.diff(visc.mode, ubar, False)
            out["lin1"] = self.diff(visc.mode, phi, True)
        return out

    def quad_image(self, j: int) -> np.ndarray:
        return -self.conv(self.phi[j], self.phi, True, True)


def _velocity_basis_check(u_basis, p_basis, grid):
    if u_basis.grid != grid:
        raise GalerkinError("velocity basis lives on a different grid")
    if p_basis is not None and p_basis.grid != grid:
        raise GalerkinError("pressure basis lives on a different grid")


def build_momentum_operators(u_basis: PodBasis, p_basis: PodBasis | None, visc: ViscosityModelSpec,
                             grid: StructuredGrid, bcs: FlowBCs, scheme: str = "skew") -> dict:
    """Momentum tensors ``c, L, Q, P, c1, L1``."""
    _velocity_basis_check(u_basis, p_basis, grid)
    pr = _Projector(u_basis, p_basis, bcs, scheme)
    return _momentum(pr, visc)


def _momentum(pr: _Projector, visc: ViscosityModelSpec, images=None, quads=None) -> dict:
    r = pr.ub.rank
    images = images or pr.images(visc)
    c = pr.test_velocity(images["mean"])
    rp = pr.pb.rank if pr.pb is not None else 0
    if rp:
        c = c - pr.test_velocity(pr.grad_p(pr.pb.mean))
        P = -pr.test_velocity(pr.grad_p(pr.pb.modes)).T
    else:
        P = np.zeros((r, 0))
    L = pr.test_velocity(images["lin"]).T
    Q = np.empty((r, r, r))
    for j in range(r):
        img = quads[j] if quads is not None else pr.quad_image(j)
        Q[:, j, :] = pr.test_velocity(img).T
    if visc.variant == 3:
        c1 = pr.test_velocity(images["mean1"])
        L1 = pr.test_velocity(images["lin1"]).T
    else:
        c1, L1 = np.zeros(r), np.zeros((r, r))
    return {"c": c, "L": L, "Q": Q, "P": P, "c1": c1, "L1": L1}


def build_pressure_operators(u_basis: PodBasis, p_basis: PodBasis | None, visc: ViscosityModelSpec,
                             grid: StructuredGrid, bcs: FlowBCs, scheme: str = "skew") -> dict:
    """Projected pressure-Poisson tensors ``A_p, c_p, L_p, Q_p, c_p1, L_p1``.

    The Poisson equation is ``div_h grad p = div_h F(u)`` with ``F`` the
    pressure-free momentum right-hand side, i.e. the same relation the
    full-order solver enforces.
    """
    _velocity_basis_check(u_basis, p_basis, grid)
    pr = _Projector(u_basis, p_basis, bcs, scheme)
    return _pressure(pr, visc)


def _pressure(pr: _Projector, visc: ViscosityModelSpec, images=None, quads=None) -> dict:
    r = pr.ub.rank
    rp = pr.pb.rank if pr.pb is not None else 0
    if not rp:
        z = np.zeros
        return {"A_p": z((0, 0)), "c_p": z(0), "L_p": z((0, r)), "Q_p": z((0, r, r)),
                "c_p1": z(0), "L_p1": z((0, r))}
    images = images or pr.images(visc)
    psi = pr.pb.modes
    A = pr.test_pressure(pr.div_h(pr.grad_p(psi))).T
    cp = pr.test_pressure(pr.div_h(images["mean"]) - pr.div_h(pr.grad_p(pr.pb.mean)))
    Lp = pr.test_pressure(pr.div_h(images["lin"])).T
    Qp = np.empty((rp, r, r))
    for j in range(r):
        img = quads[j] if quads is not None else pr.quad_image(j)
        Qp[:, j, :] = pr.test_pressure(pr.div_h(img)).T
    if visc.variant == 3:
        cp1 = pr.test_pressure(pr.div_h(images["mean1"]))
        Lp1 = pr.test_pressure(pr.div_h(images["lin1"])).T
    else:
        cp1, Lp1 = np.zeros(rp), np.zeros((rp, r))
    return {"A_p": A, "c_p": cp, "L_p": Lp, "Q_p": Qp, "c_p1": cp1, "L_p1": Lp1}


def build_operators(u_basis: PodBasis, p_basis: PodBasis | None, visc: ViscosityModelSpec,
                    bcs: FlowBCs, scheme: str = "skew", meta: dict | None = None) -> GalerkinOperators:
    """Momentum and pressure operators in one pass (shared grid images)."""
    grid = u_basis.grid
    _velocity_basis_check(u_basis, p_basis, grid)
    pr = _Projector(u_basis, p_basis, bcs, scheme)
    images = pr.images(visc)
    quads = [pr.quad_image(j) for j in range(u_basis.rank)]
    parts = _momentum(pr, visc, images, quads)
    parts.update(_pressure(pr, visc, images, quads))
    ops = GalerkinOperators(**parts, viscosity_variant=visc.variant, meta=dict(meta or {}))
    ops.check()
    return ops


def eval_rhs(ops: GalerkinOperators, a_u: np.ndarray, a_p: np.ndarray, t: float,
             visc: ViscosityModelSpec | None = None) -> np.ndarray:
    """Projected momentum right-hand side for given velocity and pressure coefficients."""
    a_u = np.asarray(a_u, dtype=float)
    a_p = np.asarray(a_p, dtype=float)
    if a_u.shape != (ops.rank,) or a_p.shape != (ops.pressure_rank,):
        raise GalerkinError("coefficient lengths do not match operator ranks")
    if not (np.all(np.isfinite(a_u)) and np.all(np.isfinite(a_p))):
        raise GalerkinError("NaN or inf in coefficients")
    out = ops.c + ops.L @ a_u + np.einsum("ijk,j,k->i", ops.Q, a_u, a_u) + ops.P @ a_p
    s = visc.a1(t) if visc is not None else 0.0
    if s:
        out = out + s * (ops.c1 + ops.L1 @ a_u)
    return out


def direct_rhs(u_basis: PodBasis, p_basis: PodBasis | None, visc: ViscosityModelSpec, bcs: FlowBCs,
               a_u: np.ndarray, a_p: np.ndarray, t: float, scheme: str = "skew") -> np.ndarray:
    """Reference: reconstruct the fields, evaluate the grid right-hand side, project.

    This path never touches the offline tensors and serves as the
    consistency oracle for them.
    """
    grid = u_basis.grid
    u = u_basis.mean + np.tensordot(a_u, u_basis.modes, axes=1)
    rhs = momentum_rhs(grid, u, visc.evaluate(t), bcs, scheme)
    if p_basis is not None and p_basis.rank:
        p = p_basis.mean + np.tensordot(a_p, p_basis.modes, axes=1)
        rhs = rhs - gf.gradient(grid, p, bcs.p)
    return np.einsum("idn,dn->i", u_basis.modes * grid.cell_volumes, rhs)


def direct_pressure_residual(u_basis: PodBasis, p_basis: PodBasis, visc: ViscosityModelSpec,
                             bcs: FlowBCs, u: np.ndarray, p: np.ndarray, t: float,
                             scheme: str = "skew") -> np.ndarray:
    """Projected Poisson residual ``(psi_l, div_h grad p - div_h F(u))`` of full fields."""
    grid = u_basis.grid
    F = momentum_rhs(grid, u, visc.evaluate(t), bcs, scheme)
    res = (gf.divergence(grid, gf.gradient(grid, p, bcs.p), bcs.velocity, homogeneous=True)
           - gf.divergence(grid, F, bcs.velocity, homogeneous=True))
    return (p_basis.modes * grid.cell_volumes) @ res
