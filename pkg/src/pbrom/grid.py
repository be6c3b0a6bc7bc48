"""Structured cell-centred grids, fields and discrete operators.

All operators act on flat arrays of fluid-cell values with shape ``(..., N)``
(scalar fields) or ``(..., d, N)`` (vector fields with ``d`` components).
Leading dimensions are broadcast, so a stack of POD modes can be pushed
through an operator in one call.

Neighbour values across domain boundaries and solid faces come from ghost
cells.  Ghost rules are affine in the field, ``ghost = w_self * f_c + b``,
so every operator is an exact polynomial in the cell values plus boundary
data.  Passing ``homogeneous=True`` drops the boundary data ``b``; this is
how POD modes (which carry homogeneous boundary values) are handled.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp


class GridError(ValueError):
    """Mismatched grids, field sizes or inconsistent grid definitions."""


class BoundaryConfigError(ValueError):
    """Unknown boundary label or malformed boundary condition."""


SIDES = ("west", "east", "south", "north")
BODY = "body"
BC_KINDS = ("fixed", "zero_gradient", "periodic")
VARIABLES = ("u", "v", "w", "p", "nu_t")


@dataclass(frozen=True)
class BC:
    """A single boundary condition: fixed value, zero gradient or periodic."""

    kind: str
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in BC_KINDS:
            raise BoundaryConfigError(f"unknown boundary condition kind {self.kind!r}")

    @classmethod
    def parse(cls, spec) -> "BC":
        if isinstance(spec, BC):
            return spec
        if isinstance(spec, str):
            return cls(spec)
        if isinstance(spec, (list, tuple)) and spec:
            return cls(spec[0], float(spec[1]) if len(spec) > 1 else 0.0)
        if isinstance(spec, Mapping):
            return cls(spec["kind"], float(spec.get("value", 0.0)))
        raise BoundaryConfigError(f"cannot parse boundary condition {spec!r}")

    def to_json(self):
        return [self.kind, self.value] if self.kind == "fixed" else [self.kind]


ZERO_GRADIENT = BC("zero_gradient")
NO_SLIP = BC("fixed", 0.0)


@dataclass(frozen=True)
class ScalarBC:
    """Boundary conditions of one scalar variable on the four sides and on solid bodies."""

    west: BC = ZERO_GRADIENT
    east: BC = ZERO_GRADIENT
    south: BC = ZERO_GRADIENT
    north: BC = ZERO_GRADIENT
    body: BC = ZERO_GRADIENT

    @classmethod
    def parse(cls, spec: Mapping) -> "ScalarBC":
        kwargs = {}
        for label, value in spec.items():
            if label not in SIDES + (BODY,):
                raise BoundaryConfigError(f"unknown boundary label {label!r}")
            kwargs[label] = BC.parse(value)
        if kwargs.get(BODY, ZERO_GRADIENT).kind == "periodic":
            raise BoundaryConfigError("a solid body cannot be periodic")
        return cls(**kwargs)

    @classmethod
    def periodic(cls, body: BC = ZERO_GRADIENT) -> "ScalarBC":
        per = BC("periodic")
        return cls(per, per, per, per, body)

    def side(self, label: str) -> BC:
        if label not in SIDES + (BODY,):
            raise BoundaryConfigError(f"unknown boundary label {label!r}")
        return getattr(self, label)

    def to_json(self) -> dict:
        return {label: self.side(label).to_json() for label in SIDES + (BODY,)}


@dataclass(frozen=True)
class FluidConstants:
    """Density [kg/m^3] and molecular kinematic viscosity [m^2/s]."""

    rho: float = 1.0
    nu_m: float = 1e-4

    def __post_init__(self):
        if not self.rho > 0 or not self.nu_m > 0:
            raise ValueError("rho and nu_m must be strictly positive")


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned solid block occupying cells ``i0 <= i < i1, j0 <= j < j1``."""

    label: str
    i0: int
    i1: int
    j0: int
    j1: int


@dataclass(frozen=True)
class BoundaryFace:
    """A fluid/solid face: area vector (pointing from the fluid cell into the solid)."""

    area: tuple[float, float]
    cell: int
    label: str


@dataclass(frozen=True)
class _Neighbours:
    # value of neighbour = w_nb * f[idx] + w_self * f + b
    idx: np.ndarray
    w_nb: np.ndarray
    w_self: np.ndarray
    b: np.ndarray

    def __call__(self, f: np.ndarray, homogeneous: bool = False) -> np.ndarray:
        out = self.w_nb * f[..., self.idx] + self.w_self * f
        if not homogeneous:
            out = out + self.b
        return out


class StructuredGrid:
    """Uniform cell-centred grid in one or two dimensions with optional solid blocks.

    Parameters
    ----------
    nx, ny : int
        Cell counts; ``ny == 1`` makes a one-dimensional grid.
    dx, dy : float
        Cell sizes [m].  For 1D grids ``dy`` is the (unit) depth.
    periodic_x, periodic_y : bool
        Periodicity flags.
    obstacles : sequence of Obstacle
        Solid blocks.  Their cells carry no unknowns.
    """

    def __init__(
        self,
        nx: int,
        ny: int = 1,
        dx: float = 1.0,
        dy: float = 1.0,
        periodic_x: bool = False,
        periodic_y: bool = False,
        obstacles: Sequence[Obstacle] = (),
    ):
        if nx < 1 or ny < 1:
            raise GridError("cell counts must be positive")
        if not dx > 0 or not dy > 0:
            raise GridError("cell sizes must be positive")
        self.nx, self.ny = int(nx), int(ny)
        self.dx, self.dy = float(dx), float(dy)
        self.periodic_x = bool(periodic_x)
        self.periodic_y = bool(periodic_y) and self.ny > 1
        self.obstacles = tuple(obstacles)

        mask = np.ones((self.nx, self.ny), dtype=bool)
        for ob in self.obstacles:
            if not (0 <= ob.i0 < ob.i1 <= self.nx and 0 <= ob.j0 < ob.j1 <= self.ny):
                raise GridError(f"obstacle {ob.label!r} outside the grid")
            mask[ob.i0:ob.i1, ob.j0:ob.j1] = False
        if not mask.any():
            raise GridError("grid has no fluid cells")
        self.cell_mask = mask
        # flat index of each fluid cell in (i, j) order, -1 for solids
        self._index = np.full((self.nx, self.ny), -1, dtype=np.int64)
        self._index[mask] = np.arange(mask.sum())
        self.ii, self.jj = np.nonzero(mask)
        self._stencils: dict = {}

    # ------------------------------------------------------------------ basics
    @property
    def ndim(self) -> int:
        return 1 if self.ny == 1 else 2

    @property
    def n_fluid(self) -> int:
        return int(self.ii.size)

    @cached_property
    def cell_volumes(self) -> np.ndarray:
        return np.full(self.n_fluid, self.dx * self.dy)

    @property
    def total_volume(self) -> float:
        return float(self.cell_volumes.sum())

    @cached_property
    def centres(self) -> tuple[np.ndarray, ...]:
        x = (self.ii + 0.5) * self.dx
        if self.ndim == 1:
            return (x,)
        return (x, (self.jj + 0.5) * self.dy)

    def to_dict(self) -> dict:
        return {
            "nx": self.nx,
            "ny": self.ny,
            "dx": self.dx,
            "dy": self.dy,
            "periodic_x": self.periodic_x,
            "periodic_y": self.periodic_y,
            "obstacles": [
                {"label": o.label, "i": [o.i0, o.i1], "j": [o.j0, o.j1]}
                for o in self.obstacles
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "StructuredGrid":
        obstacles = [
            Obstacle(o["label"], o["i"][0], o["i"][1], o["j"][0], o["j"][1])
            for o in d.get("obstacles", [])
        ]
        return cls(
            d["nx"], d.get("ny", 1), d["dx"], d.get("dy", 1.0),
            d.get("periodic_x", False), d.get("periodic_y", False), obstacles,
        )

    def __eq__(self, other) -> bool:
        return isinstance(other, StructuredGrid) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash((self.nx, self.ny, self.dx, self.dy, self.periodic_x, self.periodic_y, self.obstacles))

    def __repr__(self) -> str:
        return (f"StructuredGrid(nx={self.nx}, ny={self.ny}, dx={self.dx:g}, dy={self.dy:g}, "
                f"periodic=({self.periodic_x}, {self.periodic_y}), obstacles={len(self.obstacles)})")

    def to_array(self, f: np.ndarray, fill: float = np.nan) -> np.ndarray:
        """Scatter fluid-cell values ``(..., N)`` into a full ``(..., nx, ny)`` array."""
        out = np.full(f.shape[:-1] + (self.nx, self.ny), fill, dtype=float)
        out[..., self.ii, self.jj] = f
        return out

    def from_array(self, a: np.ndarray) -> np.ndarray:
        return np.asarray(a, dtype=float)[..., self.ii, self.jj]

    def evaluate(self, func) -> np.ndarray:
        """Sample ``func(x[, y])`` at the fluid-cell centres."""
        return np.asarray(func(*self.centres), dtype=float) * np.ones(self.n_fluid)

    def check_bc(self, bc: ScalarBC) -> None:
        for label, periodic in (("west", self.periodic_x), ("east", self.periodic_x),
                                ("south", self.periodic_y), ("north", self.periodic_y)):
            if self.ndim == 1 and label in ("south", "north"):
                continue
            is_per = bc.side(label).kind == "periodic"
            if is_per != periodic:
                raise BoundaryConfigError(
                    f"boundary {label!r} is {bc.side(label).kind!r} but grid periodicity is {periodic}")

    def natural_bc(self, body: BC = ZERO_GRADIENT) -> ScalarBC:
        """Zero-gradient on open sides, periodic where the grid is periodic."""
        per = BC("periodic")
        x = per if self.periodic_x else ZERO_GRADIENT
        y = per if self.periodic_y else ZERO_GRADIENT
        return ScalarBC(x, x, y, y, body)

    # ------------------------------------------------------------ neighbours
    def neighbours(self, bc: ScalarBC) -> dict[str, _Neighbours]:
        """Ghost-aware neighbour tables (east, west, north, south) for one variable."""
        key = bc
        if key not in self._stencils:
            self.check_bc(bc)
            self._stencils[key] = self._build_neighbours(bc)
        return self._stencils[key]

    def _build_neighbours(self, bc: ScalarBC) -> dict[str, _Neighbours]:
        dirs = {"east": (1, 0, "east"), "west": (-1, 0, "west")}
        if self.ndim == 2:
            dirs.update({"north": (0, 1, "north"), "south": (0, -1, "south")})
        body = bc.body
        out = {}
        n = self.n_fluid
        own = np.arange(n)
        for name, (di, dj, side) in dirs.items():
            i = self.ii + di
            j = self.jj + dj
            idx = own.copy()
            w_nb = np.zeros(n)
            w_self = np.zeros(n)
            b = np.zeros(n)
            side_bc = bc.side(side)
            periodic = self.periodic_x if di else self.periodic_y
            size = self.nx if di else self.ny
            coord = i if di else j
            outside = (coord < 0) | (coord >= size)
            if periodic:
                i = i % self.nx
                j = j % self.ny
                outside = np.zeros(n, dtype=bool)
            inside = ~outside
            nb_index = np.full(n, -1, dtype=np.int64)
            nb_index[inside] = self._index[i[inside], j[inside]]
            fluid = inside & (nb_index >= 0)
            solid = inside & (nb_index < 0)
            idx[fluid] = nb_index[fluid]
            w_nb[fluid] = 1.0
            for sel, rule in ((outside, side_bc), (solid, body)):
                if rule.kind == "fixed":
                    w_self[sel] = -1.0
                    b[sel] = 2.0 * rule.value
                else:
                    w_self[sel] = 1.0
            out[name] = _Neighbours(idx, w_nb, w_self, b)
        return out

    def solid_faces(self, label: str | None = None) -> list[BoundaryFace]:
        """Faces between fluid cells and solid blocks, with outward (into-solid) area vectors."""
        labels = [o.label for o in self.obstacles]
        if label is not None and label not in labels:
            raise BoundaryConfigError(f"unknown body label {label!r}")
        faces = []
        for ob in self.obstacles:
            if label is not None and ob.label != label:
                continue
            for c in range(self.n_fluid):
                i, j = self.ii[c], self.jj[c]
                for di, dj, area in ((1, 0, (self.dy, 0.0)), (-1, 0, (-self.dy, 0.0)),
                                     (0, 1, (0.0, self.dx)), (0, -1, (0.0, -self.dx))):
                    ni, nj = i + di, j + dj
                    if ob.i0 <= ni < ob.i1 and ob.j0 <= nj < ob.j1:
                        faces.append(BoundaryFace(area, c, ob.label))
        return faces


@dataclass
class Field:
    """Values of one variable on the fluid cells of a grid."""

    label: str
    values: np.ndarray
    grid: StructuredGrid = field(repr=False)

    def __post_init__(self):
        if self.label not in VARIABLES:
            raise ValueError(f"unknown variable label {self.label!r}")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_fluid,):
            raise GridError(f"field has {self.values.shape} values, grid has {self.grid.n_fluid} fluid cells")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")


# ------------------------------------------------------------------ operators
def inner_product(f, g, grid: StructuredGrid) -> np.ndarray:
    """Volume-weighted inner product ``sum_c V_c f_c g_c``.

    Vector fields ``(..., d, N)`` are summed over components as well.
    """
    f = f.values if isinstance(f, Field) else np.asarray(f, dtype=float)
    g = g.values if isinstance(g, Field) else np.asarray(g, dtype=float)
    if f.shape[-1] != grid.n_fluid or g.shape[-1] != grid.n_fluid:
        raise GridError("field size does not match the grid")
    if f.shape != g.shape:
        raise GridError(f"shape mismatch {f.shape} vs {g.shape}")
    return np.sum(f * g * grid.cell_volumes, axis=-1)


def _check(grid: StructuredGrid, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != grid.n_fluid:
        raise GridError(f"expected {grid.n_fluid} values in the last axis, got {f.shape[-1]}")
    return f


def _spacing(grid, name):
    return grid.dx if name in ("east", "west") else grid.dy


def gradient(grid: StructuredGrid, f, bc: ScalarBC, homogeneous: bool = False) -> np.ndarray:
    """Central-difference gradient; returns ``(..., ndim, N)``."""
    f = _check(grid, f)
    nb = grid.neighbours(bc)
    comps = [(nb["east"](f, homogeneous) - nb["west"](f, homogeneous)) / (2 * grid.dx)]
    if grid.ndim == 2:
        comps.append((nb["north"](f, homogeneous) - nb["south"](f, homogeneous)) / (2 * grid.dy))
    return np.stack(comps, axis=-2)


def divergence(grid: StructuredGrid, vel, bcs: Sequence[ScalarBC], homogeneous: bool = False) -> np.ndarray:
    """Central-difference divergence of a vector field ``(..., ndim, N)``."""
    vel = _check(grid, vel)
    if vel.shape[-2] != grid.ndim:
        raise GridError("velocity component count does not match grid dimension")
    nb = grid.neighbours(bcs[0])
    out = (nb["east"](vel[..., 0, :], homogeneous) - nb["west"](vel[..., 0, :], homogeneous)) / (2 * grid.dx)
    if grid.ndim == 2:
        nb = grid.neighbours(bcs[1])
        out = out + (nb["north"](vel[..., 1, :], homogeneous)
                     - nb["south"](vel[..., 1, :], homogeneous)) / (2 * grid.dy)
    return out


def diffusion(grid: StructuredGrid, nu, f, bc: ScalarBC, homogeneous: bool = False,
              nu_bc: ScalarBC | None = None) -> np.ndarray:
    """Conservative compact discretisation of ``div(nu grad f)``.

    Face viscosities are arithmetic means of the adjacent cell values; ``nu``
    may be a scalar or a field.  For constant ``nu`` this is ``nu`` times the
    compact Laplacian.
    """
    f = _check(grid, f)
    nb = grid.neighbours(bc)
    scalar_nu = np.ndim(nu) == 0
    if not scalar_nu:
        nu = _check(grid, nu)
        nnb = grid.neighbours(grid.natural_bc() if nu_bc is None else nu_bc)
    out = 0.0
    for plus, minus in (("east", "west"), ("north", "south")):
        if plus not in nb:
            continue
        h2 = _spacing(grid, plus) ** 2
        fp = nb[plus](f, homogeneous)
        fm = nb[minus](f, homogeneous)
        if scalar_nu:
            out = out + nu * (fp - 2.0 * f + fm) / h2
        else:
            nu_p = 0.5 * (nu + nnb[plus](nu, True))
            nu_m = 0.5 * (nu + nnb[minus](nu, True))
            out = out + (nu_p * (fp - f) - nu_m * (f - fm)) / h2
    return out


def laplacian(grid: StructuredGrid, f, bc: ScalarBC, homogeneous: bool = False) -> np.ndarray:
    """Compact second-order Laplacian (3-point in 1D, 5-point in 2D)."""
    return diffusion(grid, 1.0, f, bc, homogeneous)


def convection(grid: StructuredGrid, vel, f, vel_bcs: Sequence[ScalarBC], f_bc: ScalarBC,
               scheme: str = "skew", vel_homogeneous: bool = False,
               f_homogeneous: bool = False) -> np.ndarray:
    """Discrete ``(vel . grad) f``.

    ``scheme="skew"`` uses ``1/2 [vel.grad f + div(vel f) - f div vel]`` with
    central differences: bilinear, consistent for any ``vel``, and
    energy-neutral (``(C(v, f), f) = 0``) on periodic grids when ``div vel = 0``.
    In 1D with ``vel = f = u`` it reduces to the conservative flux form
    ``d/dx (u^2 / 2)``.  ``scheme="upwind"`` is first-order upwind and is
    offered for full-order stability only (it is not polynomial in ``vel``).
    """
    vel = _check(grid, vel)
    f = _check(grid, f)
    if vel.shape[-2] != grid.ndim:
        raise GridError("velocity component count does not match grid dimension")
    fnb = grid.neighbours(f_bc)
    pairs = (("east", "west"), ("north", "south"))[: grid.ndim]
    out = 0.0
    for d, (plus, minus) in enumerate(pairs):
        h = _spacing(grid, plus)
        v = vel[..., d, :]
        vnb = grid.neighbours(vel_bcs[d])
        fp, fm = fnb[plus](f, f_homogeneous), fnb[minus](f, f_homogeneous)
        if scheme == "skew":
            vp, vm = vnb[plus](v, vel_homogeneous), vnb[minus](v, vel_homogeneous)
            adv = v * (fp - fm)
            flux = vp * fp - vm * fm
            dil = f * (vp - vm)
            out = out + 0.5 * (adv + flux - dil) / (2 * h)
        elif scheme == "upwind":
            out = out + (np.maximum(v, 0) * (f - fm) + np.minimum(v, 0) * (fp - f)) / h
        else:
            raise ValueError(f"unknown convection scheme {scheme!r}")
    return out


def vector_convection(grid: StructuredGrid, vel, f, vel_bcs, f_bcs=None, scheme="skew",
                      vel_homogeneous=False, f_homogeneous=False) -> np.ndarray:
    """Apply :func:`convection` to each component of a vector field ``f``."""
    f_bcs = vel_bcs if f_bcs is None else f_bcs
    f = _check(grid, f)
    return np.stack([
        convection(grid, vel, f[..., d, :], vel_bcs, f_bcs[d], scheme, vel_homogeneous, f_homogeneous)
        for d in range(f.shape[-2])
    ], axis=-2)


def vector_diffusion(grid: StructuredGrid, nu, f, bcs, homogeneous=False) -> np.ndarray:
    f = _check(grid, f)
    return np.stack([diffusion(grid, nu, f[..., d, :], bcs[d], homogeneous)
                     for d in range(f.shape[-2])], axis=-2)


def operator_matrix(grid: StructuredGrid, nb: _Neighbours) -> sp.csr_matrix:
    """Sparse matrix of the homogeneous neighbour map ``f -> f_neighbour``."""
    n = grid.n_fluid
    rows = np.concatenate([np.arange(n), np.arange(n)])
    cols = np.concatenate([nb.idx, np.arange(n)])
    vals = np.concatenate([nb.w_nb, nb.w_self])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def gradient_matrices(grid: StructuredGrid, bc: ScalarBC) -> list[sp.csr_matrix]:
    nb = grid.neighbours(bc)
    mats = [(operator_matrix(grid, nb["east"]) - operator_matrix(grid, nb["west"])) / (2 * grid.dx)]
    if grid.ndim == 2:
        mats.append((operator_matrix(grid, nb["north"]) - operator_matrix(grid, nb["south"])) / (2 * grid.dy))
    return mats


def divergence_matrices(grid: StructuredGrid, bcs: Sequence[ScalarBC]) -> list[sp.csr_matrix]:
    """Per-component sparse matrices of the homogeneous divergence."""
    nb = grid.neighbours(bcs[0])
    mats = [(operator_matrix(grid, nb["east"]) - operator_matrix(grid, nb["west"])) / (2 * grid.dx)]
    if grid.ndim == 2:
        nb = grid.neighbours(bcs[1])
        mats.append((operator_matrix(grid, nb["north"]) - operator_matrix(grid, nb["south"])) / (2 * grid.dy))
    return mats
