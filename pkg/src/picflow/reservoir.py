"""Domain model: grid, rock/fluid properties, wells, control schedules.

Everything here is immutable after construction and stored in SI units.
These objects are the single source of truth consumed by system assembly,
the reference simulator and surrogate training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class ControlKind(str, Enum):
    BHP = "bhp"
    RATE = "rate"


@dataclass(frozen=True)
class Grid:
    """Uniform 2D Cartesian grid (single layer, thickness dz)."""

    nx: int
    ny: int
    dx: float  # m
    dy: float  # m
    dz: float = 1.0  # m; not reported by typical 2D setups, PI scales linearly in it

    @property
    def n(self) -> int:
        return self.nx * self.ny

    def flatten(self, i: int, j: int) -> int:
        """Map cell coordinates (i, j) to the flat index j*nx + i."""
        return j * self.nx + i

    def unflatten(self, idx: int) -> tuple[int, int]:
        return idx % self.nx, idx // self.nx

    def in_bounds(self, i: int, j: int) -> bool:
        return 0 <= i < self.nx and 0 <= j < self.ny

    @property
    def effective_radius(self) -> float:
        """Peaceman equivalent well-block radius 0.14*sqrt(dx^2 + dy^2)."""
        return 0.14 * math.hypot(self.dx, self.dy)


@dataclass(frozen=True)
class RockFluid:
    """Per-cell rock properties and (constant) fluid properties, SI."""

    porosity: np.ndarray  # (-), per cell, flat layout
    permeability: np.ndarray  # m^2, per cell, isotropic
    viscosity: float  # Pa.s
    compressibility: float  # 1/Pa, total
    initial_pressure: float  # Pa
    density: float = 1000.0  # kg/m^3, metadata only (cancels in the formulation)

    def __post_init__(self):
        object.__setattr__(self, "porosity", np.asarray(self.porosity, dtype=float))
        object.__setattr__(self, "permeability", np.asarray(self.permeability, dtype=float))
        self.porosity.setflags(write=False)
        self.permeability.setflags(write=False)


@dataclass(frozen=True)
class WellSpec:
    """A single vertical well completed in one cell."""

    i: int
    j: int
    radius: float  # wellbore radius r_w, m
    skin: float = 0.0
    kind: ControlKind = ControlKind.BHP
    name: str = ""


@dataclass(frozen=True)
class ReservoirModel:
    grid: Grid
    rock_fluid: RockFluid
    wells: tuple[WellSpec, ...] = ()


@dataclass(frozen=True)
class ControlSchedule:
    """Piecewise-constant controls, one value per well per timestep.

    ``values`` has shape (m, t): wells along rows, timesteps along columns.
    Segments are left-closed / right-open in time: u_k applies over
    [k*dt, (k+1)*dt).
    """

    values: np.ndarray  # (m, t), Pa for BHP wells, m^3/s for RATE wells
    dt: float  # s

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("schedule values must be a 2D (wells x timesteps) array")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "values", values)
        self.values.setflags(write=False)

    @property
    def num_wells(self) -> int:
        return self.values.shape[0]

    @property
    def num_steps(self) -> int:
        return self.values.shape[1]

    def control_at(self, k: int) -> np.ndarray:
        """Control vector u_k (length m, SI) applied over step k."""
        if not 0 <= k < self.num_steps:
            raise IndexError(f"timestep {k} outside schedule of length {self.num_steps}")
        return self.values[:, k]

    @staticmethod
    def from_segments(segments: list[tuple[int, np.ndarray]], dt: float) -> "ControlSchedule":
        """Build from (num_steps, control_vector) segments."""
        cols = []
        for steps, u in segments:
            u = np.asarray(u, dtype=float)
            cols.append(np.tile(u[:, None], (1, steps)))
        return ControlSchedule(np.concatenate(cols, axis=1), dt)


class Provenance(str, Enum):
    FV = "fv"
    NN = "nn"


@dataclass(frozen=True)
class Trajectory:
    """Ordered pressure snapshots x_0..x_t, each a flat length-n vector (Pa)."""

    snapshots: np.ndarray  # (t+1, n)
    dt: float  # s
    provenance: Provenance = Provenance.FV

    def __post_init__(self):
        snaps = np.asarray(self.snapshots, dtype=float)
        if snaps.ndim != 2:
            raise ValueError("snapshots must be a 2D (steps x cells) array")
        object.__setattr__(self, "snapshots", snaps)
        self.snapshots.setflags(write=False)

    @property
    def num_steps(self) -> int:
        return self.snapshots.shape[0] - 1

    def as_fields(self, grid: Grid) -> np.ndarray:
        """Snapshots reshaped to (t+1, ny, nx)."""
        return self.snapshots.reshape(-1, grid.ny, grid.nx)


def validate_model(model: ReservoirModel) -> list[str]:
    """Check all type invariants; returns a list of violations (empty = usable)."""
    v: list[str] = []
    g = model.grid
    if g.nx < 1 or g.ny < 1:
        v.append("grid must have nx >= 1 and ny >= 1")
    if g.dx <= 0 or g.dy <= 0 or g.dz <= 0:
        v.append("cell sizes dx, dy, dz must be positive")
    rf = model.rock_fluid
    if rf.porosity.shape != (g.n,):
        v.append(f"porosity field length {rf.porosity.size} != cell count {g.n}")
    elif not np.all((rf.porosity > 0) & (rf.porosity < 1)):
        v.append("porosity must be positive and below 1 in every cell")
    if rf.permeability.shape != (g.n,):
        v.append(f"permeability field length {rf.permeability.size} != cell count {g.n}")
    elif not np.all(rf.permeability > 0):
        v.append("permeability must be positive in every cell")
    if rf.viscosity <= 0:
        v.append("viscosity must be positive")
    if rf.compressibility <= 0:
        v.append("compressibility must be positive")
    if rf.initial_pressure <= 0:
        v.append("initial pressure must be positive")
    occupied: set[tuple[int, int]] = set()
    for w in model.wells:
        tag = w.name or f"({w.i}, {w.j})"
        if not g.in_bounds(w.i, w.j):
            v.append(f"well {tag} outside grid")
        if w.radius <= 0:
            v.append(f"well {tag}: wellbore radius must be positive")
        elif g.dx > 0 and g.dy > 0 and w.radius >= g.effective_radius:
            v.append(f"well {tag}: wellbore radius exceeds the effective block radius")
        if (w.i, w.j) in occupied:
            v.append(f"well {tag}: cell already hosts a well")
        occupied.add((w.i, w.j))
    return v


def uniform_model(nx, ny, dx, dy, dz, porosity, permeability, viscosity,
                  compressibility, initial_pressure, wells=()) -> ReservoirModel:
    """Convenience constructor for homogeneous fields (scalar phi and K)."""
    n = nx * ny
    rf = RockFluid(
        porosity=np.full(n, porosity),
        permeability=np.full(n, permeability),
        viscosity=viscosity,
        compressibility=compressibility,
        initial_pressure=initial_pressure,
    )
    return ReservoirModel(Grid(nx, ny, dx, dy, dz), rf, tuple(wells))


def validate_schedule(model: ReservoirModel, schedule: ControlSchedule) -> list[str]:
    """Advisory checks; BHP above initial pressure is a warning, not an error."""
    warnings: list[str] = []
    if schedule.num_wells != len(model.wells):
        warnings.append(
            f"schedule has {schedule.num_wells} wells, model has {len(model.wells)}")
        return warnings
    p0 = model.rock_fluid.initial_pressure
    for w_idx, w in enumerate(model.wells):
        if w.kind is ControlKind.BHP and np.any(schedule.values[w_idx] >= p0):
            warnings.append(
                f"well {w.name or w_idx}: BHP at or above initial pressure "
                "(injector-like behaviour for a production well)")
    return warnings
