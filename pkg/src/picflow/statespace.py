"""Assembly of the discrete state-space system V dx/dt = T x + B u.

Spatial discretization is a cell-centered two-point flux approximation on
the uniform grid; BHP wells enter through the Peaceman productivity index.
No-flow boundaries are implicit: boundary faces simply contribute no
transmissibility, so no extra boundary terms appear anywhere.

Sign conventions: T carries -sum(face transmissibilities) on the diagonal
(minus the PI of a BHP well completed in that cell), so T is negative
semidefinite and (V/dt - T) is SPD for any dt > 0. BHP columns of B carry
+PI at the well cell; RATE columns carry 1 (control already in m^3/s,
positive = injection).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .reservoir import ControlKind, ReservoirModel, WellSpec, validate_model


class AssemblyError(ValueError):
    pass


def peaceman_pi(k_cell: float, dx: float, dy: float, dz: float,
                mu: float, r_w: float, skin: float = 0.0) -> float:
    """Productivity index 2*pi*K*dz / (mu * (ln(r_e/r_w) + s)).

    r_e = 0.14*sqrt(dx^2 + dy^2) is the effective radius of the well block.
    All arguments SI; result in m^3/(Pa.s).
    """
    if min(k_cell, dx, dy, dz, mu, r_w) <= 0:
        raise AssemblyError("peaceman_pi requires positive inputs")
    r_e = 0.14 * math.hypot(dx, dy)
    denom = math.log(r_e / r_w) + skin
    if denom <= 0:
        raise AssemblyError(
            f"degenerate well: ln(r_e/r_w) + s = {denom:.3g} <= 0 "
            "(wellbore radius too large or skin too negative)")
    return 2.0 * math.pi * k_cell * dz / (mu * denom)


def face_transmissibility(k_i: float, k_j: float, axis: str,
                          dx: float, dy: float, dz: float, mu: float) -> float:
    """TPFA face transmissibility with harmonic permeability averaging.

    For an x-face: T_face = (dy*dz/mu) * harmonic(K_i, K_j) / dx;
    y-faces swap the roles of dx and dy. Result in m^3/(Pa.s).
    """
    if k_i <= 0 or k_j <= 0:
        raise AssemblyError("face_transmissibility requires positive permeabilities")
    k_h = 2.0 * k_i * k_j / (k_i + k_j)
    if axis == "x":
        return (dy * dz / mu) * k_h / dx
    if axis == "y":
        return (dx * dz / mu) * k_h / dy
    raise AssemblyError(f"unknown face axis {axis!r}")


@dataclass(frozen=True)
class StateSpaceSystem:
    """Assembled V (diagonal), T (sparse symmetric) and B (sparse location)."""

    v_diag: np.ndarray  # (n,), m^3/Pa
    t_matrix: sp.csr_matrix  # (n, n), m^3/(Pa.s)
    b_matrix: sp.csr_matrix  # (n, m)
    well_cells: tuple[int, ...]  # flat cell index per well
    well_pi: tuple[float, ...]  # PI per well (defined for RATE wells too)
    well_kinds: tuple[ControlKind, ...]

    def __post_init__(self):
        self.v_diag.setflags(write=False)

    @property
    def n(self) -> int:
        return self.v_diag.shape[0]

    @property
    def m(self) -> int:
        return self.b_matrix.shape[1]

    def implicit_matrix(self, dt: float) -> sp.csr_matrix:
        """(V/dt - T), the SPD backward-Euler system matrix."""
        if dt <= 0:
            raise AssemblyError("dt must be positive")
        return (sp.diags(self.v_diag / dt) - self.t_matrix).tocsr()

    def residual(self, x_k: np.ndarray, x_km1: np.ndarray,
                 u_k: np.ndarray, dt: float) -> np.ndarray:
        """Backward-Euler residual -V*(x_k - x_km1)/dt + T x_k + B u_k (m^3/s)."""
        x_k = np.asarray(x_k, dtype=float)
        x_km1 = np.asarray(x_km1, dtype=float)
        u_k = np.asarray(u_k, dtype=float)
        if x_k.shape != (self.n,) or x_km1.shape != (self.n,):
            raise AssemblyError(f"state vectors must have shape ({self.n},)")
        if u_k.shape != (self.m,):
            raise AssemblyError(f"control vector must have shape ({self.m},)")
        if dt <= 0:
            raise AssemblyError("dt must be positive")
        return (-self.v_diag * (x_k - x_km1) / dt
                + self.t_matrix @ x_k + self.b_matrix @ u_k)


def assemble(model: ReservoirModel,
             wells: tuple[WellSpec, ...] | None = None) -> StateSpaceSystem:
    """Assemble the state-space system for a reservoir model.

    ``wells`` defaults to the model's own wells; passing a different tuple
    allows reusing one rock/grid description with several well patterns.
    """
    violations = validate_model(model if wells is None
                                else ReservoirModel(model.grid, model.rock_fluid,
                                                    tuple(wells)))
    if violations:
        raise AssemblyError("invalid model: " + "; ".join(violations))
    if wells is None:
        wells = model.wells

    g = model.grid
    rf = model.rock_fluid
    n = g.n
    perm = rf.permeability

    v_diag = g.dx * g.dy * g.dz * rf.porosity * rf.compressibility

    rows, cols, vals = [], [], []
    diag = np.zeros(n)

    def add_face(a: int, b: int, t_face: float):
        rows.extend((a, b))
        cols.extend((b, a))
        vals.extend((t_face, t_face))
        diag[a] -= t_face
        diag[b] -= t_face

    for j in range(g.ny):
        for i in range(g.nx):
            c = g.flatten(i, j)
            if i + 1 < g.nx:
                add_face(c, g.flatten(i + 1, j),
                         face_transmissibility(perm[c], perm[g.flatten(i + 1, j)],
                                               "x", g.dx, g.dy, g.dz, rf.viscosity))
            if j + 1 < g.ny:
                add_face(c, g.flatten(i, j + 1),
                         face_transmissibility(perm[c], perm[g.flatten(i, j + 1)],
                                               "y", g.dx, g.dy, g.dz, rf.viscosity))

    well_cells, well_pi, well_kinds = [], [], []
    b_rows, b_cols, b_vals = [], [], []
    for w_idx, w in enumerate(wells):
        c = g.flatten(w.i, w.j)
        pi = peaceman_pi(perm[c], g.dx, g.dy, g.dz, rf.viscosity, w.radius, w.skin)
        well_cells.append(c)
        well_pi.append(pi)
        well_kinds.append(w.kind)
        if w.kind is ControlKind.BHP:
            diag[c] -= pi
            b_rows.append(c)
            b_cols.append(w_idx)
            b_vals.append(pi)
        else:
            b_rows.append(c)
            b_cols.append(w_idx)
            b_vals.append(1.0)

    rows.extend(range(n))
    cols.extend(range(n))
    vals.extend(diag)
    t_matrix = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    b_matrix = sp.coo_matrix((b_vals, (b_rows, b_cols)),
                             shape=(n, len(wells))).tocsr()

    return StateSpaceSystem(v_diag=np.asarray(v_diag, dtype=float),
                            t_matrix=t_matrix, b_matrix=b_matrix,
                            well_cells=tuple(well_cells),
                            well_pi=tuple(well_pi),
                            well_kinds=tuple(well_kinds))
