"""Reference implicit finite-volume simulator.

Marches the assembled state-space system with backward Euler:
(V/dt - T) x_{k+1} = (V/dt) x_k + B u_k. The system matrix is SPD, so the
default linear solver is (optionally Jacobi-preconditioned) conjugate
gradients; a dense direct solve is available for n <= 1024 as a
cross-check oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .reservoir import ControlKind, ControlSchedule, Provenance, Trajectory
from .statespace import StateSpaceSystem

DENSE_DIRECT_MAX_N = 1024


class SolverError(RuntimeError):
    """Linear solver failed to reach the requested tolerance."""

    def __init__(self, msg: str, iterations: int, achieved: float):
        super().__init__(msg)
        self.iterations = iterations
        self.achieved = achieved


class SimulationError(RuntimeError):
    """A time step failed; carries the partial trajectory for diagnostics."""

    def __init__(self, msg: str, partial: Trajectory, step: int):
        super().__init__(msg)
        self.partial = partial
        self.step = step


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-10  # relative residual ||Ax - b|| / ||b||
    max_iterations: int = 10_000
    method: str = "cg"  # "cg" | "dense"
    jacobi_preconditioner: bool = False

    def __post_init__(self):
        if not 0 < self.tolerance < 1:
            raise ValueError("tolerance must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.method not in ("cg", "dense"):
            raise ValueError(f"unknown solver method {self.method!r}")


def solve_spd(a_matrix, b: np.ndarray, cfg: SolverConfig = SolverConfig(),
              x0: np.ndarray | None = None) -> np.ndarray:
    """Solve A x = b for SPD A to the configured relative residual."""
    b = np.asarray(b, dtype=float)
    if cfg.method == "dense":
        a_dense = a_matrix.toarray() if sp.issparse(a_matrix) else np.asarray(a_matrix)
        if a_dense.shape[0] > DENSE_DIRECT_MAX_N:
            raise SolverError(
                f"dense direct solve limited to n <= {DENSE_DIRECT_MAX_N}", 0, np.inf)
        return np.linalg.solve(a_dense, b)

    a_matrix = sp.csr_matrix(a_matrix)
    m = sp.diags(1.0 / a_matrix.diagonal()) if cfg.jacobi_preconditioner else None
    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    x, info = spla.cg(a_matrix, b, x0=x0, rtol=cfg.tolerance, atol=0.0,
                      maxiter=cfg.max_iterations, M=m, callback=count)
    b_norm = np.linalg.norm(b)
    achieved = np.linalg.norm(a_matrix @ x - b) / b_norm if b_norm > 0 else 0.0
    if info != 0 or achieved > cfg.tolerance:
        raise SolverError(
            f"CG did not converge: relative residual {achieved:.3e} after "
            f"{iters} iterations (target {cfg.tolerance:.1e})", iters, achieved)
    return x


def step(system: StateSpaceSystem, x_k: np.ndarray, u_k: np.ndarray,
         dt: float, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """One backward-Euler step: (V/dt - T) x_{k+1} = (V/dt) x_k + B u_k."""
    x_k = np.asarray(x_k, dtype=float)
    u_k = np.asarray(u_k, dtype=float)
    if x_k.shape != (system.n,):
        raise ValueError(f"state must have shape ({system.n},)")
    if u_k.shape != (system.m,):
        raise ValueError(f"control must have shape ({system.m},)")
    rhs = (system.v_diag / dt) * x_k + system.b_matrix @ u_k
    return solve_spd(system.implicit_matrix(dt), rhs, cfg, x0=x_k)


def simulate(system: StateSpaceSystem, x0: np.ndarray, schedule: ControlSchedule,
             cfg: SolverConfig = SolverConfig()) -> Trajectory:
    """March the full schedule; returns snapshots x_0..x_t."""
    if schedule.num_steps < 1:
        raise ValueError("schedule must cover at least one step")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.n,):
        raise ValueError(f"initial state must have shape ({system.n},)")
    snaps = [x0]
    for k in range(schedule.num_steps):
        try:
            snaps.append(step(system, snaps[-1], schedule.control_at(k),
                              schedule.dt, cfg))
        except SolverError as exc:
            partial = Trajectory(np.stack(snaps), schedule.dt, Provenance.FV)
            raise SimulationError(
                f"step {k} failed: {exc}", partial, k) from exc
    return Trajectory(np.stack(snaps), schedule.dt, Provenance.FV)


def well_rates(system: StateSpaceSystem, x: np.ndarray,
               u: np.ndarray) -> np.ndarray:
    """Per-well rates (m^3/s): PI*(P_cell - P_wf) for BHP wells, u for RATE."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (system.n,) or u.shape != (system.m,):
        raise ValueError("dimension mismatch")
    rates = np.empty(system.m)
    for w, (cell, pi, kind) in enumerate(
            zip(system.well_cells, system.well_pi, system.well_kinds)):
        rates[w] = pi * (x[cell] - u[w]) if kind is ControlKind.BHP else u[w]
    return rates
