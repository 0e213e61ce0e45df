import numpy as np
import pytest

from picflow import (ControlSchedule, WellSpec, assemble, simulate,
                     uniform_model)
from picflow.fv import SolverConfig
from picflow.units import to_si

PSI = to_si(1.0, "psi")
DAY = to_si(1.0, "day")
MD = to_si(1.0, "mD")
CP = to_si(1.0, "cp")

# shared physical properties for the test cases
PHI = 0.20
K_SI = 50 * MD
MU_SI = 1.13 * CP
CT_SI = 1.0e-5 / PSI
P_INIT = 3000 * PSI
P_WF = 1800 * PSI
R_W = 0.09


def make_model(nx=16, ny=16, domain=40.0, wells=(), perm=None, dz=1.0):
    dx, dy = domain / nx, domain / ny
    model = uniform_model(nx, ny, dx, dy, dz, PHI, K_SI, MU_SI, CT_SI,
                          P_INIT, wells)
    if perm is not None:
        from picflow.reservoir import ReservoirModel, RockFluid
        rf = model.rock_fluid
        model = ReservoirModel(model.grid, RockFluid(
            rf.porosity, perm, rf.viscosity, rf.compressibility,
            rf.initial_pressure), tuple(wells))
    return model


@pytest.fixture(scope="session")
def desk_model():
    """16x16 homogeneous reservoir, two symmetric BHP producers."""
    return make_model(wells=(WellSpec(3, 3, R_W, name="P1"),
                             WellSpec(12, 12, R_W, name="P2")))


@pytest.fixture(scope="session")
def desk_system(desk_model):
    return assemble(desk_model)


@pytest.fixture(scope="session")
def desk_schedule():
    return ControlSchedule(np.full((2, 70), P_WF), 0.5 * DAY)


@pytest.fixture(scope="session")
def desk_x0(desk_system):
    return np.full(desk_system.n, P_INIT)


@pytest.fixture(scope="session")
def case1_model():
    """64x64 reference case: K = 50 mD, producers on the diagonal."""
    return make_model(nx=64, ny=64, wells=(WellSpec(10, 10, R_W, name="P1"),
                                           WellSpec(54, 54, R_W, name="P2")))


@pytest.fixture(scope="session")
def case1_system(case1_model):
    return assemble(case1_model)


@pytest.fixture(scope="session")
def case1_schedule():
    return ControlSchedule(np.full((2, 400), P_WF), 0.5 * DAY)


@pytest.fixture(scope="session")
def case1_trajectory(case1_system, case1_schedule):
    x0 = np.full(case1_system.n, P_INIT)
    return simulate(case1_system, x0, case1_schedule,
                    SolverConfig(tolerance=1e-10, jacobi_preconditioner=True))
