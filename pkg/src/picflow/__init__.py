"""Single-phase reservoir state-space modeling with a physics-informed
convolutional-recurrent surrogate.

Layers: reservoir domain model -> TPFA/Peaceman state-space assembly ->
implicit finite-volume reference simulator, and in parallel an autodiff
engine -> convolutional-recurrent surrogate -> unsupervised residual-loss
training with extrapolation to unseen future controls.
"""

from .reservoir import (ControlKind, ControlSchedule, Grid, Provenance,
                        ReservoirModel, RockFluid, Trajectory, WellSpec,
                        uniform_model, validate_model)
from .statespace import (StateSpaceSystem, assemble, face_transmissibility,
                         peaceman_pi)
from .fv import SolverConfig, simulate, solve_spd, step, well_rates
from .model import HiddenState, Normalizer, Picrnn
from .training import (LossRecord, TrainConfig, extrapolate, lr_schedule,
                       normalizer_for, physics_loss, predict, train)
from .units import from_si, to_si

__version__ = "0.1.0"
