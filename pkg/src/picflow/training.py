"""Unsupervised physics-informed training loop and extrapolation driver.

The loss is the smooth-L1 of the backward-Euler state-space residual,
averaged over cells and summed over the unrolled timesteps. No labeled
data enters anywhere: the finite-volume simulator is used only as an
evaluation oracle, never in the loss.

Residual scaling modes:
  * "nondimensional": each cell's residual is divided by the characteristic
    accumulation rate V_ii * p_scale / dt, making it O(1) regardless of grid
    or unit choices; beta defaults to 1.
  * "paper-units": the residual is expressed per day (m^3/day) and compared
    with beta = 50.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor
from .model import HiddenState, Normalizer, Picrnn
from .reservoir import (ControlKind, ControlSchedule, Provenance, ReservoirModel,
                        Trajectory)
from .statespace import StateSpaceSystem
from .units import DAY_TO_S

SCALING_MODES = ("nondimensional", "paper-units")
DEFAULT_BETA = {"nondimensional": 1.0, "paper-units": 50.0}


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the partial loss record."""

    def __init__(self, msg: str, record: "LossRecord"):
        super().__init__(msg)
        self.record = record


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    learning_rate: float = 0.0023
    decay: float = 0.995
    decay_interval: int = 100
    steps: int = 300  # unrolled timesteps per epoch
    dt: float | None = None  # s; defaults to the schedule's dt
    beta: float | None = None  # smooth-L1 threshold; default depends on scaling
    scaling: str = "nondimensional"
    seed: int = 0
    checkpoint_every: int = 500
    grad_clip: float | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.scaling not in SCALING_MODES:
            raise ValueError(f"unknown scaling mode {self.scaling!r}")
        if self.beta is not None and self.beta <= 0:
            raise ValueError("beta must be positive")

    @property
    def effective_beta(self) -> float:
        return self.beta if self.beta is not None else DEFAULT_BETA[self.scaling]


@dataclass
class LossRecord:
    epochs: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)

    def append(self, epoch: int, loss: float, lr: float, ms: float):
        self.epochs.append(epoch)
        self.losses.append(loss)
        self.learning_rates.append(lr)
        self.wall_ms.append(ms)

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epoch,loss,lr,wall_ms\n")
            for e, l, r, ms in zip(self.epochs, self.losses,
                                   self.learning_rates, self.wall_ms):
                fh.write(f"{e},{l!r},{r!r},{ms:.3f}\n")


def lr_schedule(epoch: int, eta0: float, gamma: float, interval: int) -> float:
    """Stepped decay: eta0 * gamma^floor(epoch/interval)."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return eta0 * gamma ** (epoch // interval)


def residual_scale(system: StateSpaceSystem, dt: float, scaling: str,
                   p_scale: float | None = None) -> np.ndarray:
    """Per-cell multiplier applied to the SI residual before the loss."""
    if scaling == "nondimensional":
        if p_scale is None or p_scale <= 0:
            raise ValueError("nondimensional scaling needs a positive p_scale")
        return dt / (system.v_diag * p_scale)
    if scaling == "paper-units":
        return np.full(system.n, DAY_TO_S)
    raise ValueError(f"unknown scaling mode {scaling!r}")


def _scaled_residual(x_k: Tensor, x_km1: Tensor, system: StateSpaceSystem,
                     u_k: np.ndarray, dt: float,
                     scale: np.ndarray) -> Tensor:
    """Differentiable scaled residual; exploits T's symmetry in the pullback."""
    xk = x_k.data.reshape(system.n)
    xkm1 = x_km1.data.reshape(system.n)
    r = (-system.v_diag * (xk - xkm1) / dt
         + system.t_matrix @ xk + system.b_matrix @ u_k) * scale
    out = Tensor(r, _parents=(x_k, x_km1))

    def backward(g: np.ndarray):
        gs = g * scale
        x_k._accum((system.t_matrix @ gs - system.v_diag * gs / dt)
                   .reshape(x_k.shape))
        x_km1._accum((system.v_diag * gs / dt).reshape(x_km1.shape))

    out._backward = backward
    return out


def physics_loss(system: StateSpaceSystem, states, schedule: ControlSchedule,
                 dt: float, beta: float, scaling: str = "nondimensional",
                 p_scale: float | None = None) -> Tensor:
    """Smooth-L1 of the state-space residual: mean over cells, sum over steps.

    ``states`` is either a list of graph tensors (training path, gradient
    flows through them) or a (t+1, n) array / Trajectory (evaluation path).
    """
    if isinstance(states, Trajectory):
        states = states.snapshots
    if isinstance(states, np.ndarray):
        states = [Tensor(row) for row in states]
    t = len(states) - 1
    if t < 1:
        raise ValueError("need at least x_0 and x_1")
    if schedule.num_steps < t:
        raise ValueError(f"schedule covers {schedule.num_steps} steps, "
                         f"trajectory needs {t}")
    scale = residual_scale(system, dt, scaling, p_scale)
    zero = np.zeros(system.n)
    total = None
    for k in range(1, t + 1):
        r = _scaled_residual(states[k], states[k - 1], system,
                             schedule.control_at(k - 1), dt, scale)
        term = ad.smooth_l1(r, zero, beta, reduction="mean")
        total = term if total is None else ad.add(total, term)
    return total


def normalizer_for(model: ReservoirModel, schedule: ControlSchedule) -> Normalizer:
    """p_ref = initial pressure; p_scale = drawdown to the lowest scheduled BHP."""
    p0 = model.rock_fluid.initial_pressure
    bhp_rows = [w_idx for w_idx, w in enumerate(model.wells)
                if w.kind is ControlKind.BHP]
    if bhp_rows:
        p_min = float(schedule.values[bhp_rows].min())
        if p_min < p0:
            return Normalizer(p0, p0 - p_min)
    # no BHP wells (or none below p0): fall back to a 1% pressure scale
    return Normalizer(p0, 0.01 * p0)


def _clip_gradients(params: dict[str, Tensor], max_norm: float):
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad ** 2).sum())
    total = np.sqrt(total)
    if total > max_norm:
        factor = max_norm / total
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor


def train(surrogate: Picrnn, system: StateSpaceSystem, x0: np.ndarray,
          schedule: ControlSchedule, cfg: TrainConfig,
          checkpoint_hook=None) -> tuple[dict[str, Tensor], LossRecord]:
    """Algorithm: per epoch, one full rollout, aggregated residual loss,
    backprop, Adam step under the stepped learning-rate decay.

    ``checkpoint_hook(tag, epoch, surrogate, record)`` is invoked at the
    configured cadence and whenever the best loss improves.
    """
    if schedule.num_steps < cfg.steps:
        raise ValueError("schedule shorter than the configured unroll")
    dt = cfg.dt if cfg.dt is not None else schedule.dt
    beta = cfg.effective_beta
    record = LossRecord()
    adam = AdamState(surrogate.params)
    best = np.inf
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        lr = lr_schedule(epoch, cfg.learning_rate, cfg.decay, cfg.decay_interval)
        ad.zero_grads(surrogate.params.values())
        states, _ = surrogate.rollout(x0, schedule, cfg.steps)
        loss = physics_loss(system, states, schedule, dt, beta, cfg.scaling,
                            surrogate.normalizer.p_scale)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}", record)
        loss.backward()
        if cfg.grad_clip is not None:
            _clip_gradients(surrogate.params, cfg.grad_clip)
        ad.adam_step(surrogate.params, adam, lr)
        record.append(epoch, value, lr,
                      (time.perf_counter() - start) * 1e3)
        if checkpoint_hook is not None:
            if value < best:
                best = value
                checkpoint_hook("best", epoch, surrogate, record)
            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                checkpoint_hook(f"epoch{epoch + 1}", epoch, surrogate, record)
    return surrogate.params, record


def predict(surrogate: Picrnn, x0: np.ndarray, schedule: ControlSchedule,
            steps: int, hidden: HiddenState | None = None
            ) -> tuple[Trajectory, HiddenState]:
    """Frozen-weights rollout returning plain snapshots x_0..x_steps."""
    states, final = surrogate.rollout(x0, schedule, steps, hidden=hidden)
    snaps = np.stack([s.data.reshape(-1) for s in states])
    return Trajectory(snaps, schedule.dt, Provenance.NN), final.detach()


def extrapolate(surrogate: Picrnn, x_t: np.ndarray, hidden: HiddenState,
                future_schedule: ControlSchedule, steps: int
                ) -> tuple[Trajectory, HiddenState]:
    """Warm-started continuation from the last trained state and hidden pair.

    Returns only the newly predicted snapshots (``steps`` rows; zero steps
    yields an empty trajectory and the hidden state unchanged).
    """
    if steps > future_schedule.num_steps:
        raise ValueError("steps exceeds the future schedule length")
    if steps == 0:
        return (Trajectory(np.empty((0, x_t.size)), future_schedule.dt,
                           Provenance.NN), hidden)
    states, final = surrogate.rollout(x_t, future_schedule, steps,
                                      hidden=hidden.detach())
    snaps = np.stack([s.data.reshape(-1) for s in states[1:]])
    return Trajectory(snaps, future_schedule.dt, Provenance.NN), final.detach()
