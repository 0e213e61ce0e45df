"""Control-aware convolutional-recurrent surrogate network.

Architecture: a dual-branch encoder (a 3-layer strided conv stack for the
pressure field, and a well-location projection + pixel-unshuffle + conv
for the control vector), a convolutional LSTM cell that gates on both
encoded inputs, and an upsampling decoder whose output feeds a residual
connection in physical pressure units:

    x_k = x_{k-1} + p_scale * decode(h_k)

Weights are shared across all unrolled timesteps; the hidden state pair
(h, c) is an explicit input so a trained model can be warm-started to
extrapolate beyond its training horizon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .reservoir import ControlSchedule, Grid

LATENT_CHANNELS = 64
ENC_CHANNELS = (16, 32, 64)
ENC_KERNEL, ENC_STRIDE, ENC_PADDING = 4, 2, 1
CTRL_KERNEL, CTRL_PADDING = 5, 2
LSTM_KERNEL, LSTM_PADDING = 3, 1
DEC_CHANNELS = (64, 32, 16)
DOWNSCALE = 8
GATES = ("f", "i", "c", "o")


class RolloutError(RuntimeError):
    """Non-finite state encountered mid-rollout."""

    def __init__(self, msg: str, step: int):
        super().__init__(msg)
        self.step = step


@dataclass(frozen=True)
class Normalizer:
    """Affine map to normalized pressure: (x - p_ref) / p_scale."""

    p_ref: float  # Pa, typically the initial pressure
    p_scale: float  # Pa, typically initial pressure minus lowest scheduled BHP

    def __post_init__(self):
        if self.p_scale <= 0:
            raise ValueError("p_scale must be positive")

    def normalize(self, x):
        return (x - self.p_ref) / self.p_scale

    def denormalize(self, x):
        return x * self.p_scale + self.p_ref


@dataclass
class HiddenState:
    h: Tensor  # (1, 64, H/8, W/8)
    c: Tensor

    def detach(self) -> "HiddenState":
        return HiddenState(self.h.detach(), self.c.detach())


def _wn_conv_params(name: str, out_ch: int, in_ch: int, k: int,
                    rng: np.random.Generator, params: dict[str, Tensor]):
    """Weight-normalized conv: g initialized to the Kaiming draw's filter norms."""
    v = ad.kaiming_init((out_ch, in_ch, k, k), in_ch * k * k, rng)
    g = np.sqrt((v ** 2).sum(axis=(1, 2, 3)))
    params[f"{name}.v"] = Tensor(v, requires_grad=True)
    params[f"{name}.g"] = Tensor(g, requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(out_ch), requires_grad=True)


def init_params(seed: int) -> dict[str, Tensor]:
    """All trainable weights; shapes are independent of grid size."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    in_ch = 1
    for layer, out_ch in enumerate(ENC_CHANNELS, start=1):
        _wn_conv_params(f"enc{layer}", out_ch, in_ch, ENC_KERNEL, rng, params)
        in_ch = out_ch
    _wn_conv_params("ctrl", LATENT_CHANNELS, DOWNSCALE * DOWNSCALE, CTRL_KERNEL,
                    rng, params)
    fan_in = LATENT_CHANNELS * LSTM_KERNEL * LSTM_KERNEL
    for gate in GATES:
        for src in ("h", "x", "u"):
            params[f"lstm.{gate}{src}.w"] = Tensor(
                ad.kaiming_init((LATENT_CHANNELS, LATENT_CHANNELS,
                                 LSTM_KERNEL, LSTM_KERNEL), fan_in, rng),
                requires_grad=True)
        params[f"lstm.{gate}.b"] = Tensor(np.zeros(LATENT_CHANNELS),
                                          requires_grad=True)
    in_ch = LATENT_CHANNELS
    for layer, out_ch in enumerate(DEC_CHANNELS, start=1):
        _wn_conv_params(f"dec{layer}", out_ch, in_ch, LSTM_KERNEL, rng, params)
        in_ch = out_ch
    params["out.w"] = Tensor(ad.kaiming_init((1, DEC_CHANNELS[-1], 1, 1),
                                             DEC_CHANNELS[-1], rng),
                             requires_grad=True)
    params["out.b"] = Tensor(np.zeros(1), requires_grad=True)
    return params


def parameter_count(params: dict[str, Tensor]) -> int:
    return sum(p.data.size for p in params.values())


class RolloutWeights:
    """Effective filters shared by every step of one unrolled pass.

    Weight-normalized filters and the fused gate banks are pure functions of
    the parameters, so they are materialized once per rollout (the graph
    still routes gradients back to the underlying v/g/W tensors).
    """

    WN_LAYERS = ("enc1", "enc2", "enc3", "ctrl", "dec1", "dec2", "dec3")

    def __init__(self, params: dict[str, Tensor]):
        self.effective = {name: ad.weight_norm(params[f"{name}.v"],
                                               params[f"{name}.g"])
                          for name in self.WN_LAYERS}
        self.bias = {name: params[f"{name}.b"] for name in self.WN_LAYERS}
        self.gate_w = {src: ad.concat0([params[f"lstm.{gate}{src}.w"]
                                        for gate in GATES])
                       for src in ("h", "x", "u")}
        self.gate_b = ad.concat0([params[f"lstm.{gate}.b"] for gate in GATES])
        self.out_w = params["out.w"]
        self.out_b = params["out.b"]


def _wn_conv(name: str, x: Tensor, weights: RolloutWeights,
             stride: int, padding: int) -> Tensor:
    return ad.conv2d(x, weights.effective[name], weights.bias[name],
                     stride=stride, padding=padding)


def encode_state(x_norm: Tensor, params: dict[str, Tensor],
                 weights: RolloutWeights | None = None) -> Tensor:
    """(1, 1, H, W) normalized pressure -> (1, 64, H/8, W/8) latent."""
    _, _, h, w = x_norm.shape
    if h % DOWNSCALE or w % DOWNSCALE or h < DOWNSCALE or w < DOWNSCALE:
        raise ad.ShapeError(f"grid dims {(h, w)} must be divisible by {DOWNSCALE}")
    if weights is None:
        weights = RolloutWeights(params)
    out = x_norm
    for layer in range(1, len(ENC_CHANNELS) + 1):
        out = ad.tanh(_wn_conv(f"enc{layer}", out, weights,
                               ENC_STRIDE, ENC_PADDING))
    return out


def control_map(u_norm: np.ndarray, well_cells, grid: Grid) -> np.ndarray:
    """Project normalized controls onto their well cells: zero elsewhere."""
    field = np.zeros((1, 1, grid.ny, grid.nx))
    for value, cell in zip(u_norm, well_cells):
        i, j = grid.unflatten(int(cell))
        if not grid.in_bounds(i, j):
            raise ad.ShapeError(f"well cell {cell} outside grid")
        field[0, 0, j, i] = value
    return field


def encode_control(u_norm: np.ndarray, well_cells, grid: Grid,
                   params: dict[str, Tensor],
                   weights: RolloutWeights | None = None) -> Tensor:
    """Control vector -> (1, 64, H/8, W/8) latent via unshuffle + conv."""
    if weights is None:
        weights = RolloutWeights(params)
    unshuffled = ad.pixel_unshuffle(Tensor(control_map(u_norm, well_cells, grid)),
                                    DOWNSCALE)
    return _wn_conv("ctrl", unshuffled, weights, stride=1, padding=CTRL_PADDING)


def convlstm_cell(prev: HiddenState, ex: Tensor, eu: Tensor,
                  params: dict[str, Tensor],
                  weights: RolloutWeights | None = None) -> HiddenState:
    """Gated update with the encoded control as a third convolved input.

    All four gates see the previous hidden state, the encoded state and the
    encoded control through their own 3x3 convolutions; the gate banks are
    evaluated as one fused convolution and split along channels.
    """
    if weights is None:
        weights = RolloutWeights(params)
    pre = ad.conv2d(prev.h, weights.gate_w["h"], None,
                    stride=1, padding=LSTM_PADDING)
    pre = ad.add(pre, ad.conv2d(ex, weights.gate_w["x"], None,
                                stride=1, padding=LSTM_PADDING))
    pre = ad.add(pre, ad.conv2d(eu, weights.gate_w["u"], weights.gate_b,
                                stride=1, padding=LSTM_PADDING))
    ch = LATENT_CHANNELS
    f_k = ad.sigmoid(ad.channel_slice(pre, 0, ch))
    i_k = ad.sigmoid(ad.channel_slice(pre, ch, 2 * ch))
    c_tilde = ad.tanh(ad.channel_slice(pre, 2 * ch, 3 * ch))
    o_k = ad.sigmoid(ad.channel_slice(pre, 3 * ch, 4 * ch))
    c_k = ad.add(ad.hadamard(f_k, prev.c), ad.hadamard(i_k, c_tilde))
    h_k = ad.hadamard(o_k, ad.tanh(c_k))
    return HiddenState(h_k, c_k)


def decode(h: Tensor, params: dict[str, Tensor],
           weights: RolloutWeights | None = None) -> Tensor:
    """(1, 64, H/8, W/8) latent -> (1, 1, H, W) normalized increment."""
    if weights is None:
        weights = RolloutWeights(params)
    out = h
    for layer in range(1, len(DEC_CHANNELS) + 1):
        out = ad.upsample_nearest(out, 2)
        out = ad.tanh(_wn_conv(f"dec{layer}", out, weights, 1, LSTM_PADDING))
    return ad.conv2d(out, weights.out_w, weights.out_b, stride=1, padding=0)


class Picrnn:
    """Surrogate model bound to a grid, well locations and a normalizer."""

    def __init__(self, grid: Grid, well_cells, normalizer: Normalizer,
                 seed: int = 0, params: dict[str, Tensor] | None = None):
        if grid.nx % DOWNSCALE or grid.ny % DOWNSCALE:
            raise ad.ShapeError("grid dims must be divisible by 8")
        self.grid = grid
        self.well_cells = tuple(int(c) for c in well_cells)
        self.normalizer = normalizer
        self.seed = seed
        self.params = params if params is not None else init_params(seed)

    @property
    def latent_shape(self) -> tuple[int, int, int, int]:
        return (1, LATENT_CHANNELS, self.grid.ny // DOWNSCALE,
                self.grid.nx // DOWNSCALE)

    def initial_hidden(self) -> HiddenState:
        return HiddenState(Tensor(np.zeros(self.latent_shape)),
                           Tensor(np.zeros(self.latent_shape)))

    def rollout(self, x0: np.ndarray, schedule: ControlSchedule, steps: int,
                hidden: HiddenState | None = None
                ) -> tuple[list[Tensor], HiddenState]:
        """Unroll the recurrence for ``steps`` timesteps.

        Returns the full state sequence [x_0, ..., x_steps] as graph tensors
        (states in Pa) and the final hidden pair for warm-started
        extrapolation.
        """
        if steps > schedule.num_steps:
            raise ValueError(f"steps {steps} exceeds schedule length "
                             f"{schedule.num_steps}")
        x0 = np.asarray(x0, dtype=float)
        if not np.all(np.isfinite(x0)):
            raise RolloutError("initial state contains non-finite values", 0)
        nm = self.normalizer
        state = hidden if hidden is not None else self.initial_hidden()
        x_prev = Tensor(x0.reshape(1, 1, self.grid.ny, self.grid.nx))
        states = [x_prev]
        weights = RolloutWeights(self.params)
        encoded_controls: dict[bytes, Tensor] = {}
        for k in range(steps):
            u_norm = nm.normalize(schedule.control_at(k))
            x_norm = ad.affine(x_prev, 1.0 / nm.p_scale, -nm.p_ref / nm.p_scale)
            ex = encode_state(x_norm, self.params, weights)
            key = u_norm.tobytes()
            eu = encoded_controls.get(key)
            if eu is None:
                eu = encode_control(u_norm, self.well_cells, self.grid,
                                    self.params, weights)
                encoded_controls[key] = eu
            state = convlstm_cell(state, ex, eu, self.params, weights)
            increment = decode(state.h, self.params, weights)
            x_prev = ad.add(x_prev, ad.affine(increment, nm.p_scale))
            if not np.all(np.isfinite(x_prev.data)):
                raise RolloutError(f"non-finite state at step {k + 1}", k + 1)
            states.append(x_prev)
        return states, state
