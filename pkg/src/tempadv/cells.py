"""Time-dilated recurrent cells and window unrolling.

Each cell takes a dilation coefficient that multiplies the recurrent
(past-moment) weight matrices on the forward path, so the dilated weight
participates in both training and attack gradients. Dilation 1.0
reproduces the plain cell exactly.

The LSTM and GRU apply the coefficient asymmetrically: it always scales
the recurrent weights of every gate, and additionally scales the *input*
weights of the LSTM cell-candidate and output gates and of the GRU
candidate state. That input-side scaling balances current-moment against
past-moment content and can be switched off via `dilate_input_weights`
to recover a recurrent-only reading.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterator

import numpy as np

from .errors import ConfigError, InputError, UsageError
from .nn import Tensor, add, init_matrix, linear, mul, one_minus, sigmoid, tanh

CELL_KINDS = ("ornn", "lstm", "gru")


@dataclass
class CellState:
    """Hidden state carried across one window; `cc` only for LSTM."""

    h: Tensor
    cc: Tensor | None = None


def zero_state(cell_kind: str, batch: int, hidden: int) -> CellState:
    h = Tensor(np.zeros((batch, hidden)))
    if cell_kind == "lstm":
        return CellState(h=h, cc=Tensor(np.zeros((batch, hidden))))
    return CellState(h=h)


@dataclass
class OrnnParams:
    w_xh: Tensor  # (hidden, input)
    w_hh: Tensor  # (hidden, hidden)
    bias: Tensor  # (hidden,)
    dilation: float = 1.0

    def __post_init__(self) -> None:
        h = self.w_xh.data.shape[0]
        if self.w_hh.data.shape != (h, h):
            raise ConfigError(f"w_hh must be square ({h}, {h}), got {self.w_hh.data.shape}")
        if not (np.isfinite(self.dilation) and self.dilation > 0):
            raise ConfigError(f"dilation must be finite and > 0, got {self.dilation}")

    @property
    def hidden_dim(self) -> int:
        return self.w_xh.data.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_xh.data.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.w_xh, self.w_hh, self.bias]


@dataclass
class LstmParams:
    w_xf: Tensor
    w_hf: Tensor
    b_f: Tensor
    w_xi: Tensor
    w_hi: Tensor
    b_i: Tensor
    w_xc: Tensor
    w_hc: Tensor
    b_c: Tensor
    w_xo: Tensor
    w_ho: Tensor
    b_o: Tensor
    dilation: float = 1.0
    dilate_input_weights: bool = True

    def __post_init__(self) -> None:
        h, d = self.w_xf.data.shape
        for name in ("w_hf", "w_hi", "w_hc", "w_ho"):
            if getattr(self, name).data.shape != (h, h):
                raise ConfigError(f"{name} must be ({h}, {h}), got {getattr(self, name).data.shape}")
        for name in ("w_xi", "w_xc", "w_xo"):
            if getattr(self, name).data.shape != (h, d):
                raise ConfigError(f"{name} must be ({h}, {d}), got {getattr(self, name).data.shape}")
        if not (np.isfinite(self.dilation) and self.dilation > 0):
            raise ConfigError(f"dilation must be finite and > 0, got {self.dilation}")

    @property
    def hidden_dim(self) -> int:
        return self.w_xf.data.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_xf.data.shape[1]

    def parameters(self) -> list[Tensor]:
        return [getattr(self, f.name) for f in fields(self) if f.type == "Tensor"]


@dataclass
class GruParams:
    w_xr: Tensor
    w_hr: Tensor
    b_r: Tensor
    w_xz: Tensor
    w_hz: Tensor
    b_z: Tensor
    w_xh: Tensor
    w_hh: Tensor
    b_h: Tensor
    dilation: float = 1.0
    dilate_input_weights: bool = True

    def __post_init__(self) -> None:
        h, d = self.w_xr.data.shape
        for name in ("w_hr", "w_hz", "w_hh"):
            if getattr(self, name).data.shape != (h, h):
                raise ConfigError(f"{name} must be ({h}, {h}), got {getattr(self, name).data.shape}")
        for name in ("w_xz", "w_xh"):
            if getattr(self, name).data.shape != (h, d):
                raise ConfigError(f"{name} must be ({h}, {d}), got {getattr(self, name).data.shape}")
        if not (np.isfinite(self.dilation) and self.dilation > 0):
            raise ConfigError(f"dilation must be finite and > 0, got {self.dilation}")

    @property
    def hidden_dim(self) -> int:
        return self.w_xr.data.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_xr.data.shape[1]

    def parameters(self) -> list[Tensor]:
        return [getattr(self, f.name) for f in fields(self) if f.type == "Tensor"]


CellParams = OrnnParams | LstmParams | GruParams


def init_cell(cell_kind: str, rng: np.random.Generator, input_dim: int, hidden_dim: int,
              dilation: float = 1.0, dilate_input_weights: bool = True) -> CellParams:
    """Seeded uniform init of one cell's weights; biases start at zero."""
    def w(out, inn):
        return init_matrix(rng, out, inn)

    def b():
        return Tensor(np.zeros(hidden_dim))

    if cell_kind == "ornn":
        return OrnnParams(w(hidden_dim, input_dim), w(hidden_dim, hidden_dim), b(), dilation)
    if cell_kind == "lstm":
        return LstmParams(
            w(hidden_dim, input_dim), w(hidden_dim, hidden_dim), b(),
            w(hidden_dim, input_dim), w(hidden_dim, hidden_dim), b(),
            w(hidden_dim, input_dim), w(hidden_dim, hidden_dim), b(),
            w(hidden_dim, input_dim), w(hidden_dim, hidden_dim), b(),
            dilation, dilate_input_weights,
        )
    if cell_kind == "gru":
        return GruParams(
            w(hidden_dim, input_dim), w(hidden_dim, hidden_dim), b(),
            w(hidden_dim, input_dim), w(hidden_dim, hidden_dim), b(),
            w(hidden_dim, input_dim), w(hidden_dim, hidden_dim), b(),
            dilation, dilate_input_weights,
        )
    raise ConfigError(f"unknown cell kind {cell_kind!r}; expected one of {CELL_KINDS}")


def _check_step_shapes(x_t: Tensor, state: CellState, p: CellParams) -> None:
    if x_t.data.ndim != 2 or x_t.data.shape[1] != p.input_dim:
        raise ConfigError(
            f"step input must be (batch, {p.input_dim}), got {x_t.data.shape}"
        )
    if state.h.data.shape != (x_t.data.shape[0], p.hidden_dim):
        raise ConfigError(
            f"state must be (batch, {p.hidden_dim}), got {state.h.data.shape}"
        )


def td_ornn_step(x_t: Tensor, state: CellState, p: OrnnParams) -> CellState:
    """h_t = tanh(W_xh·x_t + (dilation · W_hh)·h_prev + bias)."""
    _check_step_shapes(x_t, state, p)
    pre = add(linear(x_t, p.w_xh, p.bias), linear(state.h, p.w_hh, scale=p.dilation))
    return CellState(h=tanh(pre))


def td_lstm_step(x_t: Tensor, state: CellState, p: LstmParams) -> CellState:
    _check_step_shapes(x_t, state, p)
    if state.cc is None:
        raise UsageError("LSTM step needs a state with a cell buffer (cc)")
    hn = p.dilation
    hx = hn if p.dilate_input_weights else 1.0
    h = state.h
    f = sigmoid(add(linear(x_t, p.w_xf, p.b_f), linear(h, p.w_hf, scale=hn)))
    i = sigmoid(add(linear(x_t, p.w_xi, p.b_i), linear(h, p.w_hi, scale=hn)))
    c = tanh(add(linear(x_t, p.w_xc, p.b_c, scale=hx), linear(h, p.w_hc, scale=hn)))
    cc = add(mul(f, state.cc), mul(i, c))
    o = sigmoid(add(linear(x_t, p.w_xo, p.b_o, scale=hx), linear(h, p.w_ho, scale=hn)))
    return CellState(h=mul(o, tanh(cc)), cc=cc)


def td_gru_step(x_t: Tensor, state: CellState, p: GruParams) -> CellState:
    _check_step_shapes(x_t, state, p)
    hn = p.dilation
    hx = hn if p.dilate_input_weights else 1.0
    h = state.h
    r = sigmoid(add(linear(x_t, p.w_xr, p.b_r), linear(h, p.w_hr, scale=hn)))
    z = sigmoid(add(linear(x_t, p.w_xz, p.b_z), linear(h, p.w_hz, scale=hn)))
    cand = tanh(add(linear(x_t, p.w_xh, p.b_h, scale=hx), linear(mul(r, h), p.w_hh, scale=hn)))
    return CellState(h=add(mul(z, cand), mul(one_minus(z), h)))


_STEPS = {"ornn": td_ornn_step, "lstm": td_lstm_step, "gru": td_gru_step}


def step(cell_kind: str, x_t: Tensor, state: CellState, p: CellParams) -> CellState:
    try:
        fn = _STEPS[cell_kind]
    except KeyError:
        raise ConfigError(f"unknown cell kind {cell_kind!r}; expected one of {CELL_KINDS}") from None
    return fn(x_t, state, p)


def unroll(cell_kind: str, p: CellParams, inputs: list[Tensor]) -> list[CellState]:
    """Run a zero-initialized cell over one window of step inputs.

    `inputs` is a list of (batch, input_dim) Tensors, one per moment.
    Returns the state after every moment; each moment's classification
    reads its own hidden state, so past records influence it only
    through the recurrence.
    """
    if len(inputs) == 0:
        raise InputError("cannot unroll an empty input sequence")
    state = zero_state(cell_kind, inputs[0].data.shape[0], p.hidden_dim)
    states: list[CellState] = []
    for x_t in inputs:
        state = step(cell_kind, x_t, state, p)
        states.append(state)
    return states
