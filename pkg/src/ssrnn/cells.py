"""Single-timestep forward passes for RNN / LSTM / GRU cells.

The hidden-to-hidden transform of every gate is a StructuredMatrix, so the
same step code runs full, grouped, banded and diagonal cells. Gate order is
fixed and part of the checkpoint format:

    LSTM: i (input), f (forget), g (candidate), o (output)
    GRU:  r (reset), z (update), n (candidate)

GRU applies the reset gate to h_{t-1} before the recurrent transform.
Under SIH gating, all gates of a gated cell share one input-to-hidden
matrix (key "shared"); per-gate recurrent matrices and biases remain.

Step functions are pure and batched: x is (B, n_input), h/c are (B, n_hidden).
They return (new_state, cache) where cache holds the intermediates needed
by backpropagation; callers that only want inference can drop it.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import linalg
from .connectivity import (
    GATE_MULTIPLIER,
    StructuredMatrix,
    Topology,
    count_recurrent_weights,
)
from .linalg import ACTIVATIONS, DTYPE, ShapeError, init_uniform, sigmoid

GATE_ORDER = {"rnn": ("h",), "lstm": ("i", "f", "g", "o"), "gru": ("r", "z", "n")}

STANDARD = "standard"
SIH = "sih"


@dataclass(frozen=True)
class CellSpec:
    kind: str                    # rnn | lstm | gru
    topology: Topology
    n_hidden: int
    n_input: int
    gating: str = STANDARD       # standard | sih
    activation: str = "tanh"     # rnn body / lstm-gru candidate

    def __post_init__(self):
        if self.kind not in GATE_ORDER:
            raise ValueError(f"unknown cell kind {self.kind!r}")
        if self.gating not in (STANDARD, SIH):
            raise ValueError(f"unknown gating mode {self.gating!r}")
        if self.gating == SIH and self.kind == "rnn":
            raise ValueError("SIH gating requires a gated cell (lstm or gru)")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.n_hidden < 1 or self.n_input < 1:
            raise ValueError("layer sizes must be >= 1")
        self.topology.validate(self.n_hidden)

    @property
    def gates(self):
        return GATE_ORDER[self.kind]

    @property
    def input_keys(self):
        return ("shared",) if self.gating == SIH else self.gates

    def describe(self):
        tag = f"{self.kind}-{self.topology.describe()}-n{self.n_hidden}"
        if self.gating == SIH:
            tag += "-sih"
        return tag


@dataclass
class CellParams:
    """Weights of one cell: input matrices, structured recurrent matrices, biases."""

    w_in: dict       # key -> (n_hidden, n_input)
    w_rec: dict      # gate -> StructuredMatrix
    bias: dict       # gate -> (n_hidden,)

    def recurrent_weight_count(self, spec):
        return count_recurrent_weights(spec.kind, spec.topology, spec.n_hidden)

    def live_recurrent_count(self):
        return sum(w.live_weight_count() for w in self.w_rec.values())

    def total_param_count(self):
        n = sum(w.size for w in self.w_in.values())
        n += sum(w.data.size for w in self.w_rec.values())
        n += sum(b.size for b in self.bias.values())
        return n

    def copy(self):
        return CellParams(
            w_in={k: v.copy() for k, v in self.w_in.items()},
            w_rec={
                k: StructuredMatrix(v.topology, v.n, v.data.copy())
                for k, v in self.w_rec.items()
            },
            bias={k: v.copy() for k, v in self.bias.items()},
        )


@dataclass
class CellState:
    h: np.ndarray
    c: Optional[np.ndarray] = None

    @staticmethod
    def zeros(spec, batch, dtype=DTYPE):
        h = np.zeros((batch, spec.n_hidden), dtype=dtype)
        c = np.zeros_like(h) if spec.kind == "lstm" else None
        return CellState(h, c)


def init_cell(spec, rng, scale=None, forget_bias=1.0):
    """Uniform fan-in-scaled init; only topology-permitted slots are filled.

    LSTM forget-gate bias starts at `forget_bias` for early-training stability.
    """
    n, m = spec.n_hidden, spec.n_input
    in_scale = scale if scale is not None else 1.0 / np.sqrt(m)
    rec_scale = scale if scale is not None else 1.0 / np.sqrt(n)
    w_in = {k: init_uniform(rng, (n, m), in_scale) for k in spec.input_keys}
    w_rec = {
        g: StructuredMatrix.random(spec.topology, n, rng, rec_scale)
        for g in spec.gates
    }
    bias = {g: np.zeros(n, dtype=DTYPE) for g in spec.gates}
    if spec.kind == "lstm":
        bias["f"] += forget_bias
    return CellParams(w_in=w_in, w_rec=w_rec, bias=bias)


def _check_step_shapes(spec, params, x, state):
    if x.shape[-1] != spec.n_input:
        raise ShapeError(
            f"input width {x.shape[-1]} does not match spec n_input {spec.n_input}"
        )
    if state.h.shape[-1] != spec.n_hidden:
        raise ShapeError(
            f"state width {state.h.shape[-1]} does not match spec n_hidden {spec.n_hidden}"
        )
    for k in spec.input_keys:
        if k not in params.w_in:
            raise ShapeError(f"params missing input matrix for gate {k!r} ({spec.gating} gating)")


def _input_drive(spec, params, x):
    """Per-gate input-to-hidden contributions; shared once under SIH."""
    if spec.gating == SIH:
        u = x @ params.w_in["shared"].T
        return {g: u for g in spec.gates}
    return {g: x @ params.w_in[g].T for g in spec.gates}


def rnn_step(spec, params, x, state, partitions=1, pool=None):
    """h_t = act(W_x x + W_h h_{t-1} + b)."""
    _check_step_shapes(spec, params, x, state)
    act = ACTIVATIONS[spec.activation]
    drive = _input_drive(spec, params, x)
    pre = drive["h"] + params.w_rec["h"].matvec(state.h, partitions, pool) + params.bias["h"]
    h = act(pre)
    cache = {"x": x, "h_prev": state.h, "pre": pre, "h": h}
    return CellState(h), cache


def lstm_step(spec, params, x, state, partitions=1, pool=None):
    """Standard LSTM with structured recurrence on every gate."""
    _check_step_shapes(spec, params, x, state)
    act = ACTIVATIONS[spec.activation]
    drive = _input_drive(spec, params, x)
    pre = {
        g: drive[g] + params.w_rec[g].matvec(state.h, partitions, pool) + params.bias[g]
        for g in spec.gates
    }
    i = sigmoid(pre["i"])
    f = sigmoid(pre["f"])
    g_ = act(pre["g"])
    o = sigmoid(pre["o"])
    c = f * state.c + i * g_
    tc = np.tanh(c)
    h = o * tc
    cache = {
        "x": x, "h_prev": state.h, "c_prev": state.c,
        "pre": pre, "i": i, "f": f, "g": g_, "o": o, "c": c, "tanh_c": tc,
    }
    return CellState(h, c), cache


def gru_step(spec, params, x, state, partitions=1, pool=None):
    """GRU, reset applied to h_{t-1} before the candidate's recurrent transform."""
    _check_step_shapes(spec, params, x, state)
    act = ACTIVATIONS[spec.activation]
    drive = _input_drive(spec, params, x)
    pre_r = drive["r"] + params.w_rec["r"].matvec(state.h, partitions, pool) + params.bias["r"]
    pre_z = drive["z"] + params.w_rec["z"].matvec(state.h, partitions, pool) + params.bias["z"]
    r = sigmoid(pre_r)
    z = sigmoid(pre_z)
    rh = r * state.h
    pre_n = drive["n"] + params.w_rec["n"].matvec(rh, partitions, pool) + params.bias["n"]
    nn = act(pre_n)
    h = (1.0 - z) * state.h + z * nn
    cache = {
        "x": x, "h_prev": state.h, "pre": {"r": pre_r, "z": pre_z, "n": pre_n},
        "r": r, "z": z, "rh": rh, "n": nn,
    }
    return CellState(h), cache


STEP_FNS = {"rnn": rnn_step, "lstm": lstm_step, "gru": gru_step}


def cell_step(spec, params, x, state, partitions=1, pool=None):
    """Dispatch a single timestep for any cell kind."""
    return STEP_FNS[spec.kind](spec, params, x, state, partitions, pool)
