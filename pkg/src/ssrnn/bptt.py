"""Sequence forward pass with tape recording, exact backpropagation through
time, and a finite-difference gradient checker.

Conventions:

* inputs are (B, T, n_input); hidden outputs are (B, T, n_hidden).
* `lengths` gives each sequence's true length; beyond it the state is
  frozen (h_t = h_{t-1}) and the emitted output is zeroed.
* recurrent gradients live in the same compact layout as their weights;
  a structurally-zero slot never receives a gradient.
* gradients are summed over the batch; callers that want a mean scale the
  incoming output gradients by 1/B.
"""

from dataclasses import dataclass

import numpy as np

from .cells import CellParams, CellState, cell_step
from .linalg import (
    DTYPE,
    ShapeError,
    activation_grad,
    sigmoid_grad_from_output,
)


@dataclass
class Tape:
    """Per-timestep records saved by the forward pass."""

    spec: object
    inputs: np.ndarray        # (B, T, n_input)
    mask: np.ndarray          # (B, T) float 0/1 validity mask
    steps: list               # per-timestep cell caches
    outputs: np.ndarray       # (B, T, n_hidden), masked

    @property
    def T(self):
        return self.inputs.shape[1]

    @property
    def B(self):
        return self.inputs.shape[0]


@dataclass
class Gradients:
    """Mirrors CellParams: w_in / w_rec (compact storage) / bias arrays."""

    w_in: dict
    w_rec: dict
    bias: dict

    @classmethod
    def zeros_like(cls, params):
        return cls(
            w_in={k: np.zeros_like(v) for k, v in params.w_in.items()},
            w_rec={k: np.zeros_like(v.data) for k, v in params.w_rec.items()},
            bias={k: np.zeros_like(v) for k, v in params.bias.items()},
        )


def length_mask(lengths, batch, T):
    if lengths is None:
        return np.ones((batch, T), dtype=DTYPE)
    lengths = np.asarray(lengths)
    if np.any(lengths > T) or np.any(lengths < 0):
        raise ShapeError(f"sequence lengths must lie in [0, {T}]")
    return (np.arange(T)[None, :] < lengths[:, None]).astype(DTYPE)


def forward_sequence(spec, params, inputs, lengths=None, state0=None,
                     partitions=1, pool=None):
    """Run the cell over a whole batch of sequences, recording a tape."""
    inputs = np.asarray(inputs)
    if inputs.ndim != 3:
        raise ShapeError(f"inputs must be (B, T, n_input), got shape {inputs.shape}")
    B, T, _ = inputs.shape
    mask = length_mask(lengths, B, T)
    state = state0 if state0 is not None else CellState.zeros(spec, B, dtype=inputs.dtype)
    outputs = np.zeros((B, T, spec.n_hidden), dtype=inputs.dtype)
    steps = []
    for t in range(T):
        m = mask[:, t : t + 1]
        new_state, cache = cell_step(spec, params, inputs[:, t], state, partitions, pool)
        h = m * new_state.h + (1.0 - m) * state.h
        c = None
        if spec.kind == "lstm":
            c = m * new_state.c + (1.0 - m) * state.c
        outputs[:, t] = m * new_state.h
        steps.append(cache)
        state = CellState(h, c)
    return outputs, Tape(spec=spec, inputs=inputs, mask=mask, steps=steps, outputs=outputs)


def backward_sequence(spec, params, tape, output_grads):
    """Exact reverse-mode of forward_sequence.

    `output_grads` is dLoss/dOutputs with the same shape as tape.outputs.
    Returns parameter Gradients; input gradients are not materialized.
    """
    output_grads = np.asarray(output_grads)
    if output_grads.shape != tape.outputs.shape:
        raise ShapeError(
            f"output_grads shape {output_grads.shape} does not match tape "
            f"outputs {tape.outputs.shape}"
        )
    grads = Gradients.zeros_like(params)
    B = tape.B
    dh_next = np.zeros((B, spec.n_hidden), dtype=tape.outputs.dtype)
    dc_next = np.zeros_like(dh_next) if spec.kind == "lstm" else None

    for t in reversed(range(tape.T)):
        m = tape.mask[:, t : t + 1]
        cache = tape.steps[t]
        # combined state was h_t = m*step + (1-m)*h_{t-1}; output emitted m*step
        dh_step = m * (dh_next + output_grads[:, t])
        dh_carry = (1.0 - m) * dh_next
        if spec.kind == "lstm":
            dc_step = m * dc_next
            dc_carry = (1.0 - m) * dc_next
            dh_prev, dc_prev = _lstm_backward(spec, params, cache, dh_step, dc_step, grads)
            dc_next = dc_carry + dc_prev
        elif spec.kind == "gru":
            dh_prev = _gru_backward(spec, params, cache, dh_step, grads)
        else:
            dh_prev = _rnn_backward(spec, params, cache, dh_step, grads)
        dh_next = dh_carry + dh_prev
    return grads


def _accumulate_input_grad(spec, grads, gate, da, x):
    key = "shared" if spec.gating == "sih" else gate
    grads.w_in[key] += da.T @ x


def _gate_backward(spec, params, grads, gate, da, h_arg, x):
    """Common per-gate accumulation; returns gradient w.r.t. the vector that
    fed the gate's recurrent transform."""
    _accumulate_input_grad(spec, grads, gate, da, x)
    grads.bias[gate] += da.sum(axis=0)
    dvec, dw = params.w_rec[gate].matvec_backward(h_arg, da)
    grads.w_rec[gate] += dw
    return dvec


def _rnn_backward(spec, params, cache, dh, grads):
    da = dh * activation_grad(spec.activation, cache["pre"], cache["h"])
    return _gate_backward(spec, params, grads, "h", da, cache["h_prev"], cache["x"])


def _lstm_backward(spec, params, cache, dh, dc_in, grads):
    i, f, g, o = cache["i"], cache["f"], cache["g"], cache["o"]
    tc = cache["tanh_c"]
    do = dh * tc
    dc = dc_in + dh * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * cache["c_prev"]
    dg = dc * i
    dc_prev = dc * f
    da = {
        "i": di * sigmoid_grad_from_output(i),
        "f": df * sigmoid_grad_from_output(f),
        "g": dg * activation_grad(spec.activation, cache["pre"]["g"], g),
        "o": do * sigmoid_grad_from_output(o),
    }
    dh_prev = np.zeros_like(dh)
    for gate in spec.gates:
        dh_prev += _gate_backward(spec, params, grads, gate, da[gate],
                                  cache["h_prev"], cache["x"])
    return dh_prev, dc_prev


def _gru_backward(spec, params, cache, dh, grads):
    r, z, nn = cache["r"], cache["z"], cache["n"]
    h_prev = cache["h_prev"]
    dz = dh * (nn - h_prev)
    dn = dh * z
    dh_prev = dh * (1.0 - z)
    da_n = dn * activation_grad(spec.activation, cache["pre"]["n"], nn)
    # candidate's recurrent transform consumed r*h_prev
    drh = _gate_backward(spec, params, grads, "n", da_n, cache["rh"], cache["x"])
    dr = drh * h_prev
    dh_prev = dh_prev + drh * r
    da_r = dr * sigmoid_grad_from_output(r)
    da_z = dz * sigmoid_grad_from_output(z)
    dh_prev = dh_prev + _gate_backward(spec, params, grads, "r", da_r, h_prev, cache["x"])
    dh_prev = dh_prev + _gate_backward(spec, params, grads, "z", da_z, h_prev, cache["x"])
    return dh_prev


def param_slots(params):
    """Yield (name, array, live_mask) for every parameter tensor.

    live_mask marks trainable slots (band edge slots are excluded).
    """
    for k in sorted(params.w_in):
        yield f"w_in/{k}", params.w_in[k], np.ones(params.w_in[k].shape, dtype=bool)
    for k in sorted(params.w_rec):
        sm = params.w_rec[k]
        yield f"w_rec/{k}", sm.data, sm.live_mask()
    for k in sorted(params.bias):
        yield f"bias/{k}", params.bias[k], np.ones(params.bias[k].shape, dtype=bool)


def grad_slots(grads):
    for k in sorted(grads.w_in):
        yield f"w_in/{k}", grads.w_in[k]
    for k in sorted(grads.w_rec):
        yield f"w_rec/{k}", grads.w_rec[k]
    for k in sorted(grads.bias):
        yield f"bias/{k}", grads.bias[k]


def relative_error(a, n):
    # The denominator floor keeps near-zero gradients from amplifying the
    # O(ulp/eps) roundoff inherent in central differences of an O(1) loss.
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


@dataclass
class GradCheckReport:
    spec_tag: str
    max_rel_err: float
    worst_param: str
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_err < self.tolerance

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.spec_tag:<34} max_rel_err={self.max_rel_err:.3e} "
                f"(worst: {self.worst_param}, tol={self.tolerance:g})")


def grad_check(spec, params, rng, T=4, B=2, eps=1e-5, tolerance=1e-5,
               lengths=None, corrupt=False):
    """Compare BPTT gradients against central finite differences.

    Loss is a fixed random linear projection of the outputs, which exercises
    every timestep. `corrupt` flips the sign of the bias gradients; it exists
    as a negative control and must make the check fail.
    """
    inputs = rng.uniform(-1.0, 1.0, size=(B, T, spec.n_input))
    proj = rng.uniform(-1.0, 1.0, size=(B, T, spec.n_hidden))

    def loss_of(p):
        out, _ = forward_sequence(spec, p, inputs, lengths=lengths)
        return float(np.sum(out * proj))

    outputs, tape = forward_sequence(spec, params, inputs, lengths=lengths)
    grads = backward_sequence(spec, params, tape, proj)
    if corrupt:
        for k in grads.bias:
            grads.bias[k] = -grads.bias[k]

    analytic = dict(grad_slots(grads))
    max_err = 0.0
    worst = ""
    work = params.copy()
    for name, arr, live in param_slots(work):
        g = analytic[name]
        for idx in np.ndindex(arr.shape):
            if not live[idx]:
                continue
            orig = arr[idx]
            arr[idx] = orig + eps
            lp = loss_of(work)
            arr[idx] = orig - eps
            lm = loss_of(work)
            arr[idx] = orig
            numeric = (lp - lm) / (2.0 * eps)
            err = relative_error(float(g[idx]), numeric)
            if err > max_err:
                max_err = err
                worst = f"{name}{list(idx)}"
    return GradCheckReport(
        spec_tag=spec.describe(), max_rel_err=max_err, worst_param=worst,
        tolerance=tolerance,
    )
