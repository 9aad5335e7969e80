"""Dense kernels, activations and seeded initialization.

Everything here is pure: no function mutates its arguments, and identical
inputs give identical outputs. Default dtype is float64 so that gradient
checks can be tight; benchmarks switch to float32 explicitly.
"""

import numpy as np

DTYPE = np.float64
BENCH_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand dimensions violate an operation's contract."""


def _check(cond, msg):
    if not cond:
        raise ShapeError(msg)


def dense_matvec(w, x):
    """y[i] = sum_j w[i, j] * x[j].

    `x` may be a single vector (n,) or a batch (B, n); the batch case
    applies the matrix to every row.
    """
    w = np.asarray(w)
    x = np.asarray(x)
    _check(w.ndim == 2, f"matrix must be 2-D, got shape {w.shape}")
    _check(
        w.shape[1] == x.shape[-1],
        f"matvec dimension mismatch: matrix cols {w.shape[1]} vs vector len {x.shape[-1]}",
    )
    return x @ w.T


def elementwise_mul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    _check(
        a.shape[-1] == b.shape[-1],
        f"elementwise length mismatch: {a.shape[-1]} vs {b.shape[-1]}",
    )
    return a * b


def sigmoid(x):
    # Clip before exp: beyond +-60 the result saturates to machine precision
    # anyway, and the single vectorized exp stays overflow-free.
    x = np.clip(x, -60.0, 60.0)
    return 1.0 / (1.0 + np.exp(-x))


def tanh(x):
    return np.tanh(x)


def relu(x):
    return np.maximum(x, 0)


def sigmoid_grad_from_output(y):
    """d sigmoid / dx expressed in terms of the output y = sigmoid(x)."""
    return y * (1.0 - y)


def tanh_grad_from_output(y):
    return 1.0 - y * y


def relu_grad(x):
    return (np.asarray(x) > 0).astype(DTYPE)


ACTIVATIONS = {"tanh": tanh, "relu": relu}


def activation_grad(name, pre, out):
    """Derivative of a named activation, given pre-activation and output."""
    if name == "tanh":
        return tanh_grad_from_output(out)
    if name == "relu":
        return relu_grad(pre)
    raise ValueError(f"unknown activation {name!r}")


def make_rng(seed):
    """Counter-based generator: same seed gives the same stream on every platform."""
    return np.random.Generator(np.random.Philox(seed))


def init_uniform(rng, shape, scale):
    """I.i.d. uniform draws in [-scale, +scale]."""
    if scale <= 0:
        raise ValueError(f"init scale must be positive, got {scale}")
    return rng.uniform(-scale, scale, size=shape).astype(DTYPE)
