"""Structurally sparse recurrent networks.

Recurrent layers whose hidden-to-hidden matrix is dense, block-diagonal,
banded, or diagonal, with exact weight accounting, structured kernels,
backpropagation through time, desk-scale training tasks and a benchmark
harness.
"""

from .bptt import Gradients, Tape, backward_sequence, forward_sequence, grad_check
from .cells import (
    CellParams,
    CellSpec,
    CellState,
    cell_step,
    gru_step,
    init_cell,
    lstm_step,
    rnn_step,
)
from .connectivity import (
    StructuredMatrix,
    Topology,
    TopologyError,
    count_recurrent_weights,
    flop_count,
    from_dense,
    structured_matvec,
    to_dense,
)
from .linalg import (
    ShapeError,
    dense_matvec,
    elementwise_mul,
    init_uniform,
    make_rng,
    relu,
    sigmoid,
    tanh,
)
from .training import (
    CharCorpus,
    Model,
    Optimizer,
    OptimizerSpec,
    Scheduler,
    ScheduleSpec,
    TaskSpec,
    TrainingDiverged,
    gen_adding_task,
    gen_copy_task,
    init_model,
    train,
)

__version__ = "0.1.0"
