"""Optimizers, learning-rate schedules, desk-scale tasks and the train loop.

Tasks:

* adding  -- two input channels (value, marker); the target is the sum of
             the two marked values. A constant predictor of 1.0 has
             expected MSE 1/6 (variance of a sum of two uniforms).
* copy    -- emit the input symbol stream delayed by `delay` steps; with
             zero delay this is the identity mapping.
* charlm  -- next-byte prediction over a plain-text corpus with contiguous
             train/valid/test splits; quality is bits per character.

Models are a cell plus a dense readout. The training loop is deterministic
given the seed: data generation, initialization and update order are all
driven by counter-based generators.
"""

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bptt import backward_sequence, forward_sequence
from .cells import CellParams, CellSpec, init_cell
from .linalg import DTYPE, make_rng

DEFAULT_CLIP_NORM = 5.0


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; aborts with the offending epoch/step."""


# ---------------------------------------------------------------------------
# model = cell + dense readout


@dataclass
class Model:
    spec: CellSpec
    cell: CellParams
    w_out: np.ndarray   # (n_out, n_hidden)
    b_out: np.ndarray   # (n_out,)

    def param_dict(self):
        """Flat name -> array view over all trainable tensors."""
        d = {}
        for k, v in self.cell.w_in.items():
            d[f"w_in/{k}"] = v
        for k, v in self.cell.w_rec.items():
            d[f"w_rec/{k}"] = v.data
        for k, v in self.cell.bias.items():
            d[f"bias/{k}"] = v
        d["w_out"] = self.w_out
        d["b_out"] = self.b_out
        return d


def init_model(spec, n_out, rng):
    cell = init_cell(spec, rng)
    scale = 1.0 / np.sqrt(spec.n_hidden)
    w_out = rng.uniform(-scale, scale, size=(n_out, spec.n_hidden)).astype(DTYPE)
    b_out = np.zeros(n_out, dtype=DTYPE)
    return Model(spec=spec, cell=cell, w_out=w_out, b_out=b_out)


def grads_dict(grads, dw_out, db_out):
    d = {}
    for k, v in grads.w_in.items():
        d[f"w_in/{k}"] = v
    for k, v in grads.w_rec.items():
        d[f"w_rec/{k}"] = v
    for k, v in grads.bias.items():
        d[f"bias/{k}"] = v
    d["w_out"] = dw_out
    d["b_out"] = db_out
    return d


# ---------------------------------------------------------------------------
# optimizers and schedules


@dataclass
class OptimizerSpec:
    kind: str = "adam"            # adam | sgd
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = None

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


class Optimizer:
    """In-place parameter updates over a flat name -> array dict.

    Structured recurrent weights are updated through their compact storage,
    so forbidden slots are never written.
    """

    def __init__(self, spec, params):
        self.spec = spec
        self.t = 0
        if spec.kind == "sgd":
            self.velocity = {k: np.zeros_like(v) for k, v in params.items()}
        else:
            self.m = {k: np.zeros_like(v) for k, v in params.items()}
            self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads, lr):
        if self.spec.clip_norm is not None:
            grads = clip_by_global_norm(grads, self.spec.clip_norm)
        self.t += 1
        if self.spec.kind == "sgd":
            mu = self.spec.momentum
            for k, p in params.items():
                v = self.velocity[k]
                v *= mu
                v += grads[k]
                p -= lr * v
        else:
            b1, b2, eps = self.spec.beta1, self.spec.beta2, self.spec.eps
            c1 = 1.0 - b1 ** self.t
            c2 = 1.0 - b2 ** self.t
            for k, p in params.items():
                g = grads[k]
                m = self.m[k]
                v = self.v[k]
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def clip_by_global_norm(grads, max_norm):
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


@dataclass
class ScheduleSpec:
    kind: str = "constant"    # constant | plateau | epoch-decay
    factor: float = 0.5
    patience: int = 3

    def __post_init__(self):
        if self.kind not in ("constant", "plateau", "epoch-decay"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind != "constant" and not 0.0 < self.factor < 1.0:
            raise ValueError("decay factor must be in (0, 1)")


class Scheduler:
    """Tracks the current lr across epochs.

    plateau: multiply by `factor` after `patience` consecutive epochs
    without improvement of a higher-is-better metric, then reset the
    counter. epoch-decay: multiply by `factor` after every epoch.
    """

    def __init__(self, spec, base_lr):
        self.spec = spec
        self.lr = base_lr
        self.best = None
        self.bad_epochs = 0

    def epoch_end(self, metric):
        """Call once per epoch with the validation metric; returns the lr to
        use next epoch."""
        if self.spec.kind == "epoch-decay":
            self.lr *= self.spec.factor
        elif self.spec.kind == "plateau":
            if self.best is None or metric > self.best:
                self.best = metric
                self.bad_epochs = 0
            else:
                self.bad_epochs += 1
                if self.bad_epochs >= self.spec.patience:
                    self.lr *= self.spec.factor
                    self.bad_epochs = 0
        return self.lr


# ---------------------------------------------------------------------------
# tasks


@dataclass
class TaskSpec:
    kind: str                     # adding | copy | charlm
    T: int = 100
    batch: int = 32
    steps_per_epoch: int = 100
    alphabet: int = 8             # copy only (symbol count, excl. blank)
    prefix: int = 5               # copy only
    delay: int = 10               # copy only
    corpus: str = None            # charlm only
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("adding", "copy", "charlm"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == "adding" and self.T < 2:
            raise ValueError("adding task needs T >= 2")


def gen_adding_task(rng, batch, T):
    """Inputs (B, T, 2): channel 0 uniform values, channel 1 a 0/1 marker set
    at exactly two positions. Target: sum of the two marked values."""
    values = rng.uniform(0.0, 1.0, size=(batch, T))
    inputs = np.zeros((batch, T, 2), dtype=DTYPE)
    inputs[:, :, 0] = values
    targets = np.empty(batch, dtype=DTYPE)
    for b in range(batch):
        i, j = rng.choice(T, size=2, replace=False)
        inputs[b, i, 1] = 1.0
        inputs[b, j, 1] = 1.0
        targets[b] = values[b, i] + values[b, j]
    return inputs, targets


def gen_copy_task(rng, batch, T, alphabet, prefix, delay):
    """Delayed-identity stream: the first `prefix` steps carry random symbols
    (classes 1..alphabet, one-hot over alphabet+1 channels with 0 = blank);
    the target at step t is the input symbol at t - delay, blank before."""
    if prefix + delay > T:
        raise ValueError(f"prefix+delay ({prefix + delay}) exceeds T ({T})")
    n_cls = alphabet + 1
    symbols = rng.integers(1, alphabet + 1, size=(batch, prefix))
    stream = np.zeros((batch, T), dtype=np.int64)
    stream[:, :prefix] = symbols
    inputs = np.zeros((batch, T, n_cls), dtype=DTYPE)
    rows = np.arange(batch)[:, None]
    inputs[rows, np.arange(T)[None, :], stream] = 1.0
    targets = np.zeros((batch, T), dtype=np.int64)
    if delay < T:
        targets[:, delay:] = stream[:, : T - delay]
    return inputs, targets


class CharCorpus:
    """Byte-level corpus with contiguous train/valid/test splits."""

    def __init__(self, path, splits=(0.9, 0.05, 0.05)):
        data = Path(path).read_bytes()
        if not data:
            raise ValueError(f"corpus file {path} is empty")
        self.vocab = sorted(set(data))
        self.char_to_id = {c: i for i, c in enumerate(self.vocab)}
        ids = np.frombuffer(data, dtype=np.uint8)
        lut = np.zeros(256, dtype=np.int64)
        for c, i in self.char_to_id.items():
            lut[c] = i
        encoded = lut[ids]
        n = len(encoded)
        a = int(n * splits[0])
        b = a + int(n * splits[1])
        self.train, self.valid, self.test = encoded[:a], encoded[a:b], encoded[b:]

    @property
    def vocab_size(self):
        return len(self.vocab)

    def batches(self, split, batch, T):
        """Non-overlapping (inputs one-hot, target ids) windows, row-major
        across `batch` parallel substreams."""
        data = {"train": self.train, "valid": self.valid, "test": self.test}[split]
        per_row = (len(data) - 1) // batch
        if per_row < T:
            raise ValueError(f"{split} split too small for batch={batch}, T={T}")
        x = data[: batch * per_row].reshape(batch, per_row)
        y = data[1 : batch * per_row + 1].reshape(batch, per_row)
        k = self.vocab_size
        for start in range(0, per_row - T + 1, T):
            ids = x[:, start : start + T]
            inputs = np.zeros((batch, T, k), dtype=DTYPE)
            rows = np.arange(batch)[:, None]
            inputs[rows, np.arange(T)[None, :], ids] = 1.0
            yield inputs, y[:, start : start + T].copy()


# ---------------------------------------------------------------------------
# loss heads


def regression_loss(model, outputs, targets):
    """Scalar readout of the final hidden state; mean squared error.

    Returns (loss, dLoss/dOutputs, dW_out, dB_out, predictions).
    """
    B = outputs.shape[0]
    h_last = outputs[:, -1]                      # (B, n_hidden)
    preds = h_last @ model.w_out.T + model.b_out  # (B, 1)
    preds = preds[:, 0]
    diff = preds - targets
    loss = float(np.mean(diff * diff))
    dpred = (2.0 / B) * diff                      # (B,)
    out_grads = np.zeros_like(outputs)
    out_grads[:, -1] = dpred[:, None] * model.w_out[0][None, :]
    dw_out = (dpred[:, None] * h_last).sum(axis=0)[None, :]
    db_out = np.array([dpred.sum()])
    return loss, out_grads, dw_out, db_out, preds


def softmax_xent_loss(model, outputs, targets):
    """Per-step softmax cross-entropy in nats, averaged over B*T.

    Returns (loss, dLoss/dOutputs, dW_out, dB_out, correct_count).
    """
    B, T, _ = outputs.shape
    logits = outputs @ model.w_out.T + model.b_out   # (B, T, K)
    logits = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(logits)
    probs = ex / ex.sum(axis=-1, keepdims=True)
    rows = np.arange(B)[:, None]
    cols = np.arange(T)[None, :]
    picked = probs[rows, cols, targets]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    dlogits = probs.copy()
    dlogits[rows, cols, targets] -= 1.0
    dlogits /= B * T
    out_grads = dlogits @ model.w_out
    dw_out = np.einsum("btk,btn->kn", dlogits, outputs)
    db_out = dlogits.sum(axis=(0, 1))
    correct = int(np.sum(probs.argmax(axis=-1) == targets))
    return loss, out_grads, dw_out, db_out, correct


def bpc_from_nats(loss_nats):
    return loss_nats / np.log(2.0)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    valid_metric: float
    lr: float
    wall_s: float


@dataclass
class TrainReport:
    rows: list
    model: Model
    valid_metric_name: str

    @property
    def final_metric(self):
        return self.rows[-1].valid_metric if self.rows else float("nan")


def _train_batch(model, inputs, targets, loss_fn, optimizer, lr):
    outputs, tape = forward_sequence(model.spec, model.cell, inputs)
    loss, out_grads, dw_out, db_out, _ = loss_fn(model, outputs, targets)
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite training loss {loss}")
    grads = backward_sequence(model.spec, model.cell, tape, out_grads)
    optimizer.step(model.param_dict(), grads_dict(grads, dw_out, db_out), lr)
    return loss


def _eval_adding(model, valid):
    inputs, targets = valid
    outputs, _ = forward_sequence(model.spec, model.cell, inputs)
    loss, *_ = regression_loss(model, outputs, targets)
    return loss


def _eval_batches(model, batches):
    total_loss = 0.0
    total_correct = 0
    total_count = 0
    for inputs, targets in batches:
        outputs, _ = forward_sequence(model.spec, model.cell, inputs)
        loss, _, _, _, correct = softmax_xent_loss(model, outputs, targets)
        n = targets.size
        total_loss += loss * n
        total_correct += correct
        total_count += n
    return total_loss / total_count, total_correct / total_count


def train(spec, task, opt_spec, sched_spec, epochs, seed=0, log=None,
          target_metric=None):
    """Train a fresh model on a task; deterministic given `seed`.

    Returns a TrainReport with one row per epoch. The validation metric is
    higher-is-better: -MSE (adding), accuracy (copy), -BPC (charlm).
    Training stops early once the metric reaches `target_metric`, if given.
    """
    init_rng = make_rng(seed)
    data_rng = make_rng(seed + 1)

    if task.kind == "adding":
        n_out, metric_name = 1, "neg_mse"
        model = init_model(spec, n_out, init_rng)
        valid = gen_adding_task(make_rng(task.seed + 999), 256, task.T)
    elif task.kind == "copy":
        n_out, metric_name = task.alphabet + 1, "accuracy"
        model = init_model(spec, n_out, init_rng)
        valid = gen_copy_task(make_rng(task.seed + 999), 256, task.T,
                              task.alphabet, task.prefix, task.delay)
    else:
        if task.corpus is None:
            raise ValueError("charlm task needs a corpus path")
        corpus = CharCorpus(task.corpus)
        n_out, metric_name = corpus.vocab_size, "neg_bpc"
        if spec.n_input != corpus.vocab_size:
            raise ValueError(
                f"spec n_input {spec.n_input} must equal corpus vocab size "
                f"{corpus.vocab_size}"
            )
        model = init_model(spec, n_out, init_rng)

    optimizer = Optimizer(opt_spec, model.param_dict())
    scheduler = Scheduler(sched_spec, opt_spec.lr)
    rows = []
    lr = opt_spec.lr

    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        losses = []
        if task.kind == "adding":
            for _ in range(task.steps_per_epoch):
                inputs, targets = gen_adding_task(data_rng, task.batch, task.T)
                losses.append(_train_batch(model, inputs, targets,
                                           regression_loss, optimizer, lr))
            valid_metric = -_eval_adding(model, valid)
        elif task.kind == "copy":
            for _ in range(task.steps_per_epoch):
                inputs, targets = gen_copy_task(data_rng, task.batch, task.T,
                                                task.alphabet, task.prefix, task.delay)
                losses.append(_train_batch(model, inputs, targets,
                                           softmax_xent_loss, optimizer, lr))
            _, acc = _eval_batches(
                model,
                [gen_copy_task(make_rng(task.seed + 999), 256, task.T,
                               task.alphabet, task.prefix, task.delay)],
            )
            valid_metric = acc
        else:
            for inputs, targets in corpus.batches("train", task.batch, task.T):
                losses.append(_train_batch(model, inputs, targets,
                                           softmax_xent_loss, optimizer, lr))
            vloss, _ = _eval_batches(model, corpus.batches("valid", task.batch, task.T))
            valid_metric = -bpc_from_nats(vloss)

        row = EpochRow(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            valid_metric=float(valid_metric),
            lr=lr,
            wall_s=time.perf_counter() - t0,
        )
        rows.append(row)
        if log:
            log(f"epoch {epoch:3d}  loss {row.train_loss:.5f}  "
                f"{metric_name} {row.valid_metric:.5f}  lr {lr:g}")
        if target_metric is not None and valid_metric >= target_metric:
            break
        lr = scheduler.epoch_end(valid_metric)

    return TrainReport(rows=rows, model=model, valid_metric_name=metric_name)
