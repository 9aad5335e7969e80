"""Microbenchmark harness for structured recurrent cells.

Times are medians (with p10/p90) of repeated wall-clock measurements of
the recurrent network computation only; data generation happens outside
the timed region. Multiply-add and weight counts are analytic, so they
are exact regardless of timing noise. Benchmarks run in float32; the
correctness suites stay in float64.

The parallel mode partitions neurons (or groups) into a fixed number of
chunks executed on a thread pool; the chunk schedule is identical to the
sequential mode's, so outputs are bit-identical and only timing differs.
"""

import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .bptt import backward_sequence, forward_sequence
from .cells import CellParams, CellSpec, init_cell
from .connectivity import (
    StructuredMatrix,
    Topology,
    count_recurrent_weights,
    flop_count,
    make_pool,
)
from .linalg import BENCH_DTYPE, make_rng

CSV_COLUMNS = [
    "case_id", "cell", "topology", "N_h", "C_or_G", "T", "B", "mode",
    "parallel", "median_s", "p10_s", "p90_s", "flops_per_step",
    "recurrent_weights", "total_params", "model_bytes",
]

DEFAULT_PARTITIONS = 4


@dataclass
class BenchCase:
    spec: CellSpec
    T: int = 64
    B: int = 32
    reps: int = 10
    warmup: int = 3
    mode: str = "infer"       # infer | train
    parallel: bool = False
    partitions: int = DEFAULT_PARTITIONS

    def __post_init__(self):
        if self.mode not in ("infer", "train"):
            raise ValueError(f"unknown bench mode {self.mode!r}")
        if self.reps < 10:
            raise ValueError("need at least 10 repetitions after warmup")

    @property
    def case_id(self):
        tag = f"{self.spec.describe()}-T{self.T}-B{self.B}-{self.mode}"
        if self.parallel:
            tag += "-par"
        return tag


@dataclass
class BenchResult:
    case: BenchCase
    median_s: float
    p10_s: float
    p90_s: float
    flops_per_step: int
    recurrent_weights: int
    total_params: int
    model_bytes: int

    def row(self):
        spec = self.case.spec
        topo = spec.topology
        c_or_g = topo.groups if topo.kind == "group" else (
            topo.width if topo.kind == "band" else ""
        )
        return {
            "case_id": self.case.case_id,
            "cell": spec.kind,
            "topology": topo.kind,
            "N_h": spec.n_hidden,
            "C_or_G": c_or_g,
            "T": self.case.T,
            "B": self.case.B,
            "mode": self.case.mode,
            "parallel": str(self.case.parallel).lower(),
            "median_s": f"{self.median_s:.6e}",
            "p10_s": f"{self.p10_s:.6e}",
            "p90_s": f"{self.p90_s:.6e}",
            "flops_per_step": self.flops_per_step,
            "recurrent_weights": self.recurrent_weights,
            "total_params": self.total_params,
            "model_bytes": self.model_bytes,
        }


def cast_cell(cell, dtype):
    return CellParams(
        w_in={k: v.astype(dtype) for k, v in cell.w_in.items()},
        w_rec={
            k: StructuredMatrix(v.topology, v.n, v.data.astype(dtype))
            for k, v in cell.w_rec.items()
        },
        bias={k: v.astype(dtype) for k, v in cell.bias.items()},
    )


def _time_reps(fn, reps, warmup):
    for _ in range(warmup):
        fn()
    times = np.empty(reps)
    for i in range(reps):
        t0 = time.perf_counter()
        fn()
        times[i] = time.perf_counter() - t0
    return times


def _percentiles(times):
    return (
        float(np.median(times)),
        float(np.percentile(times, 10)),
        float(np.percentile(times, 90)),
    )


def run_bench(case, seed=0):
    """Time one configuration; returns measured medians plus analytic counts."""
    spec = case.spec
    rng = make_rng(seed)
    cell = cast_cell(init_cell(spec, rng), BENCH_DTYPE)
    inputs = rng.uniform(-1, 1, size=(case.B, case.T, spec.n_input)).astype(BENCH_DTYPE)
    pool = make_pool(case.partitions) if case.parallel else None
    partitions = case.partitions

    if case.mode == "infer":
        def body():
            forward_sequence(spec, cell, inputs, partitions=partitions, pool=pool)
    else:
        out_grads = rng.uniform(-1, 1, size=(case.B, case.T, spec.n_hidden)).astype(BENCH_DTYPE)

        def body():
            _, tape = forward_sequence(spec, cell, inputs, partitions=partitions, pool=pool)
            backward_sequence(spec, cell, tape, out_grads)

    reps = case.reps
    times = _time_reps(body, reps, case.warmup)
    resolution = time.get_clock_info("perf_counter").resolution
    if np.median(times) < 100 * resolution:
        warnings.warn(
            f"{case.case_id}: case too small for timer resolution; "
            f"increasing repetitions to {reps * 10}"
        )
        times = _time_reps(body, reps * 10, 0)
    if pool is not None:
        pool.shutdown()

    median, p10, p90 = _percentiles(times)
    gates = len(spec.gates)
    return BenchResult(
        case=case,
        median_s=median,
        p10_s=p10,
        p90_s=p90,
        flops_per_step=gates * flop_count(spec.topology, spec.n_hidden),
        recurrent_weights=count_recurrent_weights(spec.kind, spec.topology, spec.n_hidden),
        total_params=cell.total_param_count(),
        model_bytes=len(checkpoint.dumps(spec, cell, precision=32)),
    )


def recurrent_op_bench(topology, n, B=32, reps=50, warmup=5, seed=0):
    """Median seconds for the structured matvec alone (the recurrent op)."""
    rng = make_rng(seed)
    w = StructuredMatrix.random(topology, n, rng, 0.1)
    w = StructuredMatrix(topology, n, w.data.astype(BENCH_DTYPE))
    h = rng.uniform(-1, 1, size=(B, n)).astype(BENCH_DTYPE)
    times = _time_reps(lambda: w.matvec(h), reps, warmup)
    return float(np.median(times))


def make_cases(cell_kind, topologies, sizes, T, B, reps=10, warmup=3,
               mode="infer", parallel=False, n_input=64):
    """Cross product of topologies and hidden sizes."""
    cases = []
    for n in sizes:
        for topo in topologies:
            spec = CellSpec(
                kind=cell_kind, topology=topo, n_hidden=n, n_input=n_input
            )
            cases.append(BenchCase(spec=spec, T=T, B=B, reps=reps,
                                   warmup=warmup, mode=mode, parallel=parallel))
    return cases


def sweep(cases, seed=0, log=None):
    results = []
    for case in cases:
        if log:
            log(f"bench {case.case_id} ...")
        results.append(run_bench(case, seed=seed))
    return results


def write_csv(path, results):
    """CSV with the mandatory header, UTF-8, LF line endings."""
    lines = [",".join(CSV_COLUMNS)]
    for res in results:
        row = res.row()
        lines.append(",".join(str(row[c]) for c in CSV_COLUMNS))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def speedup_vs_full(results):
    """case_id -> measured speedup relative to the full-topology case with
    the same cell, size, T, B and mode (1.0 for the full rows themselves)."""
    baselines = {}
    for res in results:
        spec = res.case.spec
        if spec.topology.kind == "full":
            key = (spec.kind, spec.n_hidden, res.case.T, res.case.B, res.case.mode)
            baselines[key] = res.median_s
    ratios = {}
    for res in results:
        spec = res.case.spec
        key = (spec.kind, spec.n_hidden, res.case.T, res.case.B, res.case.mode)
        base = baselines.get(key)
        ratios[res.case.case_id] = (base / res.median_s) if base else float("nan")
    return ratios


def format_table(results):
    """Aligned text table with a speedup-vs-full ratio column."""
    ratios = speedup_vs_full(results)
    header = ["case", "median_ms", "p10_ms", "p90_ms", "speedup_vs_full",
              "flops/step", "rec_weights", "model_kB"]
    rows = [header]
    for res in results:
        rows.append([
            res.case.case_id,
            f"{res.median_s * 1e3:.3f}",
            f"{res.p10_s * 1e3:.3f}",
            f"{res.p90_s * 1e3:.3f}",
            f"{ratios[res.case.case_id]:.2f}",
            str(res.flops_per_step),
            str(res.recurrent_weights),
            f"{res.model_bytes / 1024:.1f}",
        ])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("-" * (sum(widths) + 2 * (len(widths) - 1)))
    return "\n".join(lines)
