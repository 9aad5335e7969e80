"""Command-line entry point.

Subcommands: count-weights, gradcheck, train, bench, inspect.

Exit codes: 0 success, 2 usage error, 3 validation/gradcheck failure,
4 I/O error.
"""

import argparse
import sys
from pathlib import Path

from . import bench as bench_mod
from . import checkpoint, config as config_mod
from .bptt import grad_check
from .cells import CellSpec, init_cell
from .connectivity import (
    GATE_MULTIPLIER,
    Topology,
    TopologyError,
    count_recurrent_weights,
)
from .linalg import make_rng
from .training import OptimizerSpec, ScheduleSpec, TaskSpec, TrainingDiverged, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4

TOPO_ALIASES = {"full": "full", "group": "group", "band": "band",
                "diag": "diagonal", "diagonal": "diagonal"}


def build_topology(name, c=None, g=None):
    kind = TOPO_ALIASES.get(name)
    if kind is None:
        raise TopologyError(f"unknown topology {name!r}")
    if kind == "band":
        if c is None:
            raise TopologyError("band topology needs --c")
        return Topology.band(c)
    if kind == "group":
        if g is None:
            raise TopologyError("group topology needs --g")
        return Topology.group(g)
    return Topology(kind)


def _spec_from_config(cfg):
    topo = build_topology(cfg["topo"], c=cfg["band_width"], g=cfg["groups"])
    return CellSpec(
        kind=cfg["cell"], topology=topo, n_hidden=cfg["n_hidden"],
        n_input=cfg["n_input"], gating=cfg["gating"], activation=cfg["activation"],
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_count_weights(args):
    topo = build_topology(args.topo, c=args.c, g=args.g)
    n = args.n
    topo.validate(n)
    n_input = args.n_input if args.n_input is not None else n
    gates = GATE_MULTIPLIER[args.cell]
    print(f"cell={args.cell} topology={topo.describe()} N_h={n} "
          f"N_inputs={n_input} layers={args.layers}")
    print(f"{'layer':>5} {'recurrent':>12} {'input':>12} {'bias':>8} {'total':>12}")
    sum_rec = sum_total = 0
    for layer in range(1, args.layers + 1):
        width = n_input if layer == 1 else n
        rec = count_recurrent_weights(args.cell, topo, n)
        inp = gates * n * width
        bias = gates * n
        total = rec + inp + bias
        sum_rec += rec
        sum_total += total
        print(f"{layer:>5} {rec:>12} {inp:>12} {bias:>8} {total:>12}")
    print(f"{'sum':>5} {sum_rec:>12} {'':>12} {'':>8} {sum_total:>12}")
    return EXIT_OK


def _gradcheck_specs(args):
    if args.all:
        topologies = [Topology.full(), Topology.group(2), Topology.band(5),
                      Topology.diagonal()]
        for kind in ("rnn", "lstm", "gru"):
            gatings = ("standard",) if kind == "rnn" else ("standard", "sih")
            for topo in topologies:
                for gating in gatings:
                    yield CellSpec(kind=kind, topology=topo, n_hidden=8,
                                   n_input=3, gating=gating)
    else:
        topo = build_topology(args.topo, c=args.c, g=args.g)
        yield CellSpec(kind=args.cell, topology=topo, n_hidden=args.n,
                       n_input=3, gating=args.gating)


def cmd_gradcheck(args):
    all_ok = True
    for spec in _gradcheck_specs(args):
        rng = make_rng(args.seed)
        params = init_cell(spec, rng)
        report = grad_check(spec, params, rng, T=args.T, B=2,
                            tolerance=args.tol, corrupt=args.corrupt_backward)
        print(report.line())
        all_ok = all_ok and report.passed
    return EXIT_OK if all_ok else EXIT_VALIDATION


def cmd_train(args):
    cfg = config_mod.load(args.config)
    if args.out is not None:
        cfg["out_dir"] = args.out
    spec = _spec_from_config(cfg)
    task = TaskSpec(
        kind=cfg["task"], T=cfg["T"], batch=cfg["batch"],
        steps_per_epoch=cfg["steps_per_epoch"], alphabet=cfg["alphabet"],
        prefix=cfg["prefix"], delay=cfg["delay"], corpus=cfg["corpus"],
        seed=cfg["seed"],
    )
    if task.kind == "charlm":
        if task.corpus is None:
            raise config_mod.ConfigError("charlm task needs a corpus path")
        if not Path(task.corpus).exists():
            print(f"error: corpus file not found: {task.corpus}", file=sys.stderr)
            return EXIT_IO
    opt = OptimizerSpec(kind=cfg["optimizer"], lr=cfg["lr"],
                        momentum=cfg["momentum"], clip_norm=cfg["clip_norm"])
    sched = ScheduleSpec(kind=cfg["schedule"], factor=cfg["decay_factor"],
                         patience=cfg["patience"])

    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(config_mod.dump(cfg))

    report = train(spec, task, opt, sched, cfg["epochs"], seed=cfg["seed"],
                   log=print)

    lines = ["epoch,train_loss,valid_metric,lr,wall_s"]
    for row in report.rows:
        lines.append(f"{row.epoch},{row.train_loss!r},{row.valid_metric!r},"
                     f"{row.lr!r},{row.wall_s:.3f}")
    (out_dir / "metrics.csv").write_text("\n".join(lines) + "\n",
                                         encoding="utf-8", newline="\n")
    model = report.model
    checkpoint.save(out_dir / "model.ssrn", spec, model.cell,
                    model.w_out, model.b_out)
    print(f"wrote {out_dir / 'metrics.csv'} and {out_dir / 'model.ssrn'}")
    return EXIT_OK


def cmd_bench(args):
    cfg = config_mod.load(args.config) if args.config else config_mod.parse("")
    topologies = []
    for name in cfg["bench_topos"].split(","):
        topologies.append(build_topology(name.strip(), c=cfg["bench_band_width"],
                                         g=cfg["bench_groups"]))
    sizes = [int(s) for s in cfg["bench_sizes"].split(",")]
    cases = bench_mod.make_cases(
        cfg["cell"], topologies, sizes, cfg["bench_T"], cfg["bench_B"],
        reps=cfg["bench_reps"], warmup=cfg["bench_warmup"],
        mode=cfg["bench_mode"], parallel=cfg["bench_parallel"],
    )
    results = bench_mod.sweep(cases, seed=cfg["seed"],
                              log=lambda msg: print(msg, file=sys.stderr))
    out = args.out or "bench.csv"
    bench_mod.write_csv(out, results)
    print(bench_mod.format_table(results))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_inspect(args):
    spec, cell, w_out, b_out, precision = checkpoint.load(args.checkpoint)
    rec = count_recurrent_weights(spec.kind, spec.topology, spec.n_hidden)
    live = cell.live_recurrent_count()
    print(f"cell:        {spec.kind}")
    print(f"topology:    {spec.topology.describe()}")
    print(f"gating:      {spec.gating}")
    print(f"activation:  {spec.activation}")
    print(f"N_h:         {spec.n_hidden}")
    print(f"N_inputs:    {spec.n_input}")
    print(f"precision:   float{precision}")
    print(f"gate order:  {', '.join(spec.gates)}")
    print(f"recurrent weights: {rec} ({live} trainable after edge clipping)")
    total = cell.total_param_count()
    if w_out is not None:
        total += w_out.size + b_out.size
    print(f"total parameters:  {total}")
    if args.mask:
        gate = spec.gates[0]
        dense = cell.w_rec[gate].to_dense()
        print(f"nonzero pattern of w_rec/{gate} ({spec.n_hidden}x{spec.n_hidden}):")
        for row in dense:
            print("".join("#" if v != 0 else "." for v in row))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ssrnn",
        description="Structurally sparse recurrent networks: train, "
                    "benchmark, count weights, check gradients.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("count-weights", help="print recurrent/total weight counts")
    p.add_argument("--cell", choices=("rnn", "lstm", "gru"), required=True)
    p.add_argument("--topo", choices=sorted(TOPO_ALIASES), required=True)
    p.add_argument("--n", type=int, required=True, help="hidden units per layer")
    p.add_argument("--c", type=int, help="band width (band topology)")
    p.add_argument("--g", type=int, help="group count (group topology)")
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--n-input", type=int, help="first-layer input width (default: n)")
    p.set_defaults(fn=cmd_count_weights)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--all", action="store_true",
                   help="run every cell x topology x gating combination")
    p.add_argument("--cell", choices=("rnn", "lstm", "gru"), default="lstm")
    p.add_argument("--topo", choices=sorted(TOPO_ALIASES), default="full")
    p.add_argument("--c", type=int)
    p.add_argument("--g", type=int)
    p.add_argument("--gating", choices=("standard", "sih"), default="standard")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--T", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt-backward", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override out_dir from the config")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("bench", help="run the benchmark sweep, emit CSV")
    p.add_argument("--config")
    p.add_argument("--out", help="CSV output path (default bench.csv)")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("inspect", help="summarize a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--mask", action="store_true",
                   help="dump the nonzero pattern of the recurrent matrix")
    p.set_defaults(fn=cmd_inspect)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (TopologyError, config_mod.ConfigError, TrainingDiverged, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except checkpoint.CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
