"""Flat `key = value` run configuration.

No nesting, `#` starts a comment, unknown keys are rejected. Every key has
a documented default; `dump` writes the effective configuration back out in
a form that re-parses to an identical run.
"""

from pathlib import Path


class ConfigError(ValueError):
    """Unknown key, bad value, or malformed line."""


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text.strip().lower() in ("none", "") else float(text)


def _opt_str(text):
    return None if text.strip().lower() in ("none", "") else text.strip()


# key -> (parser, default)
SCHEMA = {
    "seed": (int, 0),
    "out_dir": (str, "runs/out"),
    # cell
    "cell": (str, "lstm"),
    "topo": (str, "full"),
    "n_hidden": (int, 128),
    "n_input": (int, 2),
    "groups": (int, 4),
    "band_width": (int, 5),
    "gating": (str, "standard"),
    "activation": (str, "tanh"),
    # task
    "task": (str, "adding"),
    "T": (int, 100),
    "batch": (int, 32),
    "steps_per_epoch": (int, 100),
    "alphabet": (int, 8),
    "prefix": (int, 5),
    "delay": (int, 10),
    "corpus": (_opt_str, None),
    # optimizer / schedule
    "optimizer": (str, "adam"),
    "lr": (float, 1e-3),
    "momentum": (float, 0.9),
    "clip_norm": (_opt_float, 5.0),
    "schedule": (str, "constant"),
    "decay_factor": (float, 0.5),
    "patience": (int, 3),
    "epochs": (int, 10),
    # bench
    "bench_topos": (str, "full,group,band,diagonal"),
    "bench_sizes": (str, "256,512,1024"),
    "bench_T": (int, 64),
    "bench_B": (int, 32),
    "bench_reps": (int, 10),
    "bench_warmup": (int, 3),
    "bench_mode": (str, "infer"),
    "bench_parallel": (_bool, False),
    "bench_band_width": (int, 103),
    "bench_groups": (int, 4),
    "precision": (int, 32),
}


def parse(text):
    """Parse config text into a dict with defaults filled in."""
    cfg = {k: default for k, (_, default) in SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parser = SCHEMA[key][0]
        try:
            cfg[key] = parser(value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return cfg


def load(path):
    return parse(Path(path).read_text())


def dump(cfg):
    """Render a config dict; parse(dump(cfg)) == cfg."""
    lines = []
    for key in SCHEMA:
        value = cfg[key]
        if value is None:
            value = "none"
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
