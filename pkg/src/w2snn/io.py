"""Files: checkpoints, CSV tables, flat key-value configs, atomic writes.

Checkpoint layout (text, one token per float, ``repr`` so values round-trip
bit for bit)::

    w2snn-checkpoint 1
    input_dim = 2
    ...                       # every SNNConfig field, in declaration order
    layers = 5
    a 0 40 2                  # block header: name, layer, rows, cols
    <rows of floats>
    sigma 0 40 2
    b 0 40
    skip 1 40 40              # only for layers that carry skip weights
    end

Config files are flat ``section.key = value`` lines; values are JSON
(``[40, 40]``, ``0.005``, ``"elu"``, ``null``) and bare words are read as
strings. ``#`` starts a comment.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io as _io
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import snn
from .errors import ConfigError, DimensionError
from .experiments.oscillator import TrajectoryEnsemble
from .locality import Dataset

CHECKPOINT_MAGIC = "w2snn-checkpoint 1"


def atomic_write(path, data: str | bytes) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def file_hash(path, volatile_columns: tuple[str, ...] = ()) -> str:
    """sha256 of a file; named CSV columns are blanked first (timings)."""
    raw = Path(path).read_bytes()
    if volatile_columns:
        rows = list(csv.reader(_io.StringIO(raw.decode())))
        drop = [i for i, name in enumerate(rows[0]) if name in volatile_columns] if rows else []
        raw = "\n".join(",".join(c for i, c in enumerate(r) if i not in drop) for r in rows).encode()
    return hashlib.sha256(raw).hexdigest()


# ---------------------------------------------------------------- checkpoints

def _block(name: str, layer: int, arr: np.ndarray) -> list[str]:
    head = f"{name} {layer} " + " ".join(str(n) for n in arr.shape)
    rows = arr.reshape(arr.shape[0], -1) if arr.ndim == 2 else arr.reshape(1, -1)
    return [head] + [" ".join(repr(float(v)) for v in row) for row in rows]


def dumps_checkpoint(params: snn.SNNParams) -> str:
    lines = [CHECKPOINT_MAGIC]
    for f in dataclasses.fields(params.config):
        lines.append(f"{f.name} = {json.dumps(getattr(params.config, f.name))}")
    lines.append(f"layers = {params.config.n_layers}")
    for i in range(params.config.n_layers):
        lines += _block("a", i, params.a[i])
        lines += _block("sigma", i, params.sigma[i])
        lines += _block("b", i, params.b[i])
        if params.skip[i] is not None:
            lines += _block("skip", i, params.skip[i])
    lines.append("end")
    return "\n".join(lines) + "\n"


def loads_checkpoint(text: str) -> snn.SNNParams:
    lines = text.splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ConfigError("not a w2snn checkpoint")
    pos, header = 1, {}
    while not lines[pos].startswith("layers"):
        key, _, value = lines[pos].partition(" = ")
        header[key] = json.loads(value)
        pos += 1
    n_layers = int(lines[pos].partition(" = ")[2])
    pos += 1
    header["widths"] = tuple(header["widths"])
    config = snn.SNNConfig(**header)
    blocks = {name: [None] * n_layers for name in ("a", "sigma", "b", "skip")}
    while lines[pos] != "end":
        name, layer, *shape = lines[pos].split()
        shape = tuple(int(s) for s in shape)
        n_rows = shape[0] if len(shape) == 2 else 1
        rows = [[float(v) for v in lines[pos + 1 + r].split()] for r in range(n_rows)]
        blocks[name][int(layer)] = np.array(rows, dtype=np.float64).reshape(shape)
        pos += 1 + n_rows
    params = snn.SNNParams(config, blocks["a"], blocks["sigma"], blocks["b"], blocks["skip"])
    for i, (w, b) in enumerate(zip(params.a, params.b)):
        expect = (config.sizes[i + 1], config.sizes[i])
        if w is None or w.shape != expect or b is None or b.shape != (expect[0],):
            raise DimensionError(f"checkpoint layer {i} has wrong or missing blocks (expected {expect})")
    return params


def save_checkpoint(params: snn.SNNParams, path) -> None:
    atomic_write(path, dumps_checkpoint(params))


def load_checkpoint(path) -> snn.SNNParams:
    return loads_checkpoint(Path(path).read_text())


# ----------------------------------------------------------------- CSV tables

def _csv_text(header: list[str], rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, (int, np.integer, str)) else repr(float(v)) for v in r])
    return buf.getvalue()


def dataset_csv(xs: np.ndarray, ys: np.ndarray) -> str:
    header = [f"x_{i}" for i in range(xs.shape[1])] + [f"y_{j}" for j in range(ys.shape[1])]
    return _csv_text(header, np.hstack([xs, ys]))


def read_dataset_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    n_x = sum(h.startswith("x_") for h in header)
    if n_x == 0 or n_x == len(header):
        raise DimensionError(f"{path}: header must have x_ and y_ columns, got {header}")
    data = np.array(rows[1:], dtype=np.float64).reshape(-1, len(header))
    return Dataset(data[:, :n_x], data[:, n_x:])


def group_by_input(ds: Dataset) -> tuple[np.ndarray, list[np.ndarray]]:
    """Consecutive rows with identical ``x`` form one test ensemble."""
    xs, groups, start = [], [], 0
    for i in range(1, len(ds) + 1):
        if i == len(ds) or not np.array_equal(ds.xs[i], ds.xs[start]):
            xs.append(ds.xs[start])
            groups.append(ds.ys[start:i])
            start = i
    return np.array(xs), groups


def ensemble_csv(ens: TrajectoryEnsemble) -> str:
    """Slice 0 holds the initial states at ``t = 0``."""
    n_traj, n_slices, dim = ens.states.shape
    header = ["traj", "slice", "t"] + [f"comp_{k}" for k in range(dim)]
    times = np.concatenate([[0.0], ens.times])
    full = np.concatenate([ens.initial[:, None], ens.states], axis=1)
    rows = ([i, s, times[s], *full[i, s]] for i in range(n_traj) for s in range(n_slices + 1))
    return _csv_text(header, rows)


def read_ensemble_csv(path) -> TrajectoryEnsemble:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array(rows[1:], dtype=np.float64)
    n_traj = int(data[:, 0].max()) + 1
    n_slices = int(data[:, 1].max()) + 1
    full = data[:, 3:].reshape(n_traj, n_slices, -1)
    times = data[:n_slices, 2]
    return TrajectoryEnsemble(full[:, 1:].copy(), full[:, 0].copy(), times[1:].copy())


def table_csv(header: list[str], rows) -> str:
    return _csv_text(header, rows)


# -------------------------------------------------------------------- configs

@dataclass(frozen=True)
class Key:
    name: str
    kind: str
    default: object
    doc: str
    required: bool = False

    def line(self) -> str:
        return f"{self.name} = <{self.kind}>  # {self.doc}"


def _keys(*specs) -> dict[str, Key]:
    return {k.name: k for k in (Key(*s) for s in specs)}


SCHEMA: dict[str, Key] = _keys(
    ("experiment", "str", "example1", "example1 | ode"),
    ("seed", "int", 0, "master seed"),
    ("snn.widths", "int_list", [40, 40, 40, 40], "hidden layer widths"),
    ("snn.activation", "str", "elu", "relu | elu | identity"),
    ("snn.forward_mode", "str", "resnet", "normal | resnet"),
    ("snn.init_scale", "float", 0.01, "std of the N(0, s^2) init of weight means and biases"),
    ("snn.sigma_init", "float", 0.01, "initial weight std"),
    ("snn.sigma_floor", "float", 1e-6, "lower clamp on weight stds"),
    ("train.learning_rate", "float", 0.005, "Adam step size"),
    ("train.epoch_max", "int", 1000, "number of epochs (one step each)"),
    ("train.epoch_update", "int", 20, "epochs between minibatch refreshes"),
    ("train.n_batch", "int", 128, "minibatch size |X0|"),
    ("train.delta", "float", 0.25, "neighbourhood radius"),
    ("train.N0", "int", 4, "minimum neighbourhood size"),
    ("train.beta1", "float", 0.9, "Adam beta1"),
    ("train.beta2", "float", 0.999, "Adam beta2"),
    ("train.adam_eps", "float", 1e-8, "Adam epsilon"),
    ("train.clip_norm", "float|null", None, "global gradient-norm clip"),
    ("train.snapshot_every", "int", 0, "checkpoint every n epochs (0 = off)"),
    ("data.d", "int", 10, "output dimension"),
    ("data.d0", "int", 3, "number of noise sources"),
    ("data.noise", "str", "constant", "constant | exponential | scaled"),
    ("data.noise_scale", "float", 0.1, "noise scale s"),
    ("data.n_train", "int", 4000, "training samples"),
    ("data.coef_seed", "int", 0, "seed of the coefficient draw"),
    ("data.coef_law", "str", "normal", "normal | make_regression"),
    ("data.n_test", "int", 100, "test inputs"),
    ("data.test_samples", "int", 20, "truth draws per test input"),
    ("ode.d", "int", 5, "independent damping sources"),
    ("ode.sigma", "float", 1.0, "damping noise std"),
    ("ode.sigma0", "float", 0.01, "initial-state noise std"),
    ("ode.dt", "float", 0.1, "time between slices"),
    ("ode.n_slices", "int", 30, "number of time slices"),
    ("ode.n_traj", "int", 300, "trajectories"),
    ("ode.substeps", "int", 5, "RK4 steps per slice"),
    ("ode.conditioning", "str", "nominal", "nominal | initial_state"),
    ("ode.k_f", "int", 64, "RHS samples per state for err_f"),
    ("ode.states_per_slice", "int", 10, "states per slice for err_f"),
    ("eval.K", "int", 20, "model samples per test input"),
    ("rate.d", "int", None, "dimension of the Gaussian law", True),
    ("rate.spec", "str", "homogeneous", "homogeneous | heterogeneous | point_mass | compare"),
    ("rate.c0", "float", 1.0, "decay rate of sigma_i = exp(-c0 i)"),
    ("rate.n_grid", "int_list", [32, 64, 128, 256, 512, 1024], "sample sizes"),
    ("rate.replicates", "int", 20, "replicates per N"),
    ("robust.x", "float_list", [0.5, -0.3], "input at which output laws are compared"),
    ("robust.eps_grid", "float_list", [0.05, 0.1, 0.2, 0.4], "perturbation sizes"),
    ("robust.direction", "str", "generic", "generic | bias"),
    ("robust.direction_seed", "int", 0, "seed of the generic direction"),
    ("robust.K", "int", 4096, "ensemble size"),
    ("robust.repeats", "int", 10, "repeats per eps"),
    ("robust.coupled", "bool", True, "share weight noise between base and perturbed ensembles"),
)

# Per-experiment presets, applied before the file's own values.
PRESETS = {
    "example1": {},
    "ode": {"snn.widths": [60, 60], "snn.forward_mode": "normal", "train.epoch_max": 400,
            "train.delta": 0.125},
}

SECTIONS = {
    "gen-data": ("experiment", "seed", "data.", "ode."),
    "train": ("experiment", "seed", "snn.", "train.", "data.", "ode."),
    "eval": ("experiment", "seed", "eval.", "data.", "ode."),
    "ode-recon": ("experiment", "seed", "snn.", "train.", "ode.", "eval."),
    "rate-lab": ("seed", "rate."),
    "robustness": ("seed", "robust."),
}


def _coerce(key: Key, value):
    kind = key.kind
    ok = {
        "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "float": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        "float|null": lambda v: v is None or (isinstance(v, (int, float)) and not isinstance(v, bool)),
        "str": lambda v: isinstance(v, str),
        "bool": lambda v: isinstance(v, bool),
        "int_list": lambda v: isinstance(v, list) and all(isinstance(e, int) for e in v),
        "float_list": lambda v: isinstance(v, list) and all(isinstance(e, (int, float)) for e in v),
    }[kind]
    if not ok(value):
        raise ConfigError(f"bad value {value!r} for {key.name}; expected: {key.line()}")
    if kind == "float":
        return float(value)
    if kind == "float_list":
        return [float(e) for e in value]
    return value


def parse_config_text(text: str) -> dict[str, object]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = (p.strip() for p in line.partition("="))
        if not eq or not key:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def resolve_config(command: str, entries: dict[str, object]) -> dict[str, object]:
    """Validate ``entries`` for ``command`` and fill defaults (presets first)."""
    allowed = SECTIONS[command]
    in_scope = lambda k: any(k == a or (a.endswith(".") and k.startswith(a)) for a in allowed)
    for k in entries:
        if k not in SCHEMA:
            raise ConfigError(f"unknown config key {k!r}")
        if not in_scope(k):
            raise ConfigError(f"config key {k!r} does not apply to {command}")
    experiment = entries.get("experiment", "example1")
    if experiment not in PRESETS:
        raise ConfigError(f"unknown experiment {experiment!r}; expected: {SCHEMA['experiment'].line()}")
    resolved = {}
    for name, key in SCHEMA.items():
        if not in_scope(name):
            continue
        if name in entries:
            resolved[name] = _coerce(key, entries[name])
        elif key.required:
            raise ConfigError(f"missing config key {name!r}; expected: {key.line()}")
        else:
            resolved[name] = PRESETS[experiment].get(name, key.default)
    return resolved


def load_config(command: str, path=None, overrides: dict | None = None) -> dict[str, object]:
    entries = parse_config_text(Path(path).read_text()) if path else {}
    entries.update(overrides or {})
    return resolve_config(command, entries)


def section(cfg: dict, prefix: str) -> dict[str, object]:
    return {k[len(prefix) + 1:]: v for k, v in cfg.items() if k.startswith(prefix + ".")}


def dumps_config(cfg: dict) -> str:
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in cfg.items())
