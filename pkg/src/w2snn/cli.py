"""``w2snn`` command line: generate data, train, evaluate, run the theory studies.

Every command writes its artifacts plus ``manifest.json`` (resolved config,
seed, input and output sha256 hashes) into the output directory.
``w2snn replay <manifest>`` reruns a manifest and checks the hashes.

Exit codes: 0 success, 1 replay mismatch, 2 config error, 3 numerical abort,
4 inconclusive study.

Environment: ``W2SNN_THREADS`` (worker count), ``W2SNN_OUT`` (output directory
when ``--out`` is absent).
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io, snn, svg, theory, trainer
from .errors import ConfigError, DimensionError, InconclusiveStudy, NumericalError
from .experiments import oscillator as osc
from .experiments import random_field as rf
from .rng import default_threads

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INCONCLUSIVE = 0, 1, 2, 3, 4
VOLATILE = {"history.csv": ("wall_ms",)}
COMMANDS = ("gen-data", "train", "eval", "ode-recon", "rate-lab", "robustness")


class Run:
    """Collects outputs of one command and writes the manifest."""

    def __init__(self, command: str, cfg: dict, out: Path, threads: int, args: dict):
        self.command, self.cfg, self.out, self.threads, self.args = command, cfg, out, threads, args
        self.outputs: dict[str, str] = {}
        self.started = _dt.datetime.now(_dt.timezone.utc).isoformat()
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
        if not os.access(out, os.W_OK):
            raise ConfigError(f"output directory {out} is not writable")

    @property
    def seed(self) -> int:
        return int(self.cfg["seed"])

    def write(self, name: str, data: str) -> None:
        io.atomic_write(self.out / name, data)
        self.outputs[name] = io.file_hash(self.out / name, VOLATILE.get(name, ()))

    def inputs(self) -> dict[str, str]:
        files = {}
        for key in ("data", "checkpoint"):
            p = self.args.get(key)
            if not p:
                continue
            p = Path(p)
            for f in sorted(p.glob("*.csv")) if p.is_dir() else [p]:
                files[str(f)] = io.file_hash(f)
        return files

    def finish(self, status: str = "ok") -> None:
        manifest = {
            "command": self.command,
            "config": self.cfg,
            "seed": self.seed,
            "args": self.args,
            "inputs": self.inputs(),
            "outputs": self.outputs,
            "volatile_columns": {k: list(v) for k, v in VOLATILE.items() if k in self.outputs},
            "out_dir": str(self.out),
            "threads": self.threads,
            "status": status,
            "started": self.started,
            "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        }
        io.atomic_write(self.out / "manifest.json", json.dumps(manifest, indent=2) + "\n")


# ------------------------------------------------------------------ builders

def example1_config(cfg: dict) -> rf.Example1Config:
    return rf.Example1Config(**io.section(cfg, "data"))


def ode_config(cfg: dict) -> osc.ODEConfig:
    return osc.ODEConfig(**io.section(cfg, "ode"))


def snn_config(cfg: dict, input_dim: int, output_dim: int) -> snn.SNNConfig:
    s = io.section(cfg, "snn")
    s["widths"] = tuple(s["widths"])
    return snn.SNNConfig(input_dim, output_dim, **s)


def train_config(cfg: dict, input_dim: int, output_dim: int) -> trainer.TrainConfig:
    return trainer.TrainConfig(snn=snn_config(cfg, input_dim, output_dim), seed=int(cfg["seed"]),
                               **io.section(cfg, "train"))


# ------------------------------------------------------------------ commands

def cmd_gen_data(run: Run) -> int:
    if run.cfg["experiment"] == "ode":
        truth = osc.gen_ode_truth(ode_config(run.cfg), run.seed)
        run.write("truth.csv", io.ensemble_csv(truth))
        return EXIT_OK
    data = rf.gen_example1(example1_config(run.cfg), run.seed)
    run.write("train.csv", io.dataset_csv(data.train.xs, data.train.ys))
    tx = np.repeat(data.test_x, [len(t) for t in data.test_y], axis=0)
    run.write("test.csv", io.dataset_csv(tx, np.vstack(data.test_y)))
    return EXIT_OK


def _need(args: dict, key: str) -> str:
    if not args.get(key):
        raise ConfigError(f"--{key} is required for this command")
    return args[key]


def cmd_train(run: Run) -> int:
    if run.cfg["experiment"] != "example1":
        raise ConfigError("train handles example1 data; use ode-recon for the oscillator")
    ds = io.read_dataset_csv(Path(_need(run.args, "data")) / "train.csv")
    tc = train_config(run.cfg, ds.xs.shape[1], ds.ys.shape[1])
    params, history = trainer.train(ds, tc, threads=run.threads)
    run.write("checkpoint.txt", io.dumps_checkpoint(params))
    run.write("history.csv", history.to_csv())
    for epoch, snap in sorted(history.snapshots.items()):
        run.write(f"checkpoint_{epoch:06d}.txt", io.dumps_checkpoint(snap))
    losses = history.losses
    if losses.size:
        run.write("loss.svg", svg.line_plot([svg.Series("loss", np.arange(1, losses.size + 1), losses)],
                                            "training loss", "epoch", "local W2^2", logy=bool(np.all(losses > 0))))
    return EXIT_OK


def _check_dims(params: snn.SNNParams, input_dim: int, output_dim: int) -> None:
    c = params.config
    if c.input_dim != input_dim or c.output_dim != output_dim:
        raise DimensionError(f"checkpoint maps {c.input_dim} -> {c.output_dim} but the test set has "
                             f"inputs of dim {input_dim} and outputs of dim {output_dim}")


def component_errors(truth: list[np.ndarray], pred: list[np.ndarray]) -> list[rf.RelativeErrors]:
    return [rf.relative_errors([t[:, [j]] for t in truth], [p[:, [j]] for p in pred])
            for j in range(truth[0].shape[1])]


def _ode_outputs(run: Run, truth: osc.TrajectoryEnsemble, pred: osc.TrajectoryEnsemble,
                 params: snn.SNNParams, oc: osc.ODEConfig) -> None:
    errs = osc.ode_errors(truth, pred, osc.oscillator_rhs_sampler(oc.d, oc.sigma), osc.snn_rhs_sampler(params),
                          oc.k_f, run.seed, oc.states_per_slice)
    run.write("metrics.csv", io.table_csv(["err_y", "err_f"], [[errs.err_y, errs.err_f]]))
    run.write("err_y_slices.csv", io.table_csv(["slice", "t", "err_y"],
                                               [[i + 1, t, e] for i, (t, e) in
                                                enumerate(zip(truth.times, errs.err_y_per_slice))]))
    run.write("err_y.svg", svg.line_plot([svg.Series("err_y", truth.times, errs.err_y_per_slice)],
                                         "trajectory error per slice", "t", "err_y"))
    run.write("scatter.svg", svg.scatter_plot(
        [svg.Series("truth", truth.states[:, -1, 0], truth.states[:, -1, osc.N_OSC]),
         svg.Series("predicted", pred.states[:, -1, 0], pred.states[:, -1, osc.N_OSC])],
        "final slice", "x_1", "v_1"))


def cmd_eval(run: Run) -> int:
    params = io.load_checkpoint(_need(run.args, "checkpoint"))
    data_dir = Path(_need(run.args, "data"))
    if run.cfg["experiment"] == "ode":
        oc = ode_config(run.cfg)
        truth = io.read_ensemble_csv(data_dir / "truth.csv")
        _check_dims(params, truth.initial.shape[1], truth.initial.shape[1])
        oc = osc.ODEConfig(**{**io.section(run.cfg, "ode"), "n_slices": truth.states.shape[1],
                              "n_traj": truth.n_traj})
        pred = osc.predict_ensemble(params, truth.initial, oc, rng=run.seed)
        _ode_outputs(run, truth, pred, params, oc)
        return EXIT_OK
    test_x, truth = io.group_by_input(io.read_dataset_csv(data_dir / "test.csv"))
    _check_dims(params, test_x.shape[1], truth[0].shape[1])
    pred = trainer.evaluate(params, test_x, K=int(run.cfg["eval.K"]), rng=run.seed)
    errs = rf.relative_errors(truth, pred)
    run.write("metrics.csv", io.table_csv(["mean_err", "sd_err", "excluded_mean", "excluded_sd"],
                                          [[errs.mean_err, errs.sd_err, errs.excluded_mean, errs.excluded_sd]]))
    per = component_errors(truth, pred)
    run.write("component_errors.csv", io.table_csv(["component", "mean_err", "sd_err"],
                                                   [[j, e.mean_err, e.sd_err] for j, e in enumerate(per)]))
    comp = np.arange(1, len(per) + 1)
    run.write("errors.svg", svg.line_plot([svg.Series("mean", comp, [e.mean_err for e in per]),
                                           svg.Series("SD", comp, [e.sd_err for e in per])],
                                          "relative error per component", "component", "relative error"))
    if truth[0].shape[1] >= 2:
        T, P = np.vstack(truth), np.vstack(pred)
        run.write("scatter.svg", svg.scatter_plot([svg.Series("truth", T[:, 0], T[:, 1]),
                                                   svg.Series("predicted", P[:, 0], P[:, 1])],
                                                  "joint samples", "y_0", "y_1"))
    return EXIT_OK


def cmd_ode_recon(run: Run) -> int:
    oc = ode_config(run.cfg)
    tc = train_config(run.cfg, osc.STATE_DIM, osc.STATE_DIM)
    params, pred, history, truth = osc.train_ode_recon(oc, tc, run.seed, threads=run.threads)
    run.write("truth.csv", io.ensemble_csv(truth))
    run.write("predicted.csv", io.ensemble_csv(pred))
    run.write("checkpoint.txt", io.dumps_checkpoint(params))
    run.write("history.csv", history.to_csv())
    _ode_outputs(run, truth, pred, params, oc)
    return EXIT_OK


def _fit_dict(fit: theory.SlopeFit | None) -> dict | None:
    if fit is None:
        return None
    return {"slope": fit.slope, "intercept": fit.intercept, "residual_rms": fit.residual_rms}


def cmd_rate_lab(run: Run) -> int:
    r = io.section(run.cfg, "rate")
    grid = tuple(r["n_grid"])
    if r["spec"] == "compare":
        cmp = theory.heterogeneity_comparison(r["d"], r["c0"], grid, r["replicates"], run.seed, run.threads)
        studies = {"homogeneous": cmp.homogeneous, "heterogeneous": cmp.heterogeneous}
        summary = {"slope_hom": cmp.slope_hom, "slope_het": cmp.slope_het, "difference": cmp.difference,
                   "stderr_hom": theory.slope_stderr(cmp.homogeneous),
                   "stderr_het": theory.slope_stderr(cmp.heterogeneous),
                   "indistinguishable": cmp.indistinguishable()}
    else:
        rc = theory.RateStudyConfig(r["d"], r["spec"], r["c0"], grid, r["replicates"], run.seed)
        studies = {r["spec"]: theory.two_sample_w2_rate(rc, run.threads)}
        summary = {}
    for name, st in studies.items():
        run.write(f"rate_{name}.csv", st.to_csv())
        summary[name] = {"fit": _fit_dict(st.fit), "moment_M": st.moment_M}
    run.write("summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    positive = {k: s for k, s in studies.items() if np.all(s.mean_costs > 0)}
    if positive:
        run.write("rate.svg", svg.line_plot([svg.Series(k, s.n_grid, s.mean_costs) for k, s in positive.items()],
                                            f"two-sample W2^2, d={r['d']}", "N", "mean W2^2",
                                            logx=True, logy=True))
    return EXIT_OK


def cmd_robustness(run: Run) -> int:
    r = io.section(run.cfg, "robust")
    base = theory.robustness_network(run.seed)
    res = theory.robustness_slope(base, np.array(r["x"]), r["eps_grid"], r["direction"], r["direction_seed"],
                                  r["K"], run.seed, r["repeats"], coupled=r["coupled"])
    run.write("robustness.csv", res.to_csv())
    summary = {"floor": res.floor, "fit": _fit_dict(res.fit), "envelope_C": res.envelope_C,
               "within_envelope": res.within_envelope() if res.fit else None,
               "inconclusive": res.inconclusive, "advice": res.advice}
    run.write("summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    pos = (res.eps_grid > 0) & (res.signals > 0)
    if pos.sum() >= 2:
        run.write("robustness.svg", svg.line_plot(
            [svg.Series("mean W2^2", res.eps_grid[pos], res.signals[pos]),
             svg.Series("floor", res.eps_grid[pos], np.full(pos.sum(), max(res.floor, 1e-300)))],
            "perturbation growth", "eps", "W2^2", logx=True, logy=True))
    if res.inconclusive:
        print(f"inconclusive: {res.advice}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    return EXIT_OK


RUNNERS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "ode-recon": cmd_ode_recon,
           "rate-lab": cmd_rate_lab, "robustness": cmd_robustness}


# ----------------------------------------------------------------- plumbing

def execute(command: str, cfg: dict, out: Path, threads: int, args: dict) -> tuple[int, Run]:
    run = Run(command, cfg, out, threads, args)
    code = RUNNERS[command](run)
    run.finish("ok" if code == EXIT_OK else "inconclusive")
    return code, run


def replay(manifest_path: Path, out: Path | None, threads: int | None) -> int:
    m = json.loads(Path(manifest_path).read_text())
    out = out or Path(manifest_path).parent / "replay"
    cfg = io.resolve_config(m["command"], m["config"])
    code, run = execute(m["command"], cfg, out, threads or m["threads"], m["args"])
    mismatched = sorted(k for k in set(m["outputs"]) | set(run.outputs)
                        if m["outputs"].get(k) != run.outputs.get(k))
    for name in sorted(m["outputs"]):
        print(f"{'MISMATCH' if name in mismatched else 'ok':8s} {name}")
    if mismatched:
        return EXIT_MISMATCH
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="w2snn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="flat key = value config file")
        s.add_argument("--out", help="output directory (default $W2SNN_OUT or ./w2snn-out/<command>)")
        s.add_argument("--seed", type=int, help="master seed (overrides the config)")
        s.add_argument("--threads", type=int, help="worker threads (default $W2SNN_THREADS or CPU count)")
        if name in ("train", "eval"):
            s.add_argument("--data", help="directory written by gen-data")
        if name == "eval":
            s.add_argument("--checkpoint", help="checkpoint file written by train or ode-recon")
    s = sub.add_parser("replay")
    s.add_argument("manifest")
    s.add_argument("--out", help="where to rerun (default: <manifest dir>/replay)")
    s.add_argument("--threads", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            return replay(Path(args.manifest), Path(args.out) if args.out else None, args.threads)
        overrides = {} if args.seed is None else {"seed": args.seed}
        cfg = io.load_config(args.command, args.config, overrides)
        out = Path(args.out or os.environ.get("W2SNN_OUT") or Path("w2snn-out") / args.command)
        threads = args.threads or default_threads()
        extra = {k: getattr(args, k, None) for k in ("data", "checkpoint") if getattr(args, k, None)}
        code, run = execute(args.command, cfg, out, threads, extra)
        print(f"{args.command}: wrote {len(run.outputs)} files to {out}")
        return code
    except (ConfigError, DimensionError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InconclusiveStudy as exc:
        print(f"inconclusive: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE


if __name__ == "__main__":
    sys.exit(main())
