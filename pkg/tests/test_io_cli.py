import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from w2snn import cli, io, snn, svg, trainer
from w2snn.errors import ConfigError
from w2snn.experiments import oscillator as osc
from w2snn.rng import substream


# ---------------------------------------------------------------- checkpoints

@pytest.mark.parametrize("mode", ["normal", "resnet"])
def test_checkpoint_round_trip_is_bit_exact(tmp_path, mode):
    p = snn.init(snn.SNNConfig(2, 3, (4, 4, 4), "elu", mode, init_scale=0.7), substream(0, 1))
    p.a[0][0, 0] = 1e-310  # subnormal
    p.b[1][0] = -0.1 + 1e-17
    io.save_checkpoint(p, tmp_path / "c.txt")
    q = io.load_checkpoint(tmp_path / "c.txt")
    assert q == p
    assert io.dumps_checkpoint(q) == io.dumps_checkpoint(p)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=8, max_size=8))
def test_checkpoint_round_trip_any_floats(vals):
    p = snn.init(snn.SNNConfig(1, 2, (2,)), substream(0, 0))
    p.a[1][:] = np.array(vals[:4]).reshape(2, 2)
    p.sigma[0][:] = np.array(vals[4:6]).reshape(2, 1)
    p.b[0][:] = vals[6:8]
    assert io.loads_checkpoint(io.dumps_checkpoint(p)) == p


def test_checkpoint_header_order_and_bad_input():
    text = io.dumps_checkpoint(snn.init(snn.SNNConfig(1, 1, (2,)), substream(0, 0))).splitlines()
    assert text[0] == io.CHECKPOINT_MAGIC and text[1].startswith("input_dim")
    blocks = [l.split()[0] for l in text if l.split()[0] in ("a", "sigma", "b", "skip")]
    assert blocks == ["a", "sigma", "b", "a", "sigma", "b"]
    with pytest.raises(ConfigError):
        io.loads_checkpoint("garbage\n")


# ---------------------------------------------------------------- tables

def test_dataset_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    xs, ys = rng.normal(size=(5, 2)), rng.normal(size=(5, 3))
    text = io.dataset_csv(xs, ys)
    assert text.splitlines()[0] == "x_0,x_1,y_0,y_1,y_2"
    io.atomic_write(tmp_path / "d.csv", text)
    ds = io.read_dataset_csv(tmp_path / "d.csv")
    assert np.array_equal(ds.xs, xs) and np.array_equal(ds.ys, ys)


def test_ensemble_csv_round_trip(tmp_path):
    truth = osc.gen_ode_truth(osc.ODEConfig(n_traj=3, n_slices=2), 0)
    text = io.ensemble_csv(truth)
    header = text.splitlines()[0].split(",")
    assert header[:4] == ["traj", "slice", "t", "comp_0"] and header[-1] == "comp_95"
    io.atomic_write(tmp_path / "e.csv", text)
    back = io.read_ensemble_csv(tmp_path / "e.csv")
    assert np.array_equal(back.states, truth.states) and np.array_equal(back.initial, truth.initial)
    assert np.allclose(back.times, truth.times)


def test_group_by_input():
    ds = io.Dataset(np.array([[0, 0], [0, 0], [1, 1]]), np.array([[1.0], [2.0], [3.0]]))
    xs, groups = io.group_by_input(ds)
    assert xs.shape == (2, 2) and [g.shape[0] for g in groups] == [2, 1]


def test_volatile_columns_are_ignored_in_hashes(tmp_path):
    (tmp_path / "a.csv").write_text("epoch,loss,wall_ms\n0,1.5,3.2\n")
    (tmp_path / "b.csv").write_text("epoch,loss,wall_ms\n0,1.5,9.9\n")
    assert io.file_hash(tmp_path / "a.csv", ("wall_ms",)) == io.file_hash(tmp_path / "b.csv", ("wall_ms",))
    assert io.file_hash(tmp_path / "a.csv") != io.file_hash(tmp_path / "b.csv")


def test_atomic_write_leaves_no_temp_files(tmp_path):
    io.atomic_write(tmp_path / "x" / "f.txt", "hello")
    assert [p.name for p in (tmp_path / "x").iterdir()] == ["f.txt"]


# ---------------------------------------------------------------- configs

def test_config_parsing_and_presets():
    cfg = io.resolve_config("train", io.parse_config_text("experiment = ode  # comment\ntrain.N0 = 2\n"))
    assert cfg["snn.widths"] == [60, 60] and cfg["train.delta"] == 0.125
    assert cfg["snn.forward_mode"] == "normal" and cfg["train.N0"] == 2
    d = io.resolve_config("train", {})
    assert (d["train.learning_rate"], d["train.delta"], d["snn.widths"], d["snn.activation"],
            d["snn.forward_mode"]) == (0.005, 0.25, [40, 40, 40, 40], "elu", "resnet")
    o = io.resolve_config("ode-recon", {"experiment": "ode"})
    assert (o["train.learning_rate"], o["train.delta"], o["snn.widths"], o["snn.activation"]) == \
        (0.005, 0.125, [60, 60], "elu")


def test_config_errors_name_the_key():
    with pytest.raises(ConfigError, match="train.lr"):
        io.resolve_config("train", {"train.lr": 0.1})
    with pytest.raises(ConfigError, match=r"rate\.d = <int>"):
        io.resolve_config("rate-lab", {})
    with pytest.raises(ConfigError, match="train.epoch_max"):
        io.resolve_config("train", {"train.epoch_max": 1.5})
    with pytest.raises(ConfigError, match="does not apply"):
        io.resolve_config("rate-lab", {"rate.d": 2, "train.N0": 1})
    with pytest.raises(ConfigError, match="line 1"):
        io.parse_config_text("just words\n")


def test_every_train_config_field_has_a_key():
    import dataclasses
    names = {f.name for f in dataclasses.fields(trainer.TrainConfig)} - {"snn", "seed"}
    assert {f"train.{n}" for n in names} <= set(io.SCHEMA)


# ---------------------------------------------------------------- svg

def test_svg_is_well_formed_and_deterministic():
    s = [svg.Series("a", [1, 10, 100], [1.0, 0.1, 0.01]), svg.Series("b<&>", [1, 10, 100], [2.0, 0.3, 0.02])]
    text = svg.line_plot(s, "t", "x", "y", logx=True, logy=True)
    root = ET.fromstring(text.split("\n", 1)[1])
    assert root.tag.endswith("svg") and root.get("version") == "1.1"
    assert text == svg.line_plot(s, "t", "x", "y", logx=True, logy=True)
    ET.fromstring(svg.scatter_plot([svg.Series("p", [0, 1], [1, 0])]).split("\n", 1)[1])
    with pytest.raises(ValueError):
        svg.line_plot([svg.Series("z", [0, 1], [1, 1])], logx=True)


# ---------------------------------------------------------------- cli

def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_cli_pipeline_and_replay(tmp_path):
    g = write(tmp_path, "g.cfg", "data.n_train = 120\ndata.n_test = 4\ndata.test_samples = 5\n")
    t = write(tmp_path, "t.cfg", "train.epoch_max = 3\nsnn.widths = [6, 6]\ntrain.n_batch = 8\n")
    assert cli.main(["gen-data", "--config", g, "--out", str(tmp_path / "d"), "--seed", "5"]) == 0
    assert len((tmp_path / "d" / "train.csv").read_text().splitlines()) == 121
    assert cli.main(["train", "--config", t, "--data", str(tmp_path / "d"), "--out", str(tmp_path / "tr")]) == 0
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "tr" / "checkpoint.txt"), "--data",
                     str(tmp_path / "d"), "--out", str(tmp_path / "ev")]) == 0
    header = (tmp_path / "ev" / "metrics.csv").read_text().splitlines()[0]
    assert header == "mean_err,sd_err,excluded_mean,excluded_sd"
    for name in ("errors.svg", "scatter.svg"):
        ET.fromstring((tmp_path / "ev" / name).read_text().split("\n", 1)[1])
    for run in ("d", "tr", "ev"):
        m = json.loads((tmp_path / run / "manifest.json").read_text())
        assert set(m["outputs"]) == {p.name for p in (tmp_path / run).iterdir()} - {"manifest.json"}
        assert cli.main(["replay", str(tmp_path / run / "manifest.json"), "--out", str(tmp_path / f"{run}_r")]) == 0


def test_cli_epoch_zero_checkpoint_equals_initialization(tmp_path):
    g = write(tmp_path, "g.cfg", "data.n_train = 50\ndata.n_test = 2\n")
    t = write(tmp_path, "t.cfg", "train.epoch_max = 0\nsnn.widths = [4]\nseed = 11\n")
    cli.main(["gen-data", "--config", g, "--out", str(tmp_path / "d")])
    assert cli.main(["train", "--config", t, "--data", str(tmp_path / "d"), "--out", str(tmp_path / "tr")]) == 0
    params = io.load_checkpoint(tmp_path / "tr" / "checkpoint.txt")
    cfg = cli.train_config(io.load_config("train", t), 2, 10)
    assert params == trainer.init_params(cfg, 11)


def test_cli_exit_codes(tmp_path, capsys):
    bad = write(tmp_path, "bad.cfg", "train.lr = 1\n")
    assert cli.main(["train", "--config", bad, "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG
    assert "train.lr" in capsys.readouterr().err
    assert cli.main(["rate-lab", "--out", str(tmp_path / "r")]) == cli.EXIT_CONFIG
    assert "rate.d = <int>" in capsys.readouterr().err
    d0 = write(tmp_path, "d0.cfg", "data.d = 2\ndata.d0 = 3\n")
    assert cli.main(["gen-data", "--config", d0, "--out", str(tmp_path / "g")]) == cli.EXIT_CONFIG
    rb = write(tmp_path, "rb.cfg", "robust.K = 32\nrobust.repeats = 2\nrobust.eps_grid = [0.0001, 0.0002, 0.0003]\n")
    assert cli.main(["robustness", "--config", rb, "--out", str(tmp_path / "rb")]) == cli.EXIT_INCONCLUSIVE
    assert json.loads((tmp_path / "rb" / "summary.json").read_text())["inconclusive"]


def test_cli_numerical_abort(tmp_path, monkeypatch):
    from w2snn.errors import NumericalError

    def boom(run):
        raise NumericalError("non-finite loss")

    monkeypatch.setitem(cli.RUNNERS, "gen-data", boom)
    assert cli.main(["gen-data", "--out", str(tmp_path / "x")]) == cli.EXIT_NUMERICAL


def test_cli_eval_dimension_mismatch_names_both(tmp_path, capsys):
    g = write(tmp_path, "g.cfg", "data.n_train = 30\ndata.n_test = 2\ndata.d = 4\n")
    cli.main(["gen-data", "--config", g, "--out", str(tmp_path / "d")])
    p = snn.init(snn.SNNConfig(2, 3, (4,)), substream(0, 0))
    io.save_checkpoint(p, tmp_path / "c.txt")
    code = cli.main(["eval", "--checkpoint", str(tmp_path / "c.txt"), "--data", str(tmp_path / "d"),
                     "--out", str(tmp_path / "e")])
    err = capsys.readouterr().err
    assert code == cli.EXIT_CONFIG and "3" in err and "4" in err


def test_cli_rate_lab_summaries(tmp_path):
    c = write(tmp_path, "r.cfg", 'rate.d = 6\nrate.spec = "compare"\nrate.c0 = 0\nrate.n_grid = [8, 16, 32]\n'
                                 "rate.replicates = 5\n")
    assert cli.main(["rate-lab", "--config", c, "--out", str(tmp_path / "r")]) == 0
    s = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert s["indistinguishable"] and s["difference"] == 0.0
    assert (tmp_path / "r" / "rate_homogeneous.csv").read_text().startswith("N,mean_cost,stderr\n")


def test_cli_env_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("W2SNN_OUT", str(tmp_path / "envout"))
    monkeypatch.setenv("W2SNN_THREADS", "3")
    g = write(tmp_path, "g.cfg", "data.n_train = 10\ndata.n_test = 1\n")
    assert cli.main(["gen-data", "--config", g]) == 0
    m = json.loads((tmp_path / "envout" / "manifest.json").read_text())
    assert m["threads"] == 3


def test_cli_ode_gen_and_eval(tmp_path):
    g = write(tmp_path, "g.cfg", "experiment = ode\node.n_traj = 6\node.n_slices = 2\n")
    assert cli.main(["gen-data", "--config", g, "--out", str(tmp_path / "d")]) == 0
    p = snn.init(osc.default_snn_config((8, 8)), substream(0, 0))
    io.save_checkpoint(p, tmp_path / "c.txt")
    e = write(tmp_path, "e.cfg", "experiment = ode\node.k_f = 4\node.states_per_slice = 2\n")
    assert cli.main(["eval", "--config", e, "--checkpoint", str(tmp_path / "c.txt"), "--data", str(tmp_path / "d"),
                     "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "metrics.csv").read_text().startswith("err_y,err_f\n")
