import json

import numpy as np
import pytest

from dapred import cli, io

TINY = {
    "fom": {"grid_points": 16, "t0": 1.0, "t_end": 1.5, "epsilon_train": [0.01, 0.025, 0.04],
            "epsilon_test": [0.02, 0.03]},
    "network": {"encoder_filters": [3, 3, 2, 2, 2], "encoder_dense": [6, 4], "ffnn_hidden": [6, 6]},
    "kernel": {"kind": "gaussian", "gamma": 1.0},
    "training": {
        "cae": {"epochs": 3, "batch_size": 32},
        "ffnn": {"epochs": 3, "batch_size": 32},
        "joint": {"epochs": 2, "batch_size": 32},
        "train_stride": 2,
    },
    "seed": 1,
}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    out = root / "run"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    assert cli.main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    return cfg, out


def test_init_writes_full_config(tmp_path, capsys):
    target = tmp_path / "cfg.json"
    assert cli.main(["init", "--config", str(target)]) == 0
    data = json.loads(target.read_text())
    assert set(data) == {"fom", "network", "kernel", "kdmd", "training", "seed", "threads", "output_dir"}
    assert cli.main(["init", "--config", str(target)]) == 1  # refuses to overwrite
    assert cli.main(["init", "--config", str(target), "--force", "--paper-scale"]) == 0
    assert json.loads(target.read_text())["fom"]["grid_points"] == 512


def test_simulate_outputs(run_dir):
    _, out = run_dir
    train = sorted(p.name for p in (out / "train").iterdir())
    assert train == ["manifest.json", "traj_0000.dapt", "traj_0001.dapt", "traj_0002.dapt"]
    assert len(list((out / "test").glob("*.dapt"))) == 2


def test_simulate_byte_identical(run_dir, tmp_path):
    cfg, out = run_dir
    again = tmp_path / "again"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(again)]) == 0
    for sub in ("train", "test"):
        for f in (out / sub).iterdir():
            assert (again / sub / f.name).read_bytes() == f.read_bytes()


def test_desk_simulate_file_count(tmp_path):
    # desk preset with a short horizon: seven trajectories plus the manifest
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"fom": {"t0": 0.5, "t_end": 1.0}}))
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert len(list((tmp_path / "o" / "train").iterdir())) == 8


def test_train_outputs(run_dir):
    cfg, out = run_dir
    for phase, epochs in (("cae", 3), ("ffnn", 3), ("joint", 2)):
        lines = (out / f"loss_{phase}.csv").read_text().splitlines()
        assert lines[0].startswith("epoch,loss,best,lr")
        assert len(lines) - 1 == epochs
    bundle, models, extra = io.load_checkpoint(out / "checkpoint.dapc")
    assert extra["seed"] == 1 and len(models) == 3
    assert (out / "kdmd_summary.csv").read_text().startswith("parameter,rank")


def test_train_deterministic(run_dir, tmp_path):
    cfg, out = run_dir
    other = tmp_path / "other"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(other)]) == 0
    assert cli.main(["train", "--config", str(cfg), "--out", str(other)]) == 0
    assert (other / "checkpoint.dapc").read_bytes() == (out / "checkpoint.dapc").read_bytes()
    for phase in ("cae", "ffnn", "joint"):
        assert (other / f"loss_{phase}.csv").read_bytes() == (out / f"loss_{phase}.csv").read_bytes()


def test_missing_dataset_is_validation_error(tmp_path, capsys):
    assert cli.main(["train", "--out", str(tmp_path / "nothing")]) == 1
    assert "simulate" in capsys.readouterr().err


def test_predict_and_sidecar(run_dir, tmp_path):
    cfg, out = run_dir
    queries = np.array([[0.02, 0.5], [0.03, 1.5], [0.02, 1.9], [0.02, 0.505]])
    qpath = tmp_path / "q.dapt"
    io.write_tensor(qpath, queries)
    pout = tmp_path / "pred"
    rc = cli.main(["predict", "--config", str(cfg), "--out", str(pout), "--checkpoint",
                   str(out / "checkpoint.dapc"), "--queries", str(qpath)])
    assert rc == 0
    pred = io.read_tensor(pout / "predictions.dapt")
    assert pred.shape == (4, 32)
    report = json.loads((pout / "predictions_report.json").read_text())
    assert report["queries"] == 4 and report["out_of_range"] == [2] and report["off_grid"] == [3]
    assert report["wall_clock_seconds"] >= 0
    # aligned with query order: same as predicting a single query
    io.write_tensor(qpath, queries[1:2])
    cli.main(["predict", "--config", str(cfg), "--out", str(pout), "--checkpoint",
              str(out / "checkpoint.dapc"), "--queries", str(qpath)])
    assert np.array_equal(io.read_tensor(pout / "predictions.dapt")[0], pred[1])


def test_predict_empty_and_bad_shape(run_dir, tmp_path):
    cfg, out = run_dir
    qpath = tmp_path / "q.dapt"
    io.write_tensor(qpath, np.zeros((0, 2)))
    args = ["predict", "--config", str(cfg), "--out", str(tmp_path), "--checkpoint", str(out / "checkpoint.dapc"),
            "--queries", str(qpath)]
    assert cli.main(args) == 0
    assert io.read_tensor(tmp_path / "predictions.dapt").shape == (0, 32)
    io.write_tensor(qpath, np.zeros((3, 5)))
    assert cli.main(args) == 1


def test_evaluate_outputs(run_dir, tmp_path):
    cfg, out = run_dir
    eout = tmp_path / "eval"
    rc = cli.main(["evaluate", "--config", str(cfg), "--out", str(eout), "--checkpoint", str(out / "checkpoint.dapc"),
                   "--data", str(out / "test")])
    assert rc == 0
    rows = (eout / "metrics.csv").read_text().splitlines()
    assert rows[0] == "field,quantity,parameter,value"
    quantities = {tuple(r.split(",")[:2]) for r in rows[1:]}
    for f in ("v", "w"):
        for q in ("eps_max", "eps_mean", "eps_mean_train", "eps_mean_extrap", "eps_mu"):
            assert (f, q) in quantities
    ts = (eout / "probe_timeseries.csv").read_text().splitlines()
    assert ts[0] == "parameter,t,window,v_ref,v_pred,w_ref,w_pred"
    assert len(ts) - 1 == 2 * 151
    assert (eout / "phase_plane.csv").exists()


def test_evaluate_identity_gives_zero(run_dir, tmp_path):
    from dapred import pipeline

    _, out = run_dir
    bundle, _, _ = io.load_checkpoint(out / "checkpoint.dapc")
    ref = io.read_dataset(out / "test")
    report = pipeline.evaluate(bundle, ref, predicted=ref.states)
    assert all(d["eps_max"] == 0.0 and d["eps_mean"] == 0.0 for d in report["fields"].values())


def test_evaluate_grid_mismatch(run_dir, tmp_path):
    cfg, out = run_dir
    other = dict(TINY, fom=dict(TINY["fom"], grid_points=32))
    (tmp_path / "c.json").write_text(json.dumps(other))
    assert cli.main(["simulate", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == 0
    rc = cli.main(["evaluate", "--config", str(cfg), "--out", str(tmp_path), "--checkpoint",
                   str(out / "checkpoint.dapc"), "--data", str(tmp_path / "test")])
    assert rc == 1


def test_usage_and_config_errors(tmp_path):
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["simulate", "--desk-scale", "--paper-scale"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"fom": {"gridpoints": 4}}))
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert cli.main(["simulate", "--threads", "0", "--out", str(tmp_path)]) == 1


def test_runtime_failure_exit_code(tmp_path):
    # a blown-up simulation is a runtime failure, not a validation error
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"fom": {"grid_points": 16, "substeps": 1, "dt_output": 0.5, "t0": 1.0,
                                       "t_end": 20.0, "input_amplitude": 1e12}}))
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_verify_and_injection(capsys):
    assert cli.main(["verify"]) == 0
    text = capsys.readouterr().out
    assert text.count("PASS") == 5
    assert cli.main(["verify", "--inject", "kernel"]) == 2
    lines = capsys.readouterr().out.splitlines()
    assert any(line.startswith("FAIL") and "kdmd_kernel_vs_edmd" in line for line in lines)
