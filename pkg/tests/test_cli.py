"""Subcommand dispatch, manifests, and artifact round trips."""

import json
import os

import numpy as np
import pytest

from cooplab import cli, evaluation, procgen
from cooplab.evaluation import SURVEY_METRICS, PayoffMatrix, SurveyTable


def read_manifest(out_dir):
    with open(os.path.join(out_dir, "manifest.json")) as fh:
        return json.load(fh)


# ---------------------------------------------------------------- dispatch

def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as err:
        cli.main(["frobnicate"])
    assert err.value.code == 2


def test_runtime_failure_exits_1(tmp_path, capsys):
    code = cli.main(["stats", "--survey", str(tmp_path / "missing.csv"),
                     "--out", str(tmp_path)])
    assert code == 1
    assert "error:" in capsys.readouterr().err


# ---------------------------------------------------------------- gen

def test_gen_writes_valid_layouts_and_manifest(tmp_path):
    out = str(tmp_path / "layouts")
    assert cli.main(["gen", "--count", "5", "--seed", "7", "--out", out]) == 0
    files = sorted(os.listdir(out))
    kitchens = [f for f in files if f.startswith("kitchen_")]
    assert len(kitchens) == 5
    for name in kitchens:
        layout = procgen.decode_layout(open(os.path.join(out, name)).read())
        report = procgen.validate_layout(layout)
        assert report.valid or report.cooperative_valid
    manifest = read_manifest(out)
    assert manifest["command"] == "gen"
    assert len(manifest["artifacts"]) == 5


def test_gen_rerun_from_manifest_reproduces_bytes(tmp_path):
    first = str(tmp_path / "a")
    second = str(tmp_path / "b")
    assert cli.main(["gen", "--count", "4", "--seed", "11", "--out", first]) == 0
    assert cli.main(["gen", "--config", os.path.join(first, "manifest.json"),
                     "--out", second]) == 0
    for name in sorted(os.listdir(first)):
        if not name.startswith("kitchen_"):
            continue
        a = open(os.path.join(first, name), "rb").read()
        b = open(os.path.join(second, name), "rb").read()
        assert a == b, name


# ---------------------------------------------------------------- train + eval

@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("run") / "ippo")
    code = cli.main(["train", "--algo", "ippo", "--env", "dual-dest",
                     "--steps", "1024", "--envs", "2", "--seed", "3",
                     "--checkpoint-every", "512",
                     "--set", "source.horizon=20",
                     "--out", out])
    assert code == 0
    return out


def test_train_writes_checkpoints_metrics_manifest(tiny_run):
    files = os.listdir(tiny_run)
    ckpts = [f for f in files if f.endswith(".ckpt")]
    assert len(ckpts) >= 2
    assert "metrics.jsonl" in files and "config.yaml" in files
    manifest = read_manifest(tiny_run)
    assert manifest["command"] == "train"
    with open(os.path.join(tiny_run, "metrics.jsonl")) as fh:
        records = [json.loads(line) for line in fh]
    assert len(records) == 2
    assert {"mean_return", "value_loss", "approx_kl"} <= set(records[0])


def test_eval_xp_over_checkpoint_dir(tiny_run, tmp_path):
    out = str(tmp_path / "xp")
    code = cli.main(["eval-xp", "--pool", tiny_run, "--tasks", "dd-fixed",
                     "--horizon", "20", "--label", "tiny",
                     "--seed", "1", "--out", out])
    assert code == 0
    matrix = evaluation.read_payoff_csv(os.path.join(out, "payoff.csv"))
    n = len(matrix.labels)
    assert n >= 2
    assert np.allclose(matrix.means, matrix.means.T, equal_nan=True)
    assert np.all(matrix.means >= -1.0) and np.all(matrix.means <= 1.0)
    assert os.path.exists(os.path.join(out, "payoff_se.csv"))
    assert os.path.exists(os.path.join(out, "payoff_counts.csv"))


def test_eval_meta_two_pools(tiny_run, tmp_path):
    out = str(tmp_path / "meta")
    pool = f"{tiny_run}"
    code = cli.main(["eval-meta", "--pool", f"one={pool}",
                     "--pool", f"two={pool}", "--tasks", "dd-fixed",
                     "--horizon", "20", "--seed", "1", "--out", out])
    assert code == 0
    matrix = evaluation.read_payoff_csv(os.path.join(out, "metagame.csv"))
    assert matrix.labels == ("one", "two")


# ---------------------------------------------------------------- analysis

def test_replicator_from_payoff_csv(tmp_path):
    matrix = PayoffMatrix(labels=("a", "b", "c"),
                          means=np.array([[1.0, 0.0, 0.0],
                                          [0.0, 0.5, 0.0],
                                          [0.0, 0.0, 0.2]]),
                          std_errs=np.zeros((3, 3)),
                          episodes=np.ones((3, 3), dtype=np.int64))
    payoff_path = str(tmp_path / "payoff.csv")
    evaluation.write_payoff_csv(matrix, payoff_path)
    out = str(tmp_path / "rep")
    code = cli.main(["replicator", "--payoff", payoff_path,
                     "--steps", "2000", "--out", out])
    assert code == 0
    traj = evaluation.read_grid_csv(os.path.join(out, "trajectory.csv"))
    assert traj.shape == (2001, 3)
    assert np.allclose(traj.sum(axis=1), 1.0, atol=1e-9)
    assert traj[-1, 0] > 0.9
    mesh = evaluation.read_grid_csv(os.path.join(out, "mesh_points.csv"))
    grads = evaluation.read_grid_csv(os.path.join(out, "mesh_gradients.csv"))
    assert mesh.shape == grads.shape


def test_stats_outputs(tmp_path):
    rng = np.random.default_rng(0)
    answers = rng.integers(1, 8, size=(10, 7))
    table = SurveyTable(participants=tuple(f"p{i}" for i in range(10)),
                        models=tuple("m0" if i % 2 else "m1" for i in range(10)),
                        answers=answers)
    survey_path = str(tmp_path / "survey.csv")
    table.to_csv(survey_path)
    out = str(tmp_path / "stats")
    code = cli.main(["stats", "--survey", survey_path, "--out", out])
    assert code == 0
    summary = json.load(open(os.path.join(out, "stats.json")))
    assert summary["participants"] == 10
    assert set(summary["model_means"]) == {"m0", "m1"}
    pearson = np.loadtxt(os.path.join(out, "pearson.csv"), delimiter=",",
                         skiprows=1)
    assert pearson.shape == (7, 7)


def test_config_file_supplies_defaults(tmp_path):
    config_path = str(tmp_path / "conf.yaml")
    with open(config_path, "w") as fh:
        fh.write("count: 3\nseed: 9\n")
    out = str(tmp_path / "g")
    assert cli.main(["gen", "--config", config_path, "--out", out]) == 0
    kitchens = [f for f in os.listdir(out) if f.startswith("kitchen_")]
    assert len(kitchens) == 3
