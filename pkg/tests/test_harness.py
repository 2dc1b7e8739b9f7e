import csv
import json
import math
import re

import numpy as np
import pytest

from adaps.errors import ConfigurationError
from adaps.harness import default_config, load_config, run_ablation, run_experiment
from adaps.harness.cli import main
from adaps.harness.config import parse_config, to_ini
from adaps.harness.experiment import ABLATION_COLUMNS, SWEPT_COLUMNS, build_task, run_task
from adaps.harness.io import read_json, read_tensor, write_pgm, write_tensor
from adaps.harness.metrics import PSNR_CAP, MetricsRecord, capped, psnr

SMALL = dict(chains=8, steps=10)


def test_psnr_values():
    x = np.zeros(4)
    assert psnr(x, x, 1.0) == math.inf and capped(psnr(x, x, 1.0)) == PSNR_CAP
    assert psnr(np.full(4, 0.1), x, 1.0) == pytest.approx(20.0)
    # peak 2 over [-1, 1] with error 0.1 everywhere
    assert psnr(np.full(9, 0.1), np.zeros(9), 2.0) == pytest.approx(26.0206, abs=1e-4)
    with pytest.raises(ConfigurationError):
        psnr(np.zeros(3), np.zeros(4), 1.0)
    with pytest.raises(ConfigurationError):
        psnr(x, x, 0.0)


def test_metrics_record_json_round_trip():
    rec = MetricsRecord("gmm-1d", 10, 20, 1.0, 0.1, 30.5, 31.0, 1e-3, 2e-3, 0.05, 0.2, 0.9, 0.5, wall_time=3.0)
    d = rec.to_json_dict()
    assert "wall_time" not in d
    back = MetricsRecord.from_json_dict(json.loads(json.dumps(d)))
    assert back.to_json_dict() == d


def test_tensor_round_trip(tmp_path):
    a = np.random.default_rng(0).standard_normal((3, 4, 2))
    write_tensor(tmp_path / "a.tensor", a)
    np.testing.assert_array_equal(read_tensor(tmp_path / "a.tensor"), a)
    raw = (tmp_path / "a.tensor").read_bytes()
    (tmp_path / "b.tensor").write_bytes(raw[:-8])
    with pytest.raises(ConfigurationError):
        read_tensor(tmp_path / "b.tensor")


def test_pgm_headers(tmp_path):
    write_pgm(tmp_path / "g.pgm", np.array([[-1.0, 1.0]]))
    data = (tmp_path / "g.pgm").read_bytes()
    assert data.startswith(b"P5\n2 1\n255\n") and data.endswith(bytes([0, 255]))
    write_pgm(tmp_path / "c.pgm", np.zeros((2, 2, 3)))
    assert (tmp_path / "c.pgm").read_bytes().startswith(b"P6\n")


def test_config_round_trip(tmp_path):
    text = """
[experiment]
task = gmm-2d
seed = 7
chains = 12

[schedule]
steps = 25
eta = 0.5

[guidance]
xi_mode = averaged:0.5
d_kind = map
"""
    cfg = parse_config(text)
    assert cfg.seed == 7 and cfg.chains == 12 and cfg.steps == 25 and cfg.eta == 0.5
    assert cfg.guidance.xi_mode == "averaged" and cfg.guidance.d_kind == "map"
    path = tmp_path / "c.ini"
    path.write_text(to_ini(cfg))
    assert load_config(path) == cfg


@pytest.mark.parametrize(
    "text",
    [
        "[experiment]\ntask = gmm-1d\ncolour = red\n",
        "[experiment]\ntask = gmm-1d\n[extras]\na = 1\n",
        "[experiment]\ntask = nope\n",
        "[experiment]\ntask = gmm-1d\nseed = -1\n",
        "[experiment]\ntask = gmm-1d\n[operator]\nkind = dense\nmatrix_file = missing.txt\n",
    ],
)
def test_config_errors(text, tmp_path):
    with pytest.raises(ConfigurationError):
        parse_config(text, tmp_path)


def test_relative_file_paths(tmp_path):
    (tmp_path / "A.txt").write_text("0.5 0.2\n")
    cfg = parse_config("[experiment]\ntask = gmm-2d\n[operator]\nkind = dense\nmatrix_file = A.txt\n", tmp_path)
    assert cfg.operator["matrix_file"] == str(tmp_path / "A.txt")


def test_noiseless_identity_denoise():
    cfg = default_config("identity-denoise", sigma_y=0.0, eta=0.0, chains=16)
    rec, samples, _ = run_task(cfg)
    assert rec.mse <= 1e-4


def test_image_tasks_build():
    for task in ("sr", "gaussian-deblur", "motion-deblur"):
        t = build_task(default_config(task))
        assert t.image_shape == (16, 16) and t.x_true.shape == (256,)


def test_run_experiment_outputs_are_deterministic(tmp_path):
    cfg = default_config("gmm-1d", **SMALL)
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    a, b = (tmp_path / "a" / "metrics.json").read_bytes(), (tmp_path / "b" / "metrics.json").read_bytes()
    assert a == b
    assert "wall_time" in read_json(tmp_path / "a" / "timing.json")
    assert read_tensor(tmp_path / "a" / "samples" / "samples.tensor").shape == (8, 1)
    with open(tmp_path / "a" / "traj" / "mean.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10 and set(rows[0]) == {"step", "t", "xi", "d_norm", "alignment"}


def test_image_run_writes_pgm(tmp_path):
    run_experiment(default_config("sr", chains=2, steps=5), tmp_path)
    assert (tmp_path / "samples" / "posterior_mean.pgm").read_bytes().startswith(b"P5\n16 16\n")


@pytest.mark.parametrize("axis,values", [("xi_mode", ["adaptive", "fixed:1", "fixed:2"]), ("steps", ["5", "10", "20", "40", "80"])])
def test_ablation_rows(axis, values, tmp_path):
    rows = run_ablation(default_config("gmm-1d", **SMALL), axis, values, tmp_path)
    assert len(rows) == len(values)
    with open(tmp_path / "ablation.csv") as fh:
        table = list(csv.DictReader(fh))
    assert len(table) == len(values) and tuple(table[0]) == ABLATION_COLUMNS
    fixed = [c for c in ("task", "seed", "chains", "steps", "eta", "sigma_y", "xi_mode") if c not in SWEPT_COLUMNS[axis]]
    for c in fixed:
        assert len({r[c] for r in table}) == 1


def test_empty_ablation(tmp_path):
    assert run_ablation(default_config("gmm-1d", **SMALL), "eta", [], tmp_path) == []
    assert (tmp_path / "ablation.csv").read_text().strip() == ",".join(ABLATION_COLUMNS)


def test_unknown_axis():
    with pytest.raises(ConfigurationError):
        run_ablation(default_config("gmm-1d"), "colour", ["red"])


def test_cli_verbs(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text(to_ini(default_config("gmm-1d", **SMALL)))
    assert main(["run", "--config", str(ini), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "metrics.json").is_file()
    assert main(["ablate", "--config", str(ini), "--axis", "eta", "--values", "0,1", "--out", str(tmp_path / "a")]) == 0
    assert main(["info", "--task", "sr"]) == 0
    assert main(["oracle-check", "--only", "3"]) == 0
    assert re.search(r"^\[PASS\] criterion +3 ", capsys.readouterr().out, re.M)
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 2
