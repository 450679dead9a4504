import csv
import json

import numpy as np
import pytest

from roughflow.grid import GridField3
from roughflow.harness import ConfigError, FitError, fit_scaling, load_config, parse_config
from roughflow.harness.cli import main
from roughflow.harness.experiments import run_experiment


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_cfg(tmp_path, name, text):
    p = tmp_path / f"{name}.cfg"
    p.write_text(text + f"\noutput = {tmp_path / name}\n")
    return p


QDELTA_ZERO = """
experiment = qdelta3d
field = zero
n_samples = 30
T = 0.5
dt = 0.05
deltas = 1e-2, 1e-4, 1e-6
K_grid = 1, 2, 4
"""


def test_parse_defaults_and_types():
    cfg = parse_config("experiment = dispersion  # trailing comment\nseed = 4\ns_grid = 1, 2.5\n")
    assert cfg.kind == "dispersion" and cfg["seed"] == 4 and cfg["s_grid"] == [1.0, 2.5]
    assert cfg["dt"] == 1e-3 and cfg.get("missing", 7) == 7
    again = parse_config(cfg.dumps())
    assert again.to_dict() == cfg.to_dict()


def test_config_errors_list_keys():
    with pytest.raises(ConfigError) as ei:
        parse_config("experiment = qdelta3d\ndt = -1\ndeltas = 0.5, 2\nbogus = 1\nseed = x\n")
    assert set(ei.value.keys) >= {"dt", "deltas", "bogus", "seed"}
    with pytest.raises(ConfigError) as ei:
        parse_config("seed = 1\n")
    assert ei.value.keys == ["experiment"]
    with pytest.raises(ConfigError):
        parse_config("experiment = qdelta3d\nK_grid =\n")
    with pytest.raises(ConfigError) as ei:
        parse_config("experiment = field_check\n")
    assert "grid_file" in ei.value.keys
    with pytest.raises(FileNotFoundError):
        load_config("/nonexistent/path.cfg")


def test_fit_examples():
    x = np.array([1.0, 2.0, 3.0, 5.0])
    f = fit_scaling(np.stack([x, 2 * x], 1), "linear")
    assert f.slope == pytest.approx(2.0) and f.residual < 1e-12
    x = np.array([4.0, 9.0, 16.0, 25.0])
    f = fit_scaling(np.stack([x, x**0.75], 1), "power")
    assert abs(f.slope - 0.75) < 1e-6
    x = np.array([3.0, 5.0, 10.0, 20.0, 50.0])
    f = fit_scaling(np.stack([x, x / np.log(x)], 1), "psi")
    assert f.sublinear is True and np.all(f.ratio_differences < 0)
    f = fit_scaling(np.stack([x, x], 1), "psi")
    assert f.sublinear is False


def test_fit_errors():
    with pytest.raises(FitError):
        fit_scaling([[1, 1], [2, 2]], "linear")
    with pytest.raises(FitError):
        fit_scaling([[1, 1], [1, 2], [1, 3]], "linear")
    with pytest.raises(FitError):
        fit_scaling([[1, -1], [2, 2], [3, 3]], "power")


def test_qdelta_zero_field(tmp_path):
    paths = run_experiment(load_config(write_cfg(tmp_path, "q", QDELTA_ZERO)))
    rows = read_csv(paths[0])
    assert list(rows[0]) == ["delta", "K", "Q", "Q_K", "omega_K_fraction", "I_delta", "psi_estimate", "dt", "n_samples", "seed"]
    assert len(rows) == 9
    # free transport: D / delta^2 <= 1 + T + T^2, and the G-difference term vanishes
    w = 64 / 30
    for r in rows:
        assert 0 < float(r["Q"]) <= 30 * w * np.log(1 + (1 + 0.5 + 0.25)) + 1e-12
        assert float(r["I_delta"]) == 0.0 and float(r["omega_K_fraction"]) == 0.0
    qs = sorted({float(r["Q"]) for r in rows})
    assert qs[-1] - qs[0] < 1e-3 * qs[0]
    summary = json.loads(paths[-1].read_text())
    assert summary["config"]["field"] == "zero" and summary["config"]["dt"] == 0.05
    assert "version" in summary and all(inv["passed"] for inv in summary["invariants"])


def test_dispersion_experiment(tmp_path):
    cfg = write_cfg(tmp_path, "d", "experiment = dispersion\norder = 24\nn_samples = 1500\n")
    paths = run_experiment(load_config(cfg))
    summary = json.loads(paths[-1].read_text())
    assert summary["fits"]["slope"] <= -0.6


def test_rdelta_and_cone_and_maximal_run(tmp_path):
    r = write_cfg(tmp_path, "r", "experiment = rdelta1d\nn_samples = 20\nT = 0.5\ndt = 1e-3\nn_speeds = 8\ndeltas = 1e-2, 1e-3, 1e-4, 1e-5\n")
    paths = run_experiment(load_config(r))
    assert len(read_csv(paths[0])) == 4 and paths[1].name == "intervals.jsonl"
    for line in paths[1].read_text().splitlines():
        rec = json.loads(line)
        assert rec["t_i"] <= rec["s_i"]
    c = write_cfg(tmp_path, "c", "experiment = cone_verify\nfield = gaussian\nn_trajectories = 2\nn_probe = 50\nn_samples = 2000\ndt = 0.01\n")
    paths = run_experiment(load_config(c))
    summary = json.loads(paths[-1].read_text())
    assert all(inv["passed"] for inv in summary["invariants"])
    m = write_cfg(tmp_path, "m", "experiment = maximal_scan\noperator = spherical\ngrid_n = 17\nn_probe = 10\n")
    paths = run_experiment(load_config(m))
    assert len(read_csv(paths[0])) == 2 and len(read_csv(paths[1])) == 20


def test_reruns_byte_identical_across_workers(tmp_path):
    text = QDELTA_ZERO.replace("field = zero", "field = rough\nchunk = 7")
    a = run_experiment(load_config(write_cfg(tmp_path, "a", text)))
    b = run_experiment(load_config(write_cfg(tmp_path, "a", text)))
    c = run_experiment(load_config(write_cfg(tmp_path, "c", text + "\nworkers = 3")))
    assert a[0].read_bytes() == b[0].read_bytes()
    assert a[0].read_bytes() == c[0].read_bytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cli_exit_codes(tmp_path, capsys):
    good = write_cfg(tmp_path, "g", QDELTA_ZERO)
    assert main(["run", str(good)]) == 0
    bad = tmp_path / "bad.cfg"
    bad.write_text("experiment = qdelta3d\ndt = 0\nfoo = 1\n")
    assert main(["run", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "dt" in err and "foo" in err
    assert main(["run", str(tmp_path / "none.cfg")]) == 2
    # numerical failure: non-finite force from an infinite amplitude
    nan_cfg = write_cfg(tmp_path, "n", QDELTA_ZERO.replace("field = zero", "field = gaussian\namplitude_scale = inf"))
    assert main(["run", str(nan_cfg)]) == 3
    assert main(["field-check", str(tmp_path / "missing.bin")]) == 2


def test_cli_fit_and_field_check(tmp_path, capsys):
    csv_path = tmp_path / "r.csv"
    csv_path.write_text("delta,R\n0.01,1.0\n0.0001,1.5\n1e-06,1.8\n1e-08,2.0\n")
    assert main(["fit", str(csv_path), "--mode", "power"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["n_points"] == 4 and 0 < out["slope"] < 1
    assert main(["fit", str(csv_path), "--y", "nope"]) == 2
    g = GridField3.from_function(lambda p: np.ones(p.shape[:-1]), -1, 1, 5)
    g.save(tmp_path / "g.bin")
    capsys.readouterr()
    assert main(["field-check", str(tmp_path / "g.bin")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["dims"] == [5, 5, 5] and rep["Linf"] == 1.0
    (tmp_path / "short.bin").write_bytes(b"\x00" * 10)
    assert main(["field-check", str(tmp_path / "short.bin")]) == 2
