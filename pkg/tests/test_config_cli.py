import csv
import math

import numpy as np
import pytest

from smoothopt.cli import histogram_rows, main
from smoothopt.cohesive import ChainModel, rigid_stiffness
from smoothopt.config import ConfigError, default_config_text, read_config
from smoothopt.io import fmt
from smoothopt.objectives import herbie_step
from smoothopt.optimizer import DATASET_FILE, TRACE_FILE


def _write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


CHAIN = """[design]
lower = 0.5
upper = 2
sigma = 0.05

[objective]
kind = cohesive_chain
n_nodes = 41
precrack = 20
n_steps = 10
"""


def test_defaults_load():
    cfg = read_config(text="")
    assert cfg.dim == 1
    assert cfg.move_limit.gamma_pan == 1.2
    assert cfg.move_limit.sigma_max == 10.0
    assert cfg.options.n_samples == 65536


@pytest.mark.parametrize("text", ["[bogus]\nx = 1\n", "[design]\nlowr = 1\n",
                                  "[objective]\nkind = herbie_step\nA = 1\n",
                                  "[optimizer]\ngamma_osc = 1.3\n",
                                  "[design]\nlower = 0 0\nupper = 1 1 1\n",
                                  "[design]\nlower = 3\nupper = 1\n",
                                  "[execution]\nworkers = 0\n", "[smoothing]\nn_samples = 1\n",
                                  "[objective]\npenalty = inf\nfailure_policy = penalty\n",
                                  "[design]\nperiodic = maybe\n"])
def test_invalid_configs_rejected(text):
    with pytest.raises(ConfigError):
        read_config(text=text)


def test_overrides_and_malformed_override():
    cfg = read_config(text="", overrides=["optimizer.k_max=7", "design.lower=-1 -1"])
    assert cfg.move_limit.k_max == 7 and cfg.dim == 2
    with pytest.raises(ConfigError):
        read_config(text="", overrides=["k_max=7"])


def test_echo_round_trip(tmp_path):
    cfg = read_config(text=CHAIN, overrides=["optimizer.k_max=3"])
    again = read_config(_write(tmp_path, cfg.echo()))
    assert again.echo() == cfg.echo()
    assert again.move_limit == cfg.move_limit
    np.testing.assert_array_equal(again.space.scale, cfg.space.scale)


def test_default_config_text_loads():
    cfg = read_config(text=default_config_text(optimizer={"k_max": 4}))
    assert cfg.move_limit.k_max == 4


def test_histogram_rows():
    rows = histogram_rows([1.0, 2.0, 3.0, 3.0], bins=2)
    assert [r[2] for r in rows] == ["1", "3"]
    assert histogram_rows([5.0, 5.0]) == [[5.0, 5.0, "2"]]


def test_optimize_exit_codes(tmp_path, capsys):
    bad = _write(tmp_path, "[optimizer]\ngamma_osc = 1.5\n")
    assert main(["optimize", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    assert "gamma" in capsys.readouterr().err
    assert main(["optimize", "--config", str(tmp_path / "missing.ini")]) == 2
    assert main(["nonsense"]) == 2


def _optimize(tmp_path, out, *extra):
    cfg = _write(tmp_path, "[design]\nlower = -2 -2\n[optimizer]\nk_max = 3\n"
                           "[smoothing]\nn_samples = 1024\n")
    return main(["optimize", "--config", cfg, "--out", str(out), "--runs", "2", *extra])


def test_optimize_writes_outputs_and_resumes(tmp_path):
    assert _optimize(tmp_path, tmp_path / "a") == 0
    for r in range(2):
        run_dir = tmp_path / "a" / f"run_{r:03d}"
        assert len((run_dir / TRACE_FILE).read_text().splitlines()) == 3
        assert len((run_dir / DATASET_FILE).read_text().splitlines()) == 6 + 3 * 6
    header, data = _read_csv(tmp_path / "a" / "summary.csv")
    assert header[:2] == ["run", "seed"] and header[-1] == "n_evaluations"
    np.testing.assert_array_equal(data[:, 1], [0, 1])
    _, hist = _read_csv(tmp_path / "a" / "histogram.csv")
    assert hist[:, 2].sum() == 2
    # the echoed configuration reproduces the run exactly
    assert main(["optimize", "--config", str(tmp_path / "a" / "config.ini"),
                 "--out", str(tmp_path / "b")]) == 0
    for name in (TRACE_FILE, DATASET_FILE):
        assert ((tmp_path / "a" / "run_001" / name).read_bytes()
                == (tmp_path / "b" / "run_001" / name).read_bytes())
    before = (tmp_path / "a" / "summary.csv").read_bytes()
    assert _optimize(tmp_path, tmp_path / "a", "--resume") == 0
    assert (tmp_path / "a" / "summary.csv").read_bytes() == before


def test_simulate_prints_work_and_writes_curve(tmp_path, capsys):
    cfg = _write(tmp_path, CHAIN)
    out = tmp_path / "sim"
    assert main(["simulate", "--config", cfg, "--design", "1.0", "--out", str(out)]) == 0
    printed = capsys.readouterr().out.strip()
    header, data = _read_csv(out / "load_displacement.csv")
    assert header == ["t", "u_hat", "F"]
    assert len(data) == 11
    w = -0.5 * np.sum((data[1:, 2] + data[:-1, 2]) * np.diff(data[:, 1]))
    assert float(printed) == pytest.approx(w, rel=1e-14)
    assert printed == fmt(float(printed))
    first = (out / "load_displacement.csv").read_bytes()
    assert main(["simulate", "--config", cfg, "--design", "1.0", "--out", str(out)]) == 0
    assert capsys.readouterr().out.strip() == printed
    assert (out / "load_displacement.csv").read_bytes() == first


def test_simulate_rigid_interface_closed_form(tmp_path, capsys):
    cfg = _write(tmp_path, CHAIN + "rigid_interface = true\nk_bend = 250\nT = 0.04\n")
    assert main(["simulate", "--config", cfg, "--design", "1.3",
                 "--out", str(tmp_path / "r")]) == 0
    value = float(capsys.readouterr().out)
    kappa = rigid_stiffness(ChainModel(n_nodes=41, precrack=20, k_bend=250.0))
    assert value == pytest.approx(-0.5 * kappa * 0.04 ** 2, rel=1e-12)


@pytest.mark.parametrize("design", ["1.0 abc", "", "1 2", "nan"])
def test_simulate_malformed_design(tmp_path, design):
    cfg = _write(tmp_path, CHAIN)
    assert main(["simulate", "--config", cfg, "--design", design,
                 "--out", str(tmp_path / "s")]) == 2


def test_simulate_rejects_analytic_objective(tmp_path):
    assert main(["simulate", "--design", "0.1", "--out", str(tmp_path / "s")]) == 2


def test_solver_failure_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, CHAIN.replace("n_steps = 10", "n_steps = 1") + "T = 1e300\n")
    assert main(["simulate", "--config", cfg, "--design", "1.0",
                 "--out", str(tmp_path / "s")]) == 3
    assert "evaluation failed" in capsys.readouterr().err


def test_external_failure_exit_code(tmp_path):
    cfg = _write(tmp_path, "[objective]\nkind = external\ncommand = false\n")
    assert main(["optimize", "--config", cfg, "--out", str(tmp_path / "x")]) == 3


def test_landscape_herbie(tmp_path):
    cfg = _write(tmp_path, "[design]\nlower = -2\nupper = 2\n[smoothing]\nn_samples = 4096\n")
    out = tmp_path / "land"
    assert main(["landscape", "--config", cfg, "--axes", "0", "--grid", "401",
                 "--sigmas", "0 0.1 0.2", "--out", str(out)]) == 0
    header, data = _read_csv(out / "landscape.csv")
    assert len(header) == 5 and len(data) == 401
    x, f = data[:, 0], data[:, 1]
    np.testing.assert_allclose(np.diff(x), 0.01, rtol=1e-9)
    np.testing.assert_array_equal(data[:, 2], f)
    np.testing.assert_array_equal(f, herbie_step(x[:, None]))
    c_step = 0.5
    assert np.max(np.abs(np.diff(f))) >= 0.9 * c_step
    assert np.max(np.abs(np.diff(data[:, 4]))) <= c_step / 10


def test_landscape_bad_axes(tmp_path):
    assert main(["landscape", "--axes", "3", "--out", str(tmp_path / "l")]) == 2
    assert main(["landscape", "--axes", "0", "--sigmas", "-1", "--out", str(tmp_path / "l")]) == 2


def test_landscape_two_axes(tmp_path):
    cfg = _write(tmp_path, "[design]\nlower = -2 -2 -2\n[smoothing]\nn_samples = 256\n")
    out = tmp_path / "l2"
    assert main(["landscape", "--config", cfg, "--axes", "0 2", "--grid", "5",
                 "--sigmas", "0.3", "--at", "0 1 0", "--out", str(out)]) == 0
    header, data = _read_csv(out / "landscape.csv")
    assert header[:3] == ["x_0", "x_2", "f"] and len(data) == 25
    assert np.all(np.isfinite(data)) and not math.isnan(data[0, 3])
