"""Config round-trip, trial determinism, CLI contracts."""

import os
import subprocess
import sys

import numpy as np
import pytest

from dynlearn.cli import main as cli_main
from dynlearn.dynamics import ConfigurationError
from dynlearn.harness import ExperimentConfig, run_experiment, run_sweep, run_trial
from dynlearn.records import TrialRecord

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


def small_config(**extra):
    values = {
        "experiment.name": "smoke",
        "experiment.seeds": "0,1",
        "experiment.horizon": "400",
        "experiment.record_every": "10",
        "system.kind": "linear_regression",
        "system.n_samples": "8",
        "system.dim": "3",
        "system.noise": "0.1",
        "system.data_seed": "5",
        "algorithm.name": "sgd",
        "schedule.gamma": "0.1",
        "schedule.b": "0.5",
        "sampling.scheme": "cycling",
        "init.theta0": "near_optimum",
        "init.radius": "0.3",
    }
    values.update({k: str(v) for k, v in extra.items()})
    return ExperimentConfig(values)


def test_config_ini_roundtrip(tmp_path):
    cfg = small_config()
    text = cfg.to_ini()
    back = ExperimentConfig.from_ini(text)
    assert back.values == cfg.values
    assert back.hash == cfg.hash


def test_trial_determinism():
    cfg = small_config()
    a = run_trial(cfg, 0)
    b = run_trial(cfg, 0)
    assert np.array_equal(a.theta_dist, b.theta_dist)
    assert np.array_equal(a.final_theta, b.final_theta)
    c = run_trial(cfg, 1)
    assert not np.array_equal(a.final_theta, c.final_theta)


@pytest.mark.parametrize("algo", ["sgd", "uoro", "nobacktrack", "rmsprop", "adam", "ong"])
def test_all_algorithms_run(algo):
    cfg = small_config(**{"algorithm.name": algo, "experiment.horizon": 200})
    rec = run_trial(cfg, 0)
    assert len(rec.t) > 1 and not rec.aborted


def test_tbptt_algorithm_runs():
    cfg = small_config(**{
        "algorithm.name": "tbptt",
        "system.kind": "influence_balancing",
        "system.s0": "stationary",
        "truncation.spec": "grow:0.4",
        "schedule.gamma": "0.05",
        "schedule.b": "0.7",
    })
    rec = run_trial(cfg, 0)
    assert rec.interval_k is not None


def test_run_experiment_files_and_determinism(tmp_path):
    cfg = small_config()
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    run_experiment(cfg, str(out1), jobs=1)
    run_experiment(cfg, str(out2), jobs=2)
    for seed in (0, 1):
        f1 = out1 / "smoke" / f"{seed}.csv"
        f2 = out2 / "smoke" / f"{seed}.csv"
        assert f1.read_bytes() == f2.read_bytes()
    assert (out1 / "smoke" / "summary.csv").read_bytes() == (out2 / "smoke" / "summary.csv").read_bytes()


def test_run_experiment_arm_layout(tmp_path):
    cfg = small_config(**{
        "experiment.name": "two_arms",
        "arms.cycling": "sampling.scheme=cycling",
        "arms.iid": "sampling.scheme=iid; schedule.b=0.7",
    })
    exp_dir = run_experiment(cfg, str(tmp_path), jobs=1)
    csvs = sorted(
        os.path.join(root, f)
        for root, _, files in os.walk(exp_dir)
        for f in files if f.endswith(".csv") and f != "summary.csv"
    )
    assert len(csvs) == 4  # 2 arms x 2 seeds
    with open(os.path.join(exp_dir, "summary.csv")) as fh:
        lines = fh.read().strip().splitlines()
    assert lines[0] == "arm,seed,converged,final_dist,abort_t"
    assert len(lines) == 5


def test_summary_matches_trial_csvs(tmp_path):
    cfg = small_config(**{"experiment.horizon": 2000, "experiment.record_every": 50})
    exp_dir = run_experiment(cfg, str(tmp_path), jobs=1)
    import csv as csvmod

    with open(os.path.join(exp_dir, "summary.csv")) as fh:
        rows = list(csvmod.DictReader(fh))
    for row in rows:
        rec = TrialRecord.from_csv(os.path.join(exp_dir, f"{row['seed']}.csv"))
        assert float(row["final_dist"]) == rec.final_dist()
        expected = int((not rec.aborted) and rec.final_dist() <= 1e-2)
        assert int(row["converged"]) == expected


def test_exponent_validation_blocks_run(tmp_path):
    cfg = small_config(**{
        "exponents.a": "0.55",
        "algorithm.name": "uoro",
        "schedule.b": "0.5",
    })
    with pytest.raises(ConfigurationError):
        run_experiment(cfg, str(tmp_path))
    run_experiment(cfg, str(tmp_path), force=True)  # runs when forced


def test_sweep_rows(tmp_path):
    cfg = small_config(**{
        "experiment.name": "grid",
        "experiment.horizon": 300,
        "sweep.schedule.b": "0.3, 0.5, 0.7, 0.9",
        "sweep.sampling.scheme": "cycling, iid",
    })
    exp_dir = run_sweep(cfg, str(tmp_path))
    with open(os.path.join(exp_dir, "sweep.csv")) as fh:
        lines = fh.read().strip().splitlines()
    assert lines[0] == "sampling.scheme,schedule.b,mean_final_dist,converged_frac,error"
    assert len(lines) == 1 + 8


def test_sweep_partial_failure_recorded(tmp_path):
    cfg = small_config(**{
        "experiment.name": "gridfail",
        "experiment.horizon": 300,
        "sweep.schedule.b": "0.5, 2.0",  # 2.0 is out of range -> config error
    })
    exp_dir = run_sweep(cfg, str(tmp_path))
    with open(os.path.join(exp_dir, "sweep.csv")) as fh:
        lines = fh.read().strip().splitlines()
    assert len(lines) == 3
    assert "ConfigurationError" in lines[2]


# --- CLI ---------------------------------------------------------------------

def write_config(tmp_path, cfg):
    path = tmp_path / "exp.ini"
    path.write_text(cfg.to_ini())
    return str(path)


def test_cli_run_and_determinism(tmp_path):
    path = write_config(tmp_path, small_config())
    code = cli_main(["run", path, "--out", str(tmp_path / "o1")])
    assert code == 0
    code = cli_main(["run", path, "--out", str(tmp_path / "o2"), "--jobs", "2"])
    assert code == 0
    a = (tmp_path / "o1" / "smoke" / "0.csv").read_bytes()
    b = (tmp_path / "o2" / "smoke" / "0.csv").read_bytes()
    assert a == b


def test_cli_run_invalid_exponents_exit_2(tmp_path, capsys):
    cfg = small_config(**{"exponents.a": "0.55", "algorithm.name": "uoro",
                          "schedule.b": "0.5", "experiment.horizon": 50})
    path = write_config(tmp_path, cfg)
    code = cli_main(["run", path, "--out", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert "b" in err
    code = cli_main(["run", path, "--out", str(tmp_path / "o"), "--force"])
    assert code == 0


def test_cli_check_schedule(capsys):
    code = cli_main(["check", "schedule", "--class", "imperfect_rtrl",
                     "--a", "0.55", "--gamma", "0", "--b", "0.6"])
    assert code == 0
    assert "valid" in capsys.readouterr().out
    code = cli_main(["check", "schedule", "--class", "imperfect_rtrl",
                     "--a", "0.55", "--gamma", "0", "--b", "0.5"])
    assert code == 1


def test_cli_check_stability_rnn_config(capsys):
    code = cli_main(["check", "stability", "--config",
                     os.path.join(CONFIG_DIR, "rnn_stability.ini")])
    assert code == 0
    out = capsys.readouterr().out
    assert "horizon: 1" in out


def test_cli_check_unbiased(tmp_path, capsys):
    csv_path = str(tmp_path / "bias.csv")
    code = cli_main(["check", "unbiased", "--reducer", "uoro", "--dim", "3",
                     "--steps", "2", "--csv", csv_path])
    assert code == 0
    out = capsys.readouterr().out
    assert "verdict: pass" in out
    with open(csv_path) as fh:
        lines = fh.read().strip().splitlines()
    assert lines[0] == "reducer,dim,steps,max_bias"
    assert lines[1].startswith("uoro,3,2,")


def test_cli_check_optimum(capsys, tmp_path):
    path = write_config(tmp_path, small_config())
    code = cli_main(["check", "optimum", "--config", path, "--horizon", "240"])
    assert code == 0
    assert "verdict: pass" in capsys.readouterr().out


def test_cli_entry_point_subprocess(tmp_path):
    # the installed console script answers --help
    proc = subprocess.run([sys.executable, "-m", "dynlearn.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "check" in proc.stdout


def test_canned_configs_parse():
    for name in ("cycling_vs_iid.ini", "adam_beta2.ini",
                 "influence_balancing_tbptt.ini", "rnn_stability.ini"):
        cfg = ExperimentConfig.load(os.path.join(CONFIG_DIR, name))
        assert cfg.name
        assert cfg.seeds


def test_dataset_from_csv(tmp_path):
    data = np.column_stack([np.eye(3) * 2.0, np.array([2.0, 4.0, 6.0])])
    path = tmp_path / "data.csv"
    np.savetxt(path, data, delimiter=",")
    cfg = small_config(**{"system.data_csv": str(path), "experiment.horizon": 300})
    rec = run_trial(cfg, 0)
    # theta* = (1, 2, 3) exactly for this dataset
    assert not rec.aborted and rec.final_dist() < 0.2


def test_rule_from_string_precond():
    from dynlearn.harness import rule_from_string
    import numpy as _np

    rule = rule_from_string("precond:scale:2.0", 3)
    assert _np.allclose(rule.apply(1, _np.ones(3), None, _np.zeros(3)), 2.0 * _np.ones(3))
    rule = rule_from_string("precond:diag:1,2,4", 3)
    assert _np.allclose(rule.apply(1, _np.ones(3), None, _np.zeros(3)), [1.0, 2.0, 4.0])
    with pytest.raises(ConfigurationError):
        rule_from_string("precond:diag:1,2", 3)
    cfg = small_config(**{"algorithm.rule": "precond:scale:0.5", "experiment.horizon": 200})
    rec = run_trial(cfg, 0)
    assert not rec.aborted


def test_cli_check_optimum_lambda_csv(tmp_path):
    path = write_config(tmp_path, small_config())
    out_csv = str(tmp_path / "lambda.csv")
    code = cli_main(["check", "optimum", "--config", path, "--horizon", "240",
                     "--lambda-csv", out_csv])
    assert code == 0
    lam = np.loadtxt(out_csv, delimiter=",", skiprows=1)
    assert lam.shape == (3, 3)
    lyap = np.loadtxt(str(tmp_path / "lambda_lyapunov.csv"), delimiter=",", skiprows=1)
    resid = lyap @ lam + lam.T @ lyap - np.eye(3)
    assert np.linalg.norm(resid) < 1e-8


def test_cli_out_env_var(tmp_path, monkeypatch):
    path = write_config(tmp_path, small_config(**{"experiment.horizon": 100}))
    monkeypatch.setenv("DYNLEARN_OUT", str(tmp_path / "envout"))
    code = cli_main(["run", path])
    assert code == 0
    assert (tmp_path / "envout" / "smoke" / "summary.csv").exists()
