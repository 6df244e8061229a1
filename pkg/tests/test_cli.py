import numpy as np
import pytest

from famec.cli import main
from famec.config import ExperimentSpec, ScenarioConfig, DRLParams, CSParams, emit_config
from famec.experiments import RESULT_FIELDS, RunExists, apply_sweep, cells, run_experiment
from famec.io import read_csv

DRL = DRLParams(hidden=(8, 8), episodes=2, slots=3, warmup_steps=4, batch_size=4,
                reward_samples=20)
CS = CSParams(block=8, features=4, n_res=1, batch_size=10, snapshots=16, epochs=1)


def tiny():
    return ScenarioConfig(n_users=2, n_ports=8, n_elements=1, fa_length=3.5, bandwidth=1e8,
                          drl=DRL, cs=CS)


def test_sweep_cells_and_schema(tmp_path):
    spec = ExperimentSpec(sweep_var="fa_length", sweep_values=(3.5, 4.0, 5.0),
                          schemes=("fp", "fpa"), seeds=(0, 1), output_dir=str(tmp_path / "r"),
                          eval_slots=2)
    assert len(cells(spec)) == 12
    out = run_experiment(tiny(), spec, plots=False)
    prov, rows = read_csv(out / "results.csv")
    assert set(prov) == {"config_hash", "seed", "commit"}
    assert len(rows) == 12 and tuple(rows[0]) == RESULT_FIELDS
    assert all(r["psnr"] == "" and r["ssim"] == "" and float(r["T_s"]) > 0 for r in rows)
    with pytest.raises(RunExists):
        run_experiment(tiny(), spec, plots=False)
    run_experiment(tiny(), spec, force=True, plots=False)


def test_sweep_deterministic_bytes(tmp_path):
    spec = ExperimentSpec(sweep_values=(3.5,), schemes=("proposed",), seeds=(3,), eval_slots=2)
    a = run_experiment(tiny(), ExperimentSpec(**{**spec.__dict__, "output_dir": str(tmp_path / "a")}),
                       commit="x", plots=False)
    b = run_experiment(tiny(), ExperimentSpec(**{**spec.__dict__, "output_dir": str(tmp_path / "b")}),
                       commit="x", plots=False)
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
    assert (a / "rewards.csv").read_bytes() == (b / "rewards.csv").read_bytes()


def test_failed_cell_recorded_and_run_continues(tmp_path):
    # n_users = 0 is invalid: that cell fails, the others still run
    spec = ExperimentSpec(sweep_var="n_users", sweep_values=(0, 2), schemes=("fp",), seeds=(0,),
                          output_dir=str(tmp_path / "r"), eval_slots=2)
    out = run_experiment(tiny(), spec, plots=False)
    _, rows = read_csv(out / "results.csv")
    assert [r["T_s"] == "" for r in rows] == [True, False]
    _, fails = read_csv(out / "failures.csv")
    assert len(fails) == 1 and "n_users" in fails[0]["error"]


def test_plots_written(tmp_path):
    spec = ExperimentSpec(sweep_values=(3.5, 4.0), schemes=("fp",), seeds=(0,),
                          output_dir=str(tmp_path / "r"), eval_slots=2)
    out = run_experiment(tiny(), spec)
    assert (out / "delay_vs_fa_length.png").stat().st_size > 0
    assert (out / "reward_vs_episode.png").exists()


def test_apply_sweep_axes():
    cfg = ScenarioConfig()
    assert apply_sweep(cfg, "port_spacing", 0.25).port_spacing == pytest.approx(0.025)
    assert apply_sweep(cfg, "port_count", 16).n_ports == 16


# --- command line -----------------------------------------------------------------

@pytest.fixture()
def cfg_file(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text(emit_config(tiny()))
    return p


def test_cli_exit_codes(tmp_path, cfg_file, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("scenario:\n  n_users: -1\n")
    assert main(["oracle", "--config", str(bad)]) == 1
    assert "n_users" in capsys.readouterr().err
    assert main(["bogus"]) == 1
    assert main(["eval-ccs", "--checkpoint", str(tmp_path / "missing.fck"),
                 "--dataset", str(tmp_path / "missing.fds")]) == 2
    out = tmp_path / "o.csv"
    assert main(["oracle", "--config", str(cfg_file), "--out", str(out), "--slots", "2"]) == 0
    assert main(["oracle", "--config", str(cfg_file), "--out", str(out)]) == 1   # no --force
    prov, rows = read_csv(out)
    assert "config_hash" in prov and len(rows) == 2 * 2


def test_cli_pipeline(tmp_path, cfg_file):
    ds, ck = tmp_path / "d.fds", tmp_path / "e.fck"
    assert main(["dataset", "--config", str(cfg_file), "--out", str(ds), "--count", "20"]) == 0
    assert main(["train-ccs", "--config", str(cfg_file), "--dataset", str(ds), "--out", str(ck),
                 "--deterministic"]) == 0
    assert main(["eval-ccs", "--config", str(cfg_file), "--dataset", str(ds),
                 "--checkpoint", str(ck), "--out", str(tmp_path / "q.csv")]) == 0
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg_file), "--out", str(run), "--csi", "estimated",
                 "--estimator", str(ck), "--deterministic"]) == 0
    _, trace = read_csv(run / "trace.csv")
    assert len(trace) == DRL.episodes
    assert main(["eval", "--run", str(run), "--episodes", "1", "--slots", "2"]) == 0
    _, rows = read_csv(run / "eval.csv")
    assert len(rows) == 2 * 2 and np.all([float(r["T_s"]) > 0 for r in rows])
    assert main(["train", "--config", str(cfg_file), "--out", str(tmp_path / "r2"),
                 "--csi", "estimated"]) == 1


def test_cli_sweep(tmp_path, cfg_file):
    text = cfg_file.read_text() + (
        "experiment:\n  sweep_values: [3.5]\n  schemes: [fp]\n  seeds: [0]\n  eval_slots: 2\n")
    cfg_file.write_text(text)
    out = tmp_path / "sw"
    args = ["sweep", "--config", str(cfg_file), "--out", str(out), "--deterministic"]
    assert main(args) == 0
    assert main(args) == 1
    assert main(args + ["--force"]) == 0
    assert (out / "results.csv").exists() and (out / "summary.csv").exists()
